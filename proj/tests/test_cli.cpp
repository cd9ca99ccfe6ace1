#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "latentrank/datamodel.hpp"
#include "latentrank/encoding.hpp"
#include "latentrank/numkernel.hpp"

namespace {

using namespace latentrank;
namespace fs = std::filesystem;

const std::string kCli = LATENTRANK_CLI_PATH;

std::string quoted(const fs::path& p) { return "\"" + p.string() + "\""; }

int run_cli(const std::string& args) {
  const std::string cmd = kCli + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  if (rc == -1) return -1;
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -2;
}

int run_cli_capture(const std::string& args, const fs::path& log) {
  const std::string cmd = kCli + " " + args + " >" + quoted(log) + " 2>&1";
  const int rc = std::system(cmd.c_str());
  if (rc == -1) return -1;
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -2;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("latentrank-test-" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(std::move(line));
  return lines;
}

// Small dimensions and a small synthetic corpus keep each command under a
// second; "extra" lines land last and override the base settings.
void write_config(const fs::path& file, const std::string& extra = {}) {
  std::ofstream out(file, std::ios::binary);
  REQUIRE(out);
  out << "text_dim = 32\n"
         "visual_dim = 4\n"
         "user_k = 4\n"
         "post_k = 4\n"
         "kmeans_max_iter = 50\n"
         "hidden_dim = 8\n"
         "descriptor_dim = 6\n"
         "embedding_dim = 6\n"
         "embedding_layers = 2\n"
         "dropout_rate = 0.5\n"
         "window_seconds = 200000\n"
         "negatives_per_positive = 2\n"
         "minibatch_size = 4\n"
         "learning_rate = 0.05\n"
         "epochs = 2\n"
         "seed = 4242\n"
         "eval_ks = 1,3\n"
         "holdout_per_user = 2\n"
         "synth_topics = 3\n"
         "synth_users = 9\n"
         "synth_posts = 60\n"
         "synth_interactions_per_user = 8\n"
         "synth_vocab_size = 60\n"
         "synth_visual_dim = 4\n"
         "synth_horizon_seconds = 100000\n"
         "synth_noise = 0.1\n";
  out << extra;
}

// Shared read-only fixture: one synthesized dataset and one finished
// two-epoch training run, reused by the cases below.
struct CliWorld {
  TempDir tmp{"cli-world"};
  fs::path cfg = tmp.path / "run.cfg";
  fs::path cfg_one_epoch = tmp.path / "one-epoch.cfg";
  fs::path data = tmp.path / "data";
  fs::path train_full = tmp.path / "train-full";

  CliWorld() {
    write_config(cfg);
    write_config(cfg_one_epoch, "epochs = 1\n");
    REQUIRE(run_cli("synth --config " + quoted(cfg) + " --out " + quoted(data)) == 0);
    REQUIRE(run_cli("train --config " + quoted(cfg) + " --data " + quoted(data) +
                    " --out " + quoted(train_full)) == 0);
  }
};

CliWorld& world() {
  static CliWorld w;
  return w;
}

std::string hash_hex(const std::string& bytes) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

}  // namespace

TEST_CASE("synth writes a deterministic dataset", "[cli]") {
  CliWorld& w = world();
  TempDir tmp("cli-synth");

  const fs::path d2 = tmp.path / "d2";
  REQUIRE(run_cli("synth --config " + quoted(w.cfg) + " --out " + quoted(d2)) == 0);
  for (const char* name : {"posts.jsonl", "users.jsonl", "interactions.jsonl"}) {
    CHECK(read_file(w.data / name) == read_file(d2 / name));
  }

  std::size_t entries = 0;
  for (const auto& e : fs::directory_iterator(w.data)) {
    (void)e;
    ++entries;
  }
  CHECK(entries == 4);  // three jsonl files plus manifest.json

  const nlohmann::json man = nlohmann::json::parse(read_file(w.data / "manifest.json"));
  CHECK(man.at("command").get<std::string>() == "synth");
  CHECK(man.at("seed").get<std::uint64_t>() == 4242);
  CHECK(man.at("config").at("epochs").get<std::string>() == "2");
  CHECK(man.at("outputs").at("posts.jsonl").at("fnv1a64").get<std::string>() ==
        hash_hex(read_file(w.data / "posts.jsonl")));

  const Dataset ds = load_dataset(w.data);
  CHECK(ds.posts.size() == 60);
  CHECK(ds.users.size() == 9);
  CHECK(ds.interactions.size() == 72);

  const fs::path d3 = tmp.path / "d3";
  REQUIRE(run_cli("synth --config " + quoted(w.cfg) + " --seed 777 --out " +
                  quoted(d3)) == 0);
  CHECK(read_file(d3 / "posts.jsonl") != read_file(w.data / "posts.jsonl"));
  const nlohmann::json man3 = nlohmann::json::parse(read_file(d3 / "manifest.json"));
  CHECK(man3.at("seed").get<std::uint64_t>() == 777);
}

TEST_CASE("training emits its artifacts deterministically", "[cli]") {
  CliWorld& w = world();
  TempDir tmp("cli-train");

  for (const char* name : {"checkpoint.ckpt", "user_clusters.txt",
                           "post_clusters.txt", "train_log.jsonl",
                           "manifest.json"}) {
    CHECK(fs::exists(w.train_full / name));
  }

  const std::vector<std::string> log = read_lines(w.train_full / "train_log.jsonl");
  REQUIRE(log.size() == 26);  // 54 training interactions / 4 per batch, 2 epochs
  const nlohmann::json first = nlohmann::json::parse(log.front());
  const nlohmann::json last = nlohmann::json::parse(log.back());
  CHECK(first.at("step").get<std::size_t>() == 1);
  CHECK(last.at("step").get<std::size_t>() == 26);
  for (const char* key : {"loss", "cross", "within"}) {
    CHECK(last.at(key).is_number());
  }
  CHECK(last.contains("active_cross"));
  CHECK(last.contains("timestamp"));

  const SemanticClusters uc = load_clusters(w.train_full / "user_clusters.txt");
  CHECK(uc.k == 4);
  CHECK(uc.dim == 32);
  const SemanticClusters pc = load_clusters(w.train_full / "post_clusters.txt");
  CHECK(pc.k == 4);

  // A fresh run with the same config and data lands on the same weights.
  const fs::path again = tmp.path / "again";
  REQUIRE(run_cli("train --config " + quoted(w.cfg) + " --data " + quoted(w.data) +
                  " --out " + quoted(again)) == 0);
  CHECK(read_file(again / "checkpoint.ckpt") ==
        read_file(w.train_full / "checkpoint.ckpt"));
  CHECK(read_file(again / "user_clusters.txt") ==
        read_file(w.train_full / "user_clusters.txt"));
}

TEST_CASE("an interrupted training run resumes to the same checkpoint", "[cli]") {
  CliWorld& w = world();
  TempDir tmp("cli-resume");

  const fs::path half = tmp.path / "half";
  REQUIRE(run_cli("train --config " + quoted(w.cfg_one_epoch) + " --data " +
                  quoted(w.data) + " --out " + quoted(half)) == 0);
  CHECK(read_lines(half / "train_log.jsonl").size() == 13);

  const fs::path rest = tmp.path / "rest";
  REQUIRE(run_cli("train --config " + quoted(w.cfg) + " --data " + quoted(w.data) +
                  " --resume " + quoted(half / "checkpoint.ckpt") + " --out " +
                  quoted(rest)) == 0);
  CHECK(read_file(rest / "checkpoint.ckpt") ==
        read_file(w.train_full / "checkpoint.ckpt"));

  const std::vector<std::string> log = read_lines(rest / "train_log.jsonl");
  REQUIRE(log.size() == 13);
  CHECK(nlohmann::json::parse(log.front()).at("step").get<std::size_t>() == 14);
  CHECK(nlohmann::json::parse(log.back()).at("step").get<std::size_t>() == 26);

  // Resuming against different data is a data error.
  const fs::path other = tmp.path / "other-data";
  REQUIRE(run_cli("synth --config " + quoted(w.cfg) + " --seed 777 --out " +
                  quoted(other)) == 0);
  CHECK(run_cli("train --config " + quoted(w.cfg) + " --data " + quoted(other) +
                " --resume " + quoted(half / "checkpoint.ckpt") + " --out " +
                quoted(tmp.path / "x1")) == 3);

  // Resuming under a changed architecture is a config error.
  const fs::path wider = tmp.path / "wider.cfg";
  write_config(wider, "hidden_dim = 16\n");
  CHECK(run_cli("train --config " + quoted(wider) + " --data " + quoted(w.data) +
                " --resume " + quoted(half / "checkpoint.ckpt") + " --out " +
                quoted(tmp.path / "x2")) == 2);
}

TEST_CASE("periodic checkpoints and metrics appear on schedule", "[cli]") {
  CliWorld& w = world();
  TempDir tmp("cli-schedule");

  const fs::path cfg = tmp.path / "sched.cfg";
  write_config(cfg, "epochs = 1\ncheckpoint_every = 10\neval_every = 6\n");
  const fs::path out = tmp.path / "out";
  REQUIRE(run_cli("train --config " + quoted(cfg) + " --data " + quoted(w.data) +
                  " --out " + quoted(out)) == 0);

  CHECK(fs::exists(out / "checkpoint-10.ckpt"));
  CHECK(fs::exists(out / "checkpoint.ckpt"));

  const std::vector<std::string> metrics = read_lines(out / "metrics.csv");
  REQUIRE(metrics.size() == 5);  // header + evals at steps 6 and 12, ks 1 and 3
  CHECK(metrics[0] == "step,k,precision,recall");
  CHECK(metrics[1].rfind("6,1,", 0) == 0);
  CHECK(metrics[2].rfind("6,3,", 0) == 0);
  CHECK(metrics[3].rfind("12,1,", 0) == 0);
  CHECK(metrics[4].rfind("12,3,", 0) == 0);

  const nlohmann::json man = nlohmann::json::parse(read_file(out / "manifest.json"));
  CHECK(man.at("outputs").contains("checkpoint-10.ckpt"));
  CHECK(man.at("outputs").contains("metrics.csv"));
}

TEST_CASE("evaluation reports reproduce from a fixed checkpoint", "[cli]") {
  CliWorld& w = world();
  TempDir tmp("cli-eval");
  const fs::path ckpt = w.train_full / "checkpoint.ckpt";

  const fs::path e1 = tmp.path / "e1";
  REQUIRE(run_cli("eval --checkpoint " + quoted(ckpt) + " --data " + quoted(w.data) +
                  " --out " + quoted(e1)) == 0);
  const std::vector<std::string> csv = read_lines(e1 / "rank_report.csv");
  REQUIRE(csv.size() == 3);  // header + ks 1 and 3 from the checkpoint config
  CHECK(csv[0] == "k,precision,recall");
  CHECK(csv[1].rfind("1,", 0) == 0);
  CHECK(csv[2].rfind("3,", 0) == 0);
  for (std::size_t i = 1; i < csv.size(); ++i) {
    const auto c1 = csv[i].find(',');
    const auto c2 = csv[i].find(',', c1 + 1);
    const double p = std::strtod(csv[i].substr(c1 + 1, c2 - c1 - 1).c_str(), nullptr);
    const double r = std::strtod(csv[i].substr(c2 + 1).c_str(), nullptr);
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
    CHECK(r >= 0.0);
    CHECK(r <= 1.0);
  }

  const fs::path e2 = tmp.path / "e2";
  REQUIRE(run_cli("eval --checkpoint " + quoted(ckpt) + " --data " + quoted(w.data) +
                  " --out " + quoted(e2)) == 0);
  CHECK(read_file(e1 / "rank_report.csv") == read_file(e2 / "rank_report.csv"));
  CHECK(read_file(e1 / "rank_users.jsonl") == read_file(e2 / "rank_users.jsonl"));

  const fs::path e3 = tmp.path / "e3";
  REQUIRE(run_cli("eval --checkpoint " + quoted(ckpt) + " --data " + quoted(w.data) +
                  " --k 5 --out " + quoted(e3)) == 0);
  const std::vector<std::string> csv5 = read_lines(e3 / "rank_report.csv");
  REQUIRE(csv5.size() == 2);
  CHECK(csv5[1].rfind("5,", 0) == 0);

  const fs::path r1 = tmp.path / "r1";
  REQUIRE(run_cli("rank --checkpoint " + quoted(ckpt) + " --data " + quoted(w.data) +
                  " --out " + quoted(r1)) == 0);
  const std::vector<std::string> ranked = read_lines(r1 / "rankings.jsonl");
  REQUIRE(ranked.size() == 9);  // every synthetic user has held-out activity
  for (const std::string& line : ranked) {
    const nlohmann::json j = nlohmann::json::parse(line);
    CHECK(j.contains("user_id"));
    CHECK(j.at("ranked").is_array());
    CHECK(j.at("ranked").size() >= 1);
  }

  CHECK(run_cli("eval --checkpoint " + quoted(ckpt) + " --data " +
                quoted(tmp.path / "no-data") + " --out " +
                quoted(tmp.path / "x")) == 3);
  CHECK(run_cli("eval --checkpoint " + quoted(tmp.path / "nope.ckpt") + " --data " +
                quoted(w.data) + " --out " + quoted(tmp.path / "x")) != 0);
}

TEST_CASE("the lambda sweep writes one row per lambda and cutoff", "[cli]") {
  CliWorld& w = world();
  TempDir tmp("cli-sweep");

  const fs::path out = tmp.path / "out";
  REQUIRE(run_cli("sweep --config " + quoted(w.cfg_one_epoch) + " --data " +
                  quoted(w.data) + " --lambda 0 --lambda 0.3 --out " +
                  quoted(out)) == 0);
  const std::vector<std::string> csv = read_lines(out / "sweep.csv");
  REQUIRE(csv.size() == 5);  // header + 2 lambdas x 2 ks
  CHECK(csv[0] == "lambda,k,precision,recall");
  const auto lambda_of = [&](const std::string& line) {
    return std::strtod(line.substr(0, line.find(',')).c_str(), nullptr);
  };
  CHECK(lambda_of(csv[1]) == 0.0);
  CHECK(lambda_of(csv[2]) == 0.0);
  CHECK(lambda_of(csv[3]) == 0.3);
  CHECK(lambda_of(csv[4]) == 0.3);

  CHECK(run_cli("sweep --config " + quoted(w.cfg_one_epoch) + " --data " +
                quoted(w.data) + " --out " + quoted(tmp.path / "x")) != 0);
}

TEST_CASE("clusters fit from the command line", "[cli]") {
  CliWorld& w = world();
  TempDir tmp("cli-cluster");

  const fs::path out = tmp.path / "out";
  REQUIRE(run_cli("cluster --config " + quoted(w.cfg) + " --data " + quoted(w.data) +
                  " --k 3 --k 5 --out " + quoted(out)) == 0);
  const SemanticClusters uc = load_clusters(out / "user_clusters.txt");
  CHECK(uc.k == 3);
  CHECK(uc.dim == 32);
  const SemanticClusters pc = load_clusters(out / "post_clusters.txt");
  CHECK(pc.k == 5);

  const fs::path again = tmp.path / "again";
  REQUIRE(run_cli("cluster --config " + quoted(w.cfg) + " --data " + quoted(w.data) +
                  " --k 3 --k 5 --out " + quoted(again)) == 0);
  CHECK(read_file(out / "user_clusters.txt") == read_file(again / "user_clusters.txt"));
  CHECK(read_file(out / "post_clusters.txt") == read_file(again / "post_clusters.txt"));

  CHECK(run_cli("cluster --config " + quoted(w.cfg) + " --data " + quoted(w.data) +
                " --k 1 --k 2 --k 3 --out " + quoted(tmp.path / "x")) == 2);
}

TEST_CASE("the property suite passes end to end", "[cli]") {
  TempDir tmp("cli-verify");
  const fs::path log = tmp.path / "verify.txt";
  REQUIRE(run_cli_capture("verify --seed 3", log) == 0);
  const std::vector<std::string> lines = read_lines(log);
  REQUIRE(lines.size() >= 5);
  for (const std::string& line : lines) {
    CHECK(line.rfind("[PASS] ", 0) == 0);
  }
}

TEST_CASE("bad invocations exit with the documented codes", "[cli]") {
  CliWorld& w = world();
  TempDir tmp("cli-bad");

  CHECK(run_cli("") != 0);
  CHECK(run_cli("bogus") != 0);
  CHECK(run_cli("synth") != 0);  // --out is required

  const fs::path bad = tmp.path / "bad.cfg";
  write_config(bad, "synth_topics = 0\n");
  CHECK(run_cli("synth --config " + quoted(bad) + " --out " +
                quoted(tmp.path / "x")) == 2);

  CHECK(run_cli("train --config " + quoted(w.cfg) + " --data " +
                quoted(tmp.path / "no-such-dir") + " --out " +
                quoted(tmp.path / "x")) == 3);
}
