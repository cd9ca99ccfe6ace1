// Command-line front end for the pipeline: synthesize data, fit clusters,
// train, evaluate, rank, sweep lambda, and run the property suite.
//
// Exit codes: 0 success; 2 configuration/shape/state errors; 3 data errors;
// 4 numeric errors and failed verification checks. Usage errors exit with
// the parser's own nonzero code. Every output directory receives exactly
// one manifest.json; wall-clock timestamps appear only in the manifest and
// the training log.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "latentrank/latentrank.hpp"

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;
using namespace latentrank;

namespace {

std::string iso8601_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string file_hash_hex(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read " + p.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

// Records inputs and outputs of one command run; written as the single
// manifest.json of the output directory.
class Manifest {
 public:
  Manifest(std::string command, const RunConfig& cfg)
      : start_(std::chrono::steady_clock::now()) {
    j_["command"] = std::move(command);
    j_["seed"] = cfg.train.seed;
    ojson c = ojson::object();
    for (const auto& [k, v] : cfg.to_kv()) c[k] = v;
    j_["config"] = std::move(c);
    j_["inputs"] = ojson::object();
    j_["outputs"] = ojson::object();
  }

  void input_file(const std::string& role, const fs::path& p) {
    j_["inputs"][role] = {{"path", p.string()}, {"fnv1a64", file_hash_hex(p)}};
  }
  void input_dataset(const std::string& role, const fs::path& dir) {
    ojson d = {{"path", dir.string()}};
    for (const char* name : {"posts.jsonl", "users.jsonl", "interactions.jsonl"}) {
      d[name] = file_hash_hex(dir / name);
    }
    j_["inputs"][role] = std::move(d);
  }
  void output_file(const fs::path& out_dir, const std::string& name) {
    const fs::path p = out_dir / name;
    j_["outputs"][name] = {
        {"bytes", static_cast<std::uint64_t>(fs::file_size(p))},
        {"fnv1a64", file_hash_hex(p)}};
  }

  void write(const fs::path& out_dir) {
    const auto dt = std::chrono::steady_clock::now() - start_;
    j_["duration_seconds"] = std::chrono::duration<double>(dt).count();
    j_["created"] = iso8601_now();
    std::ofstream out(out_dir / "manifest.json", std::ios::binary);
    if (!out) throw DataError("cannot write manifest in " + out_dir.string());
    out << j_.dump(2) << "\n";
  }

 private:
  ojson j_;
  std::chrono::steady_clock::time_point start_;
};

RunConfig resolve_config(const std::string& config_path, bool seed_set,
                         std::uint64_t seed) {
  RunConfig cfg;
  if (!config_path.empty()) apply_config_file(cfg, config_path);
  if (seed_set) cfg.train.seed = seed;
  cfg.validate();
  return cfg;
}

fs::path make_out_dir(const std::string& out) {
  fs::path dir(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw DataError("cannot create output directory " + dir.string() + ": " +
                    ec.message());
  }
  return dir;
}

void print_metric_table(const RankReport& r) {
  std::printf("%8s %12s %12s\n", "k", "precision", "recall");
  for (std::size_t i = 0; i < r.ks.size(); ++i) {
    std::printf("%8zu %12.6f %12.6f\n", r.ks[i], r.precision_at[i],
                r.recall_at[i]);
  }
  std::printf(
      "users evaluated %zu (no test activity %zu, empty liked %zu); "
      "random-ranking baseline %.6f\n",
      r.users_evaluated, r.users_no_test, r.users_empty_liked, r.mean_like_rate);
}

void print_sweep_table(const std::vector<SweepRow>& rows) {
  if (rows.empty()) return;
  const auto& ks = rows.front().report.ks;
  std::printf("%10s", "lambda");
  for (std::size_t k : ks) std::printf(" %11s", ("P@" + std::to_string(k)).c_str());
  for (std::size_t k : ks) std::printf(" %11s", ("R@" + std::to_string(k)).c_str());
  std::printf("\n");
  for (const SweepRow& row : rows) {
    std::printf("%10.4f", row.lambda);
    for (double p : row.report.precision_at) std::printf(" %11.6f", p);
    for (double r : row.report.recall_at) std::printf(" %11.6f", r);
    std::printf("\n");
  }
}

int run_synth(const std::string& config_path, bool seed_set, std::uint64_t seed,
              const std::string& out) {
  const RunConfig cfg = resolve_config(config_path, seed_set, seed);
  const fs::path dir = make_out_dir(out);
  Manifest man("synth", cfg);
  if (!config_path.empty()) man.input_file("config", config_path);

  Rng rng(Rng::derive_seed(cfg.train.seed, "synth"));
  const SynthResult sr = generate_synthetic(cfg.synth, rng);
  save_dataset(sr.dataset, dir);
  std::printf("synthesized %zu posts, %zu users, %zu interactions -> %s\n",
              sr.dataset.posts.size(), sr.dataset.users.size(),
              sr.dataset.interactions.size(), dir.string().c_str());

  for (const char* name : {"posts.jsonl", "users.jsonl", "interactions.jsonl"}) {
    man.output_file(dir, name);
  }
  man.write(dir);
  return 0;
}

int run_cluster(const std::string& config_path, bool seed_set, std::uint64_t seed,
                const std::string& data, const std::string& out,
                const std::vector<std::size_t>& ks) {
  RunConfig cfg = resolve_config(config_path, seed_set, seed);
  if (ks.size() == 1) {
    cfg.user_k = cfg.post_k = ks[0];
  } else if (ks.size() == 2) {
    cfg.user_k = ks[0];
    cfg.post_k = ks[1];
  } else if (ks.size() > 2) {
    throw ConfigError("--k accepts at most two values (user k, post k)");
  }
  cfg.validate();

  const Dataset ds = load_dataset(data);
  const SplitResult split = time_based_split(ds, cfg.holdout_per_user);
  const fs::path dir = make_out_dir(out);
  Manifest man("cluster", cfg);
  if (!config_path.empty()) man.input_file("config", config_path);
  man.input_dataset("data", data);

  const PipelineClusters clusters = fit_pipeline_clusters(split.train, cfg);
  save_clusters(clusters.user, dir / "user_clusters.txt");
  save_clusters(clusters.post, dir / "post_clusters.txt");
  std::printf("fit %zu user clusters and %zu post clusters (text dim %zu) on "
              "%zu training interactions -> %s\n",
              clusters.user.k, clusters.post.k, clusters.post.dim,
              split.train.interactions.size(), dir.string().c_str());

  man.output_file(dir, "user_clusters.txt");
  man.output_file(dir, "post_clusters.txt");
  man.write(dir);
  return 0;
}

int run_train(const std::string& config_path, bool seed_set, std::uint64_t seed,
              const std::string& data, const std::string& out,
              const std::string& resume_path) {
  const RunConfig cfg = resolve_config(config_path, seed_set, seed);
  const Dataset ds = load_dataset(data);
  const std::uint64_t fingerprint = dataset_fingerprint(ds);
  const SplitResult split = time_based_split(ds, cfg.holdout_per_user);

  TrainState resume_state;
  TrainState* resume = nullptr;
  if (!resume_path.empty()) {
    Checkpoint ck = load_checkpoint(resume_path);
    require_resume_compatible(ck.config, cfg);
    if (ck.data_fingerprint != fingerprint) {
      throw DataError("resume: dataset does not match the checkpoint's data");
    }
    resume_state = std::move(ck.state);
    resume = &resume_state;
  }
  const std::size_t start_step = resume ? resume_state.step : 0;

  const fs::path dir = make_out_dir(out);
  Manifest man("train", cfg);
  if (!config_path.empty()) man.input_file("config", config_path);
  man.input_dataset("data", data);
  if (!resume_path.empty()) man.input_file("resume", resume_path);

  std::ofstream log(dir / "train_log.jsonl", std::ios::binary);
  if (!log) throw DataError("cannot write train log in " + dir.string());
  std::ofstream metrics;
  std::vector<std::string> extra_outputs;

  TrainHooks hooks;
  hooks.on_step = [&](const StepInfo& info) {
    ojson j = {{"step", info.step},
               {"loss", info.loss.loss},
               {"cross", info.loss.cross_part},
               {"within", info.loss.within_part},
               {"active_cross", info.loss.active_cross},
               {"active_within", info.loss.active_within},
               {"timestamp", iso8601_now()}};
    log << j.dump() << "\n";
  };
  hooks.on_checkpoint = [&](std::size_t step, const TrainState& st) {
    const std::string name = "checkpoint-" + std::to_string(step) + ".ckpt";
    save_checkpoint(dir / name, cfg, st, fingerprint);
    extra_outputs.push_back(name);
  };
  hooks.on_eval = [&](std::size_t step, const RankReport& rep) {
    if (!metrics.is_open()) {
      metrics.open(dir / "metrics.csv", std::ios::binary);
      if (!metrics) throw DataError("cannot write metrics in " + dir.string());
      metrics << "step,k,precision,recall\n";
      extra_outputs.push_back("metrics.csv");
    }
    for (std::size_t i = 0; i < rep.ks.size(); ++i) {
      metrics << step << "," << rep.ks[i] << ","
              << format_double(rep.precision_at[i]) << ","
              << format_double(rep.recall_at[i]) << "\n";
    }
  };

  TrainResult r = train(split.train, cfg, &split.test, hooks, resume);
  save_checkpoint(dir / "checkpoint.ckpt", cfg, r.state, fingerprint);
  save_clusters(r.clusters.user, dir / "user_clusters.txt");
  save_clusters(r.clusters.post, dir / "post_clusters.txt");
  log.close();
  if (metrics.is_open()) metrics.close();

  const double last_loss = r.log.steps.empty() ? 0.0 : r.log.steps.back().loss;
  std::printf("trained %zu steps (%zu per epoch, %zu total; resumed at %zu), "
              "last loss %.6f -> %s\n",
              r.state.step - start_step, r.steps_per_epoch, r.total_steps,
              start_step, last_loss, dir.string().c_str());

  man.output_file(dir, "checkpoint.ckpt");
  man.output_file(dir, "user_clusters.txt");
  man.output_file(dir, "post_clusters.txt");
  man.output_file(dir, "train_log.jsonl");
  for (const std::string& name : extra_outputs) man.output_file(dir, name);
  man.write(dir);
  return 0;
}

// Shared load-and-evaluate path for `eval` and `rank`. Clusters are refit on
// the evaluation data's training split from the checkpoint seed, which
// reproduces the training-time clusters exactly on the training dataset.
RankReport evaluate_checkpoint(const std::string& checkpoint_path,
                               const std::string& data,
                               const std::vector<std::size_t>& ks,
                               RunConfig& cfg_out) {
  Checkpoint ck = load_checkpoint(checkpoint_path);
  RunConfig cfg = ck.config;
  if (!ks.empty()) cfg.eval_ks = ks;
  cfg.validate();

  const Dataset ds = load_dataset(data);
  const SplitResult split = time_based_split(ds, cfg.holdout_per_user);
  const PipelineClusters clusters = fit_pipeline_clusters(split.train, cfg);
  RankReport rep = evaluate(ck.state.params, split.test, split.train,
                            clusters.user, cfg.encoding(), cfg.eval_ks);
  cfg_out = cfg;
  return rep;
}

int run_eval(const std::string& checkpoint_path, const std::string& data,
             const std::vector<std::size_t>& ks, const std::string& out) {
  RunConfig cfg;
  RankReport rep = evaluate_checkpoint(checkpoint_path, data, ks, cfg);

  const fs::path dir = make_out_dir(out);
  Manifest man("eval", cfg);
  man.input_file("checkpoint", checkpoint_path);
  man.input_dataset("data", data);

  write_rank_report_csv(rep, dir / "rank_report.csv");
  write_rank_report_users(rep, dir / "rank_users.jsonl");
  print_metric_table(rep);

  man.output_file(dir, "rank_report.csv");
  man.output_file(dir, "rank_users.jsonl");
  man.write(dir);
  return 0;
}

int run_rank(const std::string& checkpoint_path, const std::string& data,
             const std::vector<std::size_t>& ks, const std::string& out) {
  RunConfig cfg;
  RankReport rep = evaluate_checkpoint(checkpoint_path, data, ks, cfg);

  const fs::path dir = make_out_dir(out);
  Manifest man("rank", cfg);
  man.input_file("checkpoint", checkpoint_path);
  man.input_dataset("data", data);

  write_rank_report_users(rep, dir / "rankings.jsonl");
  std::printf("ranked %zu users (top %zu of up to %zu candidates each) -> %s\n",
              rep.users_evaluated,
              *std::max_element(rep.ks.begin(), rep.ks.end()),
              rep.per_user.empty() ? 0 : rep.per_user.front().candidate_count,
              dir.string().c_str());

  man.output_file(dir, "rankings.jsonl");
  man.write(dir);
  return 0;
}

int run_sweep(const std::string& config_path, bool seed_set, std::uint64_t seed,
              const std::string& data, const std::vector<double>& lambdas,
              const std::string& out) {
  const RunConfig cfg = resolve_config(config_path, seed_set, seed);
  const Dataset ds = load_dataset(data);
  const SplitResult split = time_based_split(ds, cfg.holdout_per_user);

  const fs::path dir = make_out_dir(out);
  Manifest man("sweep", cfg);
  if (!config_path.empty()) man.input_file("config", config_path);
  man.input_dataset("data", data);

  const std::vector<SweepRow> rows =
      lambda_sweep(split.train, cfg.sweep_val_fraction, lambdas, cfg);
  print_sweep_table(rows);

  std::ofstream csv(dir / "sweep.csv", std::ios::binary);
  if (!csv) throw DataError("cannot write sweep.csv in " + dir.string());
  csv << "lambda,k,precision,recall\n";
  for (const SweepRow& row : rows) {
    for (std::size_t i = 0; i < row.report.ks.size(); ++i) {
      csv << format_double(row.lambda) << "," << row.report.ks[i] << ","
          << format_double(row.report.precision_at[i]) << ","
          << format_double(row.report.recall_at[i]) << "\n";
    }
  }
  csv.close();

  man.output_file(dir, "sweep.csv");
  man.write(dir);
  return 0;
}

int run_verify(std::uint64_t seed) {
  bool all = true;
  for (const CheckResult& c : run_self_checks(seed)) {
    std::printf("[%s] %s: %s\n", c.passed ? "PASS" : "FAIL", c.name.c_str(),
                c.detail.c_str());
    all = all && c.passed;
  }
  return all ? 0 : 4;
}

int guarded(const std::function<int()>& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "shape error: %s\n", e.what());
    return 2;
  } catch (const StateError& e) {
    std::fprintf(stderr, "state error: %s\n", e.what());
    return 2;
  } catch (const DegenerateInputError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const SamplingError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latentrank: joint user/post embeddings for content ranking"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir, checkpoint_path, resume_path;
  std::uint64_t seed = 1;
  std::vector<std::size_t> ks;
  std::vector<double> lambdas;

  auto add_config = [&](CLI::App* s) {
    s->add_option("--config", config_path, "key = value config file")
        ->check(CLI::ExistingFile);
    s->add_option("--seed", seed, "override the config seed");
  };

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_config(synth);
  synth->add_option("--out", out_dir, "output directory")->required();

  CLI::App* cluster = app.add_subcommand("cluster", "fit semantic clusters");
  add_config(cluster);
  cluster->add_option("--data", data_dir, "dataset directory")->required();
  cluster->add_option("--out", out_dir, "output directory")->required();
  cluster->add_option("--k", ks, "cluster count (once: both; twice: user, post)");

  CLI::App* train = app.add_subcommand("train", "train the embedding model");
  add_config(train);
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_option("--resume", resume_path, "checkpoint to resume from")
      ->check(CLI::ExistingFile);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--out", out_dir, "output directory")->required();
  eval->add_option("--k", ks, "ranking cutoff (repeatable)");

  CLI::App* rank = app.add_subcommand("rank", "write ranked lists per user");
  rank->add_option("--checkpoint", checkpoint_path, "checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);
  rank->add_option("--data", data_dir, "dataset directory")->required();
  rank->add_option("--out", out_dir, "output directory")->required();
  rank->add_option("--k", ks, "ranking cutoff (repeatable)");

  CLI::App* sweep = app.add_subcommand("sweep", "cross-validate lambda values");
  add_config(sweep);
  sweep->add_option("--data", data_dir, "dataset directory")->required();
  sweep->add_option("--out", out_dir, "output directory")->required();
  sweep->add_option("--lambda", lambdas, "lambda value (repeatable)")->required();

  CLI::App* verify = app.add_subcommand("verify", "run the property suite");
  verify->add_option("--seed", seed, "seed for the randomized checks");

  CLI11_PARSE(app, argc, argv);

  if (app.got_subcommand(synth)) {
    return guarded([&] {
      return run_synth(config_path, synth->count("--seed") > 0, seed, out_dir);
    });
  }
  if (app.got_subcommand(cluster)) {
    return guarded([&] {
      return run_cluster(config_path, cluster->count("--seed") > 0, seed,
                         data_dir, out_dir, ks);
    });
  }
  if (app.got_subcommand(train)) {
    return guarded([&] {
      return run_train(config_path, train->count("--seed") > 0, seed, data_dir,
                       out_dir, resume_path);
    });
  }
  if (app.got_subcommand(eval)) {
    return guarded([&] { return run_eval(checkpoint_path, data_dir, ks, out_dir); });
  }
  if (app.got_subcommand(rank)) {
    return guarded([&] { return run_rank(checkpoint_path, data_dir, ks, out_dir); });
  }
  if (app.got_subcommand(sweep)) {
    return guarded([&] {
      return run_sweep(config_path, sweep->count("--seed") > 0, seed, data_dir,
                       lambdas, out_dir);
    });
  }
  return guarded([&] { return run_verify(seed); });
}
