#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "latentrank/config.hpp"
#include "latentrank/datamodel.hpp"
#include "latentrank/encoding.hpp"
#include "latentrank/errors.hpp"
#include "latentrank/network.hpp"
#include "latentrank/ranking.hpp"

namespace {

using namespace latentrank;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::MessageMatches;
namespace fs = std::filesystem;

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

RunConfig rank_cfg() {
  RunConfig rc;
  rc.text_dim = 16;
  rc.visual_dim = 2;
  rc.user_k = 2;
  rc.post_k = 2;
  rc.hidden_dim = 4;
  rc.descriptor_dim = 4;
  rc.embedding_dim = 4;
  rc.embedding_layers = 1;
  rc.dropout_rate = 0.0;
  return rc;
}

SemanticClusters make_clusters(std::size_t dim) {
  const Vec ea = encode_text("apples apples", dim).values;
  const Vec eb = encode_text("bricks bricks", dim).values;
  DenseMatrix c(2, dim);
  std::copy(ea.begin(), ea.end(), c.data.begin());
  std::copy(eb.begin(), eb.end(), c.data.begin() + dim);
  return SemanticClusters{2, dim, std::move(c)};
}

NetworkParams rank_params(const RunConfig& rc, std::uint64_t seed) {
  Rng rng(seed);
  return init_network(rc.network(), rng);
}

Post make_post(std::string id, std::string text, std::int64_t created) {
  Post p;
  p.post_id = std::move(id);
  p.base_text = std::move(text);
  p.created_at = created;
  return p;
}

User make_user(std::string id, std::string profile) {
  User u;
  u.user_id = std::move(id);
  u.profile_text = std::move(profile);
  return u;
}

// Distance from a user to one post through the single-row embedding path.
double oracle_distance(const NetworkParams& params, const Vec& user_emb,
                       const Post& p, const EncodingConfig& enc) {
  PostDescriptorInput in = post_descriptor_input(p, enc);
  const Vec e = embed_post_one(params, in.text_vector, in.visual_vector,
                               in.visual_missing);
  return euclidean_distance(user_emb, e);
}

}  // namespace

TEST_CASE("precision and recall against hand counts", "[ranking]") {
  const std::vector<std::string> ranked{"a", "b", "c", "d"};
  const std::unordered_set<std::string> liked{"b", "d"};

  auto [p1, r1] = precision_recall_at_k(ranked, liked, 1);
  CHECK(p1 == 0.0);
  CHECK(r1 == 0.0);

  auto [p2, r2] = precision_recall_at_k(ranked, liked, 2);
  CHECK(p2 == 0.5);
  CHECK(r2 == 0.5);

  auto [p4, r4] = precision_recall_at_k(ranked, liked, 4);
  CHECK(p4 == 0.5);
  CHECK(r4 == 1.0);

  // The precision denominator stays k even past the end of the list.
  auto [p10, r10] = precision_recall_at_k(ranked, liked, 10);
  CHECK(p10 == 0.2);
  CHECK(r10 == 1.0);

  auto [pe, re] = precision_recall_at_k({}, liked, 3);
  CHECK(pe == 0.0);
  CHECK(re == 0.0);

  CHECK_THROWS_AS(precision_recall_at_k(ranked, liked, 0), ConfigError);
  CHECK_THROWS_AS(precision_recall_at_k(ranked, {}, 1), DegenerateInputError);
}

TEST_CASE("candidates rank by distance then id", "[ranking]") {
  const RunConfig rc = rank_cfg();
  const NetworkParams params = rank_params(rc, 77);
  const SemanticClusters cl = make_clusters(rc.text_dim);
  const EncodingConfig enc = rc.encoding();

  // pa and pb carry identical content, so their embeddings and distances
  // match bit for bit and only the id can order them.
  const Post pa = make_post("pa", "same words here", 100);
  const Post pb = make_post("pb", "same words here", 100);
  const Post pc = make_post("pc", "other tokens entirely", 100);
  const Post pd = make_post("pd", "yet more distinct content", 100);
  const std::vector<const Post*> cand{&pd, &pa, &pc, &pb};
  const User u = make_user("u", "reader of words");

  const auto top = rank_for_user(params, u, cand, cl, enc, 10);
  REQUIRE(top.size() == 4);
  for (std::size_t i = 1; i < top.size(); ++i) {
    const bool ordered =
        top[i - 1].distance < top[i].distance ||
        (top[i - 1].distance == top[i].distance && top[i - 1].post_id < top[i].post_id);
    CHECK(ordered);
  }

  std::size_t at_a = top.size(), at_b = top.size();
  for (std::size_t i = 0; i < top.size(); ++i) {
    if (top[i].post_id == "pa") at_a = i;
    if (top[i].post_id == "pb") at_b = i;
  }
  REQUIRE(at_a < top.size());
  REQUIRE(at_b < top.size());
  CHECK(at_b == at_a + 1);
  CHECK(top[at_a].distance == top[at_b].distance);

  const Vec u_emb = embed_user_one(params, user_descriptor(u, cl));
  for (const RankedPost& rp : top) {
    const Post* p = nullptr;
    for (const Post* c : cand) {
      if (c->post_id == rp.post_id) p = c;
    }
    REQUIRE(p != nullptr);
    CHECK(rp.distance == oracle_distance(params, u_emb, *p, enc));
  }

  const auto top2 = rank_for_user(params, u, cand, cl, enc, 2);
  REQUIRE(top2.size() == 2);
  CHECK(top2[0].post_id == top[0].post_id);
  CHECK(top2[1].post_id == top[1].post_id);
  CHECK(top2[0].distance == top[0].distance);

  CHECK_THROWS_AS(rank_for_user(params, u, cand, cl, enc, 0), ConfigError);
  CHECK_THROWS_AS(rank_for_user(params, u, {}, cl, enc, 3), ConfigError);
}

TEST_CASE("evaluation excludes seen posts and averages per user", "[ranking]") {
  const RunConfig rc = rank_cfg();
  const NetworkParams params = rank_params(rc, 404);
  const SemanticClusters cl = make_clusters(rc.text_dim);
  const EncodingConfig enc = rc.encoding();

  Dataset train;
  train.posts = {make_post("q1", "alpine hiking trails", 100),
                 make_post("q2", "sourdough baking notes", 100),
                 make_post("q3", "vintage camera repair", 100),
                 make_post("q4", "night sky photography", 100)};
  train.users = {make_user("va", "mountain sports fan"),
                 make_user("vb", "home baker"),
                 make_user("vc", "gear collector"),
                 make_user("vd", "stargazer at heart")};
  train.interactions = {{"va", "q1", 200},
                        {"vb", "q2", 200},
                        {"vc", "q3", 200},
                        {"vd", "q4", 200}};
  train.finalize();

  Dataset test = train;
  test.interactions = {{"va", "q2", 300},
                       {"va", "q3", 300},
                       {"vb", "q1", 300},
                       {"vd", "q4", 300}};
  test.finalize();

  const std::vector<std::size_t> ks{1, 3};
  RankReport rep = evaluate(params, test, train, cl, enc, ks);

  CHECK(rep.ks == ks);
  CHECK(rep.users_evaluated == 2);
  CHECK(rep.users_no_test == 1);     // vc has no held-out interaction
  CHECK(rep.users_empty_liked == 1); // vd already acted on q4 in training
  REQUIRE(rep.per_user.size() == 2);
  CHECK(rep.per_user[0].user_id == "va");
  CHECK(rep.per_user[1].user_id == "vb");
  CHECK(rep.mean_like_rate == 0.5);  // (2/3 + 1/3) / 2

  // Independent reconstruction: pool is the sorted unique held-out ids;
  // candidates and liked drop whatever the user acted on in training.
  const std::vector<std::string> pool{"q1", "q2", "q3", "q4"};
  std::unordered_map<std::string, std::unordered_set<std::string>> acted;
  for (const Interaction& it : train.interactions) acted[it.user_id].insert(it.post_id);
  std::unordered_map<std::string, std::unordered_set<std::string>> held;
  for (const Interaction& it : test.interactions) held[it.user_id].insert(it.post_id);

  for (const UserRanking& ur : rep.per_user) {
    std::vector<std::string> cand_ids;
    for (const std::string& id : pool) {
      if (!acted[ur.user_id].contains(id)) cand_ids.push_back(id);
    }
    std::unordered_set<std::string> liked;
    for (const std::string& id : held[ur.user_id]) {
      if (!acted[ur.user_id].contains(id)) liked.insert(id);
    }
    CHECK(ur.candidate_count == cand_ids.size());
    CHECK(ur.liked_count == liked.size());

    const Vec u_emb =
        embed_user_one(params, user_descriptor(test.user(ur.user_id), cl));
    std::vector<RankedPost> oracle;
    for (const std::string& id : cand_ids) {
      oracle.push_back({id, oracle_distance(params, u_emb, test.post(id), enc)});
    }
    std::sort(oracle.begin(), oracle.end(),
              [](const RankedPost& a, const RankedPost& b) {
                if (a.distance != b.distance) return a.distance < b.distance;
                return a.post_id < b.post_id;
              });
    REQUIRE(ur.ranked.size() == std::min<std::size_t>(3, oracle.size()));
    for (std::size_t i = 0; i < ur.ranked.size(); ++i) {
      CHECK(ur.ranked[i].post_id == oracle[i].post_id);
      CHECK(ur.ranked[i].distance == oracle[i].distance);
    }

    REQUIRE(ur.hits_at.size() == ks.size());
    for (std::size_t ki = 0; ki < ks.size(); ++ki) {
      std::size_t hits = 0;
      for (std::size_t i = 0; i < std::min(ks[ki], oracle.size()); ++i) {
        if (liked.contains(oracle[i].post_id)) ++hits;
      }
      CHECK(ur.hits_at[ki] == hits);
      CHECK(ur.p_at[ki] == static_cast<double>(hits) / static_cast<double>(ks[ki]));
      CHECK(ur.r_at[ki] ==
            static_cast<double>(hits) / static_cast<double>(liked.size()));
    }
  }

  REQUIRE(rep.precision_at.size() == ks.size());
  for (std::size_t ki = 0; ki < ks.size(); ++ki) {
    CHECK(rep.precision_at[ki] ==
          (rep.per_user[0].p_at[ki] + rep.per_user[1].p_at[ki]) / 2.0);
    CHECK(rep.recall_at[ki] ==
          (rep.per_user[0].r_at[ki] + rep.per_user[1].r_at[ki]) / 2.0);
  }
}

TEST_CASE("a single held-out post is always found", "[ranking]") {
  const RunConfig rc = rank_cfg();
  const NetworkParams params = rank_params(rc, 11);
  const SemanticClusters cl = make_clusters(rc.text_dim);

  Dataset train;
  train.posts = {make_post("r1", "solitary content token", 100)};
  train.users = {make_user("wa", "first reader"), make_user("wb", "second reader")};
  train.finalize();

  Dataset test = train;
  test.interactions = {{"wa", "r1", 200}, {"wb", "r1", 200}};
  test.finalize();

  RankReport rep = evaluate(params, test, train, cl, rc.encoding(), {1, 3});
  CHECK(rep.users_evaluated == 2);
  CHECK(rep.mean_like_rate == 1.0);
  REQUIRE(rep.precision_at.size() == 2);
  CHECK(rep.precision_at[0] == 1.0);
  CHECK(rep.precision_at[1] == 1.0 / 3.0);  // one hit, denominator stays 3
  CHECK(rep.recall_at[0] == 1.0);
  CHECK(rep.recall_at[1] == 1.0);
  for (const UserRanking& ur : rep.per_user) {
    REQUIRE(ur.ranked.size() == 1);
    CHECK(ur.ranked[0].post_id == "r1");
    CHECK(ur.hits_at == std::vector<std::size_t>{1, 1});
  }
}

TEST_CASE("evaluation validates its inputs", "[ranking]") {
  const RunConfig rc = rank_cfg();
  const NetworkParams params = rank_params(rc, 5);
  const SemanticClusters cl = make_clusters(rc.text_dim);
  const EncodingConfig enc = rc.encoding();

  Dataset train;
  train.posts = {make_post("q1", "some words", 100)};
  train.users = {make_user("va", "a reader")};
  train.finalize();
  Dataset test = train;
  test.interactions = {{"va", "q1", 200}};
  test.finalize();

  CHECK_THROWS_AS(evaluate(params, test, train, cl, enc, {}), ConfigError);
  CHECK_THROWS_AS(evaluate(params, test, train, cl, enc, {0}), ConfigError);
  CHECK_THROWS_MATCHES(evaluate(params, train, train, cl, enc, {1}), DataError,
                       MessageMatches(ContainsSubstring("empty test split")));

  // The only held-out post was already seen in training: nobody is scorable.
  Dataset seen_train = train;
  seen_train.interactions = {{"va", "q1", 150}};
  seen_train.finalize();
  CHECK_THROWS_MATCHES(
      evaluate(params, test, seen_train, cl, enc, {1}), DataError,
      MessageMatches(ContainsSubstring("no user had a non-empty liked set")));
}

TEST_CASE("reports serialize to csv and jsonl", "[ranking]") {
  TempDir tmp("ranking-report");
  const RunConfig rc = rank_cfg();
  const NetworkParams params = rank_params(rc, 29);
  const SemanticClusters cl = make_clusters(rc.text_dim);

  Dataset train;
  train.posts = {make_post("r1", "solitary content token", 100),
                 make_post("r2", "another body of text", 100)};
  train.users = {make_user("wa", "first reader"), make_user("wb", "second reader")};
  train.finalize();
  Dataset test = train;
  test.interactions = {{"wa", "r1", 200}, {"wb", "r2", 200}};
  test.finalize();

  const RankReport rep = evaluate(params, test, train, cl, rc.encoding(), {1, 2});

  const fs::path csv = tmp.path / "report.csv";
  write_rank_report_csv(rep, csv);
  std::string want = "k,precision,recall\n";
  for (std::size_t i = 0; i < rep.ks.size(); ++i) {
    want += std::to_string(rep.ks[i]) + "," + format_double(rep.precision_at[i]) +
            "," + format_double(rep.recall_at[i]) + "\n";
  }
  CHECK(read_file(csv) == want);

  const fs::path jsonl = tmp.path / "users.jsonl";
  write_rank_report_users(rep, jsonl);
  const std::vector<std::string> lines = read_lines(jsonl);
  REQUIRE(lines.size() == rep.per_user.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const nlohmann::json j = nlohmann::json::parse(lines[i]);
    const UserRanking& ur = rep.per_user[i];
    CHECK(j.at("user_id").get<std::string>() == ur.user_id);
    CHECK(j.at("liked").get<std::size_t>() == ur.liked_count);
    CHECK(j.at("candidates").get<std::size_t>() == ur.candidate_count);
    const auto& ranked = j.at("ranked");
    REQUIRE(ranked.size() == ur.ranked.size());
    for (std::size_t ri = 0; ri < ur.ranked.size(); ++ri) {
      CHECK(ranked[ri].at("post_id").get<std::string>() == ur.ranked[ri].post_id);
      CHECK(ranked[ri].at("distance").get<double>() == ur.ranked[ri].distance);
    }
    for (std::size_t ki = 0; ki < rep.ks.size(); ++ki) {
      const std::string k = std::to_string(rep.ks[ki]);
      CHECK(j.at("hits_at_" + k).get<std::size_t>() == ur.hits_at[ki]);
      CHECK(j.at("p_at_" + k).get<double>() == ur.p_at[ki]);
      CHECK(j.at("r_at_" + k).get<double>() == ur.r_at[ki]);
    }
  }

  CHECK_THROWS_MATCHES(write_rank_report_csv(rep, tmp.path / "nodir" / "x.csv"),
                       DataError,
                       MessageMatches(ContainsSubstring("cannot write")));
  CHECK_THROWS_MATCHES(write_rank_report_users(rep, tmp.path / "nodir" / "x.jsonl"),
                       DataError,
                       MessageMatches(ContainsSubstring("cannot write")));
}
