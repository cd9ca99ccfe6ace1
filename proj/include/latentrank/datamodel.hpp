#pragma once

// Domain records for posts, users and interactions, line-delimited JSON
// ingestion with validation, the time-based train/test split, and a
// deterministic synthetic dataset generator with known latent topics.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "latentrank/errors.hpp"
#include "latentrank/numkernel.hpp"

namespace latentrank {

struct Post {
  std::string post_id;
  std::string base_text;
  std::string hashtag_text;        // pre-broken component words
  std::string url_text;            // may be empty
  std::string reverse_image_text;  // may be empty
  std::optional<Vec> visual_features;
  std::int64_t created_at = 0;  // epoch seconds, > 0
};

struct User {
  std::string user_id;
  std::string profile_text;  // description + location, non-empty
  std::vector<std::string> followee_profile_texts;
};

struct Interaction {
  std::string user_id;
  std::string post_id;
  std::int64_t acted_at = 0;  // >= referenced post's created_at
};

struct Dataset {
  std::vector<Post> posts;
  std::vector<User> users;
  std::vector<Interaction> interactions;

  // id -> index maps, rebuilt by finalize().
  std::unordered_map<std::string, std::size_t> post_index;
  std::unordered_map<std::string, std::size_t> user_index;

  // Dimension shared by every present visual_features vector; 0 if none.
  std::size_t visual_dim = 0;

  const Post& post(const std::string& id) const {
    auto it = post_index.find(id);
    if (it == post_index.end()) throw DataError("unknown post id: " + id);
    return posts[it->second];
  }
  const User& user(const std::string& id) const {
    auto it = user_index.find(id);
    if (it == user_index.end()) throw DataError("unknown user id: " + id);
    return users[it->second];
  }

  // Rebuilds indexes and enforces every dataset invariant. Throws DataError
  // naming the offending ids on any violation.
  void finalize() {
    post_index.clear();
    user_index.clear();
    visual_dim = 0;
    for (std::size_t i = 0; i < posts.size(); ++i) {
      const Post& p = posts[i];
      if (p.post_id.empty()) throw DataError("post with empty post_id");
      if (!post_index.emplace(p.post_id, i).second) {
        throw DataError("duplicate post_id: " + p.post_id);
      }
      if (p.created_at <= 0) {
        throw DataError("post " + p.post_id + ": created_at must be > 0");
      }
      if (p.visual_features) {
        if (p.visual_features->empty()) {
          throw DataError("post " + p.post_id + ": empty visual_features");
        }
        require_finite(*p.visual_features, "visual_features");
        if (visual_dim == 0) {
          visual_dim = p.visual_features->size();
        } else if (p.visual_features->size() != visual_dim) {
          throw DataError("post " + p.post_id + ": visual_features dimension " +
                          std::to_string(p.visual_features->size()) +
                          " differs from " + std::to_string(visual_dim));
        }
      }
    }
    for (std::size_t i = 0; i < users.size(); ++i) {
      const User& u = users[i];
      if (u.user_id.empty()) throw DataError("user with empty user_id");
      if (!user_index.emplace(u.user_id, i).second) {
        throw DataError("duplicate user_id: " + u.user_id);
      }
      if (u.profile_text.empty()) {
        throw DataError("user " + u.user_id + ": profile_text must be non-empty");
      }
    }
    for (const Interaction& it : interactions) {
      auto pi = post_index.find(it.post_id);
      if (pi == post_index.end()) {
        throw DataError("interaction references unknown post " + it.post_id +
                        " (user " + it.user_id + ")");
      }
      if (!user_index.contains(it.user_id)) {
        throw DataError("interaction references unknown user " + it.user_id +
                        " (post " + it.post_id + ")");
      }
      if (it.acted_at < posts[pi->second].created_at) {
        throw DataError("interaction by " + it.user_id + " on " + it.post_id +
                        " acted_at " + std::to_string(it.acted_at) +
                        " precedes post created_at " +
                        std::to_string(posts[pi->second].created_at));
      }
    }
  }
};

// ---------------------------------------------------------------------------
// JSONL serialization. One record per line, field names exactly as in the
// structs; visual_features as an array of numbers, absent when missing.
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json post_to_json(const Post& p) {
  nlohmann::json j{{"post_id", p.post_id},
                   {"base_text", p.base_text},
                   {"hashtag_text", p.hashtag_text},
                   {"url_text", p.url_text},
                   {"reverse_image_text", p.reverse_image_text},
                   {"created_at", p.created_at}};
  if (p.visual_features) j["visual_features"] = *p.visual_features;
  return j;
}

inline nlohmann::json user_to_json(const User& u) {
  return {{"user_id", u.user_id},
          {"profile_text", u.profile_text},
          {"followee_profile_texts", u.followee_profile_texts}};
}

inline nlohmann::json interaction_to_json(const Interaction& it) {
  return {{"user_id", it.user_id},
          {"post_id", it.post_id},
          {"acted_at", it.acted_at}};
}

template <typename Fn>
void parse_jsonl(const std::filesystem::path& file, Fn&& per_record) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open " + file.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(file.filename().string() + ":" + std::to_string(lineno) +
                      ": parse failure: " + e.what());
    }
    try {
      per_record(j);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(file.filename().string() + ":" + std::to_string(lineno) +
                      ": bad record: " + e.what());
    }
  }
}

inline void write_lines(const std::filesystem::path& file,
                        const std::vector<nlohmann::json>& records) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("cannot write " + file.string());
  for (const auto& j : records) out << j.dump() << "\n";
}

}  // namespace detail

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<nlohmann::json> recs;
  recs.reserve(ds.posts.size());
  for (const Post& p : ds.posts) recs.push_back(detail::post_to_json(p));
  detail::write_lines(dir / "posts.jsonl", recs);
  recs.clear();
  for (const User& u : ds.users) recs.push_back(detail::user_to_json(u));
  detail::write_lines(dir / "users.jsonl", recs);
  recs.clear();
  for (const Interaction& it : ds.interactions) {
    recs.push_back(detail::interaction_to_json(it));
  }
  detail::write_lines(dir / "interactions.jsonl", recs);
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw DataError("dataset directory not found: " + dir.string());
  }
  Dataset ds;
  detail::parse_jsonl(dir / "posts.jsonl", [&](const nlohmann::json& j) {
    Post p;
    p.post_id = j.at("post_id").get<std::string>();
    p.base_text = j.at("base_text").get<std::string>();
    p.hashtag_text = j.at("hashtag_text").get<std::string>();
    p.url_text = j.at("url_text").get<std::string>();
    p.reverse_image_text = j.at("reverse_image_text").get<std::string>();
    p.created_at = j.at("created_at").get<std::int64_t>();
    if (j.contains("visual_features")) {
      p.visual_features = j.at("visual_features").get<Vec>();
    }
    ds.posts.push_back(std::move(p));
  });
  detail::parse_jsonl(dir / "users.jsonl", [&](const nlohmann::json& j) {
    User u;
    u.user_id = j.at("user_id").get<std::string>();
    u.profile_text = j.at("profile_text").get<std::string>();
    u.followee_profile_texts =
        j.at("followee_profile_texts").get<std::vector<std::string>>();
    ds.users.push_back(std::move(u));
  });
  detail::parse_jsonl(dir / "interactions.jsonl", [&](const nlohmann::json& j) {
    Interaction it;
    it.user_id = j.at("user_id").get<std::string>();
    it.post_id = j.at("post_id").get<std::string>();
    it.acted_at = j.at("acted_at").get<std::int64_t>();
    ds.interactions.push_back(std::move(it));
  });
  ds.finalize();
  return ds;
}

// Order-sensitive content hash, used to refuse resuming a checkpoint against
// different data. FNV-1a over every field with unit separators.
inline std::uint64_t dataset_fingerprint(const Dataset& ds) {
  std::uint64_t h = 14695981039346656037ULL;
  auto absorb = [&h](std::string_view s) {
    for (char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ULL;
    }
    h ^= 0x1f;
    h *= 1099511628211ULL;
  };
  for (const Post& p : ds.posts) {
    absorb(p.post_id);
    absorb(p.base_text);
    absorb(p.hashtag_text);
    absorb(p.url_text);
    absorb(p.reverse_image_text);
    absorb(std::to_string(p.created_at));
    if (p.visual_features) {
      for (double v : *p.visual_features) absorb(format_double(v));
    }
  }
  for (const User& u : ds.users) {
    absorb(u.user_id);
    absorb(u.profile_text);
    for (const std::string& t : u.followee_profile_texts) absorb(t);
  }
  for (const Interaction& it : ds.interactions) {
    absorb(it.user_id);
    absorb(it.post_id);
    absorb(std::to_string(it.acted_at));
  }
  return h;
}

// ---------------------------------------------------------------------------
// Time-based split. For each user the holdout_per_user most recent
// interactions (ordered by acted_at, ties by post_id) go to test, the rest
// to train. Users with at most holdout_per_user interactions contribute all
// of them to test and are flagged.
//
// Posts are not split by time; the train dataset keeps every post except
// those that only ever appear in test interactions, so training can never
// touch a held-out-only item. The test dataset keeps the full catalogue.
// ---------------------------------------------------------------------------

struct SplitResult {
  Dataset train;
  Dataset test;
  std::vector<std::string> flagged_users;  // all interactions went to test
};

inline SplitResult time_based_split(const Dataset& ds,
                                    std::size_t holdout_per_user) {
  if (holdout_per_user < 1) {
    throw ConfigError("time_based_split: holdout_per_user must be >= 1");
  }
  std::unordered_map<std::string, std::vector<std::size_t>> by_user;
  for (std::size_t i = 0; i < ds.interactions.size(); ++i) {
    by_user[ds.interactions[i].user_id].push_back(i);
  }

  std::vector<bool> to_test(ds.interactions.size(), false);
  SplitResult out;
  for (const User& u : ds.users) {
    auto it = by_user.find(u.user_id);
    if (it == by_user.end()) {
      out.flagged_users.push_back(u.user_id);
      continue;
    }
    auto& idxs = it->second;
    std::sort(idxs.begin(), idxs.end(), [&](std::size_t a, std::size_t b) {
      const Interaction& ia = ds.interactions[a];
      const Interaction& ib = ds.interactions[b];
      if (ia.acted_at != ib.acted_at) return ia.acted_at < ib.acted_at;
      return ia.post_id < ib.post_id;
    });
    if (idxs.size() <= holdout_per_user) {
      for (std::size_t i : idxs) to_test[i] = true;
      out.flagged_users.push_back(u.user_id);
    } else {
      for (std::size_t i = idxs.size() - holdout_per_user; i < idxs.size(); ++i) {
        to_test[idxs[i]] = true;
      }
    }
  }

  for (std::size_t i = 0; i < ds.interactions.size(); ++i) {
    (to_test[i] ? out.test : out.train).interactions.push_back(ds.interactions[i]);
  }

  std::unordered_set<std::string> train_referenced;
  for (const Interaction& it : out.train.interactions) {
    train_referenced.insert(it.post_id);
  }
  std::unordered_set<std::string> test_referenced;
  for (const Interaction& it : out.test.interactions) {
    test_referenced.insert(it.post_id);
  }
  for (const Post& p : ds.posts) {
    const bool test_only = test_referenced.contains(p.post_id) &&
                           !train_referenced.contains(p.post_id);
    if (!test_only) out.train.posts.push_back(p);
    out.test.posts.push_back(p);
  }
  out.train.users = ds.users;
  out.test.users = ds.users;
  out.train.finalize();
  out.test.finalize();
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data with a hidden topic per user and post. Texts draw words
// from disjoint per-topic vocabulary slices; visual features sit in
// per-topic spherical clusters; interactions target same-topic posts except
// with probability `noise`, where they target a uniformly random post of a
// different topic. Generation is a pure function of (config, rng seed).
// ---------------------------------------------------------------------------

struct SynthConfig {
  std::size_t topics = 5;
  std::size_t users = 50;
  std::size_t posts = 1000;
  std::size_t interactions_per_user = 20;
  std::size_t vocab_size = 500;
  std::size_t visual_dim = 16;
  std::int64_t horizon_seconds = 14 * 86400;
  double noise = 0.1;

  void validate() const {
    if (topics == 0) throw ConfigError("synth: topics must be >= 1");
    if (users == 0) throw ConfigError("synth: users must be >= 1");
    if (posts < topics) throw ConfigError("synth: need at least one post per topic");
    if (vocab_size < 3 * topics) {
      throw ConfigError("synth: vocab_size must be at least 3x topics");
    }
    if (visual_dim == 0) throw ConfigError("synth: visual_dim must be >= 1");
    if (horizon_seconds < 2) throw ConfigError("synth: horizon too short");
    if (noise < 0.0 || noise > 1.0) throw ConfigError("synth: noise must be in [0,1]");
    if (noise > 0.0 && topics < 2) {
      throw ConfigError("synth: cross-topic noise needs at least 2 topics");
    }
    // Same-topic picks are drawn without repeats per user.
    if (interactions_per_user + 1 > posts / topics) {
      throw ConfigError("synth: interactions_per_user too large for posts/topics");
    }
  }
};

struct SynthResult {
  Dataset dataset;
  std::vector<std::size_t> post_topic;  // parallel to dataset.posts
  std::vector<std::size_t> user_topic;  // parallel to dataset.users
};

namespace detail {

inline std::string synth_word(std::size_t index, std::size_t vocab_size) {
  std::size_t width = 1;
  for (std::size_t v = vocab_size - 1; v >= 10; v /= 10) ++width;
  std::string digits = std::to_string(index);
  return "w" + std::string(width - digits.size(), '0') + digits;
}

// Words drawn uniformly from the topic's vocabulary slice.
inline std::string synth_text(std::size_t topic, std::size_t words,
                              const SynthConfig& cfg, Rng& rng) {
  const std::size_t slice = cfg.vocab_size / cfg.topics;
  const std::size_t lo = topic * slice;
  std::string out;
  for (std::size_t w = 0; w < words; ++w) {
    if (w) out += ' ';
    out += synth_word(lo + rng.below(slice), cfg.vocab_size);
  }
  return out;
}

inline std::string padded_id(char prefix, std::size_t index, std::size_t total) {
  std::size_t width = 1;
  for (std::size_t v = total - 1; v >= 10; v /= 10) ++width;
  std::string digits = std::to_string(index);
  return prefix + std::string(width - digits.size(), '0') + digits;
}

}  // namespace detail

inline SynthResult generate_synthetic(const SynthConfig& cfg, Rng& rng) {
  cfg.validate();
  SynthResult out;
  Dataset& ds = out.dataset;

  // Topic centroids for visual features.
  std::vector<Vec> centroids(cfg.topics, Vec(cfg.visual_dim, 0.0));
  for (auto& c : centroids) {
    for (double& x : c) x = rng.normal();
  }

  constexpr std::size_t kBaseWords = 8;
  constexpr std::size_t kHashtagWords = 2;
  constexpr std::size_t kContextWords = 5;
  constexpr std::size_t kProfileWords = 6;
  constexpr std::size_t kFollowees = 3;
  constexpr double kUrlCoverage = 0.5;
  constexpr double kImageCoverage = 0.9;
  constexpr double kVisualSigma = 0.3;
  const std::int64_t act_delay_max = 3600;

  ds.posts.reserve(cfg.posts);
  out.post_topic.reserve(cfg.posts);
  for (std::size_t i = 0; i < cfg.posts; ++i) {
    const std::size_t topic = i % cfg.topics;
    Post p;
    p.post_id = detail::padded_id('p', i, cfg.posts);
    p.base_text = detail::synth_text(topic, kBaseWords, cfg, rng);
    p.hashtag_text = detail::synth_text(topic, kHashtagWords, cfg, rng);
    if (rng.u01() < kUrlCoverage) {
      p.url_text = detail::synth_text(topic, kContextWords, cfg, rng);
    }
    const bool has_image = rng.u01() < kImageCoverage;
    if (has_image) {
      p.reverse_image_text = detail::synth_text(topic, kContextWords, cfg, rng);
      Vec v(cfg.visual_dim);
      for (std::size_t d = 0; d < cfg.visual_dim; ++d) {
        v[d] = centroids[topic][d] + kVisualSigma * rng.normal();
      }
      p.visual_features = std::move(v);
    }
    p.created_at = 1 + static_cast<std::int64_t>(
                           rng.below(static_cast<std::uint64_t>(cfg.horizon_seconds)));
    ds.posts.push_back(std::move(p));
    out.post_topic.push_back(topic);
  }

  ds.users.reserve(cfg.users);
  out.user_topic.reserve(cfg.users);
  for (std::size_t i = 0; i < cfg.users; ++i) {
    const std::size_t topic = i % cfg.topics;
    User u;
    u.user_id = detail::padded_id('u', i, cfg.users);
    u.profile_text = detail::synth_text(topic, kProfileWords, cfg, rng);
    for (std::size_t f = 0; f < kFollowees; ++f) {
      u.followee_profile_texts.push_back(
          detail::synth_text(topic, kProfileWords, cfg, rng));
    }
    ds.users.push_back(std::move(u));
    out.user_topic.push_back(topic);
  }

  // Per-topic post index lists for interaction targeting.
  std::vector<std::vector<std::size_t>> topic_posts(cfg.topics);
  for (std::size_t i = 0; i < cfg.posts; ++i) {
    topic_posts[out.post_topic[i]].push_back(i);
  }

  for (std::size_t ui = 0; ui < cfg.users; ++ui) {
    const std::size_t topic = out.user_topic[ui];
    std::unordered_set<std::size_t> seen;
    for (std::size_t k = 0; k < cfg.interactions_per_user; ++k) {
      std::size_t post = 0;
      for (;;) {
        const bool cross = cfg.noise > 0.0 && rng.u01() < cfg.noise;
        if (cross) {
          std::size_t other = (topic + 1 + rng.below(cfg.topics - 1)) % cfg.topics;
          const auto& pool = topic_posts[other];
          post = pool[rng.below(pool.size())];
        } else {
          const auto& pool = topic_posts[topic];
          post = pool[rng.below(pool.size())];
        }
        if (seen.insert(post).second) break;
      }
      Interaction it;
      it.user_id = ds.users[ui].user_id;
      it.post_id = ds.posts[post].post_id;
      it.acted_at = ds.posts[post].created_at + 1 +
                    static_cast<std::int64_t>(
                        rng.below(static_cast<std::uint64_t>(act_delay_max)));
      ds.interactions.push_back(std::move(it));
    }
  }

  ds.finalize();
  return out;
}

}  // namespace latentrank
