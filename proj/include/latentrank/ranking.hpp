#pragma once

// Inference and evaluation: embed users and candidate posts, rank candidates
// by embedding distance with post_id tie-breaks, and compute Precision@K and
// Recall@K aggregates over a test split.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "latentrank/datamodel.hpp"
#include "latentrank/encoding.hpp"
#include "latentrank/errors.hpp"
#include "latentrank/network.hpp"

namespace latentrank {

// Eval-mode batch embeddings from raw records.
inline DenseMatrix embed_posts_eval(const NetworkParams& params,
                                    const std::vector<const Post*>& posts,
                                    const EncodingConfig& enc_cfg) {
  std::vector<PostDescriptorInput> inputs;
  inputs.reserve(posts.size());
  for (const Post* p : posts) inputs.push_back(post_descriptor_input(*p, enc_cfg));
  PackedPosts packed = pack_post_inputs(inputs);
  return embed_posts(params, packed.text, packed.visual, packed.missing,
                     Mode::kEval)
      .embeddings;
}

inline DenseMatrix embed_users_eval(const NetworkParams& params,
                                    const std::vector<const User*>& users,
                                    const SemanticClusters& user_clusters) {
  std::vector<Vec> descs;
  descs.reserve(users.size());
  for (const User* u : users) descs.push_back(user_descriptor(*u, user_clusters));
  return embed_users(params, pack_rows(descs), Mode::kEval).embeddings;
}

struct RankedPost {
  std::string post_id;
  double distance = 0.0;
};

// Embeds the user once and every candidate in one eval pass, sorts ascending
// by distance with post_id tie-breaks, returns the top k.
inline std::vector<RankedPost> rank_for_user(const NetworkParams& params,
                                             const User& user,
                                             const std::vector<const Post*>& candidates,
                                             const SemanticClusters& user_clusters,
                                             const EncodingConfig& enc_cfg,
                                             std::size_t k) {
  if (candidates.empty()) throw ConfigError("rank_for_user: no candidates");
  if (k < 1) throw ConfigError("rank_for_user: k must be >= 1");
  const Vec u = embed_user_one(params, user_descriptor(user, user_clusters));
  const DenseMatrix post_emb = embed_posts_eval(params, candidates, enc_cfg);
  std::vector<RankedPost> out;
  out.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    out.push_back({candidates[i]->post_id, euclidean_distance(u, post_emb.row(i))});
  }
  std::sort(out.begin(), out.end(), [](const RankedPost& a, const RankedPost& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.post_id < b.post_id;
  });
  if (out.size() > k) out.resize(k);
  return out;
}

// p = hits-in-top-k / k (denominator stays k even when the list is shorter);
// r = hits-in-top-k / |liked|.
inline std::pair<double, double> precision_recall_at_k(
    const std::vector<std::string>& ranked,
    const std::unordered_set<std::string>& liked, std::size_t k) {
  if (k < 1) throw ConfigError("precision_recall_at_k: k must be >= 1");
  if (liked.empty()) {
    throw DegenerateInputError("precision_recall_at_k: empty liked set");
  }
  std::size_t hits = 0;
  const std::size_t upto = std::min(k, ranked.size());
  for (std::size_t i = 0; i < upto; ++i) {
    if (liked.contains(ranked[i])) ++hits;
  }
  return {static_cast<double>(hits) / static_cast<double>(k),
          static_cast<double>(hits) / static_cast<double>(liked.size())};
}

struct UserRanking {
  std::string user_id;
  std::vector<RankedPost> ranked;    // top max(ks) candidates
  std::vector<std::size_t> hits_at;  // parallel to report ks
  std::vector<double> p_at, r_at;
  std::size_t liked_count = 0;
  std::size_t candidate_count = 0;
};

struct RankReport {
  std::vector<std::size_t> ks;
  std::vector<UserRanking> per_user;          // evaluated users only
  std::vector<double> precision_at, recall_at;  // unweighted means over users
  std::size_t users_evaluated = 0;
  std::size_t users_no_test = 0;      // no held-out interactions
  std::size_t users_empty_liked = 0;  // held-out posts all seen in training
  // Mean over evaluated users of liked/candidates: the precision a uniformly
  // random ranking achieves in expectation.
  double mean_like_rate = 0.0;
};

// Candidate pool: every post referenced by a held-out interaction, minus the
// posts the user acted on during training. Per-user metrics averaged with
// equal weight per user.
inline RankReport evaluate(const NetworkParams& params, const Dataset& test,
                           const Dataset& train,
                           const SemanticClusters& user_clusters,
                           const EncodingConfig& enc_cfg,
                           const std::vector<std::size_t>& ks) {
  if (ks.empty()) throw ConfigError("evaluate: no K values");
  for (std::size_t k : ks) {
    if (k < 1) throw ConfigError("evaluate: K values must be >= 1");
  }
  if (test.interactions.empty()) throw DataError("evaluate: empty test split");

  RankReport report;
  report.ks = ks;
  const std::size_t max_k = *std::max_element(ks.begin(), ks.end());

  // Deterministic pool order: unique held-out post ids, ascending.
  std::vector<std::string> pool_ids;
  {
    std::unordered_set<std::string> seen;
    for (const Interaction& it : test.interactions) {
      if (seen.insert(it.post_id).second) pool_ids.push_back(it.post_id);
    }
    std::sort(pool_ids.begin(), pool_ids.end());
  }
  std::vector<const Post*> pool;
  pool.reserve(pool_ids.size());
  for (const std::string& id : pool_ids) pool.push_back(&test.post(id));
  const DenseMatrix pool_emb = embed_posts_eval(params, pool, enc_cfg);

  std::unordered_map<std::string, std::vector<std::string>> test_by_user;
  for (const Interaction& it : test.interactions) {
    test_by_user[it.user_id].push_back(it.post_id);
  }
  std::unordered_map<std::string, std::unordered_set<std::string>> train_acted;
  for (const Interaction& it : train.interactions) {
    train_acted[it.user_id].insert(it.post_id);
  }

  std::vector<double> p_sum(ks.size(), 0.0), r_sum(ks.size(), 0.0);
  double like_rate_sum = 0.0;

  for (const User& user : test.users) {
    auto tb = test_by_user.find(user.user_id);
    if (tb == test_by_user.end()) {
      ++report.users_no_test;
      continue;
    }
    const std::unordered_set<std::string>* acted = nullptr;
    if (auto ta = train_acted.find(user.user_id); ta != train_acted.end()) {
      acted = &ta->second;
    }
    std::vector<std::size_t> cand;  // indices into pool
    cand.reserve(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (acted == nullptr || !acted->contains(pool_ids[i])) cand.push_back(i);
    }
    std::unordered_set<std::string> liked;
    for (const std::string& pid : tb->second) {
      if (acted == nullptr || !acted->contains(pid)) liked.insert(pid);
    }
    if (liked.empty() || cand.empty()) {
      ++report.users_empty_liked;
      continue;
    }

    const Vec u_emb = embed_user_one(params, user_descriptor(user, user_clusters));
    std::vector<RankedPost> ranked;
    ranked.reserve(cand.size());
    for (std::size_t i : cand) {
      ranked.push_back({pool_ids[i], euclidean_distance(u_emb, pool_emb.row(i))});
    }
    std::sort(ranked.begin(), ranked.end(),
              [](const RankedPost& a, const RankedPost& b) {
                if (a.distance != b.distance) return a.distance < b.distance;
                return a.post_id < b.post_id;
              });

    UserRanking ur;
    ur.user_id = user.user_id;
    ur.liked_count = liked.size();
    ur.candidate_count = cand.size();
    std::vector<std::string> ranked_ids;
    ranked_ids.reserve(ranked.size());
    for (const RankedPost& rp : ranked) ranked_ids.push_back(rp.post_id);
    for (std::size_t ki = 0; ki < ks.size(); ++ki) {
      auto [p, r] = precision_recall_at_k(ranked_ids, liked, ks[ki]);
      std::size_t hits = 0;
      for (std::size_t i = 0; i < std::min(ks[ki], ranked_ids.size()); ++i) {
        if (liked.contains(ranked_ids[i])) ++hits;
      }
      ur.hits_at.push_back(hits);
      ur.p_at.push_back(p);
      ur.r_at.push_back(r);
      p_sum[ki] += p;
      r_sum[ki] += r;
    }
    if (ranked.size() > max_k) ranked.resize(max_k);
    ur.ranked = std::move(ranked);
    like_rate_sum += static_cast<double>(ur.liked_count) /
                     static_cast<double>(ur.candidate_count);
    report.per_user.push_back(std::move(ur));
    ++report.users_evaluated;
  }

  if (report.users_evaluated == 0) {
    throw DataError("evaluate: no user had a non-empty liked set");
  }
  const double n = static_cast<double>(report.users_evaluated);
  for (std::size_t ki = 0; ki < ks.size(); ++ki) {
    report.precision_at.push_back(p_sum[ki] / n);
    report.recall_at.push_back(r_sum[ki] / n);
  }
  report.mean_like_rate = like_rate_sum / n;
  return report;
}

// Aggregates as CSV: one row per K.
inline void write_rank_report_csv(const RankReport& r,
                                  const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("cannot write " + file.string());
  out << "k,precision,recall\n";
  for (std::size_t i = 0; i < r.ks.size(); ++i) {
    out << r.ks[i] << "," << format_double(r.precision_at[i]) << ","
        << format_double(r.recall_at[i]) << "\n";
  }
}

// Per-user detail as one JSON record per line.
inline void write_rank_report_users(const RankReport& r,
                                    const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("cannot write " + file.string());
  for (const UserRanking& u : r.per_user) {
    nlohmann::json j{{"user_id", u.user_id},
                     {"liked", u.liked_count},
                     {"candidates", u.candidate_count}};
    nlohmann::json ranked = nlohmann::json::array();
    for (const RankedPost& rp : u.ranked) {
      ranked.push_back({{"post_id", rp.post_id}, {"distance", rp.distance}});
    }
    j["ranked"] = std::move(ranked);
    for (std::size_t ki = 0; ki < r.ks.size(); ++ki) {
      const std::string k = std::to_string(r.ks[ki]);
      j["hits_at_" + k] = u.hits_at[ki];
      j["p_at_" + k] = u.p_at[ki];
      j["r_at_" + k] = u.r_at[ki];
    }
    out << j.dump() << "\n";
  }
}

}  // namespace latentrank
