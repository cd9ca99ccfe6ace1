#pragma once

// Training triplet construction: uniform positive draws, time-aware negative
// sampling without replacement inside a temporal window, and within-instance
// triplet augmentation from the post-side semantic clusters.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "latentrank/datamodel.hpp"
#include "latentrank/encoding.hpp"
#include "latentrank/errors.hpp"
#include "latentrank/numkernel.hpp"
#include "latentrank/objective.hpp"

namespace latentrank {

enum class TimeKernel { kTriangular, kExponential };

inline const char* time_kernel_name(TimeKernel k) {
  return k == TimeKernel::kTriangular ? "triangular" : "exponential";
}

inline TimeKernel time_kernel_from_name(const std::string& s) {
  if (s == "triangular") return TimeKernel::kTriangular;
  if (s == "exponential") return TimeKernel::kExponential;
  throw ConfigError("unknown time kernel: " + s +
                    " (expected triangular or exponential)");
}

struct SamplerConfig {
  std::int64_t window_seconds = 3600;       // T_r
  std::size_t negatives_per_positive = 10;
  std::size_t minibatch_size = 64;
  TimeKernel kernel = TimeKernel::kTriangular;

  void validate() const {
    if (window_seconds <= 0) throw ConfigError("sampler: window_seconds must be > 0");
    if (negatives_per_positive < 1) {
      throw ConfigError("sampler: negatives_per_positive must be >= 1");
    }
    if (minibatch_size < 1) throw ConfigError("sampler: minibatch_size must be >= 1");
  }
};

// Triangular: w = max(0, 1 - |dt|/T_r), exactly zero at the window edge.
// Exponential: w = exp(-|dt|/T_r), never zero.
inline double time_weight(std::int64_t post_created, std::int64_t acted_at,
                          const SamplerConfig& cfg) {
  const double adt = std::abs(static_cast<double>(post_created - acted_at));
  const double tr = static_cast<double>(cfg.window_seconds);
  if (cfg.kernel == TimeKernel::kTriangular) {
    return std::max(0.0, 1.0 - adt / tr);
  }
  return std::exp(-adt / tr);
}

// Draws up to cfg.negatives_per_positive candidate posts without replacement.
// Selection is sequential renormalization: each step picks among the not yet
// selected positive-weight candidates in proportion to w, where w is the
// kernel weight centered at the positive's acted_at. Once no positive-weight
// candidate remains, the remainder is drawn uniformly over the not yet
// selected candidates. Returns fewer than requested only when the candidate
// list itself is smaller.
inline std::vector<const Post*> time_aware_negatives(
    const Interaction& positive, const std::vector<const Post*>& candidates,
    const SamplerConfig& cfg, Rng& rng) {
  cfg.validate();
  if (candidates.empty()) {
    throw SamplingError("no candidate posts for user " + positive.user_id);
  }
  const std::size_t want = std::min(cfg.negatives_per_positive, candidates.size());

  std::vector<double> w(candidates.size());
  double total = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    w[i] = time_weight(candidates[i]->created_at, positive.acted_at, cfg);
    total += w[i];
  }

  std::vector<const Post*> out;
  out.reserve(want);
  std::vector<unsigned char> taken(candidates.size(), 0);

  while (out.size() < want && total > 0.0) {
    double r = rng.u01() * total;
    std::size_t pick = candidates.size();
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (taken[i] || w[i] <= 0.0) continue;
      r -= w[i];
      if (r <= 0.0) {
        pick = i;
        break;
      }
    }
    if (pick == candidates.size()) {  // accumulated roundoff: take the last live one
      for (std::size_t i = candidates.size(); i-- > 0;) {
        if (!taken[i] && w[i] > 0.0) {
          pick = i;
          break;
        }
      }
    }
    if (pick == candidates.size()) break;
    taken[pick] = 1;
    total -= w[pick];
    if (total < 0.0) total = 0.0;
    out.push_back(candidates[pick]);
  }

  // Uniform fallback over whatever is still unselected.
  std::size_t remaining = candidates.size() - out.size();
  while (out.size() < want) {
    std::uint64_t j = rng.below(remaining);
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (taken[i]) continue;
      if (j == 0) {
        taken[i] = 1;
        out.push_back(candidates[i]);
        break;
      }
      --j;
    }
    --remaining;
  }
  return out;
}

struct MinibatchSample {
  std::vector<std::size_t> user_rows;  // dataset user indices, deduplicated
  std::vector<std::size_t> post_rows;  // dataset post indices, deduplicated
  TripletBatch batch;                  // indices reference the rows above
  std::size_t within_skipped = 0;      // anchors with no same or no other post
  std::vector<std::size_t> positive_interactions;  // dataset interaction indices
};

// Precomputes per-user acted sets and per-post cluster membership, then
// assembles minibatches on demand. Draw order per positive: interaction
// index, negative draws, then per cross triplet one same-cluster draw and
// one out-of-cluster draw.
class TripletSampler {
 public:
  TripletSampler(const Dataset& train, const SemanticClusters& post_clusters,
                 const EncodingConfig& enc_cfg, SamplerConfig cfg)
      : ds_(&train), cfg_(cfg) {
    cfg_.validate();
    if (train.interactions.empty()) {
      throw SamplingError("sampler: dataset has no interactions");
    }
    post_cluster_.resize(train.posts.size());
    cluster_members_.assign(post_clusters.k, {});
    for (std::size_t i = 0; i < train.posts.size(); ++i) {
      const auto input = post_descriptor_input(train.posts[i], enc_cfg);
      const std::size_t c = post_clusters.assign(input.text_vector);
      post_cluster_[i] = c;
      cluster_members_[c].push_back(i);  // ascending by construction
    }
    acted_.resize(train.users.size());
    for (const Interaction& it : train.interactions) {
      acted_[train.user_index.at(it.user_id)].insert(
          train.post_index.at(it.post_id));
    }
  }

  const std::vector<std::size_t>& post_clusters() const { return post_cluster_; }

  // margin/lambda are stamped onto the returned batch for the objective.
  MinibatchSample next(Rng& rng, double margin, double lambda) const {
    MinibatchSample out;
    out.batch.margin = margin;
    out.batch.lambda = lambda;

    std::unordered_map<std::size_t, std::size_t> user_row, post_row;
    auto user_row_of = [&](std::size_t user_idx) {
      auto [it, inserted] = user_row.emplace(user_idx, out.user_rows.size());
      if (inserted) out.user_rows.push_back(user_idx);
      return it->second;
    };
    auto post_row_of = [&](std::size_t post_idx) {
      auto [it, inserted] = post_row.emplace(post_idx, out.post_rows.size());
      if (inserted) out.post_rows.push_back(post_idx);
      return it->second;
    };

    for (std::size_t b = 0; b < cfg_.minibatch_size; ++b) {
      const std::size_t ii = static_cast<std::size_t>(
          rng.below(ds_->interactions.size()));
      out.positive_interactions.push_back(ii);
      const Interaction& pos = ds_->interactions[ii];
      const std::size_t user_idx = ds_->user_index.at(pos.user_id);
      const std::size_t pos_idx = ds_->post_index.at(pos.post_id);

      std::vector<const Post*> candidates;
      candidates.reserve(ds_->posts.size());
      const auto& acted = acted_[user_idx];
      for (std::size_t pi = 0; pi < ds_->posts.size(); ++pi) {
        if (!acted.contains(pi)) candidates.push_back(&ds_->posts[pi]);
      }
      const auto negatives = time_aware_negatives(pos, candidates, cfg_, rng);

      const std::size_t u_row = user_row_of(user_idx);
      const std::size_t p_row = post_row_of(pos_idx);
      for (const Post* neg : negatives) {
        const std::size_t neg_idx = ds_->post_index.at(neg->post_id);
        out.batch.cross.push_back({u_row, p_row, post_row_of(neg_idx)});
        add_within_triplet(pos_idx, p_row, rng, post_row_of, out);
      }
    }
    return out;
  }

 private:
  template <typename RowFn>
  void add_within_triplet(std::size_t anchor_idx, std::size_t anchor_row, Rng& rng,
                          RowFn&& post_row_of, MinibatchSample& out) const {
    const std::size_t c = post_cluster_[anchor_idx];
    const auto& members = cluster_members_[c];
    const std::size_t outside = ds_->posts.size() - members.size();
    if (members.size() < 2 || outside == 0) {
      ++out.within_skipped;
      return;
    }
    // Uniform over the anchor's cluster minus the anchor: one draw, shifted
    // past the anchor's position in the sorted member list.
    const std::size_t a_pos = static_cast<std::size_t>(
        std::lower_bound(members.begin(), members.end(), anchor_idx) -
        members.begin());
    std::size_t j = static_cast<std::size_t>(rng.below(members.size() - 1));
    if (j >= a_pos) ++j;
    const std::size_t same_idx = members[j];

    // Uniform over the complement: draw a rank, then shift it past every
    // member with a smaller or equal post index.
    std::size_t target = static_cast<std::size_t>(rng.below(outside));
    for (std::size_t m : members) {
      if (m <= target) ++target;
    }
    const std::size_t other_idx = target;

    out.batch.within.push_back(
        {anchor_row, post_row_of(same_idx), post_row_of(other_idx)});
  }

  const Dataset* ds_;
  SamplerConfig cfg_;
  std::vector<std::size_t> post_cluster_;
  std::vector<std::vector<std::size_t>> cluster_members_;
  std::vector<std::unordered_set<std::size_t>> acted_;
};

}  // namespace latentrank
