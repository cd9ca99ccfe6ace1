#pragma once

// Large-margin objective: cross-instance hinge (user closer to acted posts
// than to non-acted posts by margin m) plus lambda-weighted within-instance
// hinge (post closer to same-cluster posts than to out-of-cluster posts by
// the same margin), with exact subgradients with respect to embeddings.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "latentrank/errors.hpp"
#include "latentrank/numkernel.hpp"

namespace latentrank {

struct CrossTriplet {
  std::size_t user = 0;  // row into the user embedding matrix
  std::size_t pos = 0;   // rows into the post embedding matrix
  std::size_t neg = 0;
};

struct WithinTriplet {
  std::size_t anchor = 0;  // rows into the post embedding matrix
  std::size_t same = 0;    // shares the anchor's semantic cluster
  std::size_t other = 0;   // outside the anchor's cluster
};

struct TripletBatch {
  std::vector<CrossTriplet> cross;
  std::vector<WithinTriplet> within;
  double margin = 0.2;
  double lambda = 0.3;
};

enum class Reduction { kSum, kMean };

namespace detail {

inline double checked_distance(std::span<const double> a,
                               std::span<const double> b, const char* what) {
  for (double x : a) {
    if (!std::isfinite(x)) throw NumericError(std::string(what) + ": non-finite input");
  }
  for (double x : b) {
    if (!std::isfinite(x)) throw NumericError(std::string(what) + ": non-finite input");
  }
  return euclidean_distance(a, b);
}

}  // namespace detail

// max(0, m + d(anchor, closer) - d(anchor, farther)); zero exactly when the
// margin constraint holds weakly.
inline double cross_instance_loss(std::span<const double> user,
                                  std::span<const double> pos,
                                  std::span<const double> neg, double margin) {
  const double dp = detail::checked_distance(user, pos, "cross_instance_loss");
  const double dn = detail::checked_distance(user, neg, "cross_instance_loss");
  return std::max(0.0, margin + dp - dn);
}

inline double within_instance_loss(std::span<const double> anchor,
                                   std::span<const double> same,
                                   std::span<const double> other, double margin) {
  const double ds = detail::checked_distance(anchor, same, "within_instance_loss");
  const double dn = detail::checked_distance(anchor, other, "within_instance_loss");
  return std::max(0.0, margin + ds - dn);
}

struct BatchLossResult {
  double loss = 0.0;
  // Parts before the lambda weighting: loss = cross_part + lambda * within_part.
  double cross_part = 0.0;
  double within_part = 0.0;
  std::size_t active_cross = 0;
  std::size_t active_within = 0;
  DenseMatrix d_users;  // gradient per user embedding row
  DenseMatrix d_posts;  // gradient per post embedding row
};

// Exact subgradients of the hinge sums. Hinge-inactive triplets contribute
// nothing; an active hinge with a zero pair distance contributes a zero
// gradient for that pair (a valid, stable subgradient choice). Mean
// reduction averages each part over its own triplet count.
inline BatchLossResult batch_loss(const DenseMatrix& user_emb,
                                  const DenseMatrix& post_emb,
                                  const TripletBatch& batch,
                                  Reduction reduction = Reduction::kSum) {
  if (!(batch.margin > 0.0)) throw ConfigError("batch_loss: margin must be > 0");
  if (!(batch.lambda >= 0.0)) throw ConfigError("batch_loss: lambda must be >= 0");
  require_finite(user_emb.data, "user embeddings");
  require_finite(post_emb.data, "post embeddings");
  if (user_emb.cols != post_emb.cols) {
    throw ShapeError("batch_loss: embedding dims " +
                     std::to_string(user_emb.cols) + " vs " +
                     std::to_string(post_emb.cols));
  }
  for (const CrossTriplet& t : batch.cross) {
    if (t.user >= user_emb.rows || t.pos >= post_emb.rows || t.neg >= post_emb.rows) {
      throw ShapeError("batch_loss: cross triplet index out of range");
    }
  }
  for (const WithinTriplet& t : batch.within) {
    if (t.anchor >= post_emb.rows || t.same >= post_emb.rows ||
        t.other >= post_emb.rows) {
      throw ShapeError("batch_loss: within triplet index out of range");
    }
  }

  BatchLossResult res;
  res.d_users = DenseMatrix(user_emb.rows, user_emb.cols);
  res.d_posts = DenseMatrix(post_emb.rows, post_emb.cols);

  const double cross_scale =
      reduction == Reduction::kSum
          ? 1.0
          : 1.0 / static_cast<double>(std::max<std::size_t>(1, batch.cross.size()));
  const double within_scale =
      reduction == Reduction::kSum
          ? 1.0
          : 1.0 / static_cast<double>(std::max<std::size_t>(1, batch.within.size()));

  // Adds scale * d d(a,b)/d a into row `ra` of `da` and the mirrored term
  // into row `rb` of `db`; no-op when d(a,b) is zero.
  auto add_pair_grad = [](DenseMatrix& da, std::size_t ra, std::span<const double> a,
                          DenseMatrix& db, std::size_t rb, std::span<const double> b,
                          double dist, double scale) {
    if (dist == 0.0) return;
    const double s = scale / dist;
    double* arow = da.data.data() + ra * da.cols;
    double* brow = db.data.data() + rb * db.cols;
    for (std::size_t j = 0; j < a.size(); ++j) {
      const double diff = a[j] - b[j];
      arow[j] += s * diff;
      brow[j] -= s * diff;
    }
  };

  for (const CrossTriplet& t : batch.cross) {
    auto u = user_emb.row(t.user);
    auto p = post_emb.row(t.pos);
    auto n = post_emb.row(t.neg);
    const double dp = euclidean_distance(u, p);
    const double dn = euclidean_distance(u, n);
    const double hinge = batch.margin + dp - dn;
    if (hinge <= 0.0) continue;
    ++res.active_cross;
    res.cross_part += cross_scale * hinge;
    add_pair_grad(res.d_users, t.user, u, res.d_posts, t.pos, p, dp, cross_scale);
    add_pair_grad(res.d_users, t.user, u, res.d_posts, t.neg, n, dn, -cross_scale);
  }

  const double lw = batch.lambda * within_scale;
  for (const WithinTriplet& t : batch.within) {
    auto a = post_emb.row(t.anchor);
    auto s = post_emb.row(t.same);
    auto o = post_emb.row(t.other);
    const double ds = euclidean_distance(a, s);
    const double dn = euclidean_distance(a, o);
    const double hinge = batch.margin + ds - dn;
    if (hinge <= 0.0) continue;
    ++res.active_within;
    res.within_part += within_scale * hinge;
    add_pair_grad(res.d_posts, t.anchor, a, res.d_posts, t.same, s, ds, lw);
    add_pair_grad(res.d_posts, t.anchor, a, res.d_posts, t.other, o, dn, -lw);
  }

  res.loss = res.cross_part + batch.lambda * res.within_part;
  return res;
}

inline const char* reduction_name(Reduction r) {
  return r == Reduction::kSum ? "sum" : "mean";
}

inline Reduction reduction_from_name(const std::string& s) {
  if (s == "sum") return Reduction::kSum;
  if (s == "mean") return Reduction::kMean;
  throw ConfigError("unknown reduction: " + s + " (expected sum or mean)");
}

}  // namespace latentrank
