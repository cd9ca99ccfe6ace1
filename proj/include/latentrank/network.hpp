#pragma once

// Two-branch embedding network. Post branch: text and visual sub-branches
// fused by a fully-connected layer, then an embedding stack. User branch:
// two fully-connected layers, then its own embedding stack. Both branches
// end with batch normalization after the last linear layer followed by L2
// normalization, so outputs are unit vectors and inner products are
// monotone in Euclidean distance.
//
// All trainable tensors live in one flat vector ordered by a layout table;
// gradients, momentum buffers and serialization reuse that layout.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "latentrank/errors.hpp"
#include "latentrank/numkernel.hpp"

namespace latentrank {

enum class Mode { kTrain, kEval };

struct NetworkConfig {
  std::size_t text_dim = 256;        // hashed bag-of-words width
  std::size_t visual_dim = 16;       // precomputed visual feature width
  std::size_t user_dim = 32;         // user-side cluster count
  std::size_t hidden_dim = 128;      // sub-branch fully-connected width
  std::size_t descriptor_dim = 64;   // fused descriptor width
  std::size_t embedding_dim = 64;    // final embedding width
  std::size_t embedding_layers = 2;  // linear layers per embedding stack
  double dropout_rate = 0.5;         // after each ReLU inside embedding stacks
  double bn_momentum = 0.9;          // kept fraction of old running stats
  double bn_epsilon = 1e-5;
  bool learnable_no_image = false;   // trained stand-in for missing visuals

  void validate() const {
    if (text_dim < 1 || visual_dim < 1 || user_dim < 1 || hidden_dim < 1 ||
        descriptor_dim < 1 || embedding_dim < 1) {
      throw ConfigError("network: all dimensions must be >= 1");
    }
    if (embedding_layers < 1) {
      throw ConfigError("network: embedding_layers must be >= 1");
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
      throw ConfigError("network: dropout_rate must be in [0,1)");
    }
    if (!(bn_momentum >= 0.0 && bn_momentum < 1.0)) {
      throw ConfigError("network: bn_momentum must be in [0,1)");
    }
    if (!(bn_epsilon > 0.0)) {
      throw ConfigError("network: bn_epsilon must be > 0");
    }
  }
};

struct TensorInfo {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;  // 1 for vectors
  std::size_t cols = 0;
  bool weight_decay = false;

  std::size_t size() const { return rows * cols; }
};

// Layout order is the contract for initialization draws, SGD traversal and
// checkpoint serialization: post branch, user branch, then no_image.
inline std::vector<TensorInfo> network_layout(const NetworkConfig& cfg) {
  cfg.validate();
  std::vector<TensorInfo> out;
  std::size_t offset = 0;
  auto push = [&](std::string name, std::size_t r, std::size_t c, bool decay) {
    out.push_back({std::move(name), offset, r, c, decay});
    offset += r * c;
  };
  auto push_linear = [&](const std::string& base, std::size_t in, std::size_t o) {
    push(base + ".w", in, o, true);
    push(base + ".b", 1, o, false);
  };
  auto push_stack = [&](const std::string& base) {
    for (std::size_t i = 0; i < cfg.embedding_layers; ++i) {
      const std::size_t in = i == 0 ? cfg.descriptor_dim : cfg.embedding_dim;
      push_linear(base + "." + std::to_string(i), in, cfg.embedding_dim);
    }
  };
  push_linear("post_text_fc", cfg.text_dim, cfg.hidden_dim);
  push_linear("post_visual_fc", cfg.visual_dim, cfg.hidden_dim);
  push_linear("post_fuse_fc", 2 * cfg.hidden_dim, cfg.descriptor_dim);
  push_stack("post_embed");
  push("post_bn.gamma", 1, cfg.embedding_dim, true);
  push("post_bn.beta", 1, cfg.embedding_dim, false);
  push_linear("user_fc1", cfg.user_dim, cfg.hidden_dim);
  push_linear("user_fc2", cfg.hidden_dim, cfg.descriptor_dim);
  push_stack("user_embed");
  push("user_bn.gamma", 1, cfg.embedding_dim, true);
  push("user_bn.beta", 1, cfg.embedding_dim, false);
  if (cfg.learnable_no_image) {
    push("no_image", 1, cfg.visual_dim, false);
  }
  return out;
}

struct NetworkParams {
  NetworkConfig cfg;
  std::vector<TensorInfo> layout;
  Vec values;  // flat trainable parameters in layout order

  // Batchnorm running statistics (not gradient targets).
  Vec post_running_mean, post_running_var;
  Vec user_running_mean, user_running_var;

  const TensorInfo& info(std::string_view name) const {
    for (const TensorInfo& t : layout) {
      if (t.name == name) return t;
    }
    throw StateError("unknown tensor: " + std::string(name));
  }
  std::span<const double> tensor(std::string_view name) const {
    const TensorInfo& t = info(name);
    return {values.data() + t.offset, t.size()};
  }
  std::span<double> tensor(std::string_view name) {
    const TensorInfo& t = info(name);
    return {values.data() + t.offset, t.size()};
  }
};

// Weights: uniform in ±sqrt(6 / fan_in) (ReLU gain). Biases: uniform in
// ±1/sqrt(fan_in), deliberately nonzero so an all-zero input row cannot
// produce an all-zero embedding. Batchnorm scale 1, shift 0, no_image 0;
// rng draws are consumed only by .w and .b tensors, element order.
inline NetworkParams init_network(const NetworkConfig& cfg, Rng& rng) {
  NetworkParams p;
  p.cfg = cfg;
  p.layout = network_layout(cfg);
  const TensorInfo& last = p.layout.back();
  p.values.assign(last.offset + last.size(), 0.0);
  for (const TensorInfo& t : p.layout) {
    double* dst = p.values.data() + t.offset;
    if (t.name.ends_with(".w")) {
      const double lim = std::sqrt(6.0 / static_cast<double>(t.rows));
      for (std::size_t i = 0; i < t.size(); ++i) {
        dst[i] = lim * (2.0 * rng.u01() - 1.0);
      }
    } else if (t.name.ends_with(".b")) {
      const TensorInfo& w = p.info(t.name.substr(0, t.name.size() - 2) + ".w");
      const double lim = 1.0 / std::sqrt(static_cast<double>(w.rows));
      for (std::size_t i = 0; i < t.size(); ++i) {
        dst[i] = lim * (2.0 * rng.u01() - 1.0);
      }
    } else if (t.name.ends_with(".gamma")) {
      std::fill(dst, dst + t.size(), 1.0);
    }
    // .beta and no_image stay zero.
  }
  p.post_running_mean.assign(cfg.embedding_dim, 0.0);
  p.post_running_var.assign(cfg.embedding_dim, 1.0);
  p.user_running_mean.assign(cfg.embedding_dim, 0.0);
  p.user_running_var.assign(cfg.embedding_dim, 1.0);
  return p;
}

// ---------------------------------------------------------------------------
// Forward traces. Everything the backward pass needs to replay the exact
// recorded forward.
// ---------------------------------------------------------------------------

struct LinearCache {
  DenseMatrix input;  // batch x in
  DenseMatrix pre;    // batch x out, before any activation
};

struct BnCache {
  Vec mean, var;     // statistics used for normalization (batch or running)
  DenseMatrix xhat;  // normalized pre-scale values
};

struct NormCache {
  Vec input_norm;      // per-row L2 norm before normalization
  DenseMatrix output;  // the unit-norm embeddings
};

struct BranchTrace {
  Mode mode = Mode::kEval;
  bool is_post = false;
  // Post branch order: text_fc, visual_fc, fuse_fc, embed layers.
  // User branch order: fc1, fc2, embed layers.
  std::vector<LinearCache> linears;
  // One mask per embedding layer that applied dropout (all but the last
  // stack layer, train mode, rate > 0). Entries are 0 or 1/(1-rate).
  std::vector<DenseMatrix> dropout_masks;
  BnCache bn;
  NormCache norm;
  std::vector<unsigned char> visual_missing;  // post branch only
};

struct EmbedResult {
  DenseMatrix embeddings;  // batch x embedding_dim, unit rows
  BranchTrace trace;
};

namespace detail {

inline DenseMatrix linear_forward(const NetworkParams& p, const std::string& base,
                                  DenseMatrix input,
                                  std::vector<LinearCache>& caches) {
  const TensorInfo& wi = p.info(base + ".w");
  DenseMatrix pre = matmul(input, MatView(p.tensor(base + ".w"), wi.rows, wi.cols));
  add_row_vector(pre, p.tensor(base + ".b"));
  caches.push_back({std::move(input), pre});
  return caches.back().pre;
}

// Train mode: drop each unit independently with probability `rate`
// (dropped iff u01() < rate), scale survivors by 1/(1-rate). One draw per
// element, row-major. No draws when rate is 0 or in eval mode.
inline void dropout_forward(DenseMatrix& x, double rate, Rng* rng,
                            std::vector<DenseMatrix>& masks) {
  DenseMatrix mask(x.rows, x.cols);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    mask.data[i] = rng->u01() < rate ? 0.0 : keep_scale;
    x.data[i] *= mask.data[i];
  }
  masks.push_back(std::move(mask));
}

// Biased variance (1/N), both for normalization and for the running-stat
// update; one convention everywhere keeps checkpoints self-consistent.
inline DenseMatrix bn_forward(const NetworkParams& p, const std::string& base,
                              std::span<const double> running_mean,
                              std::span<const double> running_var,
                              const DenseMatrix& x, Mode mode, BnCache& cache) {
  const std::size_t n = x.rows, d = x.cols;
  if (mode == Mode::kTrain && n < 2) {
    throw NumericError("batchnorm: train mode needs batch size >= 2, got " +
                       std::to_string(n));
  }
  cache.mean.assign(d, 0.0);
  cache.var.assign(d, 0.0);
  if (mode == Mode::kTrain) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) cache.mean[j] += x.at(i, j);
    }
    for (double& m : cache.mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        const double c = x.at(i, j) - cache.mean[j];
        cache.var[j] += c * c;
      }
    }
    for (double& v : cache.var) v /= static_cast<double>(n);
  } else {
    cache.mean.assign(running_mean.begin(), running_mean.end());
    cache.var.assign(running_var.begin(), running_var.end());
  }
  auto gamma = p.tensor(base + ".gamma");
  auto beta = p.tensor(base + ".beta");
  cache.xhat = DenseMatrix(n, d);
  DenseMatrix y(n, d);
  for (std::size_t j = 0; j < d; ++j) {
    const double invstd = 1.0 / std::sqrt(cache.var[j] + p.cfg.bn_epsilon);
    for (std::size_t i = 0; i < n; ++i) {
      const double xh = (x.at(i, j) - cache.mean[j]) * invstd;
      cache.xhat.at(i, j) = xh;
      y.at(i, j) = gamma[j] * xh + beta[j];
    }
  }
  require_finite(y.data, "batchnorm output");
  return y;
}

inline DenseMatrix l2_normalize_rows(const DenseMatrix& x, NormCache& cache) {
  cache.input_norm.assign(x.rows, 0.0);
  cache.output = DenseMatrix(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    auto row = x.row(i);
    const double nrm = l2_norm(row);
    if (nrm == 0.0) {
      throw DegenerateInputError("embedding row " + std::to_string(i) +
                                 " is the zero vector");
    }
    cache.input_norm[i] = nrm;
    for (std::size_t j = 0; j < x.cols; ++j) {
      cache.output.at(i, j) = row[j] / nrm;
    }
  }
  return cache.output;
}

inline Rng* require_rng_for_dropout(const NetworkConfig& cfg, Mode mode, Rng* rng) {
  if (mode == Mode::kTrain && cfg.dropout_rate > 0.0 && rng == nullptr) {
    throw ConfigError("train-mode forward with dropout needs an rng");
  }
  return rng;
}

// Shared tail: embedding stack -> batchnorm -> row normalization.
inline DenseMatrix branch_tail(const NetworkParams& p, const std::string& prefix,
                               std::span<const double> running_mean,
                               std::span<const double> running_var,
                               DenseMatrix h, Mode mode, Rng* rng,
                               BranchTrace& trace) {
  const NetworkConfig& cfg = p.cfg;
  for (std::size_t i = 0; i < cfg.embedding_layers; ++i) {
    h = linear_forward(p, prefix + "_embed." + std::to_string(i), std::move(h),
                       trace.linears);
    if (i + 1 < cfg.embedding_layers) {
      relu_inplace(h);
      if (mode == Mode::kTrain && cfg.dropout_rate > 0.0) {
        dropout_forward(h, cfg.dropout_rate, rng, trace.dropout_masks);
      }
    }
  }
  DenseMatrix y = bn_forward(p, prefix + "_bn", running_mean, running_var, h,
                             mode, trace.bn);
  return l2_normalize_rows(y, trace.norm);
}

}  // namespace detail

// Post branch forward over a batch. `visual_missing` marks rows whose visual
// input is a stand-in (empty means all present); with learnable_no_image
// those rows are replaced by the trained no_image vector.
inline EmbedResult embed_posts(const NetworkParams& p, const DenseMatrix& text,
                               const DenseMatrix& visual,
                               const std::vector<unsigned char>& visual_missing,
                               Mode mode, Rng* rng = nullptr) {
  const NetworkConfig& cfg = p.cfg;
  detail::require_rng_for_dropout(cfg, mode, rng);
  if (text.cols != cfg.text_dim || visual.cols != cfg.visual_dim ||
      text.rows != visual.rows) {
    throw ShapeError("embed_posts: text " + shape_str(text.rows, text.cols) +
                     ", visual " + shape_str(visual.rows, visual.cols) +
                     " against text_dim=" + std::to_string(cfg.text_dim) +
                     " visual_dim=" + std::to_string(cfg.visual_dim));
  }
  if (!visual_missing.empty() && visual_missing.size() != text.rows) {
    throw ShapeError("embed_posts: visual_missing length " +
                     std::to_string(visual_missing.size()) + " != batch " +
                     std::to_string(text.rows));
  }

  EmbedResult res;
  BranchTrace& trace = res.trace;
  trace.mode = mode;
  trace.is_post = true;
  trace.visual_missing = visual_missing;

  DenseMatrix vis = visual;
  if (cfg.learnable_no_image && !visual_missing.empty()) {
    auto no_image = p.tensor("no_image");
    for (std::size_t i = 0; i < vis.rows; ++i) {
      if (!visual_missing[i]) continue;
      std::copy(no_image.begin(), no_image.end(), vis.data.begin() + i * vis.cols);
    }
  }

  DenseMatrix t = detail::linear_forward(p, "post_text_fc", text, trace.linears);
  relu_inplace(t);
  DenseMatrix v =
      detail::linear_forward(p, "post_visual_fc", std::move(vis), trace.linears);
  relu_inplace(v);
  DenseMatrix fused = detail::linear_forward(p, "post_fuse_fc",
                                             concat_cols(t, v), trace.linears);
  relu_inplace(fused);
  res.embeddings = detail::branch_tail(p, "post", p.post_running_mean,
                                       p.post_running_var, std::move(fused),
                                       mode, rng, trace);
  return res;
}

// User branch forward over a batch of bag-of-clusters descriptors.
inline EmbedResult embed_users(const NetworkParams& p, const DenseMatrix& desc,
                               Mode mode, Rng* rng = nullptr) {
  const NetworkConfig& cfg = p.cfg;
  detail::require_rng_for_dropout(cfg, mode, rng);
  if (desc.cols != cfg.user_dim) {
    throw ShapeError("embed_users: descriptor " + shape_str(desc.rows, desc.cols) +
                     " against user_dim=" + std::to_string(cfg.user_dim));
  }
  EmbedResult res;
  BranchTrace& trace = res.trace;
  trace.mode = mode;
  trace.is_post = false;

  DenseMatrix h = detail::linear_forward(p, "user_fc1", desc, trace.linears);
  relu_inplace(h);
  h = detail::linear_forward(p, "user_fc2", std::move(h), trace.linears);
  relu_inplace(h);
  res.embeddings = detail::branch_tail(p, "user", p.user_running_mean,
                                       p.user_running_var, std::move(h), mode,
                                       rng, trace);
  return res;
}

// Single-input conveniences (eval mode; train mode would need a batch >= 2
// for batchnorm statistics anyway).
inline Vec embed_post_one(const NetworkParams& p, const Vec& text_vector,
                          const Vec& visual_vector, bool visual_missing) {
  DenseMatrix t(1, text_vector.size());
  t.data = text_vector;
  DenseMatrix v(1, visual_vector.size());
  v.data = visual_vector;
  EmbedResult r = embed_posts(p, t, v, {static_cast<unsigned char>(visual_missing)},
                              Mode::kEval);
  Vec out(r.embeddings.data);
  return out;
}

inline Vec embed_user_one(const NetworkParams& p, const Vec& descriptor) {
  DenseMatrix d(1, descriptor.size());
  d.data = descriptor;
  EmbedResult r = embed_users(p, d, Mode::kEval);
  Vec out(r.embeddings.data);
  return out;
}

// ---------------------------------------------------------------------------
// Backward. Accumulates into a flat gradient vector shaped like
// params.values; call once per branch forward with the gradient of the loss
// with respect to that forward's embeddings.
// ---------------------------------------------------------------------------

namespace detail {

inline void accumulate(std::span<double> dst, const Vec& src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

// d(x/||x||): dx = (g - e (e.g)) / ||x||.
inline DenseMatrix norm_backward(const NormCache& cache, const DenseMatrix& dE) {
  if (!cache.output.same_shape(dE)) {
    throw StateError("norm backward: gradient shape mismatch");
  }
  DenseMatrix dx(dE.rows, dE.cols);
  for (std::size_t i = 0; i < dE.rows; ++i) {
    auto e = cache.output.row(i);
    auto g = dE.row(i);
    const double eg = dot(e, g);
    for (std::size_t j = 0; j < dE.cols; ++j) {
      dx.at(i, j) = (g[j] - e[j] * eg) / cache.input_norm[i];
    }
  }
  return dx;
}

inline DenseMatrix bn_backward(const NetworkParams& p, const std::string& base,
                               const BnCache& cache, Mode mode,
                               const DenseMatrix& dY, Vec& grads) {
  const std::size_t n = dY.rows, d = dY.cols;
  if (cache.xhat.rows != n || cache.xhat.cols != d) {
    throw StateError("bn backward: cache shape mismatch");
  }
  auto gamma = p.tensor(base + ".gamma");
  const TensorInfo& gi = p.info(base + ".gamma");
  const TensorInfo& bi = p.info(base + ".beta");
  std::span<double> dGamma(grads.data() + gi.offset, gi.size());
  std::span<double> dBeta(grads.data() + bi.offset, bi.size());

  for (std::size_t j = 0; j < d; ++j) {
    double dg = 0.0, db = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      dg += dY.at(i, j) * cache.xhat.at(i, j);
      db += dY.at(i, j);
    }
    dGamma[j] += dg;
    dBeta[j] += db;
  }

  DenseMatrix dX(n, d);
  const double eps = p.cfg.bn_epsilon;
  if (mode == Mode::kEval) {
    for (std::size_t j = 0; j < d; ++j) {
      const double invstd = 1.0 / std::sqrt(cache.var[j] + eps);
      for (std::size_t i = 0; i < n; ++i) {
        dX.at(i, j) = dY.at(i, j) * gamma[j] * invstd;
      }
    }
    return dX;
  }
  const double nn = static_cast<double>(n);
  for (std::size_t j = 0; j < d; ++j) {
    const double invstd = 1.0 / std::sqrt(cache.var[j] + eps);
    const double sd = 1.0 / invstd;
    double dvar = 0.0, dmean_a = 0.0, centered_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dxhat = dY.at(i, j) * gamma[j];
      const double centered = cache.xhat.at(i, j) * sd;
      dvar += dxhat * centered;
      dmean_a += dxhat;
      centered_sum += centered;
    }
    dvar *= -0.5 * invstd * invstd * invstd;
    const double dmean = -dmean_a * invstd + dvar * (-2.0 / nn) * centered_sum;
    for (std::size_t i = 0; i < n; ++i) {
      const double dxhat = dY.at(i, j) * gamma[j];
      const double centered = cache.xhat.at(i, j) * sd;
      dX.at(i, j) = dxhat * invstd + dvar * 2.0 * centered / nn + dmean / nn;
    }
  }
  return dX;
}

// dPre flows in; returns dInput and adds dW, db into grads.
inline DenseMatrix linear_backward(const NetworkParams& p, const std::string& base,
                                   const LinearCache& cache, const DenseMatrix& dPre,
                                   Vec& grads) {
  if (!cache.pre.same_shape(dPre)) {
    throw StateError("linear backward: " + base + " gradient shape mismatch");
  }
  const TensorInfo& wi = p.info(base + ".w");
  const TensorInfo& bi = p.info(base + ".b");
  DenseMatrix dW = matmul_tn(cache.input, dPre);
  accumulate({grads.data() + wi.offset, wi.size()}, dW.data);
  accumulate({grads.data() + bi.offset, bi.size()}, column_sums(dPre));
  return matmul_nt(dPre, MatView(p.tensor(base + ".w"), wi.rows, wi.cols));
}

// Backward through the shared tail; returns the gradient at the stack input.
inline DenseMatrix tail_backward(const NetworkParams& p, const std::string& prefix,
                                 const BranchTrace& trace, const DenseMatrix& dEmb,
                                 std::size_t linear_base, Vec& grads) {
  const NetworkConfig& cfg = p.cfg;
  DenseMatrix d = norm_backward(trace.norm, dEmb);
  d = bn_backward(p, prefix + "_bn", trace.bn, trace.mode, d, grads);
  for (std::size_t i = cfg.embedding_layers; i-- > 0;) {
    const LinearCache& cache = trace.linears.at(linear_base + i);
    if (i + 1 < cfg.embedding_layers) {
      if (!trace.dropout_masks.empty()) {
        const DenseMatrix& mask = trace.dropout_masks.at(i);
        for (std::size_t e = 0; e < d.data.size(); ++e) d.data[e] *= mask.data[e];
      }
      d = relu_backward(cache.pre, d);
    }
    d = linear_backward(p, prefix + "_embed." + std::to_string(i), cache, d, grads);
  }
  return d;
}

}  // namespace detail

inline void backward_posts(const NetworkParams& p, const BranchTrace& trace,
                           const DenseMatrix& dEmb, Vec& grads) {
  if (!trace.is_post) throw StateError("backward_posts: trace is not a post trace");
  if (grads.size() != p.values.size()) {
    throw StateError("backward_posts: gradient buffer size mismatch");
  }
  const NetworkConfig& cfg = p.cfg;
  if (trace.linears.size() != 3 + cfg.embedding_layers) {
    throw StateError("backward_posts: trace/config layer count mismatch");
  }
  DenseMatrix d = detail::tail_backward(p, "post", trace, dEmb, 3, grads);

  const LinearCache& fuse = trace.linears[2];
  d = relu_backward(fuse.pre, d);
  DenseMatrix dFuseIn = detail::linear_backward(p, "post_fuse_fc", fuse, d, grads);

  // Split the concatenation gradient back into the two sub-branches.
  const std::size_t h = cfg.hidden_dim;
  DenseMatrix dT(dFuseIn.rows, h), dV(dFuseIn.rows, h);
  for (std::size_t i = 0; i < dFuseIn.rows; ++i) {
    for (std::size_t j = 0; j < h; ++j) {
      dT.at(i, j) = dFuseIn.at(i, j);
      dV.at(i, j) = dFuseIn.at(i, h + j);
    }
  }

  dT = relu_backward(trace.linears[0].pre, dT);
  detail::linear_backward(p, "post_text_fc", trace.linears[0], dT, grads);

  dV = relu_backward(trace.linears[1].pre, dV);
  DenseMatrix dVisIn =
      detail::linear_backward(p, "post_visual_fc", trace.linears[1], dV, grads);
  if (cfg.learnable_no_image && !trace.visual_missing.empty()) {
    const TensorInfo& ni = p.info("no_image");
    std::span<double> dNoImage(grads.data() + ni.offset, ni.size());
    for (std::size_t i = 0; i < dVisIn.rows; ++i) {
      if (!trace.visual_missing[i]) continue;
      auto row = dVisIn.row(i);
      for (std::size_t j = 0; j < row.size(); ++j) dNoImage[j] += row[j];
    }
  }
}

inline void backward_users(const NetworkParams& p, const BranchTrace& trace,
                           const DenseMatrix& dEmb, Vec& grads) {
  if (trace.is_post) throw StateError("backward_users: trace is not a user trace");
  if (grads.size() != p.values.size()) {
    throw StateError("backward_users: gradient buffer size mismatch");
  }
  const NetworkConfig& cfg = p.cfg;
  if (trace.linears.size() != 2 + cfg.embedding_layers) {
    throw StateError("backward_users: trace/config layer count mismatch");
  }
  DenseMatrix d = detail::tail_backward(p, "user", trace, dEmb, 2, grads);

  d = relu_backward(trace.linears[1].pre, d);
  d = detail::linear_backward(p, "user_fc2", trace.linears[1], d, grads);
  d = relu_backward(trace.linears[0].pre, d);
  detail::linear_backward(p, "user_fc1", trace.linears[0], d, grads);
}

// Folds a train-mode forward's batch statistics into the running statistics:
// r <- momentum * r + (1 - momentum) * batch. Kept separate from the forward
// pass so forwards stay const and replayable.
inline void commit_bn_update(NetworkParams& p, const BranchTrace& trace) {
  if (trace.mode != Mode::kTrain) {
    throw StateError("commit_bn_update: trace is not from a train-mode forward");
  }
  Vec& mean = trace.is_post ? p.post_running_mean : p.user_running_mean;
  Vec& var = trace.is_post ? p.post_running_var : p.user_running_var;
  const double m = p.cfg.bn_momentum;
  for (std::size_t j = 0; j < mean.size(); ++j) {
    mean[j] = m * mean[j] + (1.0 - m) * trace.bn.mean[j];
    var[j] = m * var[j] + (1.0 - m) * trace.bn.var[j];
  }
}

}  // namespace latentrank
