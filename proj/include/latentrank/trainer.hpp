#pragma once

// End-to-end optimization: cluster fitting, descriptor precomputation, the
// SGD-with-momentum loop over the combined objective, checkpointing with
// exact resume, and the lambda cross-validation sweep.
//
// Randomness is fanned out from the run seed: "clusters-user",
// "clusters-post" / "clusters-shared" and "network-init" get their own
// derived streams; the loop stream ("train-loop") drives sampling and
// dropout and is the only one serialized in checkpoints.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "latentrank/config.hpp"
#include "latentrank/datamodel.hpp"
#include "latentrank/encoding.hpp"
#include "latentrank/errors.hpp"
#include "latentrank/network.hpp"
#include "latentrank/numkernel.hpp"
#include "latentrank/objective.hpp"
#include "latentrank/ranking.hpp"
#include "latentrank/sampling.hpp"

namespace latentrank {

struct PipelineClusters {
  SemanticClusters user;
  SemanticClusters post;
};

// Clusters are fitted on the training split only. With share_clusters one
// model over the union of user and post texts serves both roles.
inline PipelineClusters fit_pipeline_clusters(const Dataset& fit_set,
                                              const RunConfig& cfg) {
  const EncodingConfig enc = cfg.encoding();
  if (cfg.share_clusters) {
    std::vector<Vec> corpus = user_text_corpus(fit_set, cfg.text_dim);
    std::vector<Vec> posts = post_text_corpus(fit_set, enc);
    corpus.insert(corpus.end(), std::make_move_iterator(posts.begin()),
                  std::make_move_iterator(posts.end()));
    Rng rng(Rng::derive_seed(cfg.train.seed, "clusters-shared"));
    KMeansFit fit = fit_kmeans(corpus, cfg.user_k, rng, cfg.kmeans_max_iter);
    PipelineClusters out;
    out.user = fit.clusters;
    out.post = std::move(fit.clusters);
    return out;
  }
  PipelineClusters out;
  Rng urng(Rng::derive_seed(cfg.train.seed, "clusters-user"));
  out.user = fit_kmeans(user_text_corpus(fit_set, cfg.text_dim), cfg.user_k,
                        urng, cfg.kmeans_max_iter)
                 .clusters;
  Rng prng(Rng::derive_seed(cfg.train.seed, "clusters-post"));
  out.post = fit_kmeans(post_text_corpus(fit_set, enc), cfg.post_k, prng,
                        cfg.kmeans_max_iter)
                 .clusters;
  return out;
}

struct PreparedData {
  std::vector<Vec> user_descriptors;             // per dataset user index
  std::vector<PostDescriptorInput> post_inputs;  // per dataset post index
};

inline PreparedData prepare_inputs(const Dataset& ds,
                                   const SemanticClusters& user_clusters,
                                   const EncodingConfig& enc) {
  PreparedData out;
  out.user_descriptors.reserve(ds.users.size());
  for (const User& u : ds.users) {
    out.user_descriptors.push_back(user_descriptor(u, user_clusters));
  }
  out.post_inputs.reserve(ds.posts.size());
  for (const Post& p : ds.posts) {
    out.post_inputs.push_back(post_descriptor_input(p, enc));
  }
  return out;
}

struct TrainState {
  NetworkParams params;
  Vec velocity;  // parallel to params.values
  std::size_t step = 0;
  Rng rng{0};  // loop stream: sampling + dropout
};

// Heavy-ball update: v <- momentum*v - lr*(g + wd*theta), theta <- theta + v.
// Weight decay touches only tensors flagged for it (weights and batchnorm
// scale; biases, shift and no_image are exempt).
inline void sgd_update(NetworkParams& p, Vec& velocity, const Vec& grads,
                       double lr, double momentum, double weight_decay) {
  if (velocity.size() != p.values.size() || grads.size() != p.values.size()) {
    throw StateError("sgd_update: buffer size mismatch");
  }
  for (const TensorInfo& t : p.layout) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      const std::size_t idx = t.offset + i;
      double g = grads[idx];
      if (t.weight_decay) g += weight_decay * p.values[idx];
      velocity[idx] = momentum * velocity[idx] - lr * g;
      p.values[idx] += velocity[idx];
    }
  }
}

inline double lr_at_step(const TrainConfig& t, std::size_t completed_steps) {
  if (t.lr_decay_every == 0 || t.lr_decay_factor == 1.0) return t.learning_rate;
  const double decays =
      static_cast<double>(completed_steps / t.lr_decay_every);
  return t.learning_rate * std::pow(t.lr_decay_factor, decays);
}

struct StepInfo {
  std::size_t step = 0;  // 1-based, after the update
  BatchLossResult loss;
  std::size_t within_skipped = 0;
  double learning_rate = 0.0;
};

// One optimization step. Fixed order: sample, embed users, embed posts (the
// loop rng feeds dropout in that order), loss, backward, SGD update, fold
// batchnorm statistics, finiteness check.
inline StepInfo train_step(TrainState& st, const TripletSampler& sampler,
                           const Dataset& ds, const PreparedData& data,
                           const RunConfig& cfg) {
  const TrainConfig& t = cfg.train;
  const double lr = lr_at_step(t, st.step);
  MinibatchSample sample = sampler.next(st.rng, t.margin, t.lambda);

  std::vector<Vec> udesc;
  udesc.reserve(sample.user_rows.size());
  for (std::size_t ui : sample.user_rows) {
    udesc.push_back(data.user_descriptors[ui]);
  }
  std::vector<PostDescriptorInput> pinputs;
  pinputs.reserve(sample.post_rows.size());
  for (std::size_t pi : sample.post_rows) {
    pinputs.push_back(data.post_inputs[pi]);
  }
  DenseMatrix users = pack_rows(udesc);
  PackedPosts posts = pack_post_inputs(pinputs);

  StepInfo info;
  try {
    EmbedResult ue = embed_users(st.params, users, Mode::kTrain, &st.rng);
    EmbedResult pe = embed_posts(st.params, posts.text, posts.visual,
                                 posts.missing, Mode::kTrain, &st.rng);
    info.loss = batch_loss(ue.embeddings, pe.embeddings, sample.batch, t.reduction);
    if (!std::isfinite(info.loss.loss)) {
      throw NumericError("non-finite loss");
    }
    Vec grads(st.params.values.size(), 0.0);
    backward_users(st.params, ue.trace, info.loss.d_users, grads);
    backward_posts(st.params, pe.trace, info.loss.d_posts, grads);
    sgd_update(st.params, st.velocity, grads, lr, t.momentum, t.weight_decay);
    commit_bn_update(st.params, ue.trace);
    commit_bn_update(st.params, pe.trace);
    require_finite(st.params.values, "parameters after update");
  } catch (const NumericError& e) {
    std::string ids;
    for (std::size_t i = 0; i < std::min<std::size_t>(8, sample.positive_interactions.size()); ++i) {
      const Interaction& it = ds.interactions[sample.positive_interactions[i]];
      ids += (i ? ", " : "") + it.user_id + "/" + it.post_id;
    }
    throw NumericError("step " + std::to_string(st.step + 1) + ": " + e.what() +
                       " (positives: " + ids + ")");
  }

  ++st.step;
  info.step = st.step;
  info.within_skipped = sample.within_skipped;
  info.learning_rate = lr;
  return info;
}

struct TrainStepLog {
  std::size_t step = 0;
  double loss = 0.0, cross_part = 0.0, within_part = 0.0;
  std::size_t active_cross = 0, active_within = 0;
};

struct TrainEvalLog {
  std::size_t step = 0;
  RankReport report;
};

struct TrainLog {
  std::vector<TrainStepLog> steps;
  std::vector<TrainEvalLog> evals;
};

struct TrainHooks {
  std::function<void(const StepInfo&)> on_step;
  std::function<void(std::size_t, const TrainState&)> on_checkpoint;
  std::function<void(std::size_t, const RankReport&)> on_eval;
};

struct TrainResult {
  TrainState state;
  TrainLog log;
  PipelineClusters clusters;
  std::size_t steps_per_epoch = 0;
  std::size_t total_steps = 0;
};

// Trains on fit_set for cfg.train.epochs epochs (one epoch = interaction
// count / minibatch size steps, at least one). When eval_test is given,
// held-out metrics run every eval_every steps with fit_set as the
// training-interaction reference. Pass `resume` to continue a restored
// TrainState; its step count determines how many steps remain.
inline TrainResult train(const Dataset& fit_set, const RunConfig& cfg,
                         const Dataset* eval_test = nullptr,
                         const TrainHooks& hooks = {},
                         TrainState* resume = nullptr) {
  cfg.validate();
  if (fit_set.interactions.empty()) {
    throw DataError("train: dataset has no interactions");
  }
  const EncodingConfig enc = cfg.encoding();

  TrainResult res;
  res.clusters = fit_pipeline_clusters(fit_set, cfg);
  PreparedData data = prepare_inputs(fit_set, res.clusters.user, enc);
  TripletSampler sampler(fit_set, res.clusters.post, enc, cfg.sampler());

  if (resume != nullptr) {
    const auto expect = network_layout(cfg.network());
    if (resume->params.layout.size() != expect.size()) {
      throw StateError("resume: checkpoint layout does not match config");
    }
    for (std::size_t i = 0; i < expect.size(); ++i) {
      const TensorInfo& a = expect[i];
      const TensorInfo& b = resume->params.layout[i];
      if (a.name != b.name || a.rows != b.rows || a.cols != b.cols) {
        throw StateError("resume: tensor " + b.name + " does not match config");
      }
    }
    res.state = std::move(*resume);
  } else {
    Rng init_rng(Rng::derive_seed(cfg.train.seed, "network-init"));
    res.state.params = init_network(cfg.network(), init_rng);
    res.state.velocity.assign(res.state.params.values.size(), 0.0);
    res.state.rng = Rng(Rng::derive_seed(cfg.train.seed, "train-loop"));
  }

  res.steps_per_epoch = std::max<std::size_t>(
      1, fit_set.interactions.size() / cfg.minibatch_size);
  res.total_steps = cfg.train.epochs * res.steps_per_epoch;

  while (res.state.step < res.total_steps) {
    StepInfo info = train_step(res.state, sampler, fit_set, data, cfg);
    res.log.steps.push_back({info.step, info.loss.loss, info.loss.cross_part,
                             info.loss.within_part, info.loss.active_cross,
                             info.loss.active_within});
    if (hooks.on_step) hooks.on_step(info);
    if (cfg.train.checkpoint_every > 0 && hooks.on_checkpoint &&
        info.step % cfg.train.checkpoint_every == 0) {
      hooks.on_checkpoint(info.step, res.state);
    }
    if (cfg.train.eval_every > 0 && eval_test != nullptr &&
        info.step % cfg.train.eval_every == 0) {
      RankReport rep = evaluate(res.state.params, *eval_test, fit_set,
                                res.clusters.user, enc, cfg.eval_ks);
      if (hooks.on_eval) hooks.on_eval(info.step, rep);
      res.log.evals.push_back({info.step, std::move(rep)});
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Lambda sweep: carve a validation split off the training data by time, train
// one model per lambda under a shared seed, report P@K / R@K per lambda.
// ---------------------------------------------------------------------------

struct SweepRow {
  double lambda = 0.0;
  RankReport report;
};

inline std::vector<SweepRow> lambda_sweep(const Dataset& train_set,
                                          double val_fraction,
                                          const std::vector<double>& lambdas,
                                          const RunConfig& base,
                                          const TrainHooks& hooks = {}) {
  if (lambdas.empty()) throw ConfigError("lambda_sweep: no lambda values");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw ConfigError("lambda_sweep: val_fraction must be in (0,1)");
  }
  std::unordered_set<std::string> active_users;
  for (const Interaction& it : train_set.interactions) {
    active_users.insert(it.user_id);
  }
  if (active_users.empty()) throw DataError("lambda_sweep: no interactions");
  const double mean_per_user = static_cast<double>(train_set.interactions.size()) /
                               static_cast<double>(active_users.size());
  const std::size_t holdout = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(val_fraction * mean_per_user)));
  SplitResult split = time_based_split(train_set, holdout);

  std::vector<SweepRow> rows;
  rows.reserve(lambdas.size());
  for (double l : lambdas) {
    RunConfig cfg = base;
    cfg.train.lambda = l;
    TrainResult r = train(split.train, cfg, nullptr, hooks);
    rows.push_back({l, evaluate(r.state.params, split.test, split.train,
                                r.clusters.user, cfg.encoding(), cfg.eval_ks)});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Checkpoints. Text format, one file:
//
//   latentrank-checkpoint v1
//   [config]            full key = value echo
//   [data] <fingerprint>
//   [step] <count>
//   [rng] <engine state on the next line>
//   [tensor] <name> <rows> <cols>   followed by <rows> value lines
//   ... every tensor in layout order ...
//   [running] post_bn.mean|post_bn.var|user_bn.mean|user_bn.var 1 <dim>
//   [velocity] <name> <rows> <cols> ... same tensor sequence again ...
//
// Values are printed with 17 significant digits and round-trip bit-exactly.
// ---------------------------------------------------------------------------

struct Checkpoint {
  RunConfig config;
  std::uint64_t data_fingerprint = 0;
  TrainState state;
};

namespace detail {

inline void write_matrix_lines(std::ostream& out, std::span<const double> v,
                               std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (c) out << " ";
      out << format_double(v[r * cols + c]);
    }
    out << "\n";
  }
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& file,
                            const RunConfig& cfg, const TrainState& st,
                            std::uint64_t data_fingerprint) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("cannot write " + file.string());
  out << "latentrank-checkpoint v1\n";
  out << "[config]\n";
  for (const auto& [k, v] : cfg.to_kv()) out << k << " = " << v << "\n";
  out << "[data] " << data_fingerprint << "\n";
  out << "[step] " << st.step << "\n";
  out << "[rng]\n" << st.rng.save_state() << "\n";
  for (const TensorInfo& t : st.params.layout) {
    out << "[tensor] " << t.name << " " << t.rows << " " << t.cols << "\n";
    detail::write_matrix_lines(
        out, {st.params.values.data() + t.offset, t.size()}, t.rows, t.cols);
  }
  const auto& p = st.params;
  const std::size_t e = p.cfg.embedding_dim;
  auto write_running = [&](const char* name, const Vec& v) {
    out << "[running] " << name << " 1 " << e << "\n";
    detail::write_matrix_lines(out, v, 1, e);
  };
  write_running("post_bn.mean", p.post_running_mean);
  write_running("post_bn.var", p.post_running_var);
  write_running("user_bn.mean", p.user_running_mean);
  write_running("user_bn.var", p.user_running_var);
  for (const TensorInfo& t : st.params.layout) {
    out << "[velocity] " << t.name << " " << t.rows << " " << t.cols << "\n";
    detail::write_matrix_lines(out, {st.velocity.data() + t.offset, t.size()},
                               t.rows, t.cols);
  }
  if (!out) throw DataError("write failure on " + file.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open checkpoint " + file.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(std::move(line));
  std::size_t pos = 0;
  auto fail = [&](const std::string& why) -> DataError {
    return DataError(file.filename().string() + ": line " + std::to_string(pos + 1) +
                     ": " + why);
  };
  auto next = [&]() -> const std::string& {
    if (pos >= lines.size()) throw fail("unexpected end of file");
    return lines[pos++];
  };

  if (next() != "latentrank-checkpoint v1") {
    throw DataError(file.filename().string() + ": not a checkpoint file");
  }
  if (next() != "[config]") throw fail("expected [config]");
  Checkpoint ck;
  while (pos < lines.size() && !lines[pos].starts_with("[")) {
    const std::string& line = lines[pos++];
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw fail("malformed config line");
    ck.config.set(detail::trim(line.substr(0, eq)),
                  detail::trim(line.substr(eq + 1)));
  }

  auto expect_tagged = [&](const std::string& tag) -> std::string {
    const std::string& line = next();
    if (!line.starts_with(tag)) throw fail("expected " + tag);
    return line.substr(tag.size());
  };
  ck.data_fingerprint = detail::parse_u64("data", expect_tagged("[data] "));
  ck.state.step =
      static_cast<std::size_t>(detail::parse_u64("step", expect_tagged("[step] ")));
  if (next() != "[rng]") throw fail("expected [rng]");
  ck.state.rng.restore_state(next());

  ck.state.params.cfg = ck.config.network();
  ck.state.params.layout = network_layout(ck.state.params.cfg);
  const TensorInfo& last = ck.state.params.layout.back();
  ck.state.params.values.assign(last.offset + last.size(), 0.0);
  ck.state.velocity.assign(ck.state.params.values.size(), 0.0);

  auto read_block = [&](const std::string& tag, const std::string& name,
                        std::size_t rows, std::size_t cols, double* dst) {
    const std::string& header = next();
    const std::string want = tag + " " + name + " " + std::to_string(rows) +
                             " " + std::to_string(cols);
    if (header != want) {
      throw fail("expected '" + want + "', found '" + header + "'");
    }
    for (std::size_t r = 0; r < rows; ++r) {
      std::istringstream row(next());
      for (std::size_t c = 0; c < cols; ++c) {
        if (!(row >> dst[r * cols + c])) throw fail("short tensor row");
      }
      double extra;
      if (row >> extra) throw fail("overlong tensor row");
    }
  };

  for (const TensorInfo& t : ck.state.params.layout) {
    read_block("[tensor]", t.name, t.rows, t.cols,
               ck.state.params.values.data() + t.offset);
  }
  const std::size_t e = ck.state.params.cfg.embedding_dim;
  auto& p = ck.state.params;
  p.post_running_mean.assign(e, 0.0);
  p.post_running_var.assign(e, 0.0);
  p.user_running_mean.assign(e, 0.0);
  p.user_running_var.assign(e, 0.0);
  read_block("[running]", "post_bn.mean", 1, e, p.post_running_mean.data());
  read_block("[running]", "post_bn.var", 1, e, p.post_running_var.data());
  read_block("[running]", "user_bn.mean", 1, e, p.user_running_mean.data());
  read_block("[running]", "user_bn.var", 1, e, p.user_running_var.data());
  for (const TensorInfo& t : ck.state.params.layout) {
    read_block("[velocity]", t.name, t.rows, t.cols,
               ck.state.velocity.data() + t.offset);
  }
  if (pos != lines.size()) throw fail("trailing content after checkpoint");
  require_finite(ck.state.params.values, "checkpoint parameters");
  return ck;
}

// Keys allowed to differ between a checkpoint's config echo and a resume
// run: schedule/reporting knobs and dataset-generation knobs (the data
// fingerprint guards the data itself).
inline bool resume_mutable_key(const std::string& k) {
  return k == "epochs" || k == "eval_every" || k == "checkpoint_every" ||
         k == "eval_ks" || k == "holdout_per_user" ||
         k == "sweep_val_fraction" || k.starts_with("synth_");
}

inline void require_resume_compatible(const RunConfig& ckpt, const RunConfig& now) {
  const auto a = ckpt.to_kv();
  const auto b = now.to_kv();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (resume_mutable_key(a[i].first)) continue;
    if (a[i].second != b[i].second) {
      throw ConfigError("resume: config key '" + a[i].first +
                        "' differs from checkpoint (" + a[i].second + " vs " +
                        b[i].second + ")");
    }
  }
}

}  // namespace latentrank
