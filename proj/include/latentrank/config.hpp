#pragma once

// One flat run configuration covering encoding, clustering, network,
// sampling, optimization, evaluation and synthetic-data knobs. Module
// configs are derived views, so cross-module dimensions (text width, user
// cluster count) can never disagree.
//
// File format: `key = value` per line, `#` starts a comment, unknown keys
// are rejected. Later assignments win; command-line overrides are applied
// after the file.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "latentrank/datamodel.hpp"
#include "latentrank/encoding.hpp"
#include "latentrank/errors.hpp"
#include "latentrank/network.hpp"
#include "latentrank/objective.hpp"
#include "latentrank/sampling.hpp"

namespace latentrank {

struct TrainConfig {
  double learning_rate = 0.01;
  double weight_decay = 1e-5;
  double momentum = 0.9;
  double lambda = 0.3;
  double margin = 0.2;
  std::size_t epochs = 10;
  std::uint64_t seed = 1;
  std::size_t eval_every = 0;        // steps between held-out evals; 0 = never
  std::size_t checkpoint_every = 0;  // steps between checkpoints; 0 = final only
  Reduction reduction = Reduction::kSum;
  std::size_t lr_decay_every = 0;  // steps between rate decays; 0 = constant
  double lr_decay_factor = 1.0;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) {
      throw ConfigError("train: momentum must be in [0,1)");
    }
    if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be >= 0");
    if (!(lambda >= 0.0)) throw ConfigError("train: lambda must be >= 0");
    if (!(margin > 0.0)) throw ConfigError("train: margin must be > 0");
    if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0)) {
      throw ConfigError("train: lr_decay_factor must be in (0,1]");
    }
  }
};

struct RunConfig {
  // Encoding and clustering.
  std::size_t text_dim = 256;
  std::size_t visual_dim = 16;
  std::size_t user_k = 32;
  std::size_t post_k = 32;
  bool share_clusters = false;
  bool learnable_no_image = false;
  std::size_t kmeans_max_iter = 100;

  // Network.
  std::size_t hidden_dim = 128;
  std::size_t descriptor_dim = 64;
  std::size_t embedding_dim = 64;
  std::size_t embedding_layers = 2;
  double dropout_rate = 0.5;
  double bn_momentum = 0.9;
  double bn_epsilon = 1e-5;

  // Sampling.
  std::int64_t window_seconds = 3600;
  std::size_t negatives_per_positive = 10;
  std::size_t minibatch_size = 64;
  TimeKernel time_kernel = TimeKernel::kTriangular;

  // Optimization.
  TrainConfig train;

  // Evaluation.
  std::vector<std::size_t> eval_ks = {1, 5, 10};
  std::size_t holdout_per_user = 5;
  double sweep_val_fraction = 0.25;

  // Synthetic data.
  SynthConfig synth;

  EncodingConfig encoding() const {
    return {text_dim, visual_dim, learnable_no_image};
  }
  NetworkConfig network() const {
    NetworkConfig n;
    n.text_dim = text_dim;
    n.visual_dim = visual_dim;
    n.user_dim = user_k;
    n.hidden_dim = hidden_dim;
    n.descriptor_dim = descriptor_dim;
    n.embedding_dim = embedding_dim;
    n.embedding_layers = embedding_layers;
    n.dropout_rate = dropout_rate;
    n.bn_momentum = bn_momentum;
    n.bn_epsilon = bn_epsilon;
    n.learnable_no_image = learnable_no_image;
    return n;
  }
  SamplerConfig sampler() const {
    return {window_seconds, negatives_per_positive, minibatch_size, time_kernel};
  }

  void validate() const {
    if (user_k < 1 || post_k < 1) throw ConfigError("user_k and post_k must be >= 1");
    if (share_clusters && user_k != post_k) {
      throw ConfigError("share_clusters requires user_k == post_k");
    }
    if (kmeans_max_iter < 1) throw ConfigError("kmeans_max_iter must be >= 1");
    if (eval_ks.empty()) throw ConfigError("eval_ks must be non-empty");
    for (std::size_t k : eval_ks) {
      if (k < 1) throw ConfigError("eval_ks entries must be >= 1");
    }
    if (holdout_per_user < 1) throw ConfigError("holdout_per_user must be >= 1");
    if (!(sweep_val_fraction > 0.0 && sweep_val_fraction < 1.0)) {
      throw ConfigError("sweep_val_fraction must be in (0,1)");
    }
    network().validate();
    sampler().validate();
    train.validate();
  }

  // Full resolved configuration in a fixed order, used for the manifest echo
  // and the checkpoint config section.
  std::vector<std::pair<std::string, std::string>> to_kv() const;
  void set(const std::string& key, const std::string& value);
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

inline std::size_t parse_count(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long n = std::stoll(v, &pos);
    if (pos != v.size() || n < 0) throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
}

inline std::int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long n = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const unsigned long long n = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an unsigned integer, got '" + v + "'");
  }
}

inline double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

inline std::vector<std::size_t> parse_count_list(const std::string& key,
                                                 const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw ConfigError(key + ": empty list entry");
    out.push_back(parse_count(key, item));
  }
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

}  // namespace detail

inline void RunConfig::set(const std::string& key, const std::string& value) {
  using namespace detail;
  if (key == "text_dim") text_dim = parse_count(key, value);
  else if (key == "visual_dim") visual_dim = parse_count(key, value);
  else if (key == "user_k") user_k = parse_count(key, value);
  else if (key == "post_k") post_k = parse_count(key, value);
  else if (key == "share_clusters") share_clusters = parse_bool(key, value);
  else if (key == "learnable_no_image") learnable_no_image = parse_bool(key, value);
  else if (key == "kmeans_max_iter") kmeans_max_iter = parse_count(key, value);
  else if (key == "hidden_dim") hidden_dim = parse_count(key, value);
  else if (key == "descriptor_dim") descriptor_dim = parse_count(key, value);
  else if (key == "embedding_dim") embedding_dim = parse_count(key, value);
  else if (key == "embedding_layers") embedding_layers = parse_count(key, value);
  else if (key == "dropout_rate") dropout_rate = parse_real(key, value);
  else if (key == "bn_momentum") bn_momentum = parse_real(key, value);
  else if (key == "bn_epsilon") bn_epsilon = parse_real(key, value);
  else if (key == "window_seconds") window_seconds = parse_int(key, value);
  else if (key == "negatives_per_positive") negatives_per_positive = parse_count(key, value);
  else if (key == "minibatch_size") minibatch_size = parse_count(key, value);
  else if (key == "time_kernel") time_kernel = time_kernel_from_name(value);
  else if (key == "learning_rate") train.learning_rate = parse_real(key, value);
  else if (key == "weight_decay") train.weight_decay = parse_real(key, value);
  else if (key == "momentum") train.momentum = parse_real(key, value);
  else if (key == "lambda") train.lambda = parse_real(key, value);
  else if (key == "margin") train.margin = parse_real(key, value);
  else if (key == "epochs") train.epochs = parse_count(key, value);
  else if (key == "seed") train.seed = parse_u64(key, value);
  else if (key == "eval_every") train.eval_every = parse_count(key, value);
  else if (key == "checkpoint_every") train.checkpoint_every = parse_count(key, value);
  else if (key == "reduction") train.reduction = reduction_from_name(value);
  else if (key == "lr_decay_every") train.lr_decay_every = parse_count(key, value);
  else if (key == "lr_decay_factor") train.lr_decay_factor = parse_real(key, value);
  else if (key == "eval_ks") eval_ks = parse_count_list(key, value);
  else if (key == "holdout_per_user") holdout_per_user = parse_count(key, value);
  else if (key == "sweep_val_fraction") sweep_val_fraction = parse_real(key, value);
  else if (key == "synth_topics") synth.topics = parse_count(key, value);
  else if (key == "synth_users") synth.users = parse_count(key, value);
  else if (key == "synth_posts") synth.posts = parse_count(key, value);
  else if (key == "synth_interactions_per_user") synth.interactions_per_user = parse_count(key, value);
  else if (key == "synth_vocab_size") synth.vocab_size = parse_count(key, value);
  else if (key == "synth_visual_dim") synth.visual_dim = parse_count(key, value);
  else if (key == "synth_horizon_seconds") synth.horizon_seconds = parse_int(key, value);
  else if (key == "synth_noise") synth.noise = parse_real(key, value);
  else throw ConfigError("unknown config key: " + key);
}

inline std::vector<std::pair<std::string, std::string>> RunConfig::to_kv() const {
  auto c = [](std::size_t v) { return std::to_string(v); };
  auto i = [](std::int64_t v) { return std::to_string(v); };
  auto r = [](double v) { return format_double(v); };
  auto b = [](bool v) { return v ? std::string("true") : std::string("false"); };
  std::string ks;
  for (std::size_t j = 0; j < eval_ks.size(); ++j) {
    if (j) ks += ",";
    ks += std::to_string(eval_ks[j]);
  }
  return {
      {"text_dim", c(text_dim)},
      {"visual_dim", c(visual_dim)},
      {"user_k", c(user_k)},
      {"post_k", c(post_k)},
      {"share_clusters", b(share_clusters)},
      {"learnable_no_image", b(learnable_no_image)},
      {"kmeans_max_iter", c(kmeans_max_iter)},
      {"hidden_dim", c(hidden_dim)},
      {"descriptor_dim", c(descriptor_dim)},
      {"embedding_dim", c(embedding_dim)},
      {"embedding_layers", c(embedding_layers)},
      {"dropout_rate", r(dropout_rate)},
      {"bn_momentum", r(bn_momentum)},
      {"bn_epsilon", r(bn_epsilon)},
      {"window_seconds", i(window_seconds)},
      {"negatives_per_positive", c(negatives_per_positive)},
      {"minibatch_size", c(minibatch_size)},
      {"time_kernel", time_kernel_name(time_kernel)},
      {"learning_rate", r(train.learning_rate)},
      {"weight_decay", r(train.weight_decay)},
      {"momentum", r(train.momentum)},
      {"lambda", r(train.lambda)},
      {"margin", r(train.margin)},
      {"epochs", c(train.epochs)},
      {"seed", std::to_string(train.seed)},
      {"eval_every", c(train.eval_every)},
      {"checkpoint_every", c(train.checkpoint_every)},
      {"reduction", reduction_name(train.reduction)},
      {"lr_decay_every", c(train.lr_decay_every)},
      {"lr_decay_factor", r(train.lr_decay_factor)},
      {"eval_ks", ks},
      {"holdout_per_user", c(holdout_per_user)},
      {"sweep_val_fraction", r(sweep_val_fraction)},
      {"synth_topics", c(synth.topics)},
      {"synth_users", c(synth.users)},
      {"synth_posts", c(synth.posts)},
      {"synth_interactions_per_user", c(synth.interactions_per_user)},
      {"synth_vocab_size", c(synth.vocab_size)},
      {"synth_visual_dim", c(synth.visual_dim)},
      {"synth_horizon_seconds", i(synth.horizon_seconds)},
      {"synth_noise", r(synth.noise)},
  };
}

// Parses `key = value` lines into cfg. Unknown keys and malformed lines
// throw ConfigError with the line number.
inline void apply_config_file(RunConfig& cfg, const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config file " + file.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) {
      line.resize(hash);
    }
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(file.filename().string() + ":" + std::to_string(lineno) +
                        ": expected 'key = value'");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ConfigError(file.filename().string() + ":" + std::to_string(lineno) +
                        ": empty key or value");
    }
    try {
      cfg.set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(file.filename().string() + ":" + std::to_string(lineno) +
                        ": " + e.what());
    }
  }
}

}  // namespace latentrank
