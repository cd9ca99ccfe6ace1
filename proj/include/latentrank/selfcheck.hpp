#pragma once

// Runtime property suite behind the `verify` subcommand. Each check is a
// pure function of its seed and scale parameters: analytic gradients against
// central finite differences, embedding norm invariants, hinge-loss algebra,
// negative-sampler distribution against an exact enumeration oracle, k-means
// descent and recovery, ranking metrics against brute force, and checkpoint
// round-trips.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <string>
#include <unordered_map>
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
#include "latentrank/trainer.hpp"

namespace latentrank {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

namespace detail {

// A finite-difference probe is only meaningful away from the kinks of the
// piecewise-smooth objective: ReLU pre-activations, hinge boundaries and
// zero pair distances. Returns false when the fixture sits too close to one.
inline bool gradcheck_fixture_smooth(const EmbedResult& users,
                                     const EmbedResult& posts,
                                     const TripletBatch& batch) {
  const double kink_gap = 1e-3;
  auto pre_clear = [&](const BranchTrace& t) {
    // Every linear feeds a ReLU except the last embedding-stack layer.
    for (std::size_t li = 0; li + 1 < t.linears.size(); ++li) {
      for (double v : t.linears[li].pre.data) {
        if (std::abs(v) < kink_gap) return false;
      }
    }
    return true;
  };
  if (!pre_clear(users.trace) || !pre_clear(posts.trace)) return false;

  auto pair_ok = [&](std::span<const double> a, std::span<const double> b,
                     double& d) {
    d = euclidean_distance(a, b);
    return d > kink_gap;
  };
  for (const CrossTriplet& t : batch.cross) {
    double dp = 0.0, dn = 0.0;
    if (!pair_ok(users.embeddings.row(t.user), posts.embeddings.row(t.pos), dp) ||
        !pair_ok(users.embeddings.row(t.user), posts.embeddings.row(t.neg), dn) ||
        std::abs(batch.margin + dp - dn) < kink_gap) {
      return false;
    }
  }
  for (const WithinTriplet& t : batch.within) {
    double ds = 0.0, dn = 0.0;
    if (!pair_ok(posts.embeddings.row(t.anchor), posts.embeddings.row(t.same), ds) ||
        !pair_ok(posts.embeddings.row(t.anchor), posts.embeddings.row(t.other), dn) ||
        std::abs(batch.margin + ds - dn) < kink_gap) {
      return false;
    }
  }
  return true;
}

}  // namespace detail

// Analytic gradients of the full objective through both branches against
// central finite differences (h = 1e-5) on randomly seeded tiny networks,
// dropout off. Passes when the max relative error over every parameter of
// every network is < 1e-4.
inline CheckResult check_gradients(std::size_t nets, std::uint64_t seed) {
  CheckResult res{"gradients-vs-finite-differences", false, ""};
  Rng rng(Rng::derive_seed(seed, "gradcheck"));
  const double h = 1e-5;
  const double threshold = 1e-4;
  double worst = 0.0;

  for (std::size_t net = 0; net < nets; ++net) {
    bool built = false;
    for (std::size_t attempt = 0; attempt < 64 && !built; ++attempt) {
      NetworkConfig cfg;
      cfg.text_dim = 4 + rng.below(9);
      cfg.visual_dim = 2 + rng.below(7);
      cfg.user_dim = 3 + rng.below(8);
      cfg.hidden_dim = 4 + rng.below(9);
      cfg.descriptor_dim = 3 + rng.below(8);
      cfg.embedding_dim = 3 + rng.below(6);
      cfg.embedding_layers = 1 + rng.below(3);
      cfg.dropout_rate = 0.0;
      cfg.learnable_no_image = (net % 2) == 1;
      Rng init(rng.raw());
      NetworkParams params = init_network(cfg, init);

      const std::size_t nu = 4, np = 6;
      DenseMatrix users(nu, cfg.user_dim);
      for (std::size_t r = 0; r < nu; ++r) {
        double sum = 0.0;
        for (std::size_t c = 0; c < cfg.user_dim; ++c) {
          users.at(r, c) = rng.u01();
          sum += users.at(r, c);
        }
        for (std::size_t c = 0; c < cfg.user_dim; ++c) users.at(r, c) /= sum;
      }
      DenseMatrix text(np, cfg.text_dim), visual(np, cfg.visual_dim);
      for (double& v : text.data) v = 0.5 * rng.u01();
      for (double& v : visual.data) v = 0.5 * rng.normal();
      std::vector<unsigned char> missing(np, 0);
      if (cfg.learnable_no_image) {
        missing[1] = 1;
        missing[4] = 1;
      }

      TripletBatch batch;
      batch.margin = 0.25;
      batch.lambda = 0.7;
      for (std::size_t i = 0; i < nu; ++i) {
        const std::size_t pos = rng.below(np);
        std::size_t neg = rng.below(np - 1);
        if (neg >= pos) ++neg;
        batch.cross.push_back({i, pos, neg});
      }
      for (std::size_t i = 0; i < 4; ++i) {
        const std::size_t anchor = rng.below(np);
        std::size_t same = rng.below(np - 1);
        if (same >= anchor) ++same;
        std::size_t other = rng.below(np);
        if (other == anchor || other == same) other = (std::max(anchor, same) + 1) % np;
        batch.within.push_back({anchor, same, other});
      }
      const Reduction red = (net % 2) ? Reduction::kMean : Reduction::kSum;

      EmbedResult ue, pe;
      try {
        ue = embed_users(params, users, Mode::kTrain);
        pe = embed_posts(params, text, visual, missing, Mode::kTrain);
      } catch (const DegenerateInputError&) {
        // A tiny random draw can die outright (every ReLU negative for every
        // row, so a zero embedding); it carries no gradient signal to probe.
        continue;
      }
      if (!detail::gradcheck_fixture_smooth(ue, pe, batch)) continue;

      BatchLossResult base = batch_loss(ue.embeddings, pe.embeddings, batch, red);
      Vec analytic(params.values.size(), 0.0);
      backward_users(params, ue.trace, base.d_users, analytic);
      backward_posts(params, pe.trace, base.d_posts, analytic);

      auto scalar_loss = [&](const NetworkParams& pp) {
        EmbedResult u2 = embed_users(pp, users, Mode::kTrain);
        EmbedResult p2 = embed_posts(pp, text, visual, missing, Mode::kTrain);
        return batch_loss(u2.embeddings, p2.embeddings, batch, red).loss;
      };
      NetworkParams probe = params;
      for (std::size_t i = 0; i < probe.values.size(); ++i) {
        const double keep = probe.values[i];
        probe.values[i] = keep + h;
        const double lp = scalar_loss(probe);
        probe.values[i] = keep - h;
        const double lm = scalar_loss(probe);
        probe.values[i] = keep;
        const double fd = (lp - lm) / (2.0 * h);
        // The floor keeps central-difference roundoff (about eps*|loss|/h,
        // ~1e-10 here) from dominating parameters whose true gradient is
        // near zero; real derivation bugs are O(1) relative.
        const double rel = std::abs(analytic[i] - fd) /
                           std::max({std::abs(analytic[i]), std::abs(fd), 1e-3});
        worst = std::max(worst, rel);
      }
      built = true;
    }
    if (!built) {
      res.detail = "could not build a kink-free fixture for network " +
                   std::to_string(net);
      return res;
    }
  }
  res.passed = worst < threshold;
  res.detail = std::to_string(nets) + " networks, max relative error " +
               format_double(worst) + " (threshold " + format_double(threshold) + ")";
  return res;
}

// Both branches emit unit-norm rows (within 1e-9) in train and eval mode.
inline CheckResult check_embedding_norms(std::size_t inputs, std::uint64_t seed) {
  CheckResult res{"embedding-unit-norm", false, ""};
  Rng rng(Rng::derive_seed(seed, "norm-check"));
  double worst = 0.0;
  std::size_t counted = 0;
  std::size_t round = 0;
  while (counted < inputs) {
    NetworkConfig cfg;
    cfg.text_dim = 8 + rng.below(25);
    cfg.visual_dim = 2 + rng.below(7);
    cfg.user_dim = 4 + rng.below(9);
    cfg.hidden_dim = 8 + rng.below(17);
    cfg.descriptor_dim = 4 + rng.below(9);
    cfg.embedding_dim = 4 + rng.below(13);
    cfg.embedding_layers = 1 + rng.below(3);
    cfg.dropout_rate = 0.5;
    cfg.learnable_no_image = (round % 2) == 1;
    Rng init(rng.raw());
    NetworkParams params = init_network(cfg, init);
    const std::size_t b = 8;
    DenseMatrix users(b, cfg.user_dim), text(b, cfg.text_dim), visual(b, cfg.visual_dim);
    for (double& v : users.data) v = rng.u01();
    for (double& v : text.data) v = rng.u01();
    for (double& v : visual.data) v = rng.normal();
    // One all-zero text row per round: the nonzero bias init must still
    // produce a normalizable embedding.
    for (std::size_t c = 0; c < cfg.text_dim; ++c) text.at(0, c) = 0.0;
    std::vector<unsigned char> missing(b, 0);
    missing[2] = 1;
    for (Mode mode : {Mode::kTrain, Mode::kEval}) {
      EmbedResult ue = embed_users(params, users, mode, &rng);
      EmbedResult pe = embed_posts(params, text, visual, missing, mode, &rng);
      for (const DenseMatrix* m : {&ue.embeddings, &pe.embeddings}) {
        for (std::size_t r = 0; r < m->rows; ++r) {
          worst = std::max(worst, std::abs(l2_norm(m->row(r)) - 1.0));
          ++counted;
        }
      }
    }
    ++round;
  }
  res.passed = worst <= 1e-9;
  res.detail = std::to_string(counted) + " embeddings, max |norm - 1| = " +
               format_double(worst) + " (threshold 1e-09)";
  return res;
}

// Hinge semantics: exactly zero loss on batches whose constraints all hold
// with slack >= 0 (including zero slack), and linearity in lambda to 1e-12.
inline CheckResult check_loss_semantics() {
  CheckResult res{"loss-semantics", false, ""};

  DenseMatrix users(2, 3), posts(5, 3);
  auto set_row = [](DenseMatrix& m, std::size_t r, double a, double b, double c) {
    m.at(r, 0) = a;
    m.at(r, 1) = b;
    m.at(r, 2) = c;
  };
  set_row(users, 0, 1.0, 0.0, 0.0);
  set_row(users, 1, 0.0, 1.0, 0.0);
  set_row(posts, 0, 1.0, 0.0, 0.0);   // = user 0
  set_row(posts, 1, 0.3, 0.7, 0.0);   // the zero-slack negative
  set_row(posts, 2, 0.0, 1.0, 0.0);   // = user 1
  set_row(posts, 3, 0.0, -1.0, 0.0);
  set_row(posts, 4, 0.0, 0.0, 1.0);

  TripletBatch sat;
  // Margin chosen as an exactly-representable distance so one cross and one
  // within triplet sit exactly on the boundary (slack 0), the rest strictly
  // inside.
  sat.margin = euclidean_distance(users.row(0), posts.row(1));
  sat.lambda = 0.5;
  sat.cross.push_back({0, 0, 1});  // d+ = 0, d- = margin: slack exactly 0
  sat.cross.push_back({1, 2, 3});  // d+ = 0, d- = 2
  sat.within.push_back({0, 0, 1});  // anchor == same, d- = margin
  sat.within.push_back({2, 2, 4});
  for (Reduction red : {Reduction::kSum, Reduction::kMean}) {
    BatchLossResult r = batch_loss(users, posts, sat, red);
    if (r.loss != 0.0 || r.cross_part != 0.0 || r.within_part != 0.0 ||
        r.active_cross != 0 || r.active_within != 0) {
      res.detail = "satisfied batch produced nonzero loss " + format_double(r.loss);
      return res;
    }
  }

  // A single violated cross triplet equals its hand value exactly.
  TripletBatch hot;
  hot.margin = 0.2;
  hot.lambda = 0.0;
  hot.cross.push_back({0, 2, 0});  // d+ = sqrt(2), d- = 0
  const double expect = 0.2 + std::sqrt(2.0);
  if (batch_loss(users, posts, hot).loss != expect) {
    res.detail = "violated triplet loss differs from hand value";
    return res;
  }

  // Lambda linearity on a random violating batch.
  Rng rng(20240901);
  DenseMatrix ru(3, 4), rp(6, 4);
  for (double& v : ru.data) v = rng.normal();
  for (double& v : rp.data) v = rng.normal();
  TripletBatch mixed;
  mixed.margin = 0.4;
  mixed.cross = {{0, 0, 1}, {1, 2, 3}, {2, 4, 5}, {0, 3, 2}};
  mixed.within = {{0, 1, 2}, {3, 4, 5}, {2, 0, 4}};
  double worst = 0.0;
  for (Reduction red : {Reduction::kSum, Reduction::kMean}) {
    double l[3];
    for (int k = 0; k < 3; ++k) {
      mixed.lambda = static_cast<double>(k);
      BatchLossResult r = batch_loss(ru, rp, mixed, red);
      l[k] = r.loss;
      worst = std::max(worst, std::abs(r.loss - (r.cross_part +
                                                 mixed.lambda * r.within_part)));
    }
    worst = std::max(worst, std::abs((l[2] - l[1]) - (l[1] - l[0])));
  }
  res.passed = worst <= 1e-12;
  res.detail = "zero-loss fixtures exact; lambda linearity deviation " +
               format_double(worst) + " (threshold 1e-12)";
  return res;
}

// Time-weighted selection frequencies against the exact two-pick sequential
// renormalization marginals (3 sigma per candidate), and a chi-square test
// on the uniform fallback at significance 0.01.
inline CheckResult check_sampler_distribution(std::size_t draws, std::uint64_t seed) {
  CheckResult res{"negative-sampler-distribution", false, ""};
  const std::int64_t acted_at = 100000;
  auto mk_post = [&](const std::string& id, std::int64_t created) {
    Post p;
    p.post_id = id;
    p.base_text = "x";
    p.created_at = created;
    return p;
  };
  // Offsets inside a 1000 second window: triangular weights .9 .7 .5 .3 .1.
  std::vector<Post> posts;
  const std::int64_t offs[5] = {100, 300, 500, 700, 900};
  for (int i = 0; i < 5; ++i) {
    posts.push_back(mk_post("c" + std::to_string(i), acted_at - offs[i]));
  }
  std::vector<const Post*> cands;
  for (const Post& p : posts) cands.push_back(&p);
  Interaction pos{"u", "anchor", acted_at};

  SamplerConfig cfg;
  cfg.window_seconds = 1000;
  cfg.negatives_per_positive = 2;
  cfg.minibatch_size = 1;

  double w[5], W = 0.0;
  for (int i = 0; i < 5; ++i) {
    w[i] = time_weight(posts[i].created_at, acted_at, cfg);
    W += w[i];
  }
  // Exact marginal of being selected in two renormalized picks.
  double marginal[5];
  for (int i = 0; i < 5; ++i) {
    double m = w[i] / W;
    for (int j = 0; j < 5; ++j) {
      if (j == i) continue;
      m += (w[j] / W) * (w[i] / (W - w[j]));
    }
    marginal[i] = m;
  }

  Rng rng(Rng::derive_seed(seed, "sampler-check"));
  std::size_t counts[5] = {0, 0, 0, 0, 0};
  for (std::size_t d = 0; d < draws; ++d) {
    for (const Post* sel : time_aware_negatives(pos, cands, cfg, rng)) {
      counts[sel->post_id[1] - '0'] += 1;
    }
  }
  double worst_z = 0.0;
  for (int i = 0; i < 5; ++i) {
    const double emp = static_cast<double>(counts[i]) / static_cast<double>(draws);
    const double sigma =
        std::sqrt(marginal[i] * (1.0 - marginal[i]) / static_cast<double>(draws));
    worst_z = std::max(worst_z, std::abs(emp - marginal[i]) / sigma);
  }

  // All candidates outside the window: single uniform fallback pick.
  std::vector<Post> far;
  for (int i = 0; i < 5; ++i) {
    far.push_back(mk_post("c" + std::to_string(i), acted_at - 5000 - 100 * i));
  }
  std::vector<const Post*> far_cands;
  for (const Post& p : far) far_cands.push_back(&p);
  SamplerConfig ucfg = cfg;
  ucfg.negatives_per_positive = 1;
  std::size_t ucounts[5] = {0, 0, 0, 0, 0};
  for (std::size_t d = 0; d < draws; ++d) {
    ucounts[time_aware_negatives(pos, far_cands, ucfg, rng)[0]->post_id[1] - '0']++;
  }
  const double expect = static_cast<double>(draws) / 5.0;
  double chi2 = 0.0;
  for (std::size_t c : ucounts) {
    const double diff = static_cast<double>(c) - expect;
    chi2 += diff * diff / expect;
  }
  const double chi2_crit = 13.2767;  // chi-square(4) upper 0.01 quantile

  res.passed = worst_z <= 3.0 && chi2 < chi2_crit;
  res.detail = std::to_string(draws) + " draws, max |z| = " + format_double(worst_z) +
               " (limit 3), fallback chi2 = " + format_double(chi2) + " (limit " +
               format_double(chi2_crit) + ")";
  return res;
}

// Lloyd inertia descent on random instances plus exact recovery of three
// well-separated blobs.
inline CheckResult check_kmeans(std::size_t instances, std::uint64_t seed) {
  CheckResult res{"kmeans-descent", false, ""};
  Rng rng(Rng::derive_seed(seed, "kmeans-check"));
  double worst_rise = 0.0;
  for (std::size_t inst = 0; inst < instances; ++inst) {
    const std::size_t n = 20 + rng.below(81);
    const std::size_t dim = 2 + rng.below(7);
    std::vector<Vec> pts(n, Vec(dim));
    for (Vec& v : pts) {
      for (double& x : v) x = 10.0 * rng.u01();
    }
    const std::size_t k = 1 + rng.below(6);
    KMeansFit fit = fit_kmeans(pts, k, rng, 50);
    for (std::size_t t = 1; t < fit.inertia_history.size(); ++t) {
      // Descent up to accumulated roundoff.
      const double allowed = 1e-9 * (1.0 + fit.inertia_history[t - 1]);
      worst_rise = std::max(
          worst_rise, fit.inertia_history[t] - fit.inertia_history[t - 1]);
      if (fit.inertia_history[t] > fit.inertia_history[t - 1] + allowed) {
        res.detail = "inertia rose at instance " + std::to_string(inst) +
                     " step " + std::to_string(t) + " by " +
                     format_double(fit.inertia_history[t] - fit.inertia_history[t - 1]);
        return res;
      }
    }
  }

  // Three blobs, centers pairwise 10+ apart, noise well under separation.
  const std::size_t dim = 4, per = 20;
  Vec centers[3] = {Vec(dim, 0.0), Vec(dim, 0.0), Vec(dim, 0.0)};
  centers[1][0] = 10.0;
  centers[2][1] = 10.0;
  std::vector<Vec> pts;
  std::vector<std::size_t> label;
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t i = 0; i < per; ++i) {
      Vec v = centers[b];
      for (double& x : v) x += 0.25 * (2.0 * rng.u01() - 1.0);
      pts.push_back(std::move(v));
      label.push_back(b);
    }
  }
  KMeansFit fit = fit_kmeans(pts, 3, rng, 100);
  // Majority map blob -> centroid must be a bijection and cover every point.
  std::size_t map[3];
  bool used[3] = {false, false, false};
  bool exact = true;
  for (std::size_t b = 0; b < 3 && exact; ++b) {
    map[b] = fit.assignments[b * per];
    if (used[map[b]]) exact = false;
    used[map[b]] = true;
    for (std::size_t i = 0; i < per; ++i) {
      if (fit.assignments[b * per + i] != map[b]) exact = false;
    }
  }
  if (exact) {
    for (std::size_t b = 0; b < 3; ++b) {
      if (euclidean_distance(fit.clusters.centroids.row(map[b]), centers[b]) > 1.0) {
        exact = false;
      }
    }
  }
  res.passed = exact;
  res.detail = std::to_string(instances) + " random instances, worst inertia rise " +
               format_double(worst_rise) + "; blob recovery " +
               (exact ? "exact" : "FAILED");
  return res;
}

// precision/recall at k against brute-force set intersection, exact equality.
inline CheckResult check_metrics(std::size_t instances, std::uint64_t seed) {
  CheckResult res{"ranking-metrics", false, ""};
  Rng rng(Rng::derive_seed(seed, "metric-check"));
  for (std::size_t inst = 0; inst < instances; ++inst) {
    const std::size_t m = 1 + rng.below(50);
    std::vector<std::string> ranked;
    for (std::size_t i = 0; i < m; ++i) ranked.push_back("p" + std::to_string(i));
    for (std::size_t i = m; i-- > 1;) {
      std::swap(ranked[i], ranked[rng.below(i + 1)]);
    }
    std::unordered_set<std::string> liked;
    for (std::size_t i = 0; i < m; ++i) {
      if (rng.u01() < 0.3) liked.insert("p" + std::to_string(i));
    }
    if (rng.u01() < 0.5) liked.insert("held-out-only");  // liked but never ranked
    if (liked.empty()) liked.insert(ranked[rng.below(m)]);
    const std::size_t k = 1 + rng.below(60);

    const auto [p, r] = precision_recall_at_k(ranked, liked, k);
    std::set<std::string> top(ranked.begin(),
                              ranked.begin() + std::min(k, ranked.size()));
    std::size_t hits = 0;
    for (const std::string& id : liked) hits += top.count(id);
    const double pb = static_cast<double>(hits) / static_cast<double>(k);
    const double rb = static_cast<double>(hits) / static_cast<double>(liked.size());
    if (p != pb || r != rb) {
      res.detail = "mismatch at instance " + std::to_string(inst) + ": got (" +
                   format_double(p) + ", " + format_double(r) + "), brute force (" +
                   format_double(pb) + ", " + format_double(rb) + ")";
      return res;
    }
  }
  res.passed = true;
  res.detail = std::to_string(instances) + " randomized instances, exact equality";
  return res;
}

// Checkpoint serialization round-trips bit-exactly and re-serializes to
// identical bytes.
inline CheckResult check_checkpoint_roundtrip(std::uint64_t seed) {
  CheckResult res{"checkpoint-roundtrip", false, ""};
  RunConfig cfg;
  cfg.text_dim = 12;
  cfg.visual_dim = 4;
  cfg.user_k = 5;
  cfg.post_k = 7;
  cfg.hidden_dim = 8;
  cfg.descriptor_dim = 6;
  cfg.embedding_dim = 5;
  cfg.learnable_no_image = true;
  cfg.train.seed = seed;

  Rng rng(Rng::derive_seed(seed, "checkpoint-check"));
  TrainState st;
  st.params = init_network(cfg.network(), rng);
  st.velocity.assign(st.params.values.size(), 0.0);
  for (double& v : st.velocity) v = 0.01 * rng.normal();
  for (double& v : st.params.post_running_mean) v = rng.normal();
  for (double& v : st.params.post_running_var) v = 0.5 + rng.u01();
  for (double& v : st.params.user_running_mean) v = rng.normal();
  for (double& v : st.params.user_running_var) v = 0.5 + rng.u01();
  st.step = 1234;
  st.rng = Rng(Rng::derive_seed(seed, "checkpoint-loop"));
  for (int i = 0; i < 17; ++i) st.rng.u01();

  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path();
  const fs::path a = dir / ("latentrank-selfcheck-" + std::to_string(seed) + "-a.ckpt");
  const fs::path b = dir / ("latentrank-selfcheck-" + std::to_string(seed) + "-b.ckpt");
  const std::uint64_t fp = 0x1234abcd5678ef90ull;
  save_checkpoint(a, cfg, st, fp);
  Checkpoint ck = load_checkpoint(a);
  save_checkpoint(b, ck.config, ck.state, ck.data_fingerprint);

  auto slurp = [](const fs::path& f) {
    std::ifstream in(f, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in),
                       std::istreambuf_iterator<char>());
  };
  const std::string bytes_a = slurp(a);
  const std::string bytes_b = slurp(b);
  fs::remove(a);
  fs::remove(b);

  const bool values_equal = ck.state.params.values == st.params.values &&
                            ck.state.velocity == st.velocity &&
                            ck.state.params.post_running_mean == st.params.post_running_mean &&
                            ck.state.params.post_running_var == st.params.post_running_var &&
                            ck.state.params.user_running_mean == st.params.user_running_mean &&
                            ck.state.params.user_running_var == st.params.user_running_var;
  const bool state_equal = ck.state.step == st.step &&
                           ck.state.rng.save_state() == st.rng.save_state() &&
                           ck.data_fingerprint == fp &&
                           ck.config.to_kv() == cfg.to_kv();
  res.passed = values_equal && state_equal && bytes_a == bytes_b && !bytes_a.empty();
  res.detail = values_equal && state_equal
                   ? "round-trip exact, re-serialization identical (" +
                         std::to_string(bytes_a.size()) + " bytes)"
                   : "round-trip mismatch";
  return res;
}

inline std::vector<CheckResult> run_self_checks(std::uint64_t seed) {
  return {
      check_gradients(5, seed),
      check_embedding_norms(2000, seed),
      check_loss_semantics(),
      check_sampler_distribution(20000, seed),
      check_kmeans(25, seed),
      check_metrics(300, seed),
      check_checkpoint_roundtrip(seed),
  };
}

}  // namespace latentrank
