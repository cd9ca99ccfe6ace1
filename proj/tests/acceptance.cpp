// Acceptance gate: nine release criteria, one per invocation (`acceptance <n>`).
// Each prints exactly one [PASS]/[FAIL] line; auxiliary progress lines never
// carry those tags.  Tolerances and budgets are pinned here or in the named
// self-check, not configurable.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "latentrank/latentrank.hpp"

using namespace latentrank;

namespace {

constexpr std::uint64_t kSeed = 20240816;

int report(int n, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %d: %s\n", pass ? "PASS" : "FAIL", n, detail.c_str());
  std::fflush(stdout);
  return pass ? 0 : 1;
}

double secs_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 1: analytic gradients of the full objective vs central differences on 20
// freshly seeded small networks, dropout off.  The FD step (1e-5) and the
// 1e-4 relative bound live in check_gradients; the 60 s budget is enforced
// here.
int criterion1() {
  auto t0 = std::chrono::steady_clock::now();
  CheckResult r = check_gradients(20, kSeed);
  double s = secs_since(t0);
  char buf[64];
  std::snprintf(buf, sizeof(buf), " [%.1fs, limit 60]", s);
  return report(1, r.passed && s < 60.0, r.detail + buf);
}

// 2: every branch output is unit-norm to 1e-9.  The scale argument counts
// embeddings; 20000 embeddings = 10^4 random input rows, each pushed through
// both train and eval modes.
int criterion2() {
  CheckResult r = check_embedding_norms(20000, kSeed);
  return report(2, r.passed, r.detail);
}

// 3: exactly zero loss on all-satisfied batches (slack >= 0 inclusive) and
// linearity in the auxiliary weight at lambda in {0, 1, 2} to 1e-12.
int criterion3() {
  CheckResult r = check_loss_semantics();
  return report(3, r.passed, r.detail);
}

// 4: 10^5 negative draws from a fixed 5-candidate window, every candidate's
// selection frequency within 3 sigma of the exact sequential-renormalization
// marginal; out-of-window fallback passes a chi-square test at alpha = 0.01.
int criterion4() {
  CheckResult r = check_sampler_distribution(100000, kSeed);
  return report(4, r.passed, r.detail);
}

// 5: inertia never increases across Lloyd steps on 100 random instances, and
// three well-separated blobs are recovered exactly.
int criterion5() {
  CheckResult r = check_kmeans(100, kSeed);
  return report(5, r.passed, r.detail);
}

// 6: P@K and R@K match brute-force set intersection on 1000 randomized
// instances, exact equality.
int criterion6() {
  CheckResult r = check_metrics(1000, kSeed);
  return report(6, r.passed, r.detail);
}

// Training experiment shared by criterion 7: 5 topics, 50 users, 1000 posts,
// 20 interactions per user, noise 0.1.  For a given seed the dataset and
// network init are identical across lambda values, so the ablation isolates
// the auxiliary term.
RunConfig experiment_config() {
  RunConfig cfg;
  cfg.text_dim = 256;
  cfg.visual_dim = 16;
  cfg.user_k = 16;
  cfg.post_k = 16;
  cfg.hidden_dim = 64;
  cfg.descriptor_dim = 32;
  cfg.embedding_dim = 32;
  cfg.embedding_layers = 2;
  cfg.dropout_rate = 0.5;
  cfg.window_seconds = 14 * 86400;
  cfg.negatives_per_positive = 5;
  cfg.minibatch_size = 32;
  cfg.train.learning_rate = 0.01;
  cfg.train.weight_decay = 1e-5;
  cfg.train.momentum = 0.9;
  cfg.train.margin = 0.2;
  cfg.train.epochs = 40;
  cfg.eval_ks = {1, 5};
  cfg.holdout_per_user = 5;
  cfg.synth.topics = 5;
  cfg.synth.users = 50;
  cfg.synth.posts = 1000;
  cfg.synth.interactions_per_user = 20;
  cfg.synth.vocab_size = 500;
  cfg.synth.visual_dim = 16;
  cfg.synth.horizon_seconds = 14 * 86400;
  cfg.synth.noise = 0.1;
  return cfg;
}

struct RunOutcome {
  double p1 = 0.0;
  double p5 = 0.0;
  double like_rate = 0.0;
  double secs = 0.0;
};

RunOutcome run_experiment(std::uint64_t seed, double lambda) {
  RunConfig cfg = experiment_config();
  cfg.train.seed = seed;
  cfg.train.lambda = lambda;
  Rng rng(Rng::derive_seed(seed, "synth"));
  SynthResult synth = generate_synthetic(cfg.synth, rng);
  SplitResult split = time_based_split(synth.dataset, cfg.holdout_per_user);
  auto t0 = std::chrono::steady_clock::now();
  TrainResult tr = train(split.train, cfg);
  RankReport rep = evaluate(tr.state.params, split.test, split.train,
                            tr.clusters.user, cfg.encoding(), cfg.eval_ks);
  RunOutcome out;
  out.secs = secs_since(t0);
  out.p1 = rep.precision_at[0];
  out.p5 = rep.precision_at[1];
  out.like_rate = rep.mean_like_rate;
  std::printf("  seed %llu lambda %.1f: P@1 %.4f P@5 %.4f baseline %.4f (%.0fs)\n",
              static_cast<unsigned long long>(seed), lambda, out.p1, out.p5,
              out.like_rate, out.secs);
  std::fflush(stdout);
  return out;
}

// 7: (a) the trained model's P@5 beats the analytic random baseline (mean
// per-user like rate, the expected precision of a uniform shuffle) by 3x;
// (b) across 5 seeds, mean P@1 with the auxiliary term at 0.3 is no worse
// than mean P@1 without it minus one pooled standard error; (c) every run
// finishes inside 5 minutes.
int criterion7() {
  const std::vector<std::uint64_t> seeds = {101, 202, 303, 404, 505};
  std::vector<RunOutcome> with_aux;
  std::vector<RunOutcome> without_aux;
  double slowest = 0.0;
  for (std::uint64_t s : seeds) {
    with_aux.push_back(run_experiment(s, 0.3));
    without_aux.push_back(run_experiment(s, 0.0));
    slowest = std::max(slowest, std::max(with_aux.back().secs, without_aux.back().secs));
  }

  const RunOutcome& head = with_aux.front();
  bool lift_ok = head.p5 >= 3.0 * head.like_rate;

  auto mean_p1 = [](const std::vector<RunOutcome>& runs) {
    double sum = 0.0;
    for (const RunOutcome& r : runs) sum += r.p1;
    return sum / static_cast<double>(runs.size());
  };
  auto var_p1 = [](const std::vector<RunOutcome>& runs, double mean) {
    double sum = 0.0;
    for (const RunOutcome& r : runs) sum += (r.p1 - mean) * (r.p1 - mean);
    return sum / static_cast<double>(runs.size() - 1);
  };
  const double n = static_cast<double>(seeds.size());
  double m3 = mean_p1(with_aux);
  double m0 = mean_p1(without_aux);
  double se = std::sqrt(var_p1(with_aux, m3) / n + var_p1(without_aux, m0) / n);
  bool aux_ok = m3 >= m0 - se;
  bool time_ok = slowest < 300.0;

  char buf[320];
  std::snprintf(buf, sizeof(buf),
                "P@5 %.4f vs baseline %.4f (%.2fx, need 3x); "
                "mean P@1 %.4f (aux 0.3) vs %.4f (aux 0), pooled se %.4f; "
                "slowest run %.0fs (limit 300)",
                head.p5, head.like_rate,
                head.like_rate > 0.0 ? head.p5 / head.like_rate : 0.0, m3, m0,
                se, slowest);
  return report(7, lift_ok && aux_ok && time_ok, buf);
}

// Small dataset + config shared by criteria 8 and 9.
RunConfig small_config() {
  RunConfig cfg;
  cfg.text_dim = 32;
  cfg.visual_dim = 4;
  cfg.user_k = 4;
  cfg.post_k = 4;
  cfg.hidden_dim = 16;
  cfg.descriptor_dim = 8;
  cfg.embedding_dim = 8;
  cfg.embedding_layers = 2;
  cfg.dropout_rate = 0.5;
  cfg.window_seconds = 200000;
  cfg.negatives_per_positive = 2;
  cfg.minibatch_size = 8;
  cfg.train.learning_rate = 0.05;
  cfg.train.epochs = 2;
  cfg.train.seed = 777;
  cfg.eval_ks = {1, 3};
  cfg.holdout_per_user = 2;
  cfg.synth.topics = 3;
  cfg.synth.users = 12;
  cfg.synth.posts = 100;
  cfg.synth.interactions_per_user = 10;
  cfg.synth.vocab_size = 120;
  cfg.synth.visual_dim = 4;
  cfg.synth.horizon_seconds = 100000;
  cfg.synth.noise = 0.1;
  return cfg;
}

Dataset small_dataset(const RunConfig& cfg) {
  Rng rng(Rng::derive_seed(4096, "synth"));
  return generate_synthetic(cfg.synth, rng).dataset;
}

// 8: identical config and seed give bit-identical checkpoints; training to
// step n, checkpointing, and resuming to step m gives the same bytes as an
// uninterrupted run to m; a saved checkpoint reloads and resaves unchanged.
int criterion8() {
  RunConfig cfg = small_config();
  Dataset ds = small_dataset(cfg);
  std::uint64_t fp = dataset_fingerprint(ds);

  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "latentrank-accept-c8";
  fs::remove_all(dir);
  fs::create_directories(dir);

  TrainResult a = train(ds, cfg);
  TrainResult b = train(ds, cfg);
  save_checkpoint(dir / "a.ckpt", cfg, a.state, fp);
  save_checkpoint(dir / "b.ckpt", cfg, b.state, fp);
  std::string bytes_a = read_bytes(dir / "a.ckpt");
  bool identical = !bytes_a.empty() && bytes_a == read_bytes(dir / "b.ckpt");

  RunConfig half_cfg = cfg;
  half_cfg.train.epochs = 1;
  TrainResult half = train(ds, half_cfg);
  std::size_t half_step = half.state.step;
  TrainState carried = half.state;
  TrainResult resumed = train(ds, cfg, nullptr, {}, &carried);
  save_checkpoint(dir / "resumed.ckpt", cfg, resumed.state, fp);
  bool resume_ok = read_bytes(dir / "resumed.ckpt") == bytes_a;

  CheckResult roundtrip = check_checkpoint_roundtrip(kSeed);

  std::error_code ec;
  fs::remove_all(dir, ec);

  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "identical runs agree on all %zu checkpoint bytes; resume from "
                "step %zu reaches the step-%zu bytes; reload/resave stable (%s)",
                bytes_a.size(), half_step, a.state.step,
                roundtrip.passed ? "yes" : "no");
  return report(8, identical && resume_ok && roundtrip.passed, buf);
}

// 9: the sweep harness trains one model per auxiliary weight on a shared
// time-based split and emits a P@K table.  The table's shape and bounds are
// checked; the curve itself is reported for inspection, not asserted.
int criterion9() {
  RunConfig base = small_config();
  base.train.epochs = 3;
  base.eval_ks = {1, 5};
  Dataset ds = small_dataset(base);
  const std::vector<double> grid = {0.0, 0.1, 0.3, 1.0};

  std::vector<SweepRow> rows = lambda_sweep(ds, 0.25, grid, base);

  std::printf("  lambda     P@1     P@5     R@1     R@5  users\n");
  bool shape_ok = rows.size() == grid.size();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const RankReport& rep = rows[i].report;
    bool row_ok = rep.ks == base.eval_ks && rep.precision_at.size() == 2 &&
                  rep.recall_at.size() == 2 && rep.users_evaluated >= 1;
    for (double v : rep.precision_at) row_ok = row_ok && v >= 0.0 && v <= 1.0;
    for (double v : rep.recall_at) row_ok = row_ok && v >= 0.0 && v <= 1.0;
    if (i < grid.size()) row_ok = row_ok && rows[i].lambda == grid[i];
    shape_ok = shape_ok && row_ok;
    std::printf("  %6.2f  %6.4f  %6.4f  %6.4f  %6.4f  %5zu\n", rows[i].lambda,
                rep.precision_at[0], rep.precision_at[1], rep.recall_at[0],
                rep.recall_at[1], rep.users_evaluated);
  }
  std::fflush(stdout);

  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "%zu auxiliary weights swept; every row well-formed (K in "
                "{1,5}, values in [0,1]); curve reported above, not asserted",
                rows.size());
  return report(9, shape_ok, buf);
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: acceptance <criterion 1-9>\n");
    return 2;
  }
  int n = std::atoi(argv[1]);
  try {
    switch (n) {
      case 1: return criterion1();
      case 2: return criterion2();
      case 3: return criterion3();
      case 4: return criterion4();
      case 5: return criterion5();
      case 6: return criterion6();
      case 7: return criterion7();
      case 8: return criterion8();
      case 9: return criterion9();
      default: break;
    }
  } catch (const std::exception& e) {
    std::printf("[FAIL] criterion %d: unexpected exception: %s\n", n, e.what());
    return 1;
  }
  std::fprintf(stderr, "usage: acceptance <criterion 1-9>\n");
  return 2;
}
