// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Usage: mutexmatch_acceptance [criterion numbers...]   (default: all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "commands.hpp"
#include "mutexmatch/trainer.hpp"
#include "oracle.hpp"

namespace mm = mutexmatch;
namespace fs = std::filesystem;
using mm::Tensor;

namespace {

// Tolerances and budgets.
constexpr double kGradTol = 1e-4;
constexpr double kGradBudget = 10.0;
constexpr double kRoutingBudget = 1.0;
constexpr double kRoutingMinGrad = 1e-6;
constexpr double kValueTol = 1e-9;
constexpr double kValueBudget = 1.0;
constexpr int kPartitionTrials = 1000;
constexpr double kPartitionBudget = 5.0;
constexpr std::size_t kIdentitySteps = 200;
constexpr double kIdentityBudget = 60.0;
constexpr double kGainOverSupervised = 0.05;
constexpr double kSlackBelowBaseline = 0.005;
constexpr double kDeskBudget = 15.0 * 60.0;
constexpr std::size_t kSeeds = 5;
constexpr std::size_t kSeedsRequired = 4;
constexpr int kEquivalenceBatches = 1000;
constexpr double kEquivalenceTol = 1e-12;
constexpr double kEquivalenceBudget = 5.0;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, bool pass, const std::string& name, const std::string& detail) {
  std::printf("%s %d %s: %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  std::vector<double> v(r * c);
  for (double& x : v) x = d(rng);
  return Tensor::matrix(r, c, std::move(v));
}

Tensor random_probs(std::size_t r, std::size_t c, std::mt19937_64& rng, double sd = 1.0) {
  return mm::softmax(random_matrix(r, c, rng, sd), 1);
}

// ---------------------------------------------------------------------------
// 1. Gradient oracle

void criterion_gradients() {
  const auto t0 = Clock::now();
  mm::ModelSpec spec;
  spec.input_dim = 5;
  spec.hidden_dims = {8};
  spec.head_hidden = 6;
  spec.classes = 4;
  const mm::ModelParams params = mm::init_model(spec, 11);
  std::mt19937_64 rng(12);
  const Tensor weak = random_matrix(8, spec.input_dim, rng);
  const Tensor strong = random_matrix(8, spec.input_dim, rng);
  const Tensor labeled = random_matrix(6, spec.input_dim, rng);
  const std::vector<int> labels{0, 1, 2, 3, 0, 1};
  const double tau = 0.35;  // puts rows on both sides of the threshold

  using BundleLoss = std::function<Tensor(const mm::PredictionBundle&)>;
  struct Case {
    std::string name;
    BundleLoss f;
    bool stop = true;
  };
  const auto sep = [](const mm::PredictionBundle& b) { return mm::separation_loss(b.p_w, b.r_w_live); };
  std::vector<Case> cases = {
      {"sup", [&](const mm::PredictionBundle&) { return mm::supervised_loss(mm::forward_tpc(params, labeled), labels); }},
      {"sep", sep},
      {"sep(no stop-gradient)", sep, false},
      {"p", [&](const mm::PredictionBundle& b) { return mm::positive_consistency_loss(b.p_w, b.p_s, tau); }},
  };
  for (std::size_t k = 1; k <= spec.classes; ++k) {
    cases.push_back({"n(k=" + std::to_string(k) + ")", [&, k](const mm::PredictionBundle& b) {
                       return mm::negative_consistency_loss(b.r_w, b.r_s, b.p_w, tau, k);
                     }});
  }
  cases.push_back({"total", [&](const mm::PredictionBundle& b) {
                     const mm::LossTerms t{mm::supervised_loss(mm::forward_tpc(params, labeled), labels),
                                           mm::separation_loss(b.p_w, b.r_w_live),
                                           mm::positive_consistency_loss(b.p_w, b.p_s, tau),
                                           mm::negative_consistency_loss(b.r_w, b.r_s, b.p_w, tau, 3)};
                     return mm::combine_losses(t, {0.7, 1.3, 0.9});
                   }});
  for (auto mode : {mm::LowConfMode::kHardCe, mm::LowConfMode::kSoftCe, mm::LowConfMode::kFeatureMse}) {
    cases.push_back({"low_conf_mode=" + mm::to_string(mode), [&, mode](const mm::PredictionBundle& b) {
                       return mm::ablation_low_conf_loss(mode, b.p_w, b.p_s, b.z_w, b.z_s, tau);
                     }});
  }
  for (auto mode : {mm::TncScheme::kHardHard, mm::TncScheme::kRandSoft, mm::TncScheme::kRevNorm}) {
    cases.push_back({"tnc_scheme=" + mm::to_string(mode), [&, mode](const mm::PredictionBundle& b) {
                       std::mt19937_64 draw(5);  // identical targets on every evaluation
                       const auto out = mm::ablation_tnc_scheme(mode, b.p_w, b.r_w, b.r_w_live, b.r_s, tau, draw);
                       return mm::add(out.sep, out.consistency);
                     }});
  }
  for (auto mode : {mm::TncConsistency::kAllSamples, mm::TncConsistency::kHardLabel}) {
    cases.push_back({"tnc_consistency=" + mm::to_string(mode), [&, mode](const mm::PredictionBundle& b) {
                       return mm::ablation_tnc_consistency(mode, b.r_w, b.r_s, b.p_w, tau, 2);
                     }});
  }

  double worst = 0.0;
  std::string worst_name;
  for (const Case& c : cases) {
    const mm::PredictionBundle frozen = mm::forward_bundle(params, weak, strong, c.stop);
    const double err = mmtest::flat_grad_error(
        [&] { return c.f(frozen); },
        [&] { return c.f(mmtest::live_bundle(params, frozen, weak, strong, c.stop)); }, params.parameters());
    if (!(err <= worst)) {
      worst = err;
      worst_name = c.name;
    }
  }
  const double t = seconds_since(t0);
  report(1, worst <= kGradTol && t < kGradBudget, "gradient oracle",
         std::to_string(cases.size()) + " losses on a " + std::to_string(mm::parameter_count(params.parameters())) +
             "-parameter model (input dim 5), max relative error " + fmt("%.2e", worst) + " (" + worst_name +
             ", limit 1e-4), " + fmt("%.2f s", t) + " (limit 10 s)");
}

// ---------------------------------------------------------------------------
// 2. Stop-gradient routing

void criterion_routing() {
  const auto t0 = Clock::now();
  mm::ModelSpec spec;
  spec.input_dim = 16;
  spec.hidden_dims = {32, 32};
  spec.head_hidden = 16;
  spec.classes = 10;
  double max_extractor = 0.0, max_tnc = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    mm::ModelParams params = mm::init_model(spec, seed);
    std::mt19937_64 rng(100 + seed);
    const auto b = mm::forward_bundle(params, random_matrix(32, 16, rng), random_matrix(32, 16, rng), true);
    params.zero_grad();
    mm::separation_loss(b.p_w, b.r_w_live).backward();
    double seed_tnc = 0.0;
    for (const auto& p : params.extractor_parameters()) {
      for (double g : p.grad()) max_extractor = std::max(max_extractor, std::abs(g));
    }
    for (const auto& p : params.tnc_parameters()) {
      for (double g : p.grad()) seed_tnc = std::max(seed_tnc, std::abs(g));
    }
    max_tnc = seed == 0 ? seed_tnc : std::min(max_tnc, seed_tnc);
  }
  const double t = seconds_since(t0);
  report(2, max_extractor == 0.0 && max_tnc > kRoutingMinGrad && t < kRoutingBudget, "stop-gradient routing",
         "max |extractor grad| " + fmt("%.1e", max_extractor) + " (must be 0), smallest per-seed max |TNC grad| " +
             fmt("%.2e", max_tnc) + " (limit 1e-6), " + fmt("%.3f s", t) + " (limit 1 s)");
}

// ---------------------------------------------------------------------------
// 3. Hand-derived values

void criterion_values() {
  const auto t0 = Clock::now();
  const auto m = [](std::size_t r, std::size_t c, std::vector<double> v) { return Tensor::matrix(r, c, std::move(v)); };
  struct Check {
    std::string name;
    double got, expected;
  };
  std::vector<Check> checks;
  checks.push_back({"supervised", mm::supervised_loss(m(1, 3, {0.2, 0.5, 0.3}), std::vector<int>{1}).item(),
                    0.693147180559945});
  checks.push_back({"separation", mm::separation_loss(m(1, 3, {0.7, 0.2, 0.1}), m(1, 3, {0.1, 0.2, 0.7})).item(),
                    0.356674943938732});
  checks.push_back({"positive", mm::positive_consistency_loss(m(2, 3, {0.97, 0.02, 0.01, 0.5, 0.3, 0.2}),
                                                              m(2, 3, {0.7, 0.2, 0.1, 0.3, 0.3, 0.4}), 0.95)
                                    .item(),
                    0.178337471969366});
  const Tensor quarter = m(1, 4, {0.25, 0.25, 0.25, 0.25});
  checks.push_back({"negative", mm::negative_consistency_loss(m(1, 4, {0.4, 0.3, 0.2, 0.1}), quarter, quarter, 0.95, 2).item(),
                    0.485203026391962});
  checks.push_back({"hard_label", mm::ablation_tnc_consistency(mm::TncConsistency::kHardLabel,
                                                               m(1, 4, {0.1, 0.2, 0.6, 0.1}), quarter, quarter, 0.95, 1)
                                      .item(),
                    1.386294361119891});
  const auto q = mm::reverse_normalize(std::vector<double>{0.5, 0.3, 0.2});
  checks.push_back({"rev_norm[0]", q[0], 0.25});
  checks.push_back({"rev_norm[1]", q[1], 0.35});
  checks.push_back({"rev_norm[2]", q[2], 0.40});
  double worst = 0.0;
  std::string worst_name;
  for (const auto& c : checks) {
    const double err = std::abs(c.got - c.expected);
    if (!(err <= worst)) {
      worst = err;
      worst_name = c.name;
    }
  }
  const double t = seconds_since(t0);
  report(3, worst <= kValueTol && t < kValueBudget, "hand-derived values",
         std::to_string(checks.size()) + " values, max abs deviation " + fmt("%.1e", worst) + " (" + worst_name +
             ", limit 1e-9), " + fmt("%.3f s", t) + " (limit 1 s)");
}

// ---------------------------------------------------------------------------
// 4. Mutex partition

void criterion_partition() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::size_t> batch(1, 64), classes(2, 10);
  std::uniform_real_distribution<double> tau_d(0.3, 0.99), spread(0.5, 6.0);
  int bad = 0;
  std::size_t samples = 0, high = 0;
  for (int trial = 0; trial < kPartitionTrials; ++trial) {
    const std::size_t n = batch(rng), c = classes(rng);
    const double tau = tau_d(rng);
    const Tensor p_w = random_probs(n, c, rng, spread(rng));
    const Tensor p_s = random_probs(n, c, rng);
    const Tensor r_w = random_probs(n, c, rng);
    const Tensor r_s = random_probs(n, c, rng);
    const std::size_t k = 1 + rng() % c;
    const auto part = mm::confidence_partition(p_w, tau);
    bool ok = part.n_high + part.n_low == n && part.high.size() == n;
    std::size_t counted_high = 0;
    double sum_p = 0.0, sum_n = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool is_high = part.high[i];
      ok = ok && is_high != part.is_low(i);
      counted_high += is_high;
      const std::vector<std::size_t> row{i};
      const double lp = mm::positive_consistency_loss(mm::index_select(p_w, row), mm::index_select(p_s, row), tau).item();
      const double ln = mm::negative_consistency_loss(mm::index_select(r_w, row), mm::index_select(r_s, row),
                                                      mm::index_select(p_w, row), tau, k)
                            .item();
      ok = ok && (is_high ? ln == 0.0 : lp == 0.0);
      sum_p += lp;
      sum_n += ln;
    }
    ok = ok && counted_high == part.n_high;
    // The batch losses are the per-sample contributions averaged over all n.
    const double lp_batch = mm::positive_consistency_loss(p_w, p_s, tau).item();
    const double ln_batch = mm::negative_consistency_loss(r_w, r_s, p_w, tau, k).item();
    ok = ok && std::abs(lp_batch - sum_p / n) <= 1e-12 * std::max(1.0, lp_batch);
    ok = ok && std::abs(ln_batch - sum_n / n) <= 1e-12 * std::max(1.0, ln_batch);
    bad += !ok;
    samples += n;
    high += part.n_high;
  }
  const double t = seconds_since(t0);
  report(4, bad == 0 && t < kPartitionBudget, "mutex partition",
         std::to_string(kPartitionTrials) + " random batches (" + std::to_string(samples) + " samples, " +
             std::to_string(high) + " high-confidence), " + std::to_string(bad) + " violations, " + fmt("%.2f s", t) +
             " (limit 5 s)");
}

// ---------------------------------------------------------------------------
// Desk-scale configuration shared by criteria 5, 6, 7 and 9.

mm::RunConfig desk_config() {
  mm::RunConfig cfg;
  cfg.data.dataset = "blobs";
  cfg.data.classes = 10;
  cfg.data.input_dim = 16;
  cfg.data.per_class = 600;
  cfg.data.eval_fraction = 1.0 / 6.0;  // 100 eval rows per class, 5000 unlabeled
  cfg.data.separation = 4.0;
  cfg.data.labels_per_class = 4;
  cfg.model.hidden_dims = {64, 64};
  cfg.model.head_hidden = 32;
  cfg.train.batch_size = 16;
  cfg.train.steps = 5000;
  cfg.train.eval_every = 0;
  return cfg;
}

// ---------------------------------------------------------------------------
// 5. Baseline-reduction identity

void criterion_identity() {
  const auto t0 = Clock::now();
  mm::RunConfig mutex = desk_config();
  mutex.train.steps = kIdentitySteps;
  mutex.train.lambdas.n = 0.0;
  mutex.train.lambdas.sep = 0.0;
  mm::RunConfig fix = mutex;
  fix.train.algorithm = mm::Algorithm::kFixMatch;

  const mm::Dataset ds = mm::load_dataset(mutex.data);
  const mm::Split split = mm::make_run_split(ds, mutex);
  mm::ModelParams a = mm::init_run_model(mutex, split).clone();
  mm::ModelParams b = a.clone();
  mm::RngStreams ra(mutex.train.seed), rb(fix.train.seed);
  mm::BatchIterator ia(split.labeled, split.unlabeled, mutex.train.batch_size, mutex.train.mu, mutex.weak, mutex.strong,
                       split.feature_std, split.image, ra);
  mm::BatchIterator ib(split.labeled, split.unlabeled, fix.train.batch_size, fix.train.mu, fix.weak, fix.strong,
                       split.feature_std, split.image, rb);
  auto sa = mm::OptimizerState::for_params(a.parameters());
  auto sb = mm::OptimizerState::for_params(b.parameters());
  std::size_t identical_steps = 0;
  bool diverged = false;
  for (std::size_t s = 0; s < kIdentitySteps && !diverged; ++s) {
    mm::train_step(a, ia.next(), mutex.train, sa, ra.ablation);
    mm::train_step(b, ib.next(), fix.train, sb, rb.ablation);
    const auto pa = a.parameters(), pb = b.parameters();
    for (std::size_t i = 0; i < pa.size() && !diverged; ++i) {
      diverged = !std::equal(pa[i].data().begin(), pa[i].data().end(), pb[i].data().begin());
    }
    for (std::size_t i = 0; i < sa.velocity.size() && !diverged; ++i) diverged = sa.velocity[i] != sb.velocity[i];
    identical_steps += !diverged;
  }
  const double t = seconds_since(t0);
  report(5, identical_steps == kIdentitySteps && t < kIdentityBudget, "baseline-reduction identity",
         std::to_string(identical_steps) + "/" + std::to_string(kIdentitySteps) +
             " steps with bit-identical parameters and momentum buffers (lambda_n = lambda_sep = 0 vs fixmatch), " +
             fmt("%.1f s", t) + " (limit 60 s)");
}

// ---------------------------------------------------------------------------
// 6, 7, 9. Desk-scale runs

struct DeskRun {
  double accuracy = 0.0;
  std::vector<double> complementary_error;
  double tpc_diagonal = 0.0, tnc_diagonal = 0.0;
};

DeskRun desk_run(mm::RunConfig cfg, std::uint64_t seed) {
  cfg.train.seed = seed;
  const mm::Dataset ds = mm::load_dataset(cfg.data);
  const mm::Split split = mm::make_run_split(ds, cfg);
  const mm::FitResult r = mm::fit(mm::init_run_model(cfg, split), split, cfg);
  const mm::EvalMetrics& e = *r.log.back().eval;
  return {e.test_accuracy, e.complementary_error, mm::diagonal_mass(e.heatmap_tpc), mm::diagonal_mass(e.heatmap_tnc)};
}

double mean_accuracy(const std::vector<DeskRun>& runs) {
  double s = 0.0;
  for (const auto& r : runs) s += r.accuracy;
  return s / static_cast<double>(runs.size());
}

std::string percent_list(const std::vector<DeskRun>& runs) {
  std::string s;
  for (const auto& r : runs) s += (s.empty() ? "" : " ") + fmt("%.1f", 100.0 * r.accuracy);
  return s;
}

void criteria_desk(const std::set<int>& wanted) {
  const auto t0 = Clock::now();
  const mm::RunConfig mutex = desk_config();
  mm::RunConfig supervised = mutex;
  supervised.train.lambdas = {0.0, 0.0, 0.0};
  mm::RunConfig baseline = mutex;
  baseline.train.lambdas.sep = 0.0;
  baseline.train.lambdas.n = 0.0;

  const bool need_comparison = wanted.count(6) > 0;
  std::vector<DeskRun> m, s, b;
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    m.push_back(desk_run(mutex, seed));
    if (need_comparison) {
      s.push_back(desk_run(supervised, seed));
      b.push_back(desk_run(baseline, seed));
    }
    std::fprintf(stderr, "  desk seed %llu done (%.0f s)\n", static_cast<unsigned long long>(seed), seconds_since(t0));
  }
  const double t = seconds_since(t0);

  if (need_comparison) {
    const double mm_acc = mean_accuracy(m), sup = mean_accuracy(s), base = mean_accuracy(b);
    const bool pass = mm_acc >= sup + kGainOverSupervised && mm_acc >= base - kSlackBelowBaseline && t < kDeskBudget;
    report(6, pass, "desk-scale SSL gain",
           "mean test accuracy mutexmatch " + fmt("%.2f", 100 * mm_acc) + "% [" + percent_list(m) + "], supervised " +
               fmt("%.2f", 100 * sup) + "% [" + percent_list(s) + "], baseline " + fmt("%.2f", 100 * base) + "% [" +
               percent_list(b) + "]; gain over supervised " + fmt("%+.2f", 100 * (mm_acc - sup)) +
               " (need >= +5), vs baseline " + fmt("%+.2f", 100 * (mm_acc - base)) + " (need >= -0.5); " +
               fmt("%.0f s", t) + " (limit 900 s)");
  }
  if (wanted.count(7)) {
    const std::size_t half = (m.front().complementary_error.size() + 1) / 2;
    std::size_t ok = 0;
    std::string detail;
    for (const auto& r : m) {
      const auto& ce = r.complementary_error;
      const bool trend = ce[0] <= ce[1] && ce[1] <= ce[half - 1];
      ok += trend;
      detail += (detail.empty() ? "" : ", ") + fmt("%.4f", ce[0]) + "/" + fmt("%.4f", ce[1]) + "/" +
                fmt("%.4f", ce[half - 1]) + (trend ? "" : " x");
    }
    report(7, ok >= kSeedsRequired, "complementary-label rank trend",
           std::to_string(ok) + "/" + std::to_string(kSeeds) + " seeds with error(m=1) <= error(m=2) <= error(m=" +
               std::to_string(half) + ") (need >= 4): " + detail);
  }
  if (wanted.count(9)) {
    std::size_t ok = 0;
    std::string detail;
    for (const auto& r : m) {
      ok += r.tpc_diagonal > r.tnc_diagonal;
      detail += (detail.empty() ? "" : ", ") + fmt("%.3f", r.tpc_diagonal) + ">" + fmt("%.3f", r.tnc_diagonal);
    }
    report(9, ok >= kSeedsRequired, "heatmap diagonal",
           std::to_string(ok) + "/" + std::to_string(kSeeds) +
               " seeds with TPC diagonal mass > TNC diagonal mass (need >= 4): " + detail);
  }
}

// ---------------------------------------------------------------------------
// 8. k = C equivalence

void criterion_full_k() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<std::size_t> batch(1, 64), classes(2, 10);
  std::uniform_real_distribution<double> spread(0.5, 6.0);
  double worst = 0.0;
  for (int trial = 0; trial < kEquivalenceBatches; ++trial) {
    const std::size_t n = batch(rng), c = classes(rng);
    const double tau = 0.95;
    const Tensor p_w = random_probs(n, c, rng, spread(rng));
    const Tensor r_w = random_probs(n, c, rng, spread(rng));
    const Tensor r_s = random_probs(n, c, rng, spread(rng));
    // Full soft cross-entropy on the low-confidence rows, written out directly.
    double expected = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto pw = p_w.data().subspan(i * c, c);
      if (*std::max_element(pw.begin(), pw.end()) >= tau) continue;
      for (std::size_t j = 0; j < c; ++j) {
        expected -= r_w.data()[i * c + j] * std::log(std::max(r_s.data()[i * c + j], 1e-12));
      }
    }
    expected /= static_cast<double>(n);
    worst = std::max(worst, std::abs(mm::negative_consistency_loss(r_w, r_s, p_w, tau, c).item() - expected));
  }
  const double t = seconds_since(t0);
  report(8, worst <= kEquivalenceTol && t < kEquivalenceBudget, "k=C equivalence",
         std::to_string(kEquivalenceBatches) + " random batches, max abs difference " + fmt("%.1e", worst) +
             " (limit 1e-12), " + fmt("%.2f s", t) + " (limit 5 s)");
}

// ---------------------------------------------------------------------------
// 10. Reproducibility from manifests

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void criterion_reproducibility() {
  const fs::path root = fs::temp_directory_path() / "mutexmatch_acceptance_repro";
  fs::remove_all(root);
  const std::vector<std::vector<std::string>> variants = {
      {},
      {"tnc_scheme=rand_soft"},
      {"k=0.6C", "stop_gradient=false", "schedule=constant"},
      {"dataset=rings", "classes=4", "per_class=150", "labels_per_class=5", "ema_decay=0.99"},
  };
  std::size_t identical = 0;
  std::string detail;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    const fs::path dir = root / ("variant_" + std::to_string(v));
    mm::cli::TrainOptions first;
    first.overrides = {"classes=5", "per_class=120", "hidden_dims=32,32", "head_hidden=16", "batch_size=16",
                       "steps=300", "eval_every=50", "seed=" + std::to_string(3 + v)};
    first.overrides.insert(first.overrides.end(), variants[v].begin(), variants[v].end());
    first.out = (dir / "original").string();
    std::ostringstream sink;
    mm::cli::cmd_train(first, sink, sink);
    std::vector<std::string> summaries;
    for (const char* name : {"rerun_a", "rerun_b"}) {
      mm::cli::TrainOptions again;
      again.manifest_path = (dir / "original" / "manifest.json").string();
      again.out = (dir / name).string();
      mm::cli::cmd_train(again, sink, sink);
      summaries.push_back(slurp(dir / name / "summary.csv"));
    }
    const bool same = !summaries[0].empty() && summaries[0] == summaries[1] &&
                      summaries[0] == slurp(dir / "original" / "summary.csv");
    identical += same;
    detail += (detail.empty() ? "" : ", ") + std::string(variants[v].empty() ? "default" : variants[v].front()) +
              (same ? " identical" : " DIFFERENT");
  }
  fs::remove_all(root);
  report(10, identical == variants.size(), "reproducibility",
         std::to_string(identical) + "/" + std::to_string(variants.size()) +
             " manifests give byte-identical summary.csv on two re-executions (" + detail + ")");
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  if (wanted.empty()) wanted = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  const auto run = [&](int id, const std::function<void()>& f) {
    if (!wanted.count(id)) return;
    try {
      f();
    } catch (const std::exception& e) {
      report(id, false, "criterion", std::string("exception: ") + e.what());
    }
  };
  run(1, criterion_gradients);
  run(2, criterion_routing);
  run(3, criterion_values);
  run(4, criterion_partition);
  run(5, criterion_identity);
  if (wanted.count(6) || wanted.count(7) || wanted.count(9)) {
    try {
      criteria_desk(wanted);
    } catch (const std::exception& e) {
      for (int id : {6, 7, 9}) {
        if (wanted.count(id)) report(id, false, "desk-scale runs", std::string("exception: ") + e.what());
      }
    }
  }
  run(8, criterion_full_k);
  run(10, criterion_reproducibility);
  std::printf("%s: %d failing criteria\n", failures == 0 ? "ALL PASS" : "FAILURES", failures);
  return failures == 0 ? 0 : 1;
}
