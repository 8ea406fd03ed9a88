#include "mutexmatch/losses.hpp"

#include <algorithm>
#include <numeric>

#include "mutexmatch/error.hpp"

namespace mutexmatch {

namespace {

// sum_n coef[n] * log probs[n, target[n]], where coef already carries the
// minus sign and the batch normaliser.
Tensor weighted_hard_ce(const Tensor& probs, std::span<const std::size_t> targets,
                        std::vector<double> coef) {
  return sum(mul(log(gather(probs, targets)), Tensor::vector(std::move(coef))));
}

// sum_{n,i} coef[n,i] * log probs[n,i]
Tensor weighted_soft_ce(const Tensor& probs, std::vector<double> coef) {
  return sum(mul(Tensor(probs.shape(), std::move(coef)), log(probs)));
}

void require_batch(const Tensor& t, const char* what) {
  if (t.rank() != 2 || t.rows() == 0 || t.cols() < 2) {
    throw DimensionError(std::string(what) + ": expected a non-empty [batch, classes] tensor");
  }
}

void require_pair(const Tensor& a, const Tensor& b, const char* what) {
  require_batch(a, what);
  if (a.shape() != b.shape()) throw DimensionError(std::string(what) + ": paired predictions differ in shape");
}

void require_tau(double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("tau must lie in (0, 1)");
}

void require_k(std::size_t k, std::size_t classes) {
  if (k < 1 || k > classes) {
    throw ConfigError("k must lie in [1, " + std::to_string(classes) + "], got " + std::to_string(k));
  }
}

std::span<const double> row(const Tensor& t, std::size_t r) {
  return t.data().subspan(r * t.cols(), t.cols());
}

// Per-sample soft targets for the TNC consistency term. When hard is set the
// selected components are 1 instead of r_w.
std::vector<double> tnc_targets(const Tensor& r_w, const ConfidencePartition* part, std::size_t k,
                                bool hard) {
  const std::size_t n = r_w.rows(), c = r_w.cols();
  const double norm = static_cast<double>(n);
  const double per_k = k == c ? 1.0 : 1.0 / static_cast<double>(k);
  std::vector<double> coef(n * c, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    if (part && !part->is_low(s)) continue;
    const auto r = row(r_w, s);
    const TopKMask mask = topk_mask(r, k);
    for (std::size_t i = 0; i < c; ++i) {
      if (!mask.g[i]) continue;
      const double target = hard ? 1.0 : r[i];
      coef[s * c + i] = -per_k * target / norm;
    }
  }
  return coef;
}

std::vector<double> low_coef(const ConfidencePartition& part, double norm) {
  std::vector<double> coef(part.high.size(), 0.0);
  for (std::size_t s = 0; s < coef.size(); ++s) {
    if (part.is_low(s)) coef[s] = -1.0 / norm;
  }
  return coef;
}

// Soft cross-entropy restricted to the low-confidence rows, full distribution.
Tensor low_conf_soft_ce(const std::vector<double>& targets, const Tensor& q,
                        const ConfidencePartition& part) {
  const std::size_t n = q.rows(), c = q.cols();
  std::vector<double> coef(n * c, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    if (!part.is_low(s)) continue;
    for (std::size_t i = 0; i < c; ++i) coef[s * c + i] = -targets[s * c + i] / static_cast<double>(n);
  }
  return weighted_soft_ce(q, std::move(coef));
}

}  // namespace

std::size_t select_pseudo_label(std::span<const double> probs) {
  if (probs.empty()) throw DimensionError("empty probability vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i) {
    if (probs[i] > probs[best]) best = i;
  }
  return best;
}

std::size_t select_complementary_label(std::span<const double> probs) {
  if (probs.empty()) throw DimensionError("empty probability vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i) {
    if (probs[i] <= probs[best]) best = i;
  }
  return best;
}

std::vector<std::size_t> pseudo_labels(const Tensor& probs) {
  std::vector<std::size_t> out(probs.rows());
  for (std::size_t r = 0; r < out.size(); ++r) out[r] = select_pseudo_label(row(probs, r));
  return out;
}

std::vector<std::size_t> complementary_labels(const Tensor& probs) {
  std::vector<std::size_t> out(probs.rows());
  for (std::size_t r = 0; r < out.size(); ++r) out[r] = select_complementary_label(row(probs, r));
  return out;
}

ConfidencePartition confidence_partition(const Tensor& p_w, double tau) {
  require_tau(tau);
  ConfidencePartition part;
  part.high.resize(p_w.rows());
  for (std::size_t r = 0; r < p_w.rows(); ++r) {
    const auto p = row(p_w, r);
    part.high[r] = *std::max_element(p.begin(), p.end()) >= tau;
    if (part.high[r]) {
      ++part.n_high;
    } else {
      ++part.n_low;
    }
  }
  return part;
}

TopKMask topk_mask(std::span<const double> r, std::size_t k) {
  require_k(k, r.size());
  std::vector<std::size_t> order(r.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return r[a] > r[b]; });
  TopKMask mask{std::vector<unsigned char>(r.size(), 0), k};
  for (std::size_t i = 0; i < k; ++i) mask.g[order[i]] = 1;
  return mask;
}

Tensor supervised_loss(const Tensor& probs, std::span<const int> labels) {
  require_batch(probs, "supervised_loss");
  if (labels.size() != probs.rows()) throw DimensionError("supervised_loss: one label per row required");
  std::vector<std::size_t> targets(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= probs.cols()) {
      throw DataError("label " + std::to_string(labels[i]) + " outside [0, " +
                      std::to_string(probs.cols()) + ")");
    }
    targets[i] = static_cast<std::size_t>(labels[i]);
  }
  const double norm = static_cast<double>(labels.size());
  return weighted_hard_ce(probs, targets, std::vector<double>(labels.size(), -1.0 / norm));
}

Tensor separation_loss(const Tensor& p_w, const Tensor& r_w_live) {
  require_pair(p_w, r_w_live, "separation_loss");
  const std::size_t n = p_w.rows();
  return weighted_hard_ce(r_w_live, complementary_labels(p_w),
                          std::vector<double>(n, -1.0 / static_cast<double>(n)));
}

Tensor positive_consistency_loss(const Tensor& p_w, const Tensor& p_s, double tau) {
  require_pair(p_w, p_s, "positive_consistency_loss");
  const ConfidencePartition part = confidence_partition(p_w, tau);
  std::vector<double> coef(p_w.rows(), 0.0);
  for (std::size_t s = 0; s < coef.size(); ++s) {
    if (part.high[s]) coef[s] = -1.0 / static_cast<double>(coef.size());
  }
  return weighted_hard_ce(p_s, pseudo_labels(p_w), std::move(coef));
}

Tensor negative_consistency_loss(const Tensor& r_w, const Tensor& r_s, const Tensor& p_w, double tau,
                                 std::size_t k) {
  require_pair(r_w, r_s, "negative_consistency_loss");
  require_pair(r_w, p_w, "negative_consistency_loss");
  require_k(k, r_w.cols());
  const ConfidencePartition part = confidence_partition(p_w, tau);
  return weighted_soft_ce(r_s, tnc_targets(r_w, &part, k, false));
}

LossReport total_loss(double l_sup, double l_sep, double l_p, double l_n, const LossWeights& lambdas) {
  if (lambdas.sep < 0.0 || lambdas.p < 0.0 || lambdas.n < 0.0) {
    throw ConfigError("loss weights must be non-negative");
  }
  LossReport r;
  r.l_sup = l_sup;
  r.l_sep = l_sep;
  r.l_p = l_p;
  r.l_n = l_n;
  r.lambdas = lambdas;
  r.total = l_sup + lambdas.sep * l_sep + lambdas.p * l_p + lambdas.n * l_n;
  return r;
}

Tensor combine_losses(const LossTerms& t, const LossWeights& lambdas) {
  if (lambdas.sep < 0.0 || lambdas.p < 0.0 || lambdas.n < 0.0) {
    throw ConfigError("loss weights must be non-negative");
  }
  return add(add(add(t.sup, scale(t.sep, lambdas.sep)), scale(t.p, lambdas.p)), scale(t.n, lambdas.n));
}

// ---------------------------------------------------------------------------

std::string to_string(LowConfMode mode) {
  switch (mode) {
    case LowConfMode::kHardCe: return "hard_ce";
    case LowConfMode::kSoftCe: return "soft_ce";
    case LowConfMode::kFeatureMse: return "feature_mse";
    default: return "none";
  }
}

std::string to_string(TncScheme mode) {
  switch (mode) {
    case TncScheme::kHardHard: return "hard_hard";
    case TncScheme::kRandSoft: return "rand_soft";
    case TncScheme::kRevNorm: return "rev_norm";
    default: return "default";
  }
}

std::string to_string(TncConsistency mode) {
  switch (mode) {
    case TncConsistency::kAllSamples: return "all_samples";
    case TncConsistency::kHardLabel: return "hard_label";
    default: return "default";
  }
}

LowConfMode parse_low_conf_mode(const std::string& text) {
  if (text == "none") return LowConfMode::kNone;
  if (text == "hard_ce") return LowConfMode::kHardCe;
  if (text == "soft_ce") return LowConfMode::kSoftCe;
  if (text == "feature_mse") return LowConfMode::kFeatureMse;
  throw ConfigError("unknown low_conf_mode '" + text + "' (expected none|hard_ce|soft_ce|feature_mse)");
}

TncScheme parse_tnc_scheme(const std::string& text) {
  if (text == "default") return TncScheme::kDefault;
  if (text == "hard_hard") return TncScheme::kHardHard;
  if (text == "rand_soft") return TncScheme::kRandSoft;
  if (text == "rev_norm") return TncScheme::kRevNorm;
  throw ConfigError("unknown tnc_scheme '" + text + "' (expected default|hard_hard|rand_soft|rev_norm)");
}

TncConsistency parse_tnc_consistency(const std::string& text) {
  if (text == "default") return TncConsistency::kDefault;
  if (text == "all_samples") return TncConsistency::kAllSamples;
  if (text == "hard_label") return TncConsistency::kHardLabel;
  throw ConfigError("unknown tnc_consistency '" + text + "' (expected default|all_samples|hard_label)");
}

Tensor ablation_low_conf_loss(LowConfMode mode, const Tensor& p_w, const Tensor& p_s, const Tensor& z_w,
                              const Tensor& z_s, double tau) {
  require_pair(p_w, p_s, "ablation_low_conf_loss");
  const ConfidencePartition part = confidence_partition(p_w, tau);
  const std::size_t n = p_w.rows();
  const double norm = static_cast<double>(n);
  switch (mode) {
    case LowConfMode::kHardCe:
      return weighted_hard_ce(p_s, pseudo_labels(p_w), low_coef(part, norm));
    case LowConfMode::kSoftCe: {
      const std::vector<double> target(p_w.data().begin(), p_w.data().end());
      return low_conf_soft_ce(target, p_s, part);
    }
    case LowConfMode::kFeatureMse: {
      if (z_w.shape() != z_s.shape() || z_w.rows() != n) {
        throw DimensionError("feature_mse: feature batches must match the prediction batch");
      }
      const std::size_t d = z_s.cols();
      std::vector<double> coef(n * d, 0.0);
      for (std::size_t s = 0; s < n; ++s) {
        if (!part.is_low(s)) continue;
        for (std::size_t j = 0; j < d; ++j) coef[s * d + j] = 1.0 / (static_cast<double>(d) * norm);
      }
      const Tensor diff = sub(z_s, stop_gradient(z_w));
      return sum(mul(Tensor(z_s.shape(), std::move(coef)), mul(diff, diff)));
    }
    default:
      throw ConfigError("ablation_low_conf_loss: mode 'none' has no loss");
  }
}

std::vector<double> reverse_normalize(std::span<const double> r) {
  std::vector<double> q(r.size());
  double total = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    q[i] = 1.0 - r[i];
    total += q[i];
  }
  if (!(total > 0.0)) throw NumericError("reverse_normalize: complement sums to zero");
  for (double& v : q) v /= total;
  return q;
}

TncSchemeLosses ablation_tnc_scheme(TncScheme mode, const Tensor& p_w, const Tensor& r_w,
                                    const Tensor& r_w_live, const Tensor& r_s, double tau,
                                    std::mt19937_64& rng) {
  require_pair(p_w, r_w, "ablation_tnc_scheme");
  require_pair(r_w, r_s, "ablation_tnc_scheme");
  const ConfidencePartition part = confidence_partition(p_w, tau);
  const std::size_t n = r_w.rows(), c = r_w.cols();
  const double norm = static_cast<double>(n);
  TncSchemeLosses out;
  switch (mode) {
    case TncScheme::kHardHard:
      out.sep = separation_loss(p_w, r_w_live);
      out.consistency = weighted_hard_ce(r_s, pseudo_labels(r_w), low_coef(part, norm));
      return out;
    case TncScheme::kRandSoft: {
      const auto top = pseudo_labels(p_w);
      std::vector<std::size_t> targets(n);
      std::uniform_int_distribution<std::size_t> pick(0, c - 2);
      for (std::size_t s = 0; s < n; ++s) {
        const std::size_t draw = pick(rng);
        targets[s] = draw >= top[s] ? draw + 1 : draw;
      }
      out.sep = weighted_hard_ce(r_w_live, targets, std::vector<double>(n, -1.0 / norm));
      const std::vector<double> target(r_w.data().begin(), r_w.data().end());
      out.consistency = low_conf_soft_ce(target, r_s, part);
      return out;
    }
    case TncScheme::kRevNorm: {
      std::vector<double> target(n * c);
      for (std::size_t s = 0; s < n; ++s) {
        const auto q = reverse_normalize(row(r_w, s));
        std::copy(q.begin(), q.end(), target.begin() + static_cast<std::ptrdiff_t>(s * c));
      }
      out.sep = Tensor::scalar(0.0);
      out.has_sep = false;
      out.consistency = low_conf_soft_ce(target, r_s, part);
      return out;
    }
    default:
      throw ConfigError("ablation_tnc_scheme: mode 'default' is the standard objective");
  }
}

Tensor ablation_tnc_consistency(TncConsistency mode, const Tensor& r_w, const Tensor& r_s, const Tensor& p_w,
                                double tau, std::size_t k) {
  require_pair(r_w, r_s, "ablation_tnc_consistency");
  require_pair(r_w, p_w, "ablation_tnc_consistency");
  require_k(k, r_w.cols());
  const ConfidencePartition part = confidence_partition(p_w, tau);
  switch (mode) {
    case TncConsistency::kAllSamples:
      return weighted_soft_ce(r_s, tnc_targets(r_w, nullptr, k, false));
    case TncConsistency::kHardLabel:
      return weighted_soft_ce(r_s, tnc_targets(r_w, &part, k, true));
    default:
      throw ConfigError("ablation_tnc_consistency: mode 'default' is the standard objective");
  }
}

}  // namespace mutexmatch
