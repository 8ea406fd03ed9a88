#pragma once

// Loss components of the dual-head objective
//
//   L = L_sup + lambda_sep * L_sep + lambda_p * L_p + lambda_n * L_n
//
// together with label selection, confidence partitioning, the top-k gate and
// the ablation variants. Every batch loss is normalised by the full batch
// size it receives (B or mu*B), never by the number of retained samples.

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mutexmatch/tensor.hpp"

namespace mutexmatch {

struct LossWeights {
  double sep = 1.0;
  double p = 1.0;
  double n = 1.0;
};

struct LossReport {
  double l_sup = 0.0;
  double l_sep = 0.0;
  double l_p = 0.0;
  double l_n = 0.0;
  LossWeights lambdas{};
  double total = 0.0;
  std::size_t n_high = 0;
  std::size_t n_low = 0;
};

// ---------------------------------------------------------------------------
// Label selection. Ties: argmax -> lowest index, argmin -> highest index, so
// the two differ for any C >= 2 even on a uniform vector.

std::size_t select_pseudo_label(std::span<const double> probs);
std::size_t select_complementary_label(std::span<const double> probs);
std::vector<std::size_t> pseudo_labels(const Tensor& probs);
std::vector<std::size_t> complementary_labels(const Tensor& probs);

struct ConfidencePartition {
  std::vector<bool> high;  // max(p_w) >= tau
  std::size_t n_high = 0;
  std::size_t n_low = 0;

  bool is_low(std::size_t i) const { return !high[i]; }
};

ConfidencePartition confidence_partition(const Tensor& p_w, double tau);

struct TopKMask {
  std::vector<unsigned char> g;  // one entry per class, exactly k ones
  std::size_t k = 0;
};

// Keeps the k largest entries; on equal values the lower index wins.
TopKMask topk_mask(std::span<const double> r, std::size_t k);

// ---------------------------------------------------------------------------
// Core components. Inputs p_w / r_w are expected to be stop-gradient
// constants; gradients flow through p_s, r_s, r_w_live and the labeled
// predictions only.

// (1/B) sum_n -log p[n, y_n]
Tensor supervised_loss(const Tensor& probs, std::span<const int> labels);

// (1/muB) sum_n -log r_w_live[n, argmin p_w[n]] over all unlabeled samples.
Tensor separation_loss(const Tensor& p_w, const Tensor& r_w_live);

// (1/muB) sum_n 1(max p_w[n] >= tau) * -log p_s[n, argmax p_w[n]]
Tensor positive_consistency_loss(const Tensor& p_w, const Tensor& p_s, double tau);

// (1/muB) sum_n 1(max p_w[n] < tau) * -(1/k) sum_i g[n,i] r_w[n,i] log r_s[n,i]
// With k == C the per-sample term is the full soft cross-entropy
// H(r_w, r_s) without the 1/k factor.
Tensor negative_consistency_loss(const Tensor& r_w, const Tensor& r_s, const Tensor& p_w,
                                 double tau, std::size_t k);

// Throws ConfigError on negative weights.
LossReport total_loss(double l_sup, double l_sep, double l_p, double l_n, const LossWeights& lambdas);

struct LossTerms {
  Tensor sup, sep, p, n;
};

// Differentiable weighted sum, evaluated in the same order as
// LossReport::total so the two agree bit for bit.
Tensor combine_losses(const LossTerms& terms, const LossWeights& lambdas);

// ---------------------------------------------------------------------------
// Ablation variants.

enum class LowConfMode { kNone, kHardCe, kSoftCe, kFeatureMse };
enum class TncScheme { kDefault, kHardHard, kRandSoft, kRevNorm };
enum class TncConsistency { kDefault, kAllSamples, kHardLabel };

std::string to_string(LowConfMode mode);
std::string to_string(TncScheme mode);
std::string to_string(TncConsistency mode);
LowConfMode parse_low_conf_mode(const std::string& text);
TncScheme parse_tnc_scheme(const std::string& text);
TncConsistency parse_tnc_consistency(const std::string& text);

// Consistency on the low-confidence portion using TPC instead of TNC:
//   hard_ce     : 1(low) H(argmax p_w, p_s)
//   soft_ce     : 1(low) H(p_w, p_s)
//   feature_mse : 1(low) mean_j (z_w[j] - z_s[j])^2
// averaged by 1/muB. z_w is treated as a constant target.
Tensor ablation_low_conf_loss(LowConfMode mode, const Tensor& p_w, const Tensor& p_s,
                              const Tensor& z_w, const Tensor& z_s, double tau);

struct TncSchemeLosses {
  Tensor sep;          // zero scalar when the scheme drops separate training
  Tensor consistency;  // replaces L_n
  bool has_sep = true;
};

// Alternative TNC learning schemes:
//   hard_hard : L_sep as default; consistency 1(low) H(argmax r_w, r_s)
//   rand_soft : L_sep against a random class other than argmax p_w;
//               consistency 1(low) H(r_w, r_s)
//   rev_norm  : no L_sep; consistency 1(low) H(Norm(1 - r_w), r_s)
TncSchemeLosses ablation_tnc_scheme(TncScheme mode, const Tensor& p_w, const Tensor& r_w,
                                    const Tensor& r_w_live, const Tensor& r_s, double tau,
                                    std::mt19937_64& rng);

// Norm(1 - r): complement divided by its sum.
std::vector<double> reverse_normalize(std::span<const double> r);

// Variants of L_n:
//   all_samples : the confidence indicator is dropped
//   hard_label  : r_w[n,i] is replaced by 1 wherever g[n,i] = 1
Tensor ablation_tnc_consistency(TncConsistency mode, const Tensor& r_w, const Tensor& r_s,
                                const Tensor& p_w, double tau, std::size_t k);

}  // namespace mutexmatch
