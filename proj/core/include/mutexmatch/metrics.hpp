#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mutexmatch/augment.hpp"
#include "mutexmatch/data.hpp"
#include "mutexmatch/losses.hpp"
#include "mutexmatch/model.hpp"

namespace mutexmatch {

using Matrix = std::vector<std::vector<double>>;

// Fraction of rows whose argmax TPC prediction equals the label. No
// augmentation. Throws DataError on an empty set.
double test_accuracy(const ModelParams& params, const LabeledSet& eval);
double accuracy(const Tensor& probs, std::span<const int> labels);

// Weak views of the unlabeled pool with one fixed generator per sample
// (seeded from (seed, row index)), so diagnostics are repeatable across
// evaluation points.
struct DiagnosticInputs {
  Tensor views;             // [N, D]
  std::vector<int> hidden;  // ground truth per row, kUnlabeled allowed
};

DiagnosticInputs make_diagnostic_inputs(const Split& split, const AugmentPolicy& weak, std::uint64_t seed);

struct HeadPredictions {
  Tensor tpc;  // [N, C] probabilities
  Tensor tnc;  // [N, C]
};

// Forward pass in evaluation mode (constants only, no graph is kept).
HeadPredictions predict(const ModelParams& params, const Tensor& x);

// Unfiltered: argmax p_w against hidden labels over every row with a label.
double pseudo_label_accuracy(const Tensor& p_w, std::span<const int> hidden);

struct FilteredAccuracy {
  std::optional<double> accuracy;  // empty when no row passes tau
  std::size_t count = 0;
};
// Same, restricted to rows with max p_w >= tau.
FilteredAccuracy pseudo_label_accuracy_filtered(const Tensor& p_w, std::span<const int> hidden,
                                                double tau);

// Class holding the m-th smallest probability (m is 1-based). Ascending
// order; equal probabilities put the higher index first, so m = 1 agrees
// with select_complementary_label.
std::size_t rank_from_bottom(std::span<const double> probs, std::size_t m);

// Fraction of labeled rows whose m-th smallest class equals the true label.
// Throws ConfigError unless 1 <= m <= C.
double complementary_error(const Tensor& p_w, std::span<const int> hidden, std::size_t m);
// Entry m - 1 holds complementary_error(m); the entries sum to 1.
std::vector<double> complementary_error_by_rank(const Tensor& p_w, std::span<const int> hidden);

// Row = true class, column = rate at which argmax predicts each class. Rows
// of classes without samples stay zero.
Matrix prediction_heatmap(const Tensor& probs, std::span<const int> hidden, std::size_t classes);
// Mean of the diagonal: the average per-class rate of predicting the true class.
double diagonal_mass(const Matrix& heatmap);

struct EvalMetrics {
  double test_accuracy = 0.0;
  double pseudo_label_accuracy = 0.0;
  FilteredAccuracy pseudo_label_filtered;
  std::vector<double> complementary_error;  // by rank m = 1..C
  std::size_t n_high = 0;                   // unlabeled pool portions at tau
  std::size_t n_low = 0;
  Matrix heatmap_tpc;
  Matrix heatmap_tnc;
};

EvalMetrics evaluate(const ModelParams& params, const LabeledSet& eval, const DiagnosticInputs& diag,
                     double tau);

// One line of the metric log.
struct MetricRecord {
  std::size_t step = 0;  // number of optimizer steps taken
  double lr = 0.0;
  LossReport loss;
  std::optional<EvalMetrics> eval;
};

std::string to_json_line(const MetricRecord& record);
MetricRecord metric_record_from_json(const std::string& line);
std::vector<MetricRecord> read_metric_log(const std::string& path);

// Writes metrics.jsonl, summary.csv, heatmap_tpc.csv, heatmap_tnc.csv and
// complementary_error.csv into dir (created if missing). Heatmaps and the
// rank table come from the last record that carries evaluation metrics.
// Throws UsageError on an empty log and Error when a file cannot be written.
void export_report(const std::vector<MetricRecord>& log, const std::string& dir);

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace mutexmatch
