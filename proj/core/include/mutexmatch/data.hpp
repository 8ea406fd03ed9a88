#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mutexmatch/augment.hpp"
#include "mutexmatch/tensor.hpp"

namespace mutexmatch {

inline constexpr int kUnlabeled = -1;

// Dense row-major N x D matrix.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  std::span<const double> row(std::size_t i) const { return {values.data() + i * cols, cols}; }
  std::span<double> row(std::size_t i) { return {values.data() + i * cols, cols}; }
  void append(std::span<const double> r);
  FeatureMatrix select(std::span<const std::size_t> idx) const;
  Tensor to_tensor() const;
};

struct Dataset {
  FeatureMatrix features;
  std::vector<int> labels;  // kUnlabeled marks rows without a label
  std::size_t classes = 0;
  std::optional<ImageGeometry> image;
  std::vector<double> feature_std;

  std::size_t size() const { return features.rows; }
  std::size_t dim() const { return features.cols; }
  // Validates invariants and records per-feature standard deviations.
  void finalize();
};

Dataset make_gaussian_blobs(std::size_t classes, std::size_t per_class, std::size_t dim,
                            double separation, std::uint64_t seed);
// Class c occupies the ring of radius c + 1 in the plane.
Dataset make_rings(std::size_t classes, std::size_t per_class, double noise, std::uint64_t seed);

// Rows: label followed by the feature columns; label -1 marks an unlabeled
// row. Throws DataError naming the offending line.
Dataset load_csv(const std::string& path, bool has_header, std::size_t classes = 0);
void save_csv(const std::string& path, const Dataset& ds);

// 64-bit FNV-1a over labels and the bit patterns of all features.
std::uint64_t dataset_fingerprint(const Dataset& ds);

struct SplitSpec {
  std::size_t labels_per_class = 4;
  std::uint64_t seed = 0;
  double eval_fraction = 0.2;
  bool unlabeled_includes_labeled = true;
};

struct LabeledSet {
  FeatureMatrix features;
  std::vector<int> labels;
};

struct UnlabeledSet {
  FeatureMatrix features;
};

// Ground truth of the unlabeled pool; only diagnostics may read it.
struct HiddenLabels {
  std::vector<int> labels;  // kUnlabeled where the source row had no label
};

struct SplitIndices {
  std::vector<std::size_t> labeled, unlabeled, eval;
};

struct Split {
  LabeledSet labeled;
  UnlabeledSet unlabeled;
  HiddenLabels hidden;
  LabeledSet eval;
  SplitIndices indices;
  std::size_t classes = 0;
  std::optional<ImageGeometry> image;
  std::vector<double> feature_std;  // of the standardised training features
  std::vector<double> mean, scale;  // standardisation applied to every subset
};

// Holds out a stratified eval set, draws labels_per_class labeled examples per
// class, assigns the rest of the training rows to the unlabeled pool and
// standardises every subset with training statistics.
Split make_split(const Dataset& ds, const SplitSpec& spec);

std::string split_manifest(const SplitIndices& idx);

struct MixedBatch {
  Tensor labeled_weak;      // [B, D]
  std::vector<int> labels;  // [B]
  Tensor unlabeled_weak;    // [muB, D]
  Tensor unlabeled_strong;  // [muB, D]
};

// Independent generator per source of randomness.
struct RngStreams {
  std::mt19937_64 init, labeled, unlabeled, weak, strong, ablation;
  explicit RngStreams(std::uint64_t seed);
};

// Endless stream of mixed batches. Each set is walked through a shuffled
// permutation that is redrawn whenever it is exhausted.
class BatchIterator {
 public:
  BatchIterator(const LabeledSet& labeled, const UnlabeledSet& unlabeled, std::size_t batch_size,
                std::size_t mu, AugmentPolicy weak, AugmentPolicy strong,
                std::vector<double> feature_std, std::optional<ImageGeometry> image, RngStreams& rng);

  MixedBatch next();
  // Indices drawn for the most recent batch (for coverage checks).
  const std::vector<std::size_t>& last_unlabeled() const { return last_unlabeled_; }

 private:
  std::size_t draw(std::vector<std::size_t>& perm, std::size_t& cursor, std::mt19937_64& rng);

  const LabeledSet& labeled_;
  const UnlabeledSet& unlabeled_;
  std::size_t batch_size_, mu_;
  AugmentPolicy weak_, strong_;
  std::vector<double> feature_std_;
  std::optional<ImageGeometry> image_;
  RngStreams& rng_;
  std::vector<std::size_t> labeled_perm_, unlabeled_perm_;
  std::size_t labeled_cursor_ = 0, unlabeled_cursor_ = 0;
  std::vector<std::size_t> last_unlabeled_;
};

}  // namespace mutexmatch
