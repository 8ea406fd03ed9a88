#include "mutexmatch/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "mutexmatch/error.hpp"

namespace mutexmatch {

void FeatureMatrix::append(std::span<const double> r) {
  if (rows == 0 && cols == 0) cols = r.size();
  if (r.size() != cols) throw DimensionError("FeatureMatrix::append: row width mismatch");
  values.insert(values.end(), r.begin(), r.end());
  ++rows;
}

FeatureMatrix FeatureMatrix::select(std::span<const std::size_t> idx) const {
  FeatureMatrix out;
  out.cols = cols;
  out.values.reserve(idx.size() * cols);
  for (std::size_t i : idx) {
    const auto r = row(i);
    out.values.insert(out.values.end(), r.begin(), r.end());
  }
  out.rows = idx.size();
  return out;
}

Tensor FeatureMatrix::to_tensor() const { return Tensor::matrix(rows, cols, values); }

void Dataset::finalize() {
  if (features.rows == 0 || features.cols == 0) throw DataError("dataset must have N > 0 and D > 0");
  if (labels.size() != features.rows) throw DataError("dataset: one label per row required");
  if (classes < 2) throw DataError("dataset needs at least 2 classes");
  for (int y : labels) {
    if (y != kUnlabeled && (y < 0 || static_cast<std::size_t>(y) >= classes)) {
      throw DataError("dataset label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
  if (image && image->size() != features.cols) throw DataError("dataset image geometry does not match D");
  for (double v : features.values) {
    if (!std::isfinite(v)) throw DataError("dataset contains a non-finite feature");
  }
  const std::size_t n = features.rows, d = features.cols;
  std::vector<double> mean(d, 0.0);
  feature_std.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += features.values[i * d + j];
  }
  for (double& m : mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double c = features.values[i * d + j] - mean[j];
      feature_std[j] += c * c;
    }
  }
  for (double& s : feature_std) s = std::sqrt(s / static_cast<double>(n));
}

Dataset make_gaussian_blobs(std::size_t classes, std::size_t per_class, std::size_t dim, double separation,
                            std::uint64_t seed) {
  if (classes < 2) throw ConfigError("blobs need at least 2 classes");
  if (dim == 0 || per_class == 0) throw ConfigError("blobs need positive dim and per_class");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<std::vector<double>> centers;
  if (classes <= dim) {
    // Scaled random orthonormal frame: all pairwise distances equal separation.
    for (std::size_t c = 0; c < classes; ++c) {
      std::vector<double> v(dim);
      for (;;) {
        for (double& x : v) x = gauss(rng);
        for (const auto& u : centers) {
          double dot = 0.0;
          for (std::size_t j = 0; j < dim; ++j) dot += v[j] * u[j];
          for (std::size_t j = 0; j < dim; ++j) v[j] -= dot * u[j];
        }
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm > 1e-6) {
          for (double& x : v) x /= norm;
          break;
        }
      }
      centers.push_back(v);
    }
    for (auto& c : centers) {
      for (double& x : c) x *= separation / std::numbers::sqrt2;
    }
  } else {
    double spread = std::max(separation, 1.0);
    std::size_t failures = 0;
    while (centers.size() < classes) {
      std::vector<double> v(dim);
      for (double& x : v) x = spread * gauss(rng);
      bool ok = true;
      for (const auto& u : centers) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < dim; ++j) d2 += (v[j] - u[j]) * (v[j] - u[j]);
        ok = ok && std::sqrt(d2) >= separation;
      }
      if (ok) {
        centers.push_back(std::move(v));
      } else if (++failures % 1000 == 0) {
        spread *= 1.5;
      }
    }
  }

  Dataset ds;
  ds.classes = classes;
  ds.features.cols = dim;
  std::vector<double> x(dim);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t j = 0; j < dim; ++j) x[j] = centers[c][j] + gauss(rng);
      ds.features.append(x);
      ds.labels.push_back(static_cast<int>(c));
    }
  }
  ds.finalize();
  return ds;
}

Dataset make_rings(std::size_t classes, std::size_t per_class, double noise, std::uint64_t seed) {
  if (classes < 2) throw ConfigError("rings need at least 2 classes");
  if (per_class == 0) throw ConfigError("rings need positive per_class");
  if (noise < 0.0) throw ConfigError("ring noise must be non-negative");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Dataset ds;
  ds.classes = classes;
  ds.features.cols = 2;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      const double a = angle(rng);
      const double r = static_cast<double>(c + 1) + (noise > 0.0 ? noise * gauss(rng) : 0.0);
      const double pt[2] = {r * std::cos(a), r * std::sin(a)};
      ds.features.append(pt);
      ds.labels.push_back(static_cast<int>(c));
    }
  }
  ds.finalize();
  return ds;
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

bool parse_double(std::string text, double& out) {
  const auto b = text.find_first_not_of(" \t\r");
  const auto e = text.find_last_not_of(" \t\r");
  if (b == std::string::npos) return false;
  text = text.substr(b, e - b + 1);
  std::size_t used = 0;
  try {
    out = std::stod(text, &used);
  } catch (const std::exception&) {
    return false;
  }
  return used == text.size() && std::isfinite(out);
}

}  // namespace

Dataset load_csv(const std::string& path, bool has_header, std::size_t classes) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file: " + path);
  Dataset ds;
  std::string line;
  std::size_t line_no = 0;
  int max_label = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (has_header && line_no == 1) continue;
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto fields = split_fields(line);
    if (fields.size() < 2) throw DataError(path + ":" + std::to_string(line_no) + ": need a label and features");
    double label_value = 0.0;
    if (!parse_double(fields[0], label_value) || label_value != std::floor(label_value) || label_value < -1.0) {
      throw DataError(path + ":" + std::to_string(line_no) + ": invalid label '" + fields[0] + "'");
    }
    std::vector<double> row(fields.size() - 1);
    for (std::size_t j = 1; j < fields.size(); ++j) {
      if (!parse_double(fields[j], row[j - 1])) {
        throw DataError(path + ":" + std::to_string(line_no) + ": non-numeric cell in column " +
                        std::to_string(j + 1));
      }
    }
    if (ds.features.rows > 0 && row.size() != ds.features.cols) {
      throw DataError(path + ":" + std::to_string(line_no) + ": ragged row (" + std::to_string(row.size()) +
                      " features, expected " + std::to_string(ds.features.cols) + ")");
    }
    ds.features.append(row);
    const int y = static_cast<int>(label_value);
    ds.labels.push_back(y);
    max_label = std::max(max_label, y);
  }
  if (ds.features.rows == 0) throw DataError(path + ": empty dataset file");
  ds.classes = classes > 0 ? classes : static_cast<std::size_t>(std::max(max_label + 1, 2));
  if (max_label >= 0 && static_cast<std::size_t>(max_label) >= ds.classes) {
    throw DataError(path + ": label " + std::to_string(max_label) + " exceeds class count");
  }
  ds.finalize();
  return ds;
}

void save_csv(const std::string& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write dataset file: " + path);
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << ds.labels[i];
    for (double v : ds.features.row(i)) out << ',' << v;
    out << '\n';
  }
  if (!out) throw DataError("failed writing dataset file: " + path);
}

std::uint64_t dataset_fingerprint(const Dataset& ds) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xffu;
      h *= 1099511628211ull;
    }
  };
  mix(ds.size());
  mix(ds.dim());
  mix(ds.classes);
  for (int y : ds.labels) mix(static_cast<std::uint64_t>(static_cast<std::int64_t>(y)));
  for (double v : ds.features.values) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    mix(bits);
  }
  return h;
}

Split make_split(const Dataset& ds, const SplitSpec& spec) {
  if (spec.labels_per_class == 0) throw ConfigError("labels_per_class must be positive");
  if (spec.eval_fraction < 0.0 || spec.eval_fraction >= 1.0) throw ConfigError("eval_fraction must lie in [0, 1)");
  if (ds.features.rows == 0) throw DataError("cannot split an empty dataset");

  std::mt19937_64 rng(spec.seed);
  std::vector<std::vector<std::size_t>> by_class(ds.classes);
  std::vector<std::size_t> unlabeled_rows;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] == kUnlabeled) {
      unlabeled_rows.push_back(i);
    } else {
      by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
    }
  }

  Split split;
  split.classes = ds.classes;
  split.image = ds.image;
  std::vector<std::size_t> train_rest;
  for (std::size_t c = 0; c < ds.classes; ++c) {
    auto& rows = by_class[c];
    std::shuffle(rows.begin(), rows.end(), rng);
    const auto n_eval = static_cast<std::size_t>(std::llround(spec.eval_fraction * static_cast<double>(rows.size())));
    if (rows.size() < n_eval + spec.labels_per_class) {
      throw DataError("class " + std::to_string(c) + " has " + std::to_string(rows.size() - std::min(n_eval, rows.size())) +
                      " training rows, fewer than labels_per_class=" + std::to_string(spec.labels_per_class));
    }
    split.indices.eval.insert(split.indices.eval.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_eval));
    const auto lab_begin = rows.begin() + static_cast<std::ptrdiff_t>(n_eval);
    const auto lab_end = lab_begin + static_cast<std::ptrdiff_t>(spec.labels_per_class);
    split.indices.labeled.insert(split.indices.labeled.end(), lab_begin, lab_end);
    if (spec.unlabeled_includes_labeled) train_rest.insert(train_rest.end(), lab_begin, lab_end);
    train_rest.insert(train_rest.end(), lab_end, rows.end());
  }
  train_rest.insert(train_rest.end(), unlabeled_rows.begin(), unlabeled_rows.end());
  std::sort(train_rest.begin(), train_rest.end());
  std::sort(split.indices.eval.begin(), split.indices.eval.end());
  split.indices.unlabeled = std::move(train_rest);
  if (split.indices.unlabeled.empty()) throw DataError("split leaves no unlabeled data");

  // Standardisation statistics over all training rows (labeled + unlabeled).
  std::vector<std::size_t> train_rows = split.indices.unlabeled;
  if (!spec.unlabeled_includes_labeled) {
    train_rows.insert(train_rows.end(), split.indices.labeled.begin(), split.indices.labeled.end());
  }
  const std::size_t d = ds.dim();
  split.mean.assign(d, 0.0);
  split.scale.assign(d, 0.0);
  for (std::size_t i : train_rows) {
    for (std::size_t j = 0; j < d; ++j) split.mean[j] += ds.features.row(i)[j];
  }
  for (double& m : split.mean) m /= static_cast<double>(train_rows.size());
  for (std::size_t i : train_rows) {
    for (std::size_t j = 0; j < d; ++j) {
      const double c = ds.features.row(i)[j] - split.mean[j];
      split.scale[j] += c * c;
    }
  }
  for (double& s : split.scale) {
    s = std::sqrt(s / static_cast<double>(train_rows.size()));
    if (s < 1e-12) s = 1.0;
  }
  auto standardise = [&](FeatureMatrix m) {
    for (std::size_t i = 0; i < m.rows; ++i) {
      auto r = m.row(i);
      for (std::size_t j = 0; j < d; ++j) r[j] = (r[j] - split.mean[j]) / split.scale[j];
    }
    return m;
  };
  auto labels_of = [&](const std::vector<std::size_t>& idx) {
    std::vector<int> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(ds.labels[i]);
    return out;
  };

  split.labeled = {standardise(ds.features.select(split.indices.labeled)), labels_of(split.indices.labeled)};
  split.unlabeled = {standardise(ds.features.select(split.indices.unlabeled))};
  split.hidden = {labels_of(split.indices.unlabeled)};
  split.eval = {standardise(ds.features.select(split.indices.eval)), labels_of(split.indices.eval)};

  split.feature_std.assign(d, 0.0);
  const FeatureMatrix train_std = standardise(ds.features.select(train_rows));
  for (std::size_t j = 0; j < d; ++j) {
    double m = 0.0, v = 0.0;
    for (std::size_t i = 0; i < train_std.rows; ++i) m += train_std.row(i)[j];
    m /= static_cast<double>(train_std.rows);
    for (std::size_t i = 0; i < train_std.rows; ++i) v += (train_std.row(i)[j] - m) * (train_std.row(i)[j] - m);
    split.feature_std[j] = std::sqrt(v / static_cast<double>(train_std.rows));
  }
  return split;
}

std::string split_manifest(const SplitIndices& idx) {
  std::ostringstream out;
  auto line = [&out](const char* name, const std::vector<std::size_t>& v) {
    out << name;
    for (std::size_t i : v) out << ' ' << i;
    out << '\n';
  };
  line("labeled", idx.labeled);
  line("unlabeled", idx.unlabeled);
  line("eval", idx.eval);
  return out.str();
}

RngStreams::RngStreams(std::uint64_t seed) {
  auto make = [seed](std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream)};
    return std::mt19937_64(seq);
  };
  init = make(1);
  labeled = make(2);
  unlabeled = make(3);
  weak = make(4);
  strong = make(5);
  ablation = make(6);
}

BatchIterator::BatchIterator(const LabeledSet& labeled, const UnlabeledSet& unlabeled, std::size_t batch_size,
                             std::size_t mu, AugmentPolicy weak, AugmentPolicy strong,
                             std::vector<double> feature_std, std::optional<ImageGeometry> image,
                             RngStreams& rng)
    : labeled_(labeled),
      unlabeled_(unlabeled),
      batch_size_(batch_size),
      mu_(mu),
      weak_(weak),
      strong_(strong),
      feature_std_(std::move(feature_std)),
      image_(image),
      rng_(rng) {
  if (labeled.features.rows == 0 || unlabeled.features.rows == 0) {
    throw DataError("batch iterator needs non-empty labeled and unlabeled sets");
  }
  if (batch_size == 0 || mu == 0) throw ConfigError("batch_size and mu must be positive");
  if (feature_std_.size() != labeled.features.cols) throw DimensionError("feature_std length mismatch");
}

std::size_t BatchIterator::draw(std::vector<std::size_t>& perm, std::size_t& cursor, std::mt19937_64& rng) {
  if (cursor == perm.size()) {
    std::shuffle(perm.begin(), perm.end(), rng);
    cursor = 0;
  }
  return perm[cursor++];
}

MixedBatch BatchIterator::next() {
  if (labeled_perm_.empty()) {
    labeled_perm_.resize(labeled_.features.rows);
    std::iota(labeled_perm_.begin(), labeled_perm_.end(), 0);
    labeled_cursor_ = labeled_perm_.size();
    unlabeled_perm_.resize(unlabeled_.features.rows);
    std::iota(unlabeled_perm_.begin(), unlabeled_perm_.end(), 0);
    unlabeled_cursor_ = unlabeled_perm_.size();
  }
  const std::size_t d = labeled_.features.cols;
  const std::size_t mub = mu_ * batch_size_;

  MixedBatch batch;
  std::vector<double> lab;
  lab.reserve(batch_size_ * d);
  for (std::size_t i = 0; i < batch_size_; ++i) {
    const std::size_t idx = draw(labeled_perm_, labeled_cursor_, rng_.labeled);
    const auto view = weak_augment(labeled_.features.row(idx), feature_std_, weak_, rng_.weak, image_);
    lab.insert(lab.end(), view.begin(), view.end());
    batch.labels.push_back(labeled_.labels[idx]);
  }
  last_unlabeled_.clear();
  for (std::size_t i = 0; i < mub; ++i) {
    last_unlabeled_.push_back(draw(unlabeled_perm_, unlabeled_cursor_, rng_.unlabeled));
  }
  std::vector<double> uw, us;
  uw.reserve(mub * d);
  us.reserve(mub * d);
  for (std::size_t idx : last_unlabeled_) {
    const auto w = weak_augment(unlabeled_.features.row(idx), feature_std_, weak_, rng_.weak, image_);
    uw.insert(uw.end(), w.begin(), w.end());
  }
  for (std::size_t idx : last_unlabeled_) {
    const auto s = strong_augment(unlabeled_.features.row(idx), feature_std_, strong_, rng_.strong, image_);
    us.insert(us.end(), s.begin(), s.end());
  }
  batch.labeled_weak = Tensor::matrix(batch_size_, d, std::move(lab));
  batch.unlabeled_weak = Tensor::matrix(mub, d, std::move(uw));
  batch.unlabeled_strong = Tensor::matrix(mub, d, std::move(us));
  return batch;
}

}  // namespace mutexmatch
