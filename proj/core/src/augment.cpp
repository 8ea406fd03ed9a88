#include "mutexmatch/augment.hpp"

#include <algorithm>
#include <cmath>

#include "mutexmatch/error.hpp"

namespace mutexmatch {

AugmentPolicy AugmentPolicy::weak_default() {
  AugmentPolicy p;
  p.kind = AugmentKind::kWeak;
  p.sigma = 0.05;
  return p;
}

AugmentPolicy AugmentPolicy::strong_default() {
  AugmentPolicy p;
  p.kind = AugmentKind::kStrong;
  p.sigma = 0.2;
  p.dropout = 0.1;
  p.scale_lo = 0.8;
  p.scale_hi = 1.2;
  p.n_ops = 2;
  p.magnitude = 0.5;
  return p;
}

void validate_policies(const AugmentPolicy& weak, const AugmentPolicy& strong) {
  if (weak.sigma < 0.0 || strong.sigma < 0.0) throw ConfigError("augment sigma must be non-negative");
  if (!(weak.sigma < strong.sigma)) {
    throw ConfigError("augment.weak.sigma must be strictly below augment.strong.sigma");
  }
  if (weak.dropout != 0.0) throw ConfigError("weak augmentation must not use dropout");
  if (strong.dropout < 0.0 || strong.dropout > 1.0) {
    throw ConfigError("augment.strong.dropout must lie in [0, 1]");
  }
  if (!(strong.scale_lo > 0.0) || strong.scale_lo > strong.scale_hi) {
    throw ConfigError("augment.strong.scale_lo/hi must satisfy 0 < lo <= hi");
  }
  if (weak.max_shift < 0.0 || weak.max_shift > 0.5) {
    throw ConfigError("weak image shift must lie in [0, 0.5]");
  }
  if (strong.n_ops < 0) throw ConfigError("augment.image.n_ops must be non-negative");
  if (strong.magnitude < 0.0 || strong.magnitude > 1.0) {
    throw ConfigError("augment.image.magnitude must lie in [0, 1]");
  }
}

std::vector<double> flip_horizontal(std::span<const double> img, const ImageGeometry& g) {
  std::vector<double> out(img.size());
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t i = 0; i < g.height; ++i) {
      for (std::size_t j = 0; j < g.width; ++j) {
        out[(c * g.height + i) * g.width + j] = img[(c * g.height + i) * g.width + (g.width - 1 - j)];
      }
    }
  }
  return out;
}

std::vector<double> shift_image(std::span<const double> img, const ImageGeometry& g, int dy, int dx) {
  std::vector<double> out(img.size(), 0.0);
  const int h = static_cast<int>(g.height), w = static_cast<int>(g.width);
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        const int si = i - dy, sj = j - dx;
        if (si < 0 || sj < 0 || si >= h || sj >= w) continue;
        out[(c * g.height + static_cast<std::size_t>(i)) * g.width + static_cast<std::size_t>(j)] =
            img[(c * g.height + static_cast<std::size_t>(si)) * g.width + static_cast<std::size_t>(sj)];
      }
    }
  }
  return out;
}

std::vector<double> cutout(std::span<const double> img, const ImageGeometry& g, std::size_t cy,
                           std::size_t cx, std::size_t size) {
  std::vector<double> out(img.begin(), img.end());
  const std::size_t half = size / 2;
  const std::size_t y0 = cy > half ? cy - half : 0, x0 = cx > half ? cx - half : 0;
  const std::size_t y1 = std::min(g.height, y0 + size), x1 = std::min(g.width, x0 + size);
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t i = y0; i < y1; ++i) {
      for (std::size_t j = x0; j < x1; ++j) out[(c * g.height + i) * g.width + j] = 0.0;
    }
  }
  return out;
}

namespace {

void check_input(std::span<const double> x, std::span<const double> feature_std,
                 const std::optional<ImageGeometry>& image) {
  if (feature_std.size() != x.size()) throw DimensionError("augment: feature_std length mismatch");
  if (image && image->size() != x.size()) throw DimensionError("augment: image geometry mismatch");
  for (double v : x) {
    if (!std::isfinite(v)) throw NumericError("augment: non-finite input");
  }
}

int random_offset(int limit, AugmentRng& rng) {
  if (limit <= 0) return 0;
  return std::uniform_int_distribution<int>(-limit, limit)(rng);
}

}  // namespace

std::vector<double> weak_augment(std::span<const double> x, std::span<const double> feature_std,
                                 const AugmentPolicy& policy, AugmentRng& rng,
                                 const std::optional<ImageGeometry>& image) {
  check_input(x, feature_std, image);
  if (image) {
    std::vector<double> out(x.begin(), x.end());
    if (std::bernoulli_distribution(0.5)(rng)) out = flip_horizontal(out, *image);
    const int limit = static_cast<int>(std::floor(policy.max_shift * static_cast<double>(image->width)));
    const int dy = random_offset(limit, rng);
    const int dx = random_offset(limit, rng);
    return shift_image(out, *image, dy, dx);
  }
  std::vector<double> out(x.begin(), x.end());
  if (policy.sigma == 0.0) return out;
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += policy.sigma * feature_std[i] * noise(rng);
  return out;
}

std::vector<double> strong_augment(std::span<const double> x, std::span<const double> feature_std,
                                   const AugmentPolicy& policy, AugmentRng& rng,
                                   const std::optional<ImageGeometry>& image) {
  check_input(x, feature_std, image);
  std::vector<double> out(x.begin(), x.end());
  if (image) {
    const ImageGeometry& g = *image;
    const double m = policy.magnitude;
    std::uniform_int_distribution<int> pick(0, 4);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (int op = 0; op < policy.n_ops; ++op) {
      const int which = pick(rng);
      if (m == 0.0) continue;
      switch (which) {
        case 0: {  // shift
          const int limit = static_cast<int>(std::round(m * 0.25 * static_cast<double>(g.width)));
          const int dy = random_offset(limit, rng);
          const int dx = random_offset(limit, rng);
          out = shift_image(out, g, dy, dx);
          break;
        }
        case 1: {  // cutout
          const auto size = static_cast<std::size_t>(std::round(m * 0.5 * static_cast<double>(g.width)));
          const std::size_t cy = std::uniform_int_distribution<std::size_t>(0, g.height - 1)(rng);
          const std::size_t cx = std::uniform_int_distribution<std::size_t>(0, g.width - 1)(rng);
          if (size > 0) out = cutout(out, g, cy, cx, size);
          break;
        }
        case 2: {  // contrast around the per-image mean
          const double factor = 1.0 + 0.9 * m * unit(rng);
          double mu = 0.0;
          for (double v : out) mu += v;
          mu /= static_cast<double>(out.size());
          for (double& v : out) v = mu + factor * (v - mu);
          break;
        }
        case 3: {  // brightness
          const double delta = m * unit(rng);
          for (std::size_t i = 0; i < out.size(); ++i) out[i] += delta * feature_std[i];
          break;
        }
        default:
          out = flip_horizontal(out, g);
          break;
      }
    }
    return out;
  }

  if (policy.dropout > 0.0) {
    std::bernoulli_distribution drop(policy.dropout);
    for (double& v : out) {
      if (drop(rng)) v = 0.0;
    }
  }
  if (policy.scale_lo != 1.0 || policy.scale_hi != 1.0) {
    const double s = std::uniform_real_distribution<double>(policy.scale_lo, policy.scale_hi)(rng);
    for (double& v : out) v *= s;
  }
  if (policy.sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += policy.sigma * feature_std[i] * noise(rng);
  }
  return out;
}

}  // namespace mutexmatch
