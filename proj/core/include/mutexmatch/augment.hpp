#pragma once

#include <optional>
#include <random>
#include <span>
#include <vector>

#include "mutexmatch/tensor.hpp"

namespace mutexmatch {

enum class AugmentKind { kWeak, kStrong };

// Parameters of one stochastic view policy. Vector data uses sigma, dropout
// and the scale range; image data uses shift/flip (weak) or n_ops/magnitude
// (strong).
struct AugmentPolicy {
  AugmentKind kind = AugmentKind::kWeak;
  double sigma = 0.05;       // noise std, in units of each feature's std
  double dropout = 0.0;      // feature dropout probability (strong only)
  double scale_lo = 1.0;     // global scale jitter range (strong only)
  double scale_hi = 1.0;
  double max_shift = 0.125;  // weak image shift, fraction of width
  int n_ops = 2;             // strong image ops per sample
  double magnitude = 0.5;    // strong image op magnitude in [0, 1]

  static AugmentPolicy weak_default();
  static AugmentPolicy strong_default();
};

// Throws ConfigError unless weak is strictly milder than strong.
void validate_policies(const AugmentPolicy& weak, const AugmentPolicy& strong);

using AugmentRng = std::mt19937_64;

// Vector examples: x + N(0, (sigma * feature_std)^2). Image examples
// (geometry given): random horizontal flip with p = 0.5, then a random shift
// of up to max_shift * width pixels on each axis with zero fill.
std::vector<double> weak_augment(std::span<const double> x, std::span<const double> feature_std,
                                 const AugmentPolicy& policy, AugmentRng& rng,
                                 const std::optional<ImageGeometry>& image = std::nullopt);

// Vector examples: feature dropout, global scale jitter, then additive noise.
// Image examples: n_ops ops drawn from {shift, cutout, contrast, brightness,
// flip} at the policy magnitude.
std::vector<double> strong_augment(std::span<const double> x, std::span<const double> feature_std,
                                   const AugmentPolicy& policy, AugmentRng& rng,
                                   const std::optional<ImageGeometry>& image = std::nullopt);

// Image primitives (channel-major layout).
std::vector<double> flip_horizontal(std::span<const double> img, const ImageGeometry& g);
std::vector<double> shift_image(std::span<const double> img, const ImageGeometry& g, int dy, int dx);
std::vector<double> cutout(std::span<const double> img, const ImageGeometry& g, std::size_t cy,
                           std::size_t cx, std::size_t size);

}  // namespace mutexmatch
