#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mutexmatch/augment.hpp"
#include "mutexmatch/losses.hpp"
#include "mutexmatch/model.hpp"

namespace mutexmatch {

enum class Algorithm { kMutexMatch, kFixMatch };
enum class Schedule { kCosine, kConstant };

// Top-k intensity, either an absolute count or a fraction of C ("0.6C").
struct KSpec {
  bool fraction_of_classes = true;
  double value = 1.0;

  // Rounded to the nearest integer, minimum 1; ConfigError if above C.
  std::size_t resolve(std::size_t classes) const;
  std::string to_string() const;
  static KSpec parse(const std::string& text);
};

struct TrainConfig {
  Algorithm algorithm = Algorithm::kMutexMatch;
  double tau = 0.95;
  KSpec k{};  // default k = C
  std::size_t mu = 7;
  std::size_t batch_size = 64;
  LossWeights lambdas{};
  double lr0 = 0.03;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t steps = 1000;
  Schedule schedule = Schedule::kCosine;
  std::uint64_t seed = 0;
  bool stop_gradient = true;
  LowConfMode low_conf_mode = LowConfMode::kNone;
  TncScheme tnc_scheme = TncScheme::kDefault;
  TncConsistency tnc_consistency = TncConsistency::kDefault;
  std::size_t eval_every = 500;  // 0: evaluate only after the last step
  double ema_decay = 0.0;        // 0 disables the averaged evaluation model
};

struct DataConfig {
  std::string dataset = "blobs";  // blobs | rings | csv
  std::string path;
  bool has_header = false;
  std::size_t classes = 10;
  std::size_t per_class = 600;
  std::size_t input_dim = 16;
  double separation = 4.0;
  double ring_noise = 0.1;
  std::uint64_t data_seed = 0;
  std::size_t labels_per_class = 4;
  double eval_fraction = 1.0 / 6.0;
  bool unlabeled_includes_labeled = true;
  std::vector<std::size_t> image_shape;  // empty, or {channels, height, width}
};

struct ModelConfig {
  std::vector<std::size_t> hidden_dims{128, 128};
  std::size_t head_hidden = 64;
  ExtractorKind extractor = ExtractorKind::kMlp;
  std::vector<std::size_t> conv_channels{8, 16};
};

// Every tunable of a run, addressable through flat string keys.
struct RunConfig {
  TrainConfig train;
  DataConfig data;
  ModelConfig model;
  AugmentPolicy weak = AugmentPolicy::weak_default();
  AugmentPolicy strong = AugmentPolicy::strong_default();

  // Unknown key or unparsable value -> ConfigError naming the key.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static std::vector<std::string> keys();

  // Canonical JSON object with every key (sorted), values typed.
  std::string to_json() const;
  // Accepts a JSON object or "key=value" lines ('#' starts a comment).
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);

  // Cross-field checks that do not need the dataset.
  void validate() const;
};

std::string to_string(Algorithm a);
std::string to_string(Schedule s);

}  // namespace mutexmatch
