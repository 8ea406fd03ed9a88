#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mutexmatch/tensor.hpp"

namespace mutexmatch {

enum class ExtractorKind { kMlp, kConv };

std::string to_string(ExtractorKind kind);
ExtractorKind parse_extractor_kind(const std::string& text);

struct ModelSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims{128, 128};
  std::size_t head_hidden = 64;
  std::size_t classes = 0;
  ExtractorKind extractor = ExtractorKind::kMlp;
  // Used by the conv extractor only; image.size() must equal input_dim.
  ImageGeometry image{};
  std::vector<std::size_t> conv_channels{8, 16};

  // Width of the feature vector z handed to both heads.
  std::size_t feature_dim() const;
  bool operator==(const ModelSpec&) const = default;
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
};

struct ConvBlock {
  Tensor kernel;  // [out_channels, in_channels * 3 * 3]
  Tensor bias;    // [out_channels]
  ImageGeometry input;
};

// Two-layer perceptron head: relu(z W1 + b1) W2 + b2 -> C logits.
struct Head {
  Linear hidden;
  Linear out;
};

// Extractor (theta) plus the True-Positive (TPC) and True-Negative (TNC)
// heads. Tensors are shared handles: copying a ModelParams aliases the same
// parameters, use clone() for an independent copy.
struct ModelParams {
  ModelSpec spec;
  std::vector<ConvBlock> conv;
  std::vector<Linear> extractor;
  Head tpc;
  Head tnc;

  struct Named {
    std::string name;
    Tensor tensor;
  };
  // Stable ordering: extractor parameters, then tpc, then tnc.
  std::vector<Named> named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::vector<Tensor> extractor_parameters() const;
  std::vector<Tensor> tpc_parameters() const;
  std::vector<Tensor> tnc_parameters() const;

  ModelParams clone() const;
  // Same values, every tensor cut from the graph (no parameter receives
  // gradient through the result).
  ModelParams detached() const;
  void zero_grad();
};

std::size_t parameter_count(const std::vector<Tensor>& params);

// Deterministic He-normal weights (std sqrt(2 / fan_in)), zero biases.
ModelParams init_model(const ModelSpec& spec, std::uint64_t seed);

// z = theta(x) for a batch of rows.
Tensor extract_features(const ModelParams& params, const Tensor& x);
// Logits of a head for features z.
Tensor head_logits(const Head& head, const Tensor& features);

// Predictions for one batch of unlabeled weak/strong views.
//   p_w, r_w : constants (stop-gradient on theta and the heads)
//   p_s, r_s : live graph
//   r_w_live : TNC on the weak-view features with live TNC parameters; the
//              features themselves are detached unless
//              stop_gradient_on_extractor is false. Feeds the separation loss.
struct PredictionBundle {
  Tensor p_w, p_s, r_w, r_s;
  Tensor r_w_live;
  Tensor z_w, z_s;
};

PredictionBundle forward_bundle(const ModelParams& params, const Tensor& weak,
                                const Tensor& strong, bool stop_gradient_on_extractor = true);

// TPC probabilities on a labeled batch (live graph).
Tensor forward_tpc(const ModelParams& params, const Tensor& x);

// ---------------------------------------------------------------------------
// Checkpoints. Binary layout:
//   "MUTEXMATCH-CKPT-1\n"
//   u64 metadata length, metadata bytes (JSON text)
//   u64 tensor count, then per tensor:
//     u64 name length, name bytes, u64 rank, u64 extents[rank], f64 data[...]
// All integers and doubles little-endian.

inline constexpr const char* kCheckpointMagic = "MUTEXMATCH-CKPT-1";

struct Checkpoint {
  ModelParams params;
  std::string metadata;  // free-form JSON (resolved run config)
};

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const std::string& metadata);
// Throws FormatError naming the byte offset of the first inconsistency.
Checkpoint load_checkpoint(const std::string& path);

std::string model_spec_to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const std::string& json);

}  // namespace mutexmatch
