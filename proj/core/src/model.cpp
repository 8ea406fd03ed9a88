#include "mutexmatch/model.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "mutexmatch/error.hpp"

namespace mutexmatch {

std::string to_string(ExtractorKind kind) { return kind == ExtractorKind::kConv ? "conv" : "mlp"; }

ExtractorKind parse_extractor_kind(const std::string& text) {
  if (text == "mlp") return ExtractorKind::kMlp;
  if (text == "conv") return ExtractorKind::kConv;
  throw ConfigError("unknown extractor kind '" + text + "' (expected mlp|conv)");
}

namespace {

ImageGeometry conv_output(const ModelSpec& spec) {
  ImageGeometry g = spec.image;
  for (std::size_t ch : spec.conv_channels) {
    g = ImageGeometry{ch, g.height / 2, g.width / 2};
  }
  return g;
}

std::size_t extractor_input_width(const ModelSpec& spec) {
  return spec.extractor == ExtractorKind::kConv ? conv_output(spec).size() : spec.input_dim;
}

void validate(const ModelSpec& spec) {
  if (spec.classes < 2) throw ConfigError("model needs at least 2 classes");
  if (spec.input_dim == 0 || spec.head_hidden == 0) throw ConfigError("model dimensions must be positive");
  for (std::size_t w : spec.hidden_dims) {
    if (w == 0) throw ConfigError("hidden layer widths must be positive");
  }
  if (spec.extractor == ExtractorKind::kConv) {
    if (spec.image.size() != spec.input_dim) {
      throw ConfigError("conv extractor: image geometry does not match input_dim");
    }
    if (spec.conv_channels.empty()) throw ConfigError("conv extractor needs at least one block");
    ImageGeometry g = spec.image;
    for (std::size_t ch : spec.conv_channels) {
      if (ch == 0 || g.height % 2 != 0 || g.width % 2 != 0) {
        throw ConfigError("conv extractor: each block needs even height and width");
      }
      g = ImageGeometry{ch, g.height / 2, g.width / 2};
    }
  }
}

Tensor he_normal(std::size_t fan_in, Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

Linear make_linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return Linear{he_normal(in, {in, out}, rng), Tensor::zeros({out}, true)};
}

Head make_head(std::size_t in, std::size_t hidden, std::size_t classes, std::mt19937_64& rng) {
  Head h;
  h.hidden = make_linear(in, hidden, rng);
  h.out = make_linear(hidden, classes, rng);
  return h;
}

Tensor copy_tensor(const Tensor& t, bool requires_grad) {
  return Tensor(t.shape(), std::vector<double>(t.data().begin(), t.data().end()), requires_grad);
}

template <typename Fn>
ModelParams map_params(const ModelParams& p, Fn fn) {
  ModelParams out;
  out.spec = p.spec;
  for (const ConvBlock& b : p.conv) out.conv.push_back({fn(b.kernel), fn(b.bias), b.input});
  for (const Linear& l : p.extractor) out.extractor.push_back({fn(l.weight), fn(l.bias)});
  auto head = [&](const Head& h) {
    return Head{{fn(h.hidden.weight), fn(h.hidden.bias)}, {fn(h.out.weight), fn(h.out.bias)}};
  };
  out.tpc = head(p.tpc);
  out.tnc = head(p.tnc);
  return out;
}

Tensor linear(const Linear& l, const Tensor& x) { return add_bias(matmul(x, l.weight), l.bias); }

}  // namespace

std::size_t ModelSpec::feature_dim() const {
  if (!hidden_dims.empty()) return hidden_dims.back();
  return extractor_input_width(*this);
}

std::vector<ModelParams::Named> ModelParams::named_parameters() const {
  std::vector<Named> out;
  for (std::size_t i = 0; i < conv.size(); ++i) {
    out.push_back({"extractor.conv" + std::to_string(i) + ".kernel", conv[i].kernel});
    out.push_back({"extractor.conv" + std::to_string(i) + ".bias", conv[i].bias});
  }
  for (std::size_t i = 0; i < extractor.size(); ++i) {
    out.push_back({"extractor.fc" + std::to_string(i) + ".weight", extractor[i].weight});
    out.push_back({"extractor.fc" + std::to_string(i) + ".bias", extractor[i].bias});
  }
  for (const auto& [prefix, head] : {std::pair<std::string, const Head*>{"tpc", &tpc}, {"tnc", &tnc}}) {
    out.push_back({prefix + ".hidden.weight", head->hidden.weight});
    out.push_back({prefix + ".hidden.bias", head->hidden.bias});
    out.push_back({prefix + ".out.weight", head->out.weight});
    out.push_back({prefix + ".out.bias", head->out.bias});
  }
  return out;
}

std::vector<Tensor> ModelParams::parameters() const {
  std::vector<Tensor> out;
  for (const auto& n : named_parameters()) out.push_back(n.tensor);
  return out;
}

std::vector<Tensor> ModelParams::extractor_parameters() const {
  std::vector<Tensor> out;
  for (const ConvBlock& b : conv) {
    out.push_back(b.kernel);
    out.push_back(b.bias);
  }
  for (const Linear& l : extractor) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

std::vector<Tensor> ModelParams::tpc_parameters() const {
  return {tpc.hidden.weight, tpc.hidden.bias, tpc.out.weight, tpc.out.bias};
}

std::vector<Tensor> ModelParams::tnc_parameters() const {
  return {tnc.hidden.weight, tnc.hidden.bias, tnc.out.weight, tnc.out.bias};
}

ModelParams ModelParams::clone() const {
  return map_params(*this, [](const Tensor& t) { return copy_tensor(t, t.requires_grad()); });
}

ModelParams ModelParams::detached() const {
  return map_params(*this, [](const Tensor& t) { return stop_gradient(t); });
}

void ModelParams::zero_grad() {
  for (Tensor t : parameters()) t.zero_grad();
}

std::size_t parameter_count(const std::vector<Tensor>& params) {
  std::size_t n = 0;
  for (const Tensor& t : params) n += t.size();
  return n;
}

ModelParams init_model(const ModelSpec& spec, std::uint64_t seed) {
  validate(spec);
  std::mt19937_64 rng(seed);
  ModelParams p;
  p.spec = spec;
  std::size_t width = spec.input_dim;
  if (spec.extractor == ExtractorKind::kConv) {
    ImageGeometry g = spec.image;
    for (std::size_t ch : spec.conv_channels) {
      const std::size_t fan_in = g.channels * 9;
      p.conv.push_back({he_normal(fan_in, {ch, fan_in}, rng), Tensor::zeros({ch}, true), g});
      g = ImageGeometry{ch, g.height / 2, g.width / 2};
    }
    width = g.size();
  }
  for (std::size_t w : spec.hidden_dims) {
    p.extractor.push_back(make_linear(width, w, rng));
    width = w;
  }
  p.tpc = make_head(width, spec.head_hidden, spec.classes, rng);
  p.tnc = make_head(width, spec.head_hidden, spec.classes, rng);
  return p;
}

Tensor extract_features(const ModelParams& params, const Tensor& x) {
  if (x.rank() != 2 || x.cols() != params.spec.input_dim) {
    throw DimensionError("input has " + std::to_string(x.cols()) + " features, model expects " +
                         std::to_string(params.spec.input_dim));
  }
  Tensor h = x;
  for (const ConvBlock& b : params.conv) {
    h = relu(conv2d(h, b.kernel, b.bias, b.input, 3));
    h = max_pool2x2(h, ImageGeometry{b.kernel.shape()[0], b.input.height, b.input.width});
  }
  for (const Linear& l : params.extractor) h = relu(linear(l, h));
  return h;
}

Tensor head_logits(const Head& head, const Tensor& features) {
  return linear(head.out, relu(linear(head.hidden, features)));
}

Tensor forward_tpc(const ModelParams& params, const Tensor& x) {
  return softmax(head_logits(params.tpc, extract_features(params, x)), 1);
}

PredictionBundle forward_bundle(const ModelParams& params, const Tensor& weak, const Tensor& strong,
                                bool stop_gradient_on_extractor) {
  if (weak.shape() != strong.shape()) throw DimensionError("weak and strong views differ in shape");
  const ModelParams frozen = params.detached();
  PredictionBundle b;
  Tensor z_w_graph = stop_gradient_on_extractor ? extract_features(frozen, weak)
                                                : extract_features(params, weak);
  b.z_w = stop_gradient(z_w_graph);
  b.p_w = softmax(head_logits(frozen.tpc, b.z_w), 1);
  b.r_w_live = softmax(head_logits(params.tnc, z_w_graph), 1);
  b.r_w = stop_gradient(b.r_w_live);
  b.z_s = extract_features(params, strong);
  b.p_s = softmax(head_logits(params.tpc, b.z_s), 1);
  b.r_s = softmax(head_logits(params.tnc, b.z_s), 1);
  return b;
}

// ---------------------------------------------------------------------------

std::string model_spec_to_json(const ModelSpec& spec) {
  nlohmann::json j;
  j["input_dim"] = spec.input_dim;
  j["hidden_dims"] = spec.hidden_dims;
  j["head_hidden"] = spec.head_hidden;
  j["classes"] = spec.classes;
  j["extractor"] = to_string(spec.extractor);
  j["image"] = {spec.image.channels, spec.image.height, spec.image.width};
  j["conv_channels"] = spec.conv_channels;
  return j.dump();
}

ModelSpec model_spec_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    ModelSpec s;
    s.input_dim = j.at("input_dim").get<std::size_t>();
    s.hidden_dims = j.at("hidden_dims").get<std::vector<std::size_t>>();
    s.head_hidden = j.at("head_hidden").get<std::size_t>();
    s.classes = j.at("classes").get<std::size_t>();
    s.extractor = parse_extractor_kind(j.at("extractor").get<std::string>());
    const auto img = j.at("image").get<std::vector<std::size_t>>();
    if (img.size() != 3) throw FormatError("model spec: image geometry needs 3 extents");
    s.image = ImageGeometry{img[0], img[1], img[2]};
    s.conv_channels = j.at("conv_channels").get<std::vector<std::size_t>>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model spec: ") + e.what());
  }
}

namespace {

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  put_u64(out, bits);
}

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

  std::size_t offset() const { return pos_; }

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError("checkpoint truncated at byte offset " + std::to_string(pos_) +
                        " while reading " + what);
    }
  }

  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 8;
    return v;
  }

  double f64(const char* what) {
    const std::uint64_t bits = u64(what);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }

  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params, const std::string& metadata) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open checkpoint for writing: " + path);
  nlohmann::json meta;
  meta["model"] = nlohmann::json::parse(model_spec_to_json(params.spec));
  meta["run"] = metadata;
  const std::string meta_text = meta.dump();

  out << kCheckpointMagic << '\n';
  put_u64(out, meta_text.size());
  out.write(meta_text.data(), static_cast<std::streamsize>(meta_text.size()));
  const auto named = params.named_parameters();
  put_u64(out, named.size());
  for (const auto& [name, t] : named) {
    put_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u64(out, t.rank());
    for (std::size_t e : t.shape()) put_u64(out, e);
    for (double v : t.data()) put_f64(out, v);
  }
  if (!out) throw FormatError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  Reader r(buf.str());

  const std::string magic = std::string(kCheckpointMagic) + "\n";
  const std::size_t header_at = r.offset();
  if (r.str(magic.size(), "magic header") != magic) {
    throw FormatError("bad checkpoint header at byte offset " + std::to_string(header_at) +
                      " (expected " + kCheckpointMagic + ")");
  }
  const std::size_t meta_at = r.offset();
  const std::uint64_t meta_len = r.u64("metadata length");
  const std::string meta_text = r.str(meta_len, "metadata");
  Checkpoint ckpt;
  try {
    const auto meta = nlohmann::json::parse(meta_text);
    ckpt.params = init_model(model_spec_from_json(meta.at("model").dump()), 0);
    ckpt.metadata = meta.at("run").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("invalid checkpoint metadata at byte offset " + std::to_string(meta_at) +
                      ": " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError("invalid model spec in checkpoint metadata at byte offset " +
                      std::to_string(meta_at) + ": " + e.what());
  }

  auto named = ckpt.params.named_parameters();
  const std::size_t count_at = r.offset();
  const std::uint64_t count = r.u64("tensor count");
  if (count != named.size()) {
    throw FormatError("checkpoint at byte offset " + std::to_string(count_at) + " lists " +
                      std::to_string(count) + " tensors, model has " + std::to_string(named.size()));
  }
  for (auto& [name, t] : named) {
    const std::size_t at = r.offset();
    const std::uint64_t name_len = r.u64("tensor name length");
    if (r.str(name_len, "tensor name") != name) {
      throw FormatError("unexpected tensor at byte offset " + std::to_string(at) + " (wanted " + name + ")");
    }
    const std::size_t shape_at = r.offset();
    const std::uint64_t rank = r.u64("tensor rank");
    Shape shape;
    for (std::uint64_t i = 0; i < rank && i < 3; ++i) shape.push_back(r.u64("tensor extent"));
    if (shape != t.shape()) {
      throw FormatError("shape mismatch for " + name + " at byte offset " + std::to_string(shape_at));
    }
    auto values = t.mutable_data();
    for (double& v : values) {
      const std::size_t value_at = r.offset();
      v = r.f64("tensor data");
      if (!std::isfinite(v)) {
        throw FormatError("non-finite parameter value at byte offset " + std::to_string(value_at));
      }
    }
  }
  if (!r.done()) {
    throw FormatError("trailing bytes after checkpoint payload at byte offset " + std::to_string(r.offset()));
  }
  return ckpt;
}

}  // namespace mutexmatch
