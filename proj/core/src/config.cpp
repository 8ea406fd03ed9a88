#include "mutexmatch/config.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "mutexmatch/error.hpp"

namespace mutexmatch {

using nlohmann::json;

std::string to_string(Algorithm a) { return a == Algorithm::kFixMatch ? "fixmatch" : "mutexmatch"; }
std::string to_string(Schedule s) { return s == Schedule::kConstant ? "constant" : "cosine"; }

std::size_t KSpec::resolve(std::size_t classes) const {
  double k = fraction_of_classes ? value * static_cast<double>(classes) : value;
  const auto rounded = static_cast<long long>(std::llround(k));
  const std::size_t out = rounded < 1 ? 1 : static_cast<std::size_t>(rounded);
  if (out > classes) {
    throw ConfigError("k=" + to_string() + " exceeds the number of classes " + std::to_string(classes));
  }
  return out;
}

std::string KSpec::to_string() const {
  if (!fraction_of_classes) return std::to_string(static_cast<long long>(value));
  if (value == 1.0) return "C";
  std::ostringstream out;
  out << value << 'C';
  return out.str();
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(trim(v), &used);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  }
  if (used != trim(v).size() || !std::isfinite(out)) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  const std::string t = trim(v);
  if (t.empty() || t.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  try {
    return std::stoull(t);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': integer out of range");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  const std::string t = trim(v);
  if (t == "true" || t == "1" || t == "on") return true;
  if (t == "false" || t == "0" || t == "off") return false;
  throw ConfigError("config key '" + key + "': expected true|false, got '" + v + "'");
}

std::vector<std::size_t> to_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::string t = trim(v);
  if (!t.empty() && t.front() == '[' && t.back() == ']') t = t.substr(1, t.size() - 2);
  std::istringstream in(t);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (trim(item).empty()) continue;
    out.push_back(static_cast<std::size_t>(to_uint(key, item)));
  }
  return out;
}

std::string list_to_string(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

template <typename Fn>
auto wrap_enum(const std::string& key, Fn parse) {
  return [key, parse](const std::string& v) {
    try {
      return parse(trim(v));
    } catch (const ConfigError& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    }
  };
}

struct Field {
  std::string key;
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    auto add_double = [&f](const std::string& key, std::function<double&(RunConfig&)> ref) {
      f.push_back({key, [ref](const RunConfig& c) { return json(ref(const_cast<RunConfig&>(c))); },
                   [ref, key](RunConfig& c, const std::string& v) { ref(c) = to_double(key, v); }});
    };
    auto add_size = [&f](const std::string& key, std::function<std::size_t&(RunConfig&)> ref) {
      f.push_back({key, [ref](const RunConfig& c) { return json(ref(const_cast<RunConfig&>(c))); },
                   [ref, key](RunConfig& c, const std::string& v) {
                     ref(c) = static_cast<std::size_t>(to_uint(key, v));
                   }});
    };
    auto add_u64 = [&f](const std::string& key, std::function<std::uint64_t&(RunConfig&)> ref) {
      f.push_back({key, [ref](const RunConfig& c) { return json(ref(const_cast<RunConfig&>(c))); },
                   [ref, key](RunConfig& c, const std::string& v) { ref(c) = to_uint(key, v); }});
    };
    auto add_bool = [&f](const std::string& key, std::function<bool&(RunConfig&)> ref) {
      f.push_back({key, [ref](const RunConfig& c) { return json(ref(const_cast<RunConfig&>(c))); },
                   [ref, key](RunConfig& c, const std::string& v) { ref(c) = to_bool(key, v); }});
    };
    auto add_list = [&f](const std::string& key, std::function<std::vector<std::size_t>&(RunConfig&)> ref) {
      f.push_back({key, [ref](const RunConfig& c) { return json(list_to_string(ref(const_cast<RunConfig&>(c)))); },
                   [ref, key](RunConfig& c, const std::string& v) { ref(c) = to_list(key, v); }});
    };
    auto add_string = [&f](const std::string& key, std::function<std::string&(RunConfig&)> ref) {
      f.push_back({key, [ref](const RunConfig& c) { return json(ref(const_cast<RunConfig&>(c))); },
                   [ref](RunConfig& c, const std::string& v) { ref(c) = trim(v); }});
    };
    auto add_enum = [&f](const std::string& key, std::function<std::string(const RunConfig&)> get,
                         std::function<void(RunConfig&, const std::string&)> set) {
      f.push_back({key, [get](const RunConfig& c) { return json(get(c)); }, std::move(set)});
    };

    // Training
    add_enum("algorithm", [](const RunConfig& c) { return to_string(c.train.algorithm); },
             [](RunConfig& c, const std::string& v) {
               const std::string t = trim(v);
               if (t == "mutexmatch") {
                 c.train.algorithm = Algorithm::kMutexMatch;
               } else if (t == "fixmatch") {
                 c.train.algorithm = Algorithm::kFixMatch;
               } else {
                 throw ConfigError("config key 'algorithm': expected mutexmatch|fixmatch, got '" + v + "'");
               }
             });
    add_double("tau", [](RunConfig& c) -> double& { return c.train.tau; });
    add_enum("k", [](const RunConfig& c) { return c.train.k.to_string(); },
             [](RunConfig& c, const std::string& v) { c.train.k = KSpec::parse(v); });
    add_size("mu", [](RunConfig& c) -> std::size_t& { return c.train.mu; });
    add_size("batch_size", [](RunConfig& c) -> std::size_t& { return c.train.batch_size; });
    add_double("lambda_sep", [](RunConfig& c) -> double& { return c.train.lambdas.sep; });
    add_double("lambda_p", [](RunConfig& c) -> double& { return c.train.lambdas.p; });
    add_double("lambda_n", [](RunConfig& c) -> double& { return c.train.lambdas.n; });
    add_double("lr0", [](RunConfig& c) -> double& { return c.train.lr0; });
    add_double("momentum", [](RunConfig& c) -> double& { return c.train.momentum; });
    add_double("weight_decay", [](RunConfig& c) -> double& { return c.train.weight_decay; });
    add_size("steps", [](RunConfig& c) -> std::size_t& { return c.train.steps; });
    add_enum("schedule", [](const RunConfig& c) { return to_string(c.train.schedule); },
             [](RunConfig& c, const std::string& v) {
               const std::string t = trim(v);
               if (t == "cosine") {
                 c.train.schedule = Schedule::kCosine;
               } else if (t == "constant") {
                 c.train.schedule = Schedule::kConstant;
               } else {
                 throw ConfigError("config key 'schedule': expected cosine|constant, got '" + v + "'");
               }
             });
    add_u64("seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; });
    add_bool("stop_gradient", [](RunConfig& c) -> bool& { return c.train.stop_gradient; });
    add_enum("low_conf_mode", [](const RunConfig& c) { return to_string(c.train.low_conf_mode); },
             [](RunConfig& c, const std::string& v) {
               c.train.low_conf_mode = wrap_enum("low_conf_mode", parse_low_conf_mode)(v);
             });
    add_enum("tnc_scheme", [](const RunConfig& c) { return to_string(c.train.tnc_scheme); },
             [](RunConfig& c, const std::string& v) {
               c.train.tnc_scheme = wrap_enum("tnc_scheme", parse_tnc_scheme)(v);
             });
    add_enum("tnc_consistency", [](const RunConfig& c) { return to_string(c.train.tnc_consistency); },
             [](RunConfig& c, const std::string& v) {
               c.train.tnc_consistency = wrap_enum("tnc_consistency", parse_tnc_consistency)(v);
             });
    add_size("eval_every", [](RunConfig& c) -> std::size_t& { return c.train.eval_every; });
    add_double("ema_decay", [](RunConfig& c) -> double& { return c.train.ema_decay; });

    // Data
    add_string("dataset", [](RunConfig& c) -> std::string& { return c.data.dataset; });
    add_string("data_path", [](RunConfig& c) -> std::string& { return c.data.path; });
    add_bool("data_has_header", [](RunConfig& c) -> bool& { return c.data.has_header; });
    add_size("classes", [](RunConfig& c) -> std::size_t& { return c.data.classes; });
    add_size("per_class", [](RunConfig& c) -> std::size_t& { return c.data.per_class; });
    add_size("input_dim", [](RunConfig& c) -> std::size_t& { return c.data.input_dim; });
    add_double("separation", [](RunConfig& c) -> double& { return c.data.separation; });
    add_double("ring_noise", [](RunConfig& c) -> double& { return c.data.ring_noise; });
    add_u64("data_seed", [](RunConfig& c) -> std::uint64_t& { return c.data.data_seed; });
    add_size("labels_per_class", [](RunConfig& c) -> std::size_t& { return c.data.labels_per_class; });
    add_double("eval_fraction", [](RunConfig& c) -> double& { return c.data.eval_fraction; });
    add_bool("unlabeled_includes_labeled", [](RunConfig& c) -> bool& { return c.data.unlabeled_includes_labeled; });
    add_list("image_shape", [](RunConfig& c) -> std::vector<std::size_t>& { return c.data.image_shape; });

    // Model
    add_list("hidden_dims", [](RunConfig& c) -> std::vector<std::size_t>& { return c.model.hidden_dims; });
    add_size("head_hidden", [](RunConfig& c) -> std::size_t& { return c.model.head_hidden; });
    add_enum("extractor", [](const RunConfig& c) { return to_string(c.model.extractor); },
             [](RunConfig& c, const std::string& v) { c.model.extractor = parse_extractor_kind(trim(v)); });
    add_list("conv_channels", [](RunConfig& c) -> std::vector<std::size_t>& { return c.model.conv_channels; });

    // Augmentation
    add_double("augment.weak.sigma", [](RunConfig& c) -> double& { return c.weak.sigma; });
    add_double("augment.weak.shift", [](RunConfig& c) -> double& { return c.weak.max_shift; });
    add_double("augment.strong.sigma", [](RunConfig& c) -> double& { return c.strong.sigma; });
    add_double("augment.strong.dropout", [](RunConfig& c) -> double& { return c.strong.dropout; });
    add_double("augment.strong.scale_lo", [](RunConfig& c) -> double& { return c.strong.scale_lo; });
    add_double("augment.strong.scale_hi", [](RunConfig& c) -> double& { return c.strong.scale_hi; });
    f.push_back({"augment.image.n_ops", [](const RunConfig& c) { return json(c.strong.n_ops); },
                 [](RunConfig& c, const std::string& v) {
                   c.strong.n_ops = static_cast<int>(to_uint("augment.image.n_ops", v));
                 }});
    add_double("augment.image.magnitude", [](RunConfig& c) -> double& { return c.strong.magnitude; });
    return f;
  }();
  return table;
}

const Field& find_field(const std::string& key) {
  for (const Field& f : fields()) {
    if (f.key == key) return f;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

KSpec KSpec::parse(const std::string& text) {
  const std::string t = trim(text);
  if (t.empty()) throw ConfigError("config key 'k': empty value");
  KSpec k;
  if (t.back() == 'C' || t.back() == 'c') {
    const std::string head = t.substr(0, t.size() - 1);
    k.fraction_of_classes = true;
    k.value = head.empty() ? 1.0 : to_double("k", head);
    if (!(k.value > 0.0) || k.value > 1.0) throw ConfigError("config key 'k': fraction of C must lie in (0, 1]");
    return k;
  }
  k.fraction_of_classes = false;
  k.value = static_cast<double>(to_uint("k", t));
  if (k.value < 1.0) throw ConfigError("config key 'k': must be at least 1");
  return k;
}

void RunConfig::set(const std::string& key, const std::string& value) { find_field(key).set(*this, value); }

std::string RunConfig::get(const std::string& key) const {
  const json v = find_field(key).get(*this);
  return v.is_string() ? v.get<std::string>() : v.dump();
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const Field& f : fields()) out.push_back(f.key);
  return out;
}

std::string RunConfig::to_json() const {
  json j = json::object();
  for (const Field& f : fields()) j[f.key] = f.get(*this);
  return j.dump(2);
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  const std::string t = trim(text);
  if (!t.empty() && t.front() == '{') {
    json j;
    try {
      j = json::parse(t);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    for (const auto& [key, value] : j.items()) {
      std::string v;
      if (value.is_string()) {
        v = value.get<std::string>();
      } else if (value.is_array()) {
        for (std::size_t i = 0; i < value.size(); ++i) v += (i ? "," : "") + value[i].dump();
      } else if (value.is_boolean() || value.is_number()) {
        v = value.dump();
      } else {
        throw ConfigError("config key '" + key + "': unsupported JSON value");
      }
      cfg.set(key, v);
    }
    return cfg;
  }
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

void RunConfig::validate() const {
  const TrainConfig& t = train;
  if (!(t.tau > 0.0 && t.tau < 1.0)) throw ConfigError("tau must lie in (0, 1)");
  if (t.mu < 1) throw ConfigError("mu must be at least 1");
  if (t.batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (t.lambdas.sep < 0.0 || t.lambdas.p < 0.0 || t.lambdas.n < 0.0) {
    throw ConfigError("loss weights must be non-negative");
  }
  if (!(t.lr0 > 0.0)) throw ConfigError("lr0 must be positive");
  if (t.momentum < 0.0 || t.momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (t.weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (t.ema_decay < 0.0 || t.ema_decay >= 1.0) throw ConfigError("ema_decay must lie in [0, 1)");
  const int modes = (t.low_conf_mode != LowConfMode::kNone) + (t.tnc_scheme != TncScheme::kDefault) +
                    (t.tnc_consistency != TncConsistency::kDefault);
  if (modes > 1) {
    throw ConfigError("low_conf_mode, tnc_scheme and tnc_consistency are mutually exclusive ablations");
  }
  if (t.algorithm == Algorithm::kFixMatch && modes > 0) {
    throw ConfigError("ablation modes apply to the mutexmatch algorithm only");
  }
  if (data.dataset != "blobs" && data.dataset != "rings" && data.dataset != "csv") {
    throw ConfigError("dataset must be blobs|rings|csv");
  }
  if (data.dataset == "csv" && data.path.empty()) throw ConfigError("dataset=csv requires data_path");
  if (data.labels_per_class == 0) throw ConfigError("labels_per_class must be positive");
  if (data.eval_fraction <= 0.0 || data.eval_fraction >= 1.0) throw ConfigError("eval_fraction must lie in (0, 1)");
  if (!data.image_shape.empty() && data.image_shape.size() != 3) {
    throw ConfigError("image_shape must be channels,height,width");
  }
  if (model.extractor == ExtractorKind::kConv && data.image_shape.empty()) {
    throw ConfigError("extractor=conv requires image_shape");
  }
  if (model.head_hidden == 0) throw ConfigError("head_hidden must be positive");
  validate_policies(weak, strong);
  if (data.dataset != "csv") (void)train.k.resolve(data.classes);
}

}  // namespace mutexmatch
