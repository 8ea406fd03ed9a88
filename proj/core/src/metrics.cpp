#include "mutexmatch/metrics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "mutexmatch/error.hpp"

namespace mutexmatch {

using nlohmann::json;

namespace {

std::span<const double> row_of(const Tensor& t, std::size_t r) {
  return t.data().subspan(r * t.cols(), t.cols());
}

void require_rows(const Tensor& probs, std::size_t n) {
  if (probs.rank() != 2 || probs.rows() != n) {
    throw DimensionError("predictions have " + std::to_string(probs.rows()) + " rows, labels " +
                         std::to_string(n));
  }
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double accuracy(const Tensor& probs, std::span<const int> labels) {
  if (labels.empty()) throw DataError("accuracy over an empty set");
  require_rows(probs, labels.size());
  const auto pred = argmax_rows(probs);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += static_cast<int>(pred[i]) == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

HeadPredictions predict(const ModelParams& params, const Tensor& x) {
  const ModelParams frozen = params.detached();
  const Tensor z = extract_features(frozen, x);
  return {softmax(head_logits(frozen.tpc, z), 1), softmax(head_logits(frozen.tnc, z), 1)};
}

double test_accuracy(const ModelParams& params, const LabeledSet& eval) {
  if (eval.labels.empty()) throw DataError("evaluation set is empty");
  const ModelParams frozen = params.detached();
  const Tensor probs = softmax(head_logits(frozen.tpc, extract_features(frozen, eval.features.to_tensor())), 1);
  return accuracy(probs, eval.labels);
}

DiagnosticInputs make_diagnostic_inputs(const Split& split, const AugmentPolicy& weak, std::uint64_t seed) {
  const FeatureMatrix& x = split.unlabeled.features;
  FeatureMatrix views;
  views.cols = x.cols;
  for (std::size_t i = 0; i < x.rows; ++i) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i >> 32)};
    AugmentRng rng(seq);
    views.append(weak_augment(x.row(i), split.feature_std, weak, rng, split.image));
  }
  return {views.to_tensor(), split.hidden.labels};
}

double pseudo_label_accuracy(const Tensor& p_w, std::span<const int> hidden) {
  require_rows(p_w, hidden.size());
  std::size_t n = 0, hit = 0;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    if (hidden[i] == kUnlabeled) continue;
    ++n;
    hit += static_cast<int>(select_pseudo_label(row_of(p_w, i))) == hidden[i];
  }
  return n == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(n);
}

FilteredAccuracy pseudo_label_accuracy_filtered(const Tensor& p_w, std::span<const int> hidden, double tau) {
  require_rows(p_w, hidden.size());
  FilteredAccuracy out;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    if (hidden[i] == kUnlabeled) continue;
    const auto r = row_of(p_w, i);
    if (*std::max_element(r.begin(), r.end()) < tau) continue;
    ++out.count;
    hit += static_cast<int>(select_pseudo_label(r)) == hidden[i];
  }
  if (out.count > 0) out.accuracy = static_cast<double>(hit) / static_cast<double>(out.count);
  return out;
}

std::size_t rank_from_bottom(std::span<const double> probs, std::size_t m) {
  if (m < 1 || m > probs.size()) {
    throw ConfigError("rank m=" + std::to_string(m) + " outside [1, " + std::to_string(probs.size()) + "]");
  }
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m - 1), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return probs[a] < probs[b] || (probs[a] == probs[b] && a > b);
                   });
  return order[m - 1];
}

double complementary_error(const Tensor& p_w, std::span<const int> hidden, std::size_t m) {
  require_rows(p_w, hidden.size());
  if (m < 1 || m > p_w.cols()) {
    throw ConfigError("rank m=" + std::to_string(m) + " outside [1, " + std::to_string(p_w.cols()) + "]");
  }
  std::size_t n = 0, hit = 0;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    if (hidden[i] == kUnlabeled) continue;
    ++n;
    hit += static_cast<int>(rank_from_bottom(row_of(p_w, i), m)) == hidden[i];
  }
  return n == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(n);
}

std::vector<double> complementary_error_by_rank(const Tensor& p_w, std::span<const int> hidden) {
  require_rows(p_w, hidden.size());
  const std::size_t c = p_w.cols();
  std::vector<std::size_t> counts(c, 0);
  std::size_t n = 0;
  std::vector<std::size_t> order(c);
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    if (hidden[i] == kUnlabeled) continue;
    ++n;
    const auto r = row_of(p_w, i);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return r[a] < r[b] || (r[a] == r[b] && a > b); });
    for (std::size_t m = 0; m < c; ++m) {
      if (static_cast<int>(order[m]) == hidden[i]) ++counts[m];
    }
  }
  std::vector<double> out(c, 0.0);
  if (n == 0) return out;
  for (std::size_t m = 0; m < c; ++m) out[m] = static_cast<double>(counts[m]) / static_cast<double>(n);
  return out;
}

Matrix prediction_heatmap(const Tensor& probs, std::span<const int> hidden, std::size_t classes) {
  require_rows(probs, hidden.size());
  Matrix counts(classes, std::vector<double>(classes, 0.0));
  const auto pred = argmax_rows(probs);
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    if (hidden[i] == kUnlabeled) continue;
    if (hidden[i] < 0 || static_cast<std::size_t>(hidden[i]) >= classes) {
      throw DataError("hidden label " + std::to_string(hidden[i]) + " outside [0, C)");
    }
    counts[static_cast<std::size_t>(hidden[i])][pred[i]] += 1.0;
  }
  for (auto& row : counts) {
    const double total = std::accumulate(row.begin(), row.end(), 0.0);
    if (total > 0.0) {
      for (double& v : row) v /= total;
    }
  }
  return counts;
}

double diagonal_mass(const Matrix& heatmap) {
  double d = 0.0;
  if (heatmap.empty()) return 0.0;
  for (std::size_t i = 0; i < heatmap.size(); ++i) d += heatmap[i][i];
  return d / static_cast<double>(heatmap.size());
}

EvalMetrics evaluate(const ModelParams& params, const LabeledSet& eval, const DiagnosticInputs& diag,
                     double tau) {
  EvalMetrics m;
  m.test_accuracy = test_accuracy(params, eval);
  const HeadPredictions pred = predict(params, diag.views);
  const std::size_t c = params.spec.classes;
  m.pseudo_label_accuracy = pseudo_label_accuracy(pred.tpc, diag.hidden);
  m.pseudo_label_filtered = pseudo_label_accuracy_filtered(pred.tpc, diag.hidden, tau);
  m.complementary_error = complementary_error_by_rank(pred.tpc, diag.hidden);
  const ConfidencePartition part = confidence_partition(pred.tpc, tau);
  m.n_high = part.n_high;
  m.n_low = part.n_low;
  m.heatmap_tpc = prediction_heatmap(pred.tpc, diag.hidden, c);
  m.heatmap_tnc = prediction_heatmap(pred.tnc, diag.hidden, c);
  return m;
}

// ---------------------------------------------------------------------------

namespace {

json eval_to_json(const EvalMetrics& e) {
  json j;
  j["test_accuracy"] = e.test_accuracy;
  j["pseudo_label_accuracy"] = e.pseudo_label_accuracy;
  j["pseudo_label_accuracy_filtered"] =
      e.pseudo_label_filtered.accuracy ? json(*e.pseudo_label_filtered.accuracy) : json(nullptr);
  j["pseudo_label_filtered_count"] = e.pseudo_label_filtered.count;
  j["complementary_error"] = e.complementary_error;
  j["pool_n_high"] = e.n_high;
  j["pool_n_low"] = e.n_low;
  j["heatmap_tpc"] = e.heatmap_tpc;
  j["heatmap_tnc"] = e.heatmap_tnc;
  return j;
}

EvalMetrics eval_from_json(const json& j) {
  EvalMetrics e;
  e.test_accuracy = j.at("test_accuracy").get<double>();
  e.pseudo_label_accuracy = j.at("pseudo_label_accuracy").get<double>();
  if (!j.at("pseudo_label_accuracy_filtered").is_null()) {
    e.pseudo_label_filtered.accuracy = j.at("pseudo_label_accuracy_filtered").get<double>();
  }
  e.pseudo_label_filtered.count = j.at("pseudo_label_filtered_count").get<std::size_t>();
  e.complementary_error = j.at("complementary_error").get<std::vector<double>>();
  e.n_high = j.at("pool_n_high").get<std::size_t>();
  e.n_low = j.at("pool_n_low").get<std::size_t>();
  e.heatmap_tpc = j.at("heatmap_tpc").get<Matrix>();
  e.heatmap_tnc = j.at("heatmap_tnc").get<Matrix>();
  return e;
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + p.string());
  return out;
}

void write_matrix(const std::filesystem::path& p, const Matrix& m) {
  auto out = open_out(p);
  for (const auto& row : m) {
    for (std::size_t j = 0; j < row.size(); ++j) out << (j ? "," : "") << format_double(row[j]);
    out << '\n';
  }
  if (!out) throw Error("write failed: " + p.string());
}

}  // namespace

std::string to_json_line(const MetricRecord& r) {
  json j;
  j["step"] = r.step;
  j["lr"] = r.lr;
  j["l_sup"] = r.loss.l_sup;
  j["l_sep"] = r.loss.l_sep;
  j["l_p"] = r.loss.l_p;
  j["l_n"] = r.loss.l_n;
  j["lambda_sep"] = r.loss.lambdas.sep;
  j["lambda_p"] = r.loss.lambdas.p;
  j["lambda_n"] = r.loss.lambdas.n;
  j["total"] = r.loss.total;
  j["n_high"] = r.loss.n_high;
  j["n_low"] = r.loss.n_low;
  if (r.eval) j["eval"] = eval_to_json(*r.eval);
  return j.dump();
}

MetricRecord metric_record_from_json(const std::string& line) {
  try {
    const json j = json::parse(line);
    MetricRecord r;
    r.step = j.at("step").get<std::size_t>();
    r.lr = j.at("lr").get<double>();
    r.loss.l_sup = j.at("l_sup").get<double>();
    r.loss.l_sep = j.at("l_sep").get<double>();
    r.loss.l_p = j.at("l_p").get<double>();
    r.loss.l_n = j.at("l_n").get<double>();
    r.loss.lambdas = {j.at("lambda_sep").get<double>(), j.at("lambda_p").get<double>(),
                      j.at("lambda_n").get<double>()};
    r.loss.total = j.at("total").get<double>();
    r.loss.n_high = j.at("n_high").get<std::size_t>();
    r.loss.n_low = j.at("n_low").get<std::size_t>();
    if (j.contains("eval")) r.eval = eval_from_json(j.at("eval"));
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad metric record: ") + e.what());
  }
}

std::vector<MetricRecord> read_metric_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open metric log: " + path);
  std::vector<MetricRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(metric_record_from_json(line));
    } catch (const FormatError& e) {
      throw FormatError(path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

void export_report(const std::vector<MetricRecord>& log, const std::string& dir) {
  if (log.empty()) throw UsageError("cannot export a report from an empty metric log");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create report directory " + dir + ": " + ec.message());
  const fs::path root(dir);

  {
    auto out = open_out(root / "metrics.jsonl");
    for (const auto& r : log) out << to_json_line(r) << '\n';
    if (!out) throw Error("write failed: " + (root / "metrics.jsonl").string());
  }

  const MetricRecord* last_eval = nullptr;
  {
    auto out = open_out(root / "summary.csv");
    out << "step,lr,total,l_sup,l_sep,l_p,l_n,test_accuracy,pseudo_label_accuracy,"
           "pseudo_label_accuracy_filtered,pseudo_label_filtered_count,pool_n_high,pool_n_low,"
           "tpc_diagonal_mass,tnc_diagonal_mass\n";
    for (const auto& r : log) {
      if (!r.eval) continue;
      last_eval = &r;
      const EvalMetrics& e = *r.eval;
      out << r.step << ',' << format_double(r.lr) << ',' << format_double(r.loss.total) << ','
          << format_double(r.loss.l_sup) << ',' << format_double(r.loss.l_sep) << ','
          << format_double(r.loss.l_p) << ',' << format_double(r.loss.l_n) << ','
          << format_double(e.test_accuracy) << ',' << format_double(e.pseudo_label_accuracy) << ','
          << (e.pseudo_label_filtered.accuracy ? format_double(*e.pseudo_label_filtered.accuracy) : "")
          << ',' << e.pseudo_label_filtered.count << ',' << e.n_high << ',' << e.n_low << ','
          << format_double(diagonal_mass(e.heatmap_tpc)) << ','
          << format_double(diagonal_mass(e.heatmap_tnc)) << '\n';
    }
    if (!out) throw Error("write failed: " + (root / "summary.csv").string());
  }

  Matrix tpc, tnc;
  std::vector<double> comp;
  if (last_eval) {
    tpc = last_eval->eval->heatmap_tpc;
    tnc = last_eval->eval->heatmap_tnc;
    comp = last_eval->eval->complementary_error;
  }
  write_matrix(root / "heatmap_tpc.csv", tpc);
  write_matrix(root / "heatmap_tnc.csv", tnc);
  auto out = open_out(root / "complementary_error.csv");
  out << "m,error\n";
  for (std::size_t m = 0; m < comp.size(); ++m) out << (m + 1) << ',' << format_double(comp[m]) << '\n';
  if (!out) throw Error("write failed: " + (root / "complementary_error.csv").string());
}

}  // namespace mutexmatch
