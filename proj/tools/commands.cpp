#include "commands.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "mutexmatch/error.hpp"
#include "mutexmatch/trainer.hpp"

namespace mutexmatch::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

std::string hex64(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << v;
  return out.str();
}

std::uint64_t parse_hex64(const std::string& s) {
  std::size_t used = 0;
  std::uint64_t v = 0;
  try {
    v = std::stoull(s, &used, 16);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw FormatError("bad dataset fingerprint '" + s + "'");
  return v;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
  if (!out) throw Error("write failed: " + p.string());
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

RunConfig base_config(const std::string& config_path, const std::vector<std::string>& overrides) {
  RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
  apply_overrides(cfg, overrides);
  return cfg;
}

struct Stats {
  double mean = 0.0;
  double std = 0.0;
};

// Sample standard deviation; zero for a single value.
Stats stats_of(const std::vector<double>& v) {
  Stats s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

json eval_summary(const EvalMetrics& e) {
  json j;
  j["test_accuracy"] = e.test_accuracy;
  j["pseudo_label_accuracy"] = e.pseudo_label_accuracy;
  j["pseudo_label_accuracy_filtered"] =
      e.pseudo_label_filtered.accuracy ? json(*e.pseudo_label_filtered.accuracy) : json(nullptr);
  j["pseudo_label_filtered_count"] = e.pseudo_label_filtered.count;
  j["complementary_error"] = e.complementary_error;
  j["pool_n_high"] = e.n_high;
  j["pool_n_low"] = e.n_low;
  j["tpc_diagonal_mass"] = diagonal_mass(e.heatmap_tpc);
  j["tnc_diagonal_mass"] = diagonal_mass(e.heatmap_tnc);
  return j;
}

std::string point_label(const std::vector<std::pair<std::string, std::string>>& point) {
  if (point.empty()) return "default";
  std::string s;
  for (const auto& [k, v] : point) s += (s.empty() ? "" : ";") + k + "=" + v;
  return s;
}

}  // namespace

int report_exception(std::ostream& err) {
  try {
    throw;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << '\n';
    return kFormat;
  } catch (const DimensionError& e) {
    err << "dimension error: " << e.what() << '\n';
    return kDimension;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kInternal;
  }
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects KEY=VALUE, got '" + o + "'");
    cfg.set(o.substr(0, eq), o.substr(eq + 1));
  }
}

RunOutcome execute_run(const RunConfig& cfg, const std::string& dir, std::optional<std::uint64_t> expected_fingerprint,
                       std::ostream* progress) {
  cfg.validate();
  const fs::path root(dir);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw Error("cannot create run directory " + dir + ": " + ec.message());

  const Dataset ds = load_dataset(cfg.data);
  const std::uint64_t fingerprint = dataset_fingerprint(ds);
  if (expected_fingerprint && *expected_fingerprint != fingerprint) {
    throw DataError("dataset fingerprint " + hex64(fingerprint) + " does not match the manifest (" +
                    hex64(*expected_fingerprint) + ")");
  }
  const Split split = make_run_split(ds, cfg);
  const std::string config_json = cfg.to_json();
  write_text(root / "config.json", config_json + "\n");
  write_text(root / "split.txt", split_manifest(split.indices));

  json manifest;
  manifest["config"] = json::parse(config_json);
  manifest["dataset_fingerprint"] = hex64(fingerprint);
  manifest["seed"] = cfg.train.seed;
  manifest["artifacts"] = {{"config", "config.json"},
                           {"split", "split.txt"},
                           {"metrics", "metrics.jsonl"},
                           {"summary", "summary.csv"},
                           {"heatmap_tpc", "heatmap_tpc.csv"},
                           {"heatmap_tnc", "heatmap_tnc.csv"},
                           {"complementary_error", "complementary_error.csv"},
                           {"checkpoint_final", "checkpoint_final.ckpt"},
                           {"checkpoint_best", "checkpoint_best.ckpt"}};
  manifest["started_at"] = utc_now();
  manifest["finished_at"] = nullptr;
  manifest["status"] = "running";
  write_text(root / "manifest.json", manifest.dump(2) + "\n");

  const ModelParams initial = init_run_model(cfg, split);
  std::ofstream log_out(root / "metrics.jsonl", std::ios::binary | std::ios::trunc);
  if (!log_out) throw Error("cannot write " + (root / "metrics.jsonl").string());
  const MetricSink sink = [&](const MetricRecord& rec) {
    log_out << to_json_line(rec) << '\n';
    if (rec.eval) {
      log_out.flush();
      if (progress) {
        *progress << "[seed " << cfg.train.seed << "] step " << rec.step << "/" << cfg.train.steps
                  << " loss " << rec.loss.total << " test_acc " << rec.eval->test_accuracy << '\n';
      }
    }
  };

  FitResult result;
  try {
    result = fit(initial, split, cfg, sink);
  } catch (...) {
    log_out.flush();
    manifest["status"] = "failed";
    manifest["finished_at"] = utc_now();
    write_text(root / "manifest.json", manifest.dump(2) + "\n");
    throw;
  }
  log_out.close();

  std::vector<MetricRecord> log = result.log;
  if (log.empty()) {
    // Zero-step run: the report describes the initial model.
    MetricRecord rec;
    rec.lr = learning_rate(cfg.train, 0);
    rec.eval = evaluate(initial, split.eval, make_diagnostic_inputs(split, cfg.weak, diagnostic_seed(cfg)),
                        cfg.train.tau);
    result.best_accuracy = rec.eval->test_accuracy;
    log.push_back(rec);
  }
  const ModelParams& final_model = result.ema_model ? *result.ema_model : result.model;
  save_checkpoint((root / "checkpoint_final.ckpt").string(), final_model, config_json);
  save_checkpoint((root / "checkpoint_best.ckpt").string(), result.best_model, config_json);
  export_report(log, dir);

  manifest["status"] = "complete";
  manifest["finished_at"] = utc_now();
  manifest["best_step"] = result.best_step;
  write_text(root / "manifest.json", manifest.dump(2) + "\n");

  RunOutcome out;
  out.dir = dir;
  out.seed = cfg.train.seed;
  out.final_eval = *log.back().eval;
  out.best_accuracy = result.best_accuracy;
  out.best_step = result.best_step;
  return out;
}

int cmd_train(const TrainOptions& opt, std::ostream& out, std::ostream& err) {
  if (opt.seeds == 0) throw UsageError("--seeds must be at least 1");
  RunConfig cfg;
  std::optional<std::uint64_t> fingerprint;
  if (!opt.manifest_path.empty()) {
    json manifest;
    try {
      manifest = json::parse(read_text(opt.manifest_path));
      cfg = RunConfig::parse(manifest.at("config").dump());
      fingerprint = parse_hex64(manifest.at("dataset_fingerprint").get<std::string>());
    } catch (const json::exception& e) {
      throw FormatError("bad manifest " + opt.manifest_path + ": " + e.what());
    }
    apply_overrides(cfg, opt.overrides);
  } else {
    cfg = base_config(opt.config_path, opt.overrides);
  }
  cfg.validate();

  std::vector<RunOutcome> outcomes;
  for (std::size_t i = 0; i < opt.seeds; ++i) {
    RunConfig run = cfg;
    run.train.seed = cfg.train.seed + i;
    const std::string dir =
        opt.seeds == 1 ? opt.out : (fs::path(opt.out) / ("seed_" + std::to_string(run.train.seed))).string();
    outcomes.push_back(execute_run(run, dir, fingerprint, &err));
    const EvalMetrics& e = outcomes.back().final_eval;
    out << dir << ": test_accuracy " << format_double(e.test_accuracy) << " pseudo_label_accuracy "
        << format_double(e.pseudo_label_accuracy) << '\n';
  }
  if (opt.seeds > 1) {
    std::ostringstream csv;
    csv << "seed,test_accuracy,pseudo_label_accuracy,best_accuracy,best_step\n";
    std::vector<double> acc;
    for (const auto& o : outcomes) {
      acc.push_back(o.final_eval.test_accuracy);
      csv << o.seed << ',' << format_double(o.final_eval.test_accuracy) << ','
          << format_double(o.final_eval.pseudo_label_accuracy) << ',' << format_double(o.best_accuracy) << ','
          << o.best_step << '\n';
    }
    const Stats s = stats_of(acc);
    write_text(fs::path(opt.out) / "seeds.csv", csv.str());
    out << "mean test_accuracy " << format_double(s.mean) << " +- " << format_double(s.std) << " over "
        << opt.seeds << " seeds\n";
  }
  return kOk;
}

int cmd_eval(const EvalOptions& opt, std::ostream& out, std::ostream&) {
  const Checkpoint ckpt = load_checkpoint(opt.checkpoint);
  RunConfig cfg;
  if (!opt.config_path.empty()) {
    cfg = RunConfig::load(opt.config_path);
  } else if (!ckpt.metadata.empty()) {
    cfg = RunConfig::parse(ckpt.metadata);
  }
  apply_overrides(cfg, opt.overrides);
  cfg.validate();
  const Dataset ds = load_dataset(cfg.data);
  const Split split = make_run_split(ds, cfg);
  if (split.labeled.features.cols != ckpt.params.spec.input_dim) {
    throw DimensionError("checkpoint expects input dimension " + std::to_string(ckpt.params.spec.input_dim) +
                         ", dataset has " + std::to_string(split.labeled.features.cols));
  }
  if (split.classes != ckpt.params.spec.classes) {
    throw DimensionError("checkpoint has " + std::to_string(ckpt.params.spec.classes) + " classes, dataset " +
                         std::to_string(split.classes));
  }
  const EvalMetrics e = evaluate(ckpt.params, split.eval,
                                 make_diagnostic_inputs(split, cfg.weak, diagnostic_seed(cfg)), cfg.train.tau);
  json j = eval_summary(e);
  j["checkpoint"] = opt.checkpoint;
  out << j.dump() << '\n';
  if (!opt.out.empty()) {
    std::error_code ec;
    fs::create_directories(opt.out, ec);
    if (ec) throw Error("cannot create " + opt.out + ": " + ec.message());
    write_text(fs::path(opt.out) / "eval.json", j.dump(2) + "\n");
    MetricRecord rec;
    rec.eval = e;
    export_report({rec}, opt.out);
  }
  return kOk;
}

const std::vector<std::string>& sweepable_keys() {
  static const std::vector<std::string> keys = {
      "tau",        "k",        "lambda_sep",    "lambda_p",   "lambda_n",        "stop_gradient",
      "low_conf_mode", "tnc_scheme", "tnc_consistency", "schedule", "lr0",          "labels_per_class"};
  return keys;
}

SweepAxis parse_sweep_axis(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("--sweep expects KEY=V1,V2,..., got '" + text + "'");
  SweepAxis axis;
  axis.key = text.substr(0, eq);
  const auto& keys = sweepable_keys();
  if (std::find(keys.begin(), keys.end(), axis.key) == keys.end()) {
    throw UsageError("key '" + axis.key + "' cannot be swept");
  }
  std::istringstream in(text.substr(eq + 1));
  std::string v;
  while (std::getline(in, v, ',')) {
    if (!v.empty()) axis.values.push_back(v);
  }
  if (axis.values.empty()) throw UsageError("sweep over '" + axis.key + "' has no values");
  return axis;
}

std::vector<std::vector<std::pair<std::string, std::string>>> expand_grid(const std::vector<SweepAxis>& axes) {
  std::vector<std::vector<std::pair<std::string, std::string>>> grid{{}};
  for (const SweepAxis& axis : axes) {
    std::vector<std::vector<std::pair<std::string, std::string>>> next;
    for (const auto& point : grid) {
      for (const std::string& v : axis.values) {
        auto p = point;
        p.emplace_back(axis.key, v);
        next.push_back(std::move(p));
      }
    }
    grid = std::move(next);
  }
  return grid;
}

std::vector<std::vector<std::pair<std::string, std::string>>> preset_grid(const std::string& name) {
  using Point = std::vector<std::pair<std::string, std::string>>;
  if (name == "tb_ab") {
    // (lambda_p, lambda_n, lambda_sep, stop_gradient): eight toggles, then the default.
    const char* rows[][4] = {{"1", "1", "1", "false"}, {"1", "0", "1", "false"}, {"1", "0", "1", "true"},
                             {"0", "1", "1", "true"},  {"1", "1", "0", "true"},  {"0", "1", "0", "true"},
                             {"1", "0", "0", "true"},  {"0", "0", "0", "true"},  {"1", "1", "1", "true"}};
    std::vector<Point> grid;
    for (const auto& r : rows) {
      grid.push_back({{"lambda_p", r[0]}, {"lambda_n", r[1]}, {"lambda_sep", r[2]}, {"stop_gradient", r[3]}});
    }
    return grid;
  }
  if (name == "k") return expand_grid({{"k", {"0.2C", "0.4C", "0.6C", "0.8C", "C"}}});
  if (name == "tau") return expand_grid({{"tau", {"0.5", "0.75", "0.95", "0.99"}}});
  if (name == "lr_schedule") return expand_grid({{"schedule", {"cosine", "constant"}}});
  throw UsageError("unknown preset '" + name + "' (tb_ab, k, tau, lr_schedule)");
}

std::size_t sweep_parallelism() {
  const char* env = std::getenv("MUTEXMATCH_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  const std::string s(env);
  if (s.find_first_not_of("0123456789") != std::string::npos || std::stoull(s) == 0) {
    throw ConfigError("MUTEXMATCH_THREADS must be a positive integer, got '" + s + "'");
  }
  return static_cast<std::size_t>(std::stoull(s));
}

int cmd_ablate(const AblateOptions& opt, std::ostream& out, std::ostream& err) {
  if (opt.seeds == 0) throw UsageError("--seeds must be at least 1");
  const RunConfig base = base_config(opt.config_path, opt.overrides);
  std::vector<SweepAxis> axes;
  for (const std::string& s : opt.sweeps) axes.push_back(parse_sweep_axis(s));
  auto grid = expand_grid(axes);
  if (!opt.preset.empty()) {
    const auto preset = preset_grid(opt.preset);
    std::vector<std::vector<std::pair<std::string, std::string>>> combined;
    for (const auto& p : preset) {
      for (const auto& g : grid) {
        auto point = p;
        point.insert(point.end(), g.begin(), g.end());
        combined.push_back(std::move(point));
      }
    }
    grid = std::move(combined);
  }

  struct Job {
    std::size_t point;
    RunConfig cfg;
    std::string dir;
  };
  std::vector<Job> jobs;
  for (std::size_t p = 0; p < grid.size(); ++p) {
    RunConfig cfg = base;
    for (const auto& [k, v] : grid[p]) cfg.set(k, v);
    cfg.validate();
    for (std::size_t s = 0; s < opt.seeds; ++s) {
      RunConfig run = cfg;
      run.train.seed = base.train.seed + s;
      const fs::path dir = fs::path(opt.out) / ("point_" + std::to_string(p)) /
                           ("seed_" + std::to_string(run.train.seed));
      jobs.push_back({p, std::move(run), dir.string()});
    }
  }

  std::vector<std::optional<RunOutcome>> results(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex io;
  const auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        results[i] = execute_run(jobs[i].cfg, jobs[i].dir);
        const std::lock_guard<std::mutex> lock(io);
        err << "[" << (i + 1) << "/" << jobs.size() << "] " << point_label(grid[jobs[i].point]) << " seed "
            << jobs[i].cfg.train.seed << ": test_accuracy " << format_double(results[i]->final_eval.test_accuracy)
            << '\n';
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_workers = std::min(sweep_parallelism(), std::max<std::size_t>(jobs.size(), 1));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::ostringstream csv;
  csv << "point,settings,seeds,mean_test_accuracy,std_test_accuracy,mean_pseudo_label_accuracy\n";
  for (std::size_t p = 0; p < grid.size(); ++p) {
    std::vector<double> acc, plab;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      if (jobs[i].point != p) continue;
      acc.push_back(results[i]->final_eval.test_accuracy);
      plab.push_back(results[i]->final_eval.pseudo_label_accuracy);
    }
    const Stats a = stats_of(acc);
    const Stats pl = stats_of(plab);
    csv << p << ',' << point_label(grid[p]) << ',' << acc.size() << ',' << format_double(a.mean) << ','
        << format_double(a.std) << ',' << format_double(pl.mean) << '\n';
    out << std::left << std::setw(4) << p << std::setw(60) << point_label(grid[p]) << std::fixed
        << std::setprecision(2) << 100.0 * a.mean << " +- " << 100.0 * a.std << '\n';
    out.unsetf(std::ios::fixed);
  }
  std::error_code ec;
  fs::create_directories(opt.out, ec);
  write_text(fs::path(opt.out) / "comparison.csv", csv.str());
  return kOk;
}

int cmd_report(const ReportOptions& opt, std::ostream& out, std::ostream&) {
  if (opt.runs.empty()) throw UsageError("report needs at least one run directory");
  out << "run,step,test_accuracy,pseudo_label_accuracy,complementary_error_m1,tpc_diagonal_mass,"
         "tnc_diagonal_mass\n";
  for (const std::string& run : opt.runs) {
    const auto log = read_metric_log((fs::path(run) / "metrics.jsonl").string());
    std::string dest = run;
    if (!opt.out.empty()) {
      dest = opt.runs.size() == 1 ? opt.out : (fs::path(opt.out) / fs::path(run).filename()).string();
    }
    export_report(log, dest);
    const MetricRecord* last = nullptr;
    for (const auto& r : log) {
      if (r.eval) last = &r;
    }
    if (last == nullptr) {
      out << run << ",,,,,,\n";
      continue;
    }
    const EvalMetrics& e = *last->eval;
    out << run << ',' << last->step << ',' << format_double(e.test_accuracy) << ','
        << format_double(e.pseudo_label_accuracy) << ','
        << (e.complementary_error.empty() ? std::string() : format_double(e.complementary_error[0])) << ','
        << format_double(diagonal_mass(e.heatmap_tpc)) << ',' << format_double(diagonal_mass(e.heatmap_tnc))
        << '\n';
  }
  return kOk;
}

}  // namespace mutexmatch::cli
