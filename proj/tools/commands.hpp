#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mutexmatch/config.hpp"
#include "mutexmatch/metrics.hpp"

namespace mutexmatch::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kConfig = 2,
  kData = 3,
  kNumeric = 4,
  kFormat = 5,
  kDimension = 6,
  kInternal = 7,
};

// Maps the exception currently being handled to an exit code and prints it.
int report_exception(std::ostream& err);

// Applies "KEY=VALUE" overrides in order.
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides);

struct RunOutcome {
  std::string dir;
  std::uint64_t seed = 0;
  EvalMetrics final_eval;
  double best_accuracy = 0.0;
  std::size_t best_step = 0;
};

// Trains one configuration into dir: manifest.json, config.json, split.txt,
// metric log, report tables and the best/final checkpoints. When
// expected_fingerprint is set the dataset must hash to it.
RunOutcome execute_run(const RunConfig& cfg, const std::string& dir,
                       std::optional<std::uint64_t> expected_fingerprint = std::nullopt,
                       std::ostream* progress = nullptr);

struct TrainOptions {
  std::string config_path;
  std::string manifest_path;
  std::vector<std::string> overrides;
  std::size_t seeds = 1;
  std::string out = "runs/train";
};
int cmd_train(const TrainOptions& opt, std::ostream& out, std::ostream& err);

struct EvalOptions {
  std::string checkpoint;
  std::string config_path;  // optional: dataset to evaluate on
  std::vector<std::string> overrides;
  std::string out;  // optional directory for eval.json
};
int cmd_eval(const EvalOptions& opt, std::ostream& out, std::ostream& err);

// Keys that a sweep may vary.
const std::vector<std::string>& sweepable_keys();

struct SweepAxis {
  std::string key;
  std::vector<std::string> values;
};
// "key=v1,v2,..." -> axis. Throws UsageError for keys outside sweepable_keys().
SweepAxis parse_sweep_axis(const std::string& text);

// Named grids: tb_ab, k, tau, lr_schedule.
std::vector<std::vector<std::pair<std::string, std::string>>> preset_grid(const std::string& name);
// Cartesian product of the axes; no axes -> one empty point.
std::vector<std::vector<std::pair<std::string, std::string>>> expand_grid(const std::vector<SweepAxis>& axes);

struct AblateOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::vector<std::string> sweeps;
  std::string preset;
  std::size_t seeds = 1;
  std::string out = "runs/ablate";
};
int cmd_ablate(const AblateOptions& opt, std::ostream& out, std::ostream& err);

struct ReportOptions {
  std::vector<std::string> runs;
  std::string out;  // defaults to each run directory
};
int cmd_report(const ReportOptions& opt, std::ostream& out, std::ostream& err);

// Worker count for sweeps from MUTEXMATCH_THREADS (default 1).
std::size_t sweep_parallelism();

}  // namespace mutexmatch::cli
