#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "mutexmatch/config.hpp"
#include "mutexmatch/data.hpp"
#include "mutexmatch/losses.hpp"
#include "mutexmatch/metrics.hpp"
#include "mutexmatch/model.hpp"

namespace mutexmatch {

// lr0 * cos(7 pi s / (16 S)); S = 0 gives lr0.
double cosine_lr(std::size_t s, std::size_t total_steps, double lr0);
double learning_rate(const TrainConfig& cfg, std::size_t s);

struct OptimizerState {
  std::vector<std::vector<double>> velocity;  // one buffer per parameter
  std::size_t step = 0;

  static OptimizerState for_params(const std::vector<Tensor>& params);
};

// v <- momentum * v + grad + weight_decay * param; param <- param - lr * v.
void sgd_update(std::span<double> param, std::span<const double> grad, std::span<double> velocity,
                double lr, double momentum, double weight_decay);

// Applies sgd_update to every parameter using its accumulated gradient (a
// parameter without gradient is treated as having a zero gradient, so weight
// decay still applies). Throws NumericError, leaving every parameter and
// buffer untouched, if any gradient is not finite.
void sgd_step(const std::vector<Tensor>& params, OptimizerState& state, double lr, double momentum,
              double weight_decay);

struct Objective {
  Tensor total;
  LossReport report;
};

// Forward pass plus the configured loss on one mixed batch. The ablation rng
// is only drawn from by the rand_soft scheme.
Objective compute_objective(const ModelParams& params, const MixedBatch& batch, const TrainConfig& cfg,
                            std::mt19937_64& ablation_rng);

// One optimizer step: objective, a single backward pass, SGD on every
// parameter, gradients cleared. Errors are rethrown with the step index.
LossReport train_step(ModelParams& params, const MixedBatch& batch, const TrainConfig& cfg,
                      OptimizerState& state, std::mt19937_64& ablation_rng);

using MetricSink = std::function<void(const MetricRecord&)>;

struct FitResult {
  ModelParams model;       // after the last step
  ModelParams best_model;  // highest eval accuracy seen (ties keep the earlier)
  std::optional<ModelParams> ema_model;
  double best_accuracy = -1.0;
  std::size_t best_step = 0;
  std::vector<MetricRecord> log;
  OptimizerState state;
};

// Runs cfg.train.steps steps from `initial` (which is cloned, not modified).
// Records one metric line per step; every eval_every steps and after the last
// step the record also carries evaluation metrics. Records reach the sink as
// they are produced, so a partial log survives an aborted run.
FitResult fit(const ModelParams& initial, const Split& split, const RunConfig& cfg,
              const MetricSink& sink = {});

// Builds the dataset named by the data section of the config.
Dataset load_dataset(const DataConfig& data);
Split make_run_split(const Dataset& ds, const RunConfig& cfg);
ModelSpec model_spec_for(const RunConfig& cfg, const Split& split);
// Initial weights drawn from the init stream of the run seed.
ModelParams init_run_model(const RunConfig& cfg, const Split& split);

// Seed that fixes the diagnostic weak views of a run.
std::uint64_t diagnostic_seed(const RunConfig& cfg);

}  // namespace mutexmatch
