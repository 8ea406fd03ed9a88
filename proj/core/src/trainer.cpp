#include "mutexmatch/trainer.hpp"

#include <cmath>
#include <numbers>

#include "mutexmatch/error.hpp"

namespace mutexmatch {

double cosine_lr(std::size_t s, std::size_t total_steps, double lr0) {
  if (total_steps == 0) return lr0;
  if (s > total_steps) throw UsageError("cosine_lr: step beyond the schedule");
  const double frac = static_cast<double>(s) / static_cast<double>(total_steps);
  return lr0 * std::cos(7.0 * std::numbers::pi * frac / 16.0);
}

double learning_rate(const TrainConfig& cfg, std::size_t s) {
  return cfg.schedule == Schedule::kCosine ? cosine_lr(s, cfg.steps, cfg.lr0) : cfg.lr0;
}

OptimizerState OptimizerState::for_params(const std::vector<Tensor>& params) {
  OptimizerState st;
  st.velocity.reserve(params.size());
  for (const Tensor& p : params) st.velocity.emplace_back(p.size(), 0.0);
  return st;
}

void sgd_update(std::span<double> param, std::span<const double> grad, std::span<double> velocity, double lr,
                double momentum, double weight_decay) {
  if (velocity.size() != param.size() || (!grad.empty() && grad.size() != param.size())) {
    throw DimensionError("sgd_update: parameter, gradient and velocity sizes differ");
  }
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad.empty() ? 0.0 : grad[i];
    velocity[i] = momentum * velocity[i] + g + weight_decay * param[i];
    param[i] -= lr * velocity[i];
  }
}

void sgd_step(const std::vector<Tensor>& params, OptimizerState& state, double lr, double momentum,
              double weight_decay) {
  if (state.velocity.size() != params.size()) {
    throw DimensionError("optimizer state does not match the parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (double g : params[i].grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + std::to_string(i));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    sgd_update(p.mutable_data(), params[i].grad(), state.velocity[i], lr, momentum, weight_decay);
  }
  ++state.step;
}

Objective compute_objective(const ModelParams& params, const MixedBatch& batch, const TrainConfig& cfg,
                            std::mt19937_64& ablation_rng) {
  const std::size_t classes = params.spec.classes;
  const Tensor zero = Tensor::scalar(0.0);
  LossTerms terms{supervised_loss(forward_tpc(params, batch.labeled_weak), batch.labels), zero, zero, zero};
  Tensor p_w;

  if (cfg.algorithm == Algorithm::kFixMatch) {
    const ModelParams frozen = params.detached();
    p_w = softmax(head_logits(frozen.tpc, extract_features(frozen, batch.unlabeled_weak)), 1);
    const Tensor p_s = softmax(head_logits(params.tpc, extract_features(params, batch.unlabeled_strong)), 1);
    terms.p = positive_consistency_loss(p_w, p_s, cfg.tau);
  } else {
    const PredictionBundle b =
        forward_bundle(params, batch.unlabeled_weak, batch.unlabeled_strong, cfg.stop_gradient);
    p_w = b.p_w;
    const std::size_t k = cfg.k.resolve(classes);
    terms.p = positive_consistency_loss(b.p_w, b.p_s, cfg.tau);
    if (cfg.low_conf_mode != LowConfMode::kNone) {
      // TPC replaces TNC on the low-confidence portion; the TNC is not trained.
      terms.n = ablation_low_conf_loss(cfg.low_conf_mode, b.p_w, b.p_s, b.z_w, b.z_s, cfg.tau);
    } else if (cfg.tnc_scheme != TncScheme::kDefault) {
      TncSchemeLosses s = ablation_tnc_scheme(cfg.tnc_scheme, b.p_w, b.r_w, b.r_w_live, b.r_s, cfg.tau, ablation_rng);
      if (s.has_sep) terms.sep = s.sep;
      terms.n = s.consistency;
    } else {
      terms.sep = separation_loss(b.p_w, b.r_w_live);
      terms.n = cfg.tnc_consistency == TncConsistency::kDefault
                    ? negative_consistency_loss(b.r_w, b.r_s, b.p_w, cfg.tau, k)
                    : ablation_tnc_consistency(cfg.tnc_consistency, b.r_w, b.r_s, b.p_w, cfg.tau, k);
    }
  }

  Objective out{combine_losses(terms, cfg.lambdas),
                total_loss(terms.sup.item(), terms.sep.item(), terms.p.item(), terms.n.item(), cfg.lambdas)};
  const ConfidencePartition part = confidence_partition(p_w, cfg.tau);
  out.report.n_high = part.n_high;
  out.report.n_low = part.n_low;
  return out;
}

LossReport train_step(ModelParams& params, const MixedBatch& batch, const TrainConfig& cfg, OptimizerState& state,
                      std::mt19937_64& ablation_rng) {
  const std::size_t step = state.step;
  const auto tag = [step](const std::exception& e) { return "step " + std::to_string(step) + ": " + e.what(); };
  try {
    params.zero_grad();
    const Objective obj = compute_objective(params, batch, cfg, ablation_rng);
    obj.total.backward();
    sgd_step(params.parameters(), state, learning_rate(cfg, step), cfg.momentum, cfg.weight_decay);
    params.zero_grad();
    return obj.report;
  } catch (const NumericError& e) {
    params.zero_grad();
    throw NumericError(tag(e));
  } catch (const DimensionError& e) {
    throw DimensionError(tag(e));
  } catch (const DataError& e) {
    throw DataError(tag(e));
  }
}

namespace {

void ema_update(ModelParams& ema, const ModelParams& live, double decay) {
  auto dst = ema.parameters();
  const auto src = live.parameters();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    auto d = dst[i].mutable_data();
    const auto s = src[i].data();
    for (std::size_t j = 0; j < d.size(); ++j) d[j] = decay * d[j] + (1.0 - decay) * s[j];
  }
}

}  // namespace

FitResult fit(const ModelParams& initial, const Split& split, const RunConfig& cfg, const MetricSink& sink) {
  cfg.validate();
  const TrainConfig& tc = cfg.train;
  FitResult r;
  r.model = initial.clone();
  r.best_model = r.model.clone();
  r.state = OptimizerState::for_params(r.model.parameters());
  if (tc.steps == 0) return r;
  if (tc.ema_decay > 0.0) r.ema_model = r.model.clone();

  RngStreams rng(tc.seed);
  BatchIterator batches(split.labeled, split.unlabeled, tc.batch_size, tc.mu, cfg.weak, cfg.strong,
                        split.feature_std, split.image, rng);
  const DiagnosticInputs diag = make_diagnostic_inputs(split, cfg.weak, diagnostic_seed(cfg));

  for (std::size_t s = 0; s < tc.steps; ++s) {
    const MixedBatch batch = batches.next();
    MetricRecord rec;
    rec.lr = learning_rate(tc, r.state.step);
    rec.loss = train_step(r.model, batch, tc, r.state, rng.ablation);
    rec.step = r.state.step;
    if (r.ema_model) ema_update(*r.ema_model, r.model, tc.ema_decay);

    const bool last = rec.step == tc.steps;
    if (last || (tc.eval_every > 0 && rec.step % tc.eval_every == 0)) {
      const ModelParams& evaluated = r.ema_model ? *r.ema_model : r.model;
      rec.eval = evaluate(evaluated, split.eval, diag, tc.tau);
      if (rec.eval->test_accuracy > r.best_accuracy) {
        r.best_accuracy = rec.eval->test_accuracy;
        r.best_step = rec.step;
        r.best_model = evaluated.clone();
      }
    }
    if (sink) sink(rec);
    r.log.push_back(std::move(rec));
  }
  return r;
}

Dataset load_dataset(const DataConfig& data) {
  Dataset ds;
  if (data.dataset == "blobs") {
    ds = make_gaussian_blobs(data.classes, data.per_class, data.input_dim, data.separation, data.data_seed);
  } else if (data.dataset == "rings") {
    ds = make_rings(data.classes, data.per_class, data.ring_noise, data.data_seed);
  } else if (data.dataset == "csv") {
    if (data.path.empty()) throw DataError("dataset=csv but no data_path given");
    ds = load_csv(data.path, data.has_header, data.classes);
  } else {
    throw ConfigError("unknown dataset '" + data.dataset + "'");
  }
  if (!data.image_shape.empty()) {
    if (data.image_shape.size() != 3) throw ConfigError("image_shape must be channels,height,width");
    ds.image = ImageGeometry{data.image_shape[0], data.image_shape[1], data.image_shape[2]};
    ds.finalize();
  }
  return ds;
}

Split make_run_split(const Dataset& ds, const RunConfig& cfg) {
  SplitSpec spec;
  spec.labels_per_class = cfg.data.labels_per_class;
  spec.seed = cfg.data.data_seed ^ (cfg.train.seed * 0x9E3779B97F4A7C15ULL);
  spec.eval_fraction = cfg.data.eval_fraction;
  spec.unlabeled_includes_labeled = cfg.data.unlabeled_includes_labeled;
  return make_split(ds, spec);
}

ModelSpec model_spec_for(const RunConfig& cfg, const Split& split) {
  ModelSpec spec;
  spec.input_dim = split.labeled.features.cols;
  spec.hidden_dims = cfg.model.hidden_dims;
  spec.head_hidden = cfg.model.head_hidden;
  spec.classes = split.classes;
  spec.extractor = cfg.model.extractor;
  spec.conv_channels = cfg.model.conv_channels;
  if (split.image) spec.image = *split.image;
  return spec;
}

ModelParams init_run_model(const RunConfig& cfg, const Split& split) {
  RngStreams rng(cfg.train.seed);
  return init_model(model_spec_for(cfg, split), rng.init());
}

std::uint64_t diagnostic_seed(const RunConfig& cfg) { return cfg.train.seed ^ 0xD1A6D1A6D1A6D1A6ULL; }

}  // namespace mutexmatch
