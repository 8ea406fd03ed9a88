#include <benchmark/benchmark.h>

#include <random>

#include "mutexmatch/trainer.hpp"

namespace mm = mutexmatch;

namespace {

mm::Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed, bool rg = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(r * c);
  for (double& x : v) x = n(rng);
  return mm::Tensor::matrix(r, c, std::move(v), rg);
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const mm::Tensor a = random_matrix(n, 128, 1, true);
  const mm::Tensor b = random_matrix(128, 128, 2, true);
  for (auto _ : state) {
    mm::Tensor c = mm::matmul(a, b);
    benchmark::DoNotOptimize(c.data().data());
  }
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(512);

void BM_SoftmaxBackward(benchmark::State& state) {
  const mm::Tensor a = random_matrix(448, 10, 3, true);
  for (auto _ : state) {
    mm::Tensor loss = mm::sum(mm::log(mm::softmax(a, 1)));
    loss.backward();
  }
}
BENCHMARK(BM_SoftmaxBackward);

// One optimizer step on 16-dim blobs at the given batch size and width.
void BM_TrainStep(benchmark::State& state) {
  mm::RunConfig cfg;
  cfg.train.batch_size = static_cast<std::size_t>(state.range(0));
  const auto width = static_cast<std::size_t>(state.range(1));
  cfg.model.hidden_dims = {width, width};
  cfg.model.head_hidden = width / 2;
  const mm::Dataset ds = mm::load_dataset(cfg.data);
  const mm::Split split = mm::make_run_split(ds, cfg);
  mm::ModelParams params = mm::init_run_model(cfg, split);
  mm::RngStreams rng(0);
  mm::BatchIterator it(split.labeled, split.unlabeled, cfg.train.batch_size, cfg.train.mu, cfg.weak, cfg.strong,
                       split.feature_std, split.image, rng);
  auto opt = mm::OptimizerState::for_params(params.parameters());
  for (auto _ : state) {
    const mm::MixedBatch batch = it.next();
    benchmark::DoNotOptimize(mm::train_step(params, batch, cfg.train, opt, rng.ablation));
  }
}
BENCHMARK(BM_TrainStep)->Args({64, 128})->Args({32, 64})->Args({16, 64})->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
