#pragma once

#include <gtest/gtest.h>

#include <functional>
#include <random>
#include <vector>

#include "mutexmatch/tensor.hpp"
#include "oracle.hpp"

namespace mmtest {

inline std::vector<double> normal_values(std::size_t n, std::uint64_t seed, double sd = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, sd);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

inline mutexmatch::Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed, bool rg = true,
                                        double sd = 1.0) {
  return mutexmatch::Tensor::matrix(r, c, normal_values(r * c, seed, sd), rg);
}

// Row-stochastic matrix from random logits.
inline mutexmatch::Tensor random_probs(std::size_t r, std::size_t c, std::uint64_t seed, double sd = 1.0) {
  return mutexmatch::softmax(random_matrix(r, c, seed, false, sd), 1);
}

// Backward of loss() against central differences for every tensor in params.
inline double max_grad_error(const std::function<mutexmatch::Tensor()>& loss,
                             std::vector<mutexmatch::Tensor> params, double step = 1e-5) {
  for (auto& p : params) p.zero_grad();
  loss().backward();
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    const auto g = p.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(p.size(), 0.0);
  }
  const auto numeric = mutexmatch::finite_difference_grad([&] { return loss().item(); }, params, step);
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    worst = std::max(worst, mutexmatch::relative_error(analytic[i], numeric[i]));
  }
  for (auto& p : params) p.zero_grad();
  return worst;
}

}  // namespace mmtest
