#pragma once

#include <cmath>
#include <initializer_list>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mutexmatch/error.hpp"
#include "mutexmatch/tensor.hpp"

namespace mutexmatch::detail {

struct Access {
  static const std::shared_ptr<Node>& node(const Tensor& t) { return t.node_; }
  static Tensor wrap(std::shared_ptr<Node> node) { return Tensor(std::move(node)); }
};

inline Node& node_of(const Tensor& t) { return *Access::node(t); }

// Builds an op result. The backward closure and input links are kept only
// when some input participates in differentiation.
inline Tensor make_result(std::string_view op, Shape shape, std::vector<double> data,
                          std::initializer_list<Tensor> inputs,
                          std::function<void(Node&)> backward) {
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + " produced a non-finite value");
    }
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool any = false;
  for (const Tensor& in : inputs) any = any || in.requires_grad();
  if (any) {
    node->requires_grad = true;
    for (const Tensor& in : inputs) node->inputs.push_back(Access::node(in));
    node->backward = std::move(backward);
  }
  return Access::wrap(std::move(node));
}

// Gradient buffer of an input, or nullptr when it does not need one.
inline double* grad_target(Node& input) {
  if (!input.requires_grad) return nullptr;
  input.ensure_grad();
  return input.grad.data();
}

}  // namespace mutexmatch::detail
