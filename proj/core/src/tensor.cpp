#include "mutexmatch/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <unordered_set>

#include "mutexmatch/error.hpp"
#include "tensor_internal.hpp"

namespace mutexmatch {

namespace {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

}  // namespace

Tensor::Tensor() : Tensor(Shape{}, {0.0}) {}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape.size() > 2) throw DimensionError("tensor rank above 2 is not supported");
  if (shape_size(shape) != values.size()) {
    throw DimensionError("tensor shape holds " + std::to_string(shape_size(shape)) +
                         " elements but " + std::to_string(values.size()) +
                         " values were given");
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError("non-finite value in tensor construction");
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, {value}, requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  const std::size_t n = values.size();
  return Tensor(Shape{n}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                      bool requires_grad) {
  return Tensor(Shape{rows, cols}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->data.size(); }

std::size_t Tensor::rows() const { return rank() == 2 ? shape()[0] : 1; }

std::size_t Tensor::cols() const {
  if (rank() == 0) return 1;
  return shape().back();
}

std::span<const double> Tensor::data() const { return node_->data; }
std::span<double> Tensor::mutable_data() { return node_->data; }

double Tensor::item() const {
  if (size() != 1) throw UsageError("item() requires a single-element tensor");
  return node_->data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (row >= rows() || col >= cols()) throw DimensionError("tensor index out of range");
  return node_->data[row * cols() + col];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::is_leaf() const { return node_->inputs.empty(); }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tape Tape::record(const Tensor& root) {
  Tape tape;
  detail::Node* start = detail::Access::node(root).get();
  if (!start->requires_grad) return tape;

  // Iterative post-order DFS; a node is emitted after all of its inputs.
  std::unordered_set<const detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(start, 0);
  visited.insert(start);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      tape.order_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

std::vector<TapeEntry> Tape::entries() const {
  std::vector<TapeEntry> out;
  out.reserve(order_.size());
  for (const detail::Node* node : order_) {
    TapeEntry e{node, node->op, {}};
    for (const auto& in : node->inputs) {
      if (in->requires_grad) e.inputs.push_back(in.get());
    }
    out.push_back(std::move(e));
  }
  return out;
}

void Tensor::backward() const {
  if (size() != 1 || rank() > 1) {
    throw UsageError("backward() requires a scalar loss");
  }
  Tape tape = Tape::record(*this);
  for (detail::Node* node : tape.order_) {
    if (!node->inputs.empty()) node->grad.assign(node->data.size(), 0.0);
  }
  if (tape.order_.empty()) return;
  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = tape.order_.rbegin(); it != tape.order_.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward) node->backward(*node);
  }
}

std::vector<std::vector<double>> finite_difference_grad(
    const std::function<double()>& f, const std::vector<Tensor>& params, double step) {
  if (!(step > 0.0)) throw UsageError("finite difference step must be positive");
  std::vector<std::vector<double>> grads;
  grads.reserve(params.size());
  for (Tensor p : params) {
    std::vector<double> g(p.size(), 0.0);
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = f();
      values[i] = saved - step;
      const double down = f();
      values[i] = saved;
      g[i] = (up - down) / (2.0 * step);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

double relative_error(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("relative_error: size mismatch");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::max(std::sqrt(na) + std::sqrt(nb), 1e-300);
  return std::sqrt(diff) / denom;
}

}  // namespace mutexmatch
