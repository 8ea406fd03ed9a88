#pragma once

// Minimal reverse-mode differentiation over dense row-major tensors of rank
// 0, 1 or 2. Every op records its inputs and a backward closure on the output
// node; backward() linearises the graph into a Tape and sweeps it once.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

namespace mutexmatch {

using Shape = std::vector<std::size_t>;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward sweep touches the node
  bool requires_grad = false;
  std::string_view op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into inputs' grads.
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

struct Access;

}  // namespace detail

class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values, bool requires_grad = false);

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  // Row/column view: rank 2 -> (shape[0], shape[1]); rank 1 -> (1, n);
  // rank 0 -> (1, 1).
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  // Direct write access, used by the optimizer on leaf parameters.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  // Empty span when no gradient has been accumulated yet.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Reverse sweep from this scalar. Leaf gradients accumulate additively
  // across calls; interior gradients are recomputed from scratch.
  void backward() const;

  // Stable identity of the underlying node (for tape inspection).
  const void* id() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node);
  std::shared_ptr<detail::Node> node_;
  friend struct detail::Access;
};

struct TapeEntry {
  const void* node;
  std::string_view op;
  std::vector<const void*> inputs;
};

// Topologically ordered record of the operations reachable from a root.
// Only nodes that require gradients participate.
class Tape {
 public:
  static Tape record(const Tensor& root);

  std::size_t size() const { return order_.size(); }
  std::vector<TapeEntry> entries() const;

 private:
  friend class Tensor;
  std::vector<detail::Node*> order_;
};

// ---------------------------------------------------------------------------
// Elementwise and reduction ops.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

// [n, k] x [k, m] -> [n, m]
Tensor matmul(const Tensor& a, const Tensor& b);
// [n, m] + row vector [m], broadcast over rows.
Tensor add_bias(const Tensor& a, const Tensor& bias);

Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
// log(max(x, kLogClamp)); gradient is zero where the clamp is active.
Tensor log(const Tensor& a);
inline constexpr double kLogClamp = 1e-12;

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Per-row sum of a rank-2 tensor -> [n].
Tensor sum_rows(const Tensor& a);
// Per-row extremum values -> [n]; gradient routes to the selected entry.
Tensor max_rows(const Tensor& a);
Tensor min_rows(const Tensor& a);

// Index of the extremum over all elements, lowest index on ties.
std::size_t argmax(const Tensor& a);
std::size_t argmin(const Tensor& a);
// Per-row indices for rank-2 tensors (rank 1 is treated as one row).
std::vector<std::size_t> argmax_rows(const Tensor& a);
std::vector<std::size_t> argmin_rows(const Tensor& a);

// Select rows of a rank-2 tensor (or elements of a rank-1 tensor).
Tensor index_select(const Tensor& a, std::span<const std::size_t> rows);
// out[i] = a[i, cols[i]] -> [n].
Tensor gather(const Tensor& a, std::span<const std::size_t> cols);

// Numerically stable softmax along axis (0 or 1 for rank 2, 0 for rank 1).
Tensor softmax(const Tensor& logits, std::size_t axis);

// Forward identity; the result is a constant, so nothing upstream receives
// gradient through it.
Tensor stop_gradient(const Tensor& a);

// ---------------------------------------------------------------------------
// Image ops. Rows hold channel-major [channels * height * width] images.

struct ImageGeometry {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;

  std::size_t size() const { return channels * height * width; }
  bool operator==(const ImageGeometry&) const = default;
};

// Stride-1 "same" convolution with an odd square kernel.
// kernel: [out_channels, in_channels * k * k], bias: [out_channels].
Tensor conv2d(const Tensor& images, const Tensor& kernel, const Tensor& bias,
              const ImageGeometry& geometry, std::size_t kernel_size);
// 2x2 max pooling with stride 2 (height and width must be even).
Tensor max_pool2x2(const Tensor& images, const ImageGeometry& geometry);

// ---------------------------------------------------------------------------
// Central-difference gradient estimate of a scalar function of the given
// parameter tensors. Perturbs the tensors in place and restores them.
std::vector<std::vector<double>> finite_difference_grad(
    const std::function<double()>& f, const std::vector<Tensor>& params,
    double step);

// ||a - b|| / max(||a|| + ||b||, tiny) over the flattened vectors.
double relative_error(std::span<const double> a, std::span<const double> b);

}  // namespace mutexmatch
