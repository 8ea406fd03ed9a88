#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mutexmatch/error.hpp"
#include "mutexmatch/tensor.hpp"
#include "tensor_internal.hpp"

namespace mutexmatch {

using detail::grad_target;
using detail::make_result;
using detail::Node;
using detail::node_of;

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": operand shapes differ");
  }
}

void require_matrix(const Tensor& a, const char* op) {
  if (a.rank() != 2) throw DimensionError(std::string(op) + ": expected a rank-2 tensor");
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return make_result("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (int k = 0; k < 2; ++k) {
      if (double* g = grad_target(*self.inputs[k])) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  return make_result("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (double* g = grad_target(*self.inputs[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = grad_target(*self.inputs[1])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  return make_result("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    if (double* g = grad_target(x)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * y.data[i];
    }
    if (double* g = grad_target(y)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * x.data[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= factor;
  return make_result("scale", a.shape(), std::move(out), {a}, [factor](Node& self) {
    if (double* g = grad_target(*self.inputs[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * factor;
    }
  });
}

Tensor add_scalar(const Tensor& a, double value) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v += value;
  return make_result("add_scalar", a.shape(), std::move(out), {a}, [](Node& self) {
    if (double* g = grad_target(*self.inputs[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions " + std::to_string(k) + " and " +
                         std::to_string(b.shape()[0]) + " differ");
  }
  std::vector<double> out(n * m);
  MutMap(out.data(), n, m).noalias() =
      ConstMap(a.data().data(), n, k) * ConstMap(b.data().data(), k, m);
  return make_result("matmul", {n, m}, std::move(out), {a, b}, [n, k, m](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    ConstMap dout(self.grad.data(), n, m);
    if (double* g = grad_target(x)) {
      MutMap(g, n, k).noalias() += dout * ConstMap(y.data.data(), k, m).transpose();
    }
    if (double* g = grad_target(y)) {
      MutMap(g, k, m).noalias() += ConstMap(x.data.data(), n, k).transpose() * dout;
    }
  });
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  require_matrix(a, "add_bias");
  const std::size_t n = a.shape()[0], m = a.shape()[1];
  if (bias.rank() != 1 || bias.size() != m) {
    throw DimensionError("add_bias: bias must be a vector of length " + std::to_string(m));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bd = bias.data();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < m; ++c) out[r * m + c] += bd[c];
  }
  return make_result("add_bias", a.shape(), std::move(out), {a, bias}, [n, m](Node& self) {
    if (double* g = grad_target(*self.inputs[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = grad_target(*self.inputs[1])) {
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < m; ++c) g[c] += self.grad[r * m + c];
      }
    }
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return make_result("relu", a.shape(), std::move(out), {a}, [](Node& self) {
    if (double* g = grad_target(*self.inputs[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if (self.data[i] > 0.0) g[i] += self.grad[i];
      }
    }
  });
}

Tensor exp(const Tensor& a) {
  std::vector<double> out(a.size());
  const auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(ad[i]);
  return make_result("exp", a.shape(), std::move(out), {a}, [](Node& self) {
    if (double* g = grad_target(*self.inputs[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * self.data[i];
    }
  });
}

Tensor log(const Tensor& a) {
  std::vector<double> out(a.size());
  const auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(std::max(ad[i], kLogClamp));
  return make_result("log", a.shape(), std::move(out), {a}, [](Node& self) {
    Node& x = *self.inputs[0];
    if (double* g = grad_target(x)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if (x.data[i] > kLogClamp) g[i] += self.grad[i] / x.data[i];
      }
    }
  });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_result("sum", {}, {total}, {a}, [](Node& self) {
    if (double* g = grad_target(*self.inputs[0])) {
      const double up = self.grad[0];
      for (std::size_t i = 0; i < self.inputs[0]->data.size(); ++i) g[i] += up;
    }
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor sum_rows(const Tensor& a) {
  const std::size_t n = a.rows(), m = a.cols();
  std::vector<double> out(n, 0.0);
  const auto ad = a.data();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < m; ++c) out[r] += ad[r * m + c];
  }
  return make_result("sum_rows", {n}, std::move(out), {a}, [m](Node& self) {
    if (double* g = grad_target(*self.inputs[0])) {
      for (std::size_t r = 0; r < self.grad.size(); ++r) {
        for (std::size_t c = 0; c < m; ++c) g[r * m + c] += self.grad[r];
      }
    }
  });
}

namespace {

template <typename Better>
std::vector<std::size_t> row_extremum(const Tensor& a, Better better) {
  const std::size_t n = a.rows(), m = a.cols();
  if (m == 0) throw DimensionError("extremum over an empty axis");
  const auto ad = a.data();
  std::vector<std::size_t> idx(n, 0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 1; c < m; ++c) {
      if (better(ad[r * m + c], ad[r * m + idx[r]])) idx[r] = c;
    }
  }
  return idx;
}

Tensor select_per_row(const Tensor& a, std::vector<std::size_t> idx, std::string_view op) {
  const std::size_t n = a.rows(), m = a.cols();
  std::vector<double> out(n);
  const auto ad = a.data();
  for (std::size_t r = 0; r < n; ++r) out[r] = ad[r * m + idx[r]];
  return make_result(op, {n}, std::move(out), {a}, [m, idx = std::move(idx)](Node& self) {
    if (double* g = grad_target(*self.inputs[0])) {
      for (std::size_t r = 0; r < idx.size(); ++r) g[r * m + idx[r]] += self.grad[r];
    }
  });
}

}  // namespace

std::vector<std::size_t> argmax_rows(const Tensor& a) {
  return row_extremum(a, [](double x, double best) { return x > best; });
}

std::vector<std::size_t> argmin_rows(const Tensor& a) {
  return row_extremum(a, [](double x, double best) { return x < best; });
}

std::size_t argmax(const Tensor& a) {
  const auto d = a.data();
  return static_cast<std::size_t>(std::max_element(d.begin(), d.end()) - d.begin());
}

std::size_t argmin(const Tensor& a) {
  const auto d = a.data();
  return static_cast<std::size_t>(std::min_element(d.begin(), d.end()) - d.begin());
}

Tensor max_rows(const Tensor& a) { return select_per_row(a, argmax_rows(a), "max_rows"); }
Tensor min_rows(const Tensor& a) { return select_per_row(a, argmin_rows(a), "min_rows"); }

Tensor gather(const Tensor& a, std::span<const std::size_t> cols) {
  if (cols.size() != a.rows()) throw DimensionError("gather: one column index per row required");
  for (std::size_t c : cols) {
    if (c >= a.cols()) throw DimensionError("gather: column index out of range");
  }
  return select_per_row(a, std::vector<std::size_t>(cols.begin(), cols.end()), "gather");
}

Tensor index_select(const Tensor& a, std::span<const std::size_t> rows) {
  if (a.rank() == 0) throw DimensionError("index_select on a scalar");
  const bool vec = a.rank() == 1;
  const std::size_t width = vec ? 1 : a.cols();
  const std::size_t limit = vec ? a.size() : a.rows();
  std::vector<double> out;
  out.reserve(rows.size() * width);
  const auto ad = a.data();
  for (std::size_t r : rows) {
    if (r >= limit) throw DimensionError("index_select: index out of range");
    out.insert(out.end(), ad.begin() + r * width, ad.begin() + (r + 1) * width);
  }
  Shape shape = vec ? Shape{rows.size()} : Shape{rows.size(), width};
  return make_result("index_select", std::move(shape), std::move(out), {a},
                     [width, idx = std::vector<std::size_t>(rows.begin(), rows.end())](Node& self) {
                       if (double* g = grad_target(*self.inputs[0])) {
                         for (std::size_t i = 0; i < idx.size(); ++i) {
                           for (std::size_t c = 0; c < width; ++c) {
                             g[idx[i] * width + c] += self.grad[i * width + c];
                           }
                         }
                       }
                     });
}

Tensor softmax(const Tensor& logits, std::size_t axis) {
  if (axis >= std::max<std::size_t>(logits.rank(), 1)) {
    throw DimensionError("softmax: axis out of range");
  }
  // Normalised groups: rows when axis is the last one, columns otherwise.
  const std::size_t n = logits.rows(), m = logits.cols();
  const bool along_cols = logits.rank() == 2 && axis == 0;
  const std::size_t groups = along_cols ? m : n;
  const std::size_t len = along_cols ? n : m;
  auto at = [&](std::size_t g, std::size_t i) { return along_cols ? i * m + g : g * m + i; };

  const auto x = logits.data();
  std::vector<double> out(x.size());
  for (std::size_t g = 0; g < groups; ++g) {
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < len; ++i) hi = std::max(hi, x[at(g, i)]);
    double z = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      const double e = std::exp(x[at(g, i)] - hi);
      out[at(g, i)] = e;
      z += e;
    }
    for (std::size_t i = 0; i < len; ++i) out[at(g, i)] /= z;
  }
  return make_result("softmax", logits.shape(), std::move(out), {logits},
                     [groups, len, along_cols, m](Node& self) {
                       double* g = grad_target(*self.inputs[0]);
                       if (!g) return;
                       auto at = [&](std::size_t grp, std::size_t i) {
                         return along_cols ? i * m + grp : grp * m + i;
                       };
                       // dx_i = y_i (dy_i - sum_j y_j dy_j)
                       for (std::size_t grp = 0; grp < groups; ++grp) {
                         double dot = 0.0;
                         for (std::size_t i = 0; i < len; ++i) {
                           dot += self.data[at(grp, i)] * self.grad[at(grp, i)];
                         }
                         for (std::size_t i = 0; i < len; ++i) {
                           const std::size_t j = at(grp, i);
                           g[j] += self.data[j] * (self.grad[j] - dot);
                         }
                       }
                     });
}

Tensor stop_gradient(const Tensor& a) {
  auto node = std::make_shared<Node>();
  node->shape = a.shape();
  node->data.assign(a.data().begin(), a.data().end());
  node->op = "stop_gradient";
  return detail::Access::wrap(std::move(node));
}

Tensor conv2d(const Tensor& images, const Tensor& kernel, const Tensor& bias,
              const ImageGeometry& geom, std::size_t ksize) {
  require_matrix(images, "conv2d");
  require_matrix(kernel, "conv2d");
  if (ksize % 2 == 0) throw DimensionError("conv2d: kernel size must be odd");
  if (images.cols() != geom.size()) throw DimensionError("conv2d: image size does not match geometry");
  const std::size_t cin = geom.channels, h = geom.height, w = geom.width;
  const std::size_t cout = kernel.shape()[0];
  if (kernel.shape()[1] != cin * ksize * ksize) {
    throw DimensionError("conv2d: kernel shape does not match input channels");
  }
  if (bias.rank() != 1 || bias.size() != cout) throw DimensionError("conv2d: bias length");
  const std::size_t n = images.rows();
  const std::size_t patch = cin * ksize * ksize;
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(ksize / 2);

  // im2col: [n * h * w, patch]
  auto cols = std::make_shared<std::vector<double>>(n * h * w * patch, 0.0);
  const auto x = images.data();
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        double* row = cols->data() + ((s * h + i) * w + j) * patch;
        for (std::size_t c = 0; c < cin; ++c) {
          for (std::size_t di = 0; di < ksize; ++di) {
            for (std::size_t dj = 0; dj < ksize; ++dj) {
              const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i + di) - pad;
              const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j + dj) - pad;
              if (ii < 0 || jj < 0 || ii >= static_cast<std::ptrdiff_t>(h) ||
                  jj >= static_cast<std::ptrdiff_t>(w)) {
                continue;
              }
              row[(c * ksize + di) * ksize + dj] =
                  x[s * geom.size() + (c * h + static_cast<std::size_t>(ii)) * w +
                    static_cast<std::size_t>(jj)];
            }
          }
        }
      }
    }
  }
  const std::size_t positions = n * h * w;
  RowMatrix prod = ConstMap(cols->data(), positions, patch) *
                   ConstMap(kernel.data().data(), cout, patch).transpose();
  std::vector<double> out(n * cout * h * w);
  const auto bd = bias.data();
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t o = 0; o < cout; ++o) {
      for (std::size_t p = 0; p < h * w; ++p) {
        out[(s * cout + o) * h * w + p] = prod(s * h * w + p, o) + bd[o];
      }
    }
  }
  return make_result(
      "conv2d", {n, cout * h * w}, std::move(out), {images, kernel, bias},
      [=](Node& self) {
        // dprod[pos, o]
        RowMatrix dprod(positions, cout);
        for (std::size_t s = 0; s < n; ++s) {
          for (std::size_t o = 0; o < cout; ++o) {
            for (std::size_t p = 0; p < h * w; ++p) {
              dprod(s * h * w + p, o) = self.grad[(s * cout + o) * h * w + p];
            }
          }
        }
        if (double* g = grad_target(*self.inputs[2])) {
          for (std::size_t o = 0; o < cout; ++o) g[o] += dprod.col(o).sum();
        }
        if (double* g = grad_target(*self.inputs[1])) {
          MutMap(g, cout, patch).noalias() +=
              dprod.transpose() * ConstMap(cols->data(), positions, patch);
        }
        if (double* g = grad_target(*self.inputs[0])) {
          RowMatrix dcols = dprod * ConstMap(self.inputs[1]->data.data(), cout, patch);
          for (std::size_t s = 0; s < n; ++s) {
            for (std::size_t i = 0; i < h; ++i) {
              for (std::size_t j = 0; j < w; ++j) {
                const std::size_t r = (s * h + i) * w + j;
                for (std::size_t c = 0; c < cin; ++c) {
                  for (std::size_t di = 0; di < ksize; ++di) {
                    for (std::size_t dj = 0; dj < ksize; ++dj) {
                      const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i + di) - pad;
                      const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j + dj) - pad;
                      if (ii < 0 || jj < 0 || ii >= static_cast<std::ptrdiff_t>(h) ||
                          jj >= static_cast<std::ptrdiff_t>(w)) {
                        continue;
                      }
                      g[s * cin * h * w + (c * h + static_cast<std::size_t>(ii)) * w +
                        static_cast<std::size_t>(jj)] +=
                          dcols(static_cast<Eigen::Index>(r),
                                static_cast<Eigen::Index>((c * ksize + di) * ksize + dj));
                    }
                  }
                }
              }
            }
          }
        }
      });
}

Tensor max_pool2x2(const Tensor& images, const ImageGeometry& geom) {
  require_matrix(images, "max_pool2x2");
  if (images.cols() != geom.size()) throw DimensionError("max_pool2x2: image size does not match geometry");
  if (geom.height % 2 != 0 || geom.width % 2 != 0) {
    throw DimensionError("max_pool2x2: height and width must be even");
  }
  const std::size_t n = images.rows(), c = geom.channels;
  const std::size_t h = geom.height, w = geom.width, oh = h / 2, ow = w / 2;
  const std::size_t out_cols = c * oh * ow;
  std::vector<double> out(n * out_cols);
  std::vector<std::size_t> src(n * out_cols);
  const auto x = images.data();
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < oh; ++i) {
        for (std::size_t j = 0; j < ow; ++j) {
          std::size_t best = s * geom.size() + (ch * h + 2 * i) * w + 2 * j;
          for (std::size_t di = 0; di < 2; ++di) {
            for (std::size_t dj = 0; dj < 2; ++dj) {
              const std::size_t idx = s * geom.size() + (ch * h + 2 * i + di) * w + 2 * j + dj;
              if (x[idx] > x[best]) best = idx;
            }
          }
          const std::size_t o = s * out_cols + (ch * oh + i) * ow + j;
          out[o] = x[best];
          src[o] = best;
        }
      }
    }
  }
  return make_result("max_pool2x2", {n, out_cols}, std::move(out), {images},
                     [src = std::move(src)](Node& self) {
                       if (double* g = grad_target(*self.inputs[0])) {
                         for (std::size_t o = 0; o < src.size(); ++o) g[src[o]] += self.grad[o];
                       }
                     });
}

}  // namespace mutexmatch
