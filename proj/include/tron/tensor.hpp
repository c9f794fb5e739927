// Copyright (c) 2026 tron-cpp contributors
// SPDX-License-Identifier: Apache-2.0

// Dense float64 tensors with tape-free reverse-mode autodiff. Each result node
// keeps its parents and a closure that pushes its gradient into them;
// backward() walks the DAG once in reverse topological order.

#pragma once

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tron/errors.hpp"
#include "tron/rng.hpp"

namespace tron {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph construction on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (tron::numel(shape) != values.size()) {
      throw DimensionError("tensor of shape " + shape_str(shape) + " cannot hold " +
                           std::to_string(values.size()) + " values");
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    const std::size_t n = tron::numel(shape);
    return from(std::move(shape), std::vector<double>(n, v), requires_grad);
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), 0.0, requires_grad);
  }
  static Tensor ones(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), 1.0, requires_grad);
  }
  static Tensor scalar(double v, bool requires_grad = false) { return from({}, {v}, requires_grad); }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  /// Parameter updates only; never mutate an interior graph node.
  std::span<double> mutable_values() { return node_->value; }
  double item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }
  double operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  Tensor detach() const { return from(shape(), node_->value, false); }

  /// Reverse-mode sweep from this tensor, seeded with ones (a scalar loss in
  /// practice). Afterwards every reachable requires_grad tensor has a grad.
  void backward() const {
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        detail::Node* p = node->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    auto& seed = node_->ensure_grad();
    std::fill(seed.begin(), seed.end(), 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      detail::Node* n = *it;
      n->ensure_grad();
      if (n->backward_fn) n->backward_fn(*n);
    }
  }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  friend Tensor make_result(Shape, std::vector<double>, std::vector<Tensor>,
                            std::function<void(detail::Node&)>);

  std::shared_ptr<detail::Node> node_;
};

/// Builds an op output. The backward closure is attached only when grad mode
/// is on and some input requires grad.
inline Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                          std::function<void(detail::Node&)> backward) {
  Tensor out = Tensor::from(std::move(shape), std::move(values), false);
  if (!detail::grad_mode()) return out;
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (!any) return out;
  out.node_->requires_grad = true;
  for (auto& t : inputs) out.node_->parents.push_back(t.node_);
  out.node_->backward_fn = std::move(backward);
  return out;
}

// ---------------------------------------------------------------------------
// BLAS
// ---------------------------------------------------------------------------

namespace blas {

/// Row-major C[m,n] = alpha * op(A) * op(B) + beta * C.
inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                 double alpha, const double* a, const double* b, double beta, double* c) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    for (std::size_t i = 0; i < m * n; ++i) c[i] *= beta;
    return;
  }
  const auto lda = static_cast<blasint>(trans_a ? m : k);
  const auto ldb = static_cast<blasint>(trans_b ? k : n);
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<blasint>(m),
              static_cast<blasint>(n), static_cast<blasint>(k), alpha, a, lda, b, ldb, beta, c,
              static_cast<blasint>(n));
}

}  // namespace blas

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

inline void accumulate(Node& parent, std::span<const double> g) {
  if (!parent.requires_grad) return;
  auto& pg = parent.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
}

}  // namespace detail

/// op(a)[m,k] * op(b)[k,n] for 2-d tensors, where op transposes when asked.
inline Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionError("matmul expects 2-d operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = trans_a ? a.dim(1) : a.dim(0);
  const std::size_t k = trans_a ? a.dim(0) : a.dim(1);
  const std::size_t kb = trans_b ? b.dim(1) : b.dim(0);
  const std::size_t n = trans_b ? b.dim(0) : b.dim(1);
  if (k != kb) {
    throw DimensionError("matmul inner dimensions differ: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  blas::gemm(trans_a, trans_b, m, n, k, 1.0, a.values().data(), b.values().data(), 0.0,
             out.data());
  return make_result({m, n}, std::move(out), {a, b}, [=](detail::Node& self) {
    auto& an = *self.parents[0];
    auto& bn = *self.parents[1];
    const double* g = self.grad.data();
    if (an.requires_grad) {
      auto& ga = an.ensure_grad();
      if (!trans_a) {
        blas::gemm(false, !trans_b, m, k, n, 1.0, g, bn.value.data(), 1.0, ga.data());
      } else {
        blas::gemm(trans_b, true, k, m, n, 1.0, bn.value.data(), g, 1.0, ga.data());
      }
    }
    if (bn.requires_grad) {
      auto& gb = bn.ensure_grad();
      if (!trans_b) {
        blas::gemm(!trans_a, false, k, n, m, 1.0, an.value.data(), g, 1.0, gb.data());
      } else {
        blas::gemm(true, trans_a, n, k, m, 1.0, g, an.value.data(), 1.0, gb.data());
      }
    }
  });
}

/// Batched a[B,m,k] * b[B,k,n] (or b[B,n,k] with trans_b).
inline Tensor bmm(const Tensor& a, const Tensor& b, bool trans_b = false) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0)) {
    throw DimensionError("bmm expects matching 3-d operands, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t kb = trans_b ? b.dim(2) : b.dim(1);
  const std::size_t n = trans_b ? b.dim(1) : b.dim(2);
  if (k != kb) {
    throw DimensionError("bmm inner dimensions differ: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(batch * m * n, 0.0);
  for (std::size_t i = 0; i < batch; ++i) {
    blas::gemm(false, trans_b, m, n, k, 1.0, a.values().data() + i * m * k,
               b.values().data() + i * k * n, 0.0, out.data() + i * m * n);
  }
  return make_result({batch, m, n}, std::move(out), {a, b}, [=](detail::Node& self) {
    auto& an = *self.parents[0];
    auto& bn = *self.parents[1];
    for (std::size_t i = 0; i < batch; ++i) {
      const double* g = self.grad.data() + i * m * n;
      const double* av = an.value.data() + i * m * k;
      const double* bv = bn.value.data() + i * k * n;
      if (an.requires_grad) {
        blas::gemm(false, !trans_b, m, k, n, 1.0, g, bv, 1.0, an.ensure_grad().data() + i * m * k);
      }
      if (bn.requires_grad) {
        if (!trans_b) {
          blas::gemm(true, false, k, n, m, 1.0, av, g, 1.0, bn.ensure_grad().data() + i * k * n);
        } else {
          blas::gemm(true, false, n, k, m, 1.0, g, av, 1.0, bn.ensure_grad().data() + i * k * n);
        }
      }
    }
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    detail::accumulate(*self.parents[0], self.grad);
    detail::accumulate(*self.parents[1], self.grad);
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    detail::accumulate(*self.parents[0], self.grad);
    auto& bn = *self.parents[1];
    if (bn.requires_grad) {
      auto& gb = bn.ensure_grad();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    auto& an = *self.parents[0];
    auto& bn = *self.parents[1];
    if (an.requires_grad) {
      auto& ga = an.ensure_grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * bn.value[i];
    }
    if (bn.requires_grad) {
      auto& gb = bn.ensure_grad();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[i] * an.value[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * c;
  return make_result(a.shape(), std::move(out), {a}, [c](detail::Node& self) {
    auto& ga = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * c;
  });
}

/// x[..., d] + bias[d], bias broadcast over every leading index.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1 || x.rank() == 0 || x.shape().back() != bias.dim(0)) {
    throw DimensionError("add_bias: cannot broadcast " + shape_str(bias.shape()) + " onto " +
                         shape_str(x.shape()));
  }
  const std::size_t d = bias.dim(0);
  std::vector<double> out(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias[i % d];
  return make_result(x.shape(), std::move(out), {x, bias}, [d](detail::Node& self) {
    detail::accumulate(*self.parents[0], self.grad);
    auto& bn = *self.parents[1];
    if (bn.requires_grad) {
      auto& gb = bn.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i % d] += self.grad[i];
    }
  });
}

inline Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    auto& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (p.value[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return make_result({}, {s}, {x}, [](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (double& v : g) v += self.grad[0];
  });
}

inline Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

/// Same values, new shape (element count must agree).
inline Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_result(std::move(shape), std::move(out), {x}, [](detail::Node& self) {
    detail::accumulate(*self.parents[0], self.grad);
  });
}

/// [a, b, c, d] -> [a, c, b, d]; splits and merges attention heads.
inline Tensor swap_axes_12(const Tensor& x) {
  if (x.rank() != 4) throw DimensionError("swap_axes_12 expects 4-d input, got " + shape_str(x.shape()));
  const std::size_t A = x.dim(0), B = x.dim(1), C = x.dim(2), D = x.dim(3);
  std::vector<double> out(x.numel());
  auto src = [=](std::size_t a, std::size_t b, std::size_t c) { return ((a * B + b) * C + c) * D; };
  auto dst = [=](std::size_t a, std::size_t c, std::size_t b) { return ((a * C + c) * B + b) * D; };
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c)
        std::copy_n(x.values().data() + src(a, b, c), D, out.data() + dst(a, c, b));
  return make_result({A, C, B, D}, std::move(out), {x}, [=](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t e = 0; e < D; ++e) g[src(a, b, c) + e] += self.grad[dst(a, c, b) + e];
  });
}

/// Numerically stable softmax along `axis` (negative counts from the back).
/// -inf entries are allowed as masks as long as each slice has a finite one.
inline Tensor softmax(const Tensor& x, int axis = -1) {
  const int r = static_cast<int>(x.rank());
  const int ax = axis < 0 ? axis + r : axis;
  if (ax < 0 || ax >= r) throw DimensionError("softmax axis out of range for " + shape_str(x.shape()));
  std::size_t outer = 1, inner = 1;
  const std::size_t n = x.dim(static_cast<std::size_t>(ax));
  for (int i = 0; i < ax; ++i) outer *= x.dim(static_cast<std::size_t>(i));
  for (int i = ax + 1; i < r; ++i) inner *= x.dim(static_cast<std::size_t>(i));
  std::vector<double> out(x.numel());
  for (double v : x.values()) {
    if (std::isnan(v)) throw NumericError("softmax: NaN input");
  }
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, x[base + j * inner]);
      if (!std::isfinite(mx)) throw NumericError("softmax: slice has no finite entry");
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double e = std::exp(x[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= z;
    }
  }
  return make_result(x.shape(), std::move(out), {x}, [=](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += self.grad[base + j * inner] * self.value[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t idx = base + j * inner;
          g[idx] += self.value[idx] * (self.grad[idx] - dot);
        }
      }
    }
  });
}

/// Normalizes each last-axis slice to zero mean and unit (biased) variance,
/// then applies gain and bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-8) {
  if (x.rank() == 0) throw DimensionError("layer_norm on a scalar");
  const std::size_t d = x.shape().back();
  if (d == 0 || gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " do not match " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  std::vector<double> out(x.numel()), xhat(x.numel()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.values().data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (xr[j] - mu) * inv_std[r];
      out[r * d + j] = xhat[r * d + j] * gain[j] + bias[j];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gain, bias},
                     [d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
    auto& xn = *self.parents[0];
    auto& gn = *self.parents[1];
    auto& bn = *self.parents[2];
    const double* g = self.grad.data();
    if (gn.requires_grad) {
      auto& gg = gn.ensure_grad();
      for (std::size_t i = 0; i < rows * d; ++i) gg[i % d] += g[i] * xhat[i];
    }
    if (bn.requires_grad) {
      auto& gb = bn.ensure_grad();
      for (std::size_t i = 0; i < rows * d; ++i) gb[i % d] += g[i];
    }
    if (xn.requires_grad) {
      auto& gx = xn.ensure_grad();
      std::vector<double> dxhat(d);
      for (std::size_t r = 0; r < rows; ++r) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          dxhat[j] = g[r * d + j] * gn.value[j];
          m1 += dxhat[j];
          m2 += dxhat[j] * xhat[r * d + j];
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
          gx[r * d + j] += inv_std[r] * (dxhat[j] - m1 - xhat[r * d + j] * m2);
        }
      }
    }
  });
}

/// Row lookup: result[i, :] = table[ids[i], :], shaped ids_shape + [d].
/// Backward scatter-adds, so repeated ids accumulate.
inline Tensor gather_rows(const Tensor& table, std::span<const std::int64_t> ids, Shape ids_shape = {}) {
  if (table.rank() != 2) throw DimensionError("gather_rows expects a 2-d table, got " + shape_str(table.shape()));
  if (ids_shape.empty()) ids_shape = {ids.size()};
  if (numel(ids_shape) != ids.size()) {
    throw DimensionError("gather_rows: id shape " + shape_str(ids_shape) + " does not hold " +
                         std::to_string(ids.size()) + " ids");
  }
  const std::size_t rows = table.dim(0), d = table.dim(1);
  std::vector<std::int64_t> idx(ids.begin(), ids.end());
  std::vector<double> out(idx.size() * d);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= rows) {
      throw IndexError("gather_rows: id " + std::to_string(idx[i]) + " outside [0, " +
                       std::to_string(rows) + ")");
    }
    std::copy_n(table.values().data() + static_cast<std::size_t>(idx[i]) * d, d, out.data() + i * d);
  }
  Shape out_shape = std::move(ids_shape);
  out_shape.push_back(d);
  return make_result(std::move(out_shape), std::move(out), {table},
                     [d, idx = std::move(idx)](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      double* row = g.data() + static_cast<std::size_t>(idx[i]) * d;
      const double* src = self.grad.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) row[j] += src[j];
    }
  });
}

/// Inverted dropout. Identity when not training or p == 0.
inline Tensor dropout(const Tensor& x, double p, CounterRng& rng, bool training) {
  if (!training || p <= 0.0) return x;
  if (p >= 1.0) throw ConfigError("dropout rate must be < 1");
  const double keep = 1.0 / (1.0 - p);
  std::vector<double> mask(x.numel());
  for (double& m : mask) m = rng.uniform01() >= p ? keep : 0.0;
  return mul(x, Tensor::from(x.shape(), std::move(mask)));
}

/// Picks columns along the last axis: x[..., N], idx[..., K] -> [..., K].
/// Columns not picked receive exactly zero gradient.
inline Tensor gather_last(const Tensor& x, std::span<const std::size_t> idx, std::size_t k) {
  if (x.rank() == 0) throw DimensionError("gather_last on a scalar");
  const std::size_t n = x.shape().back();
  const std::size_t rows = n == 0 ? 0 : x.numel() / n;
  if (idx.size() != rows * k) {
    throw DimensionError("gather_last: " + std::to_string(idx.size()) + " indices for " +
                         std::to_string(rows) + " rows of " + std::to_string(k));
  }
  std::vector<std::size_t> sel(idx.begin(), idx.end());
  std::vector<double> out(rows * k);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < k; ++j) {
      if (sel[r * k + j] >= n) throw IndexError("gather_last: column " + std::to_string(sel[r * k + j]) + " >= " + std::to_string(n));
      out[r * k + j] = x[r * n + sel[r * k + j]];
    }
  }
  Shape shape = x.shape();
  shape.back() = k;
  return make_result(std::move(shape), std::move(out), {x}, [n, k, rows, sel = std::move(sel)](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < k; ++j) g[r * n + sel[r * k + j]] += self.grad[r * k + j];
  });
}

/// Fused dot-product scoring against rows of an embedding table.
///
/// hidden is [R, d]; candidate ids come as `groups` rows of `k` ids each, and
/// row r of hidden is scored against group row_group[r]. Output is [R, k] with
/// out[r, j] = <hidden[r], table[ids[row_group[r] * k + j]]>. Groups shared by
/// many rows (batchwise/sessionwise candidates) go through one gemm each; the
/// backward pass switches to a sparse loop when most incoming gradients are
/// zero, which is what top-k filtering produces.
inline Tensor score_rows(const Tensor& hidden, const Tensor& table, std::span<const std::int32_t> ids,
                         std::size_t k, std::span<const std::size_t> row_group) {
  if (hidden.rank() != 2 || table.rank() != 2 || hidden.dim(1) != table.dim(1)) {
    throw DimensionError("score_rows: hidden " + shape_str(hidden.shape()) + " vs table " +
                         shape_str(table.shape()));
  }
  const std::size_t rows = hidden.dim(0), d = hidden.dim(1), vocab = table.dim(0);
  if (row_group.size() != rows) {
    throw DimensionError("score_rows: " + std::to_string(row_group.size()) + " group refs for " +
                         std::to_string(rows) + " rows");
  }
  const std::size_t groups = k == 0 ? 0 : ids.size() / k;
  if (k != 0 && groups * k != ids.size()) throw DimensionError("score_rows: id count not a multiple of k");
  for (std::int32_t id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw IndexError("score_rows: id " + std::to_string(id) + " outside [0, " + std::to_string(vocab) + ")");
    }
  }
  std::vector<std::vector<std::size_t>> members(groups);
  for (std::size_t r = 0; r < rows; ++r) {
    if (k == 0) continue;
    if (row_group[r] >= groups) throw IndexError("score_rows: group ref out of range");
    members[row_group[r]].push_back(r);
  }
  std::vector<std::int32_t> idv(ids.begin(), ids.end());
  std::vector<double> out(rows * k, 0.0);
  const double* H = hidden.values().data();
  const double* E = table.values().data();
  std::vector<double> eg, hg, sg;
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const auto& mem = members[gi];
    if (mem.empty()) continue;
    const std::int32_t* gid = idv.data() + gi * k;
    if (mem.size() == 1) {
      const double* h = H + mem[0] * d;
      for (std::size_t j = 0; j < k; ++j) {
        const double* e = E + static_cast<std::size_t>(gid[j]) * d;
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += h[c] * e[c];
        out[mem[0] * k + j] = s;
      }
      continue;
    }
    eg.resize(k * d);
    for (std::size_t j = 0; j < k; ++j) std::copy_n(E + static_cast<std::size_t>(gid[j]) * d, d, eg.data() + j * d);
    hg.resize(mem.size() * d);
    for (std::size_t i = 0; i < mem.size(); ++i) std::copy_n(H + mem[i] * d, d, hg.data() + i * d);
    sg.assign(mem.size() * k, 0.0);
    blas::gemm(false, true, mem.size(), k, d, 1.0, hg.data(), eg.data(), 0.0, sg.data());
    for (std::size_t i = 0; i < mem.size(); ++i) std::copy_n(sg.data() + i * k, k, out.data() + mem[i] * k);
  }
  return make_result({rows, k}, std::move(out), {hidden, table},
                     [d, k, groups, members = std::move(members), idv = std::move(idv)](detail::Node& self) {
    auto& hn = *self.parents[0];
    auto& tn = *self.parents[1];
    const double* G = self.grad.data();
    const double* H = hn.value.data();
    const double* E = tn.value.data();
    double* gH = hn.requires_grad ? hn.ensure_grad().data() : nullptr;
    double* gE = tn.requires_grad ? tn.ensure_grad().data() : nullptr;
    std::vector<double> eg, hg, gg, tmp;
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const auto& mem = members[gi];
      if (mem.empty()) continue;
      const std::int32_t* gid = idv.data() + gi * k;
      std::size_t nnz = 0;
      for (std::size_t r : mem)
        for (std::size_t j = 0; j < k; ++j) nnz += G[r * k + j] != 0.0;
      if (nnz == 0) continue;
      if (mem.size() == 1 || nnz * 4 < mem.size() * k) {
        for (std::size_t r : mem) {
          for (std::size_t j = 0; j < k; ++j) {
            const double g = G[r * k + j];
            if (g == 0.0) continue;
            const std::size_t row = static_cast<std::size_t>(gid[j]);
            if (gH) for (std::size_t c = 0; c < d; ++c) gH[r * d + c] += g * E[row * d + c];
            if (gE) for (std::size_t c = 0; c < d; ++c) gE[row * d + c] += g * H[r * d + c];
          }
        }
        continue;
      }
      gg.resize(mem.size() * k);
      for (std::size_t i = 0; i < mem.size(); ++i) std::copy_n(G + mem[i] * k, k, gg.data() + i * k);
      if (gH) {
        eg.resize(k * d);
        for (std::size_t j = 0; j < k; ++j) std::copy_n(E + static_cast<std::size_t>(gid[j]) * d, d, eg.data() + j * d);
        tmp.assign(mem.size() * d, 0.0);
        blas::gemm(false, false, mem.size(), d, k, 1.0, gg.data(), eg.data(), 0.0, tmp.data());
        for (std::size_t i = 0; i < mem.size(); ++i)
          for (std::size_t c = 0; c < d; ++c) gH[mem[i] * d + c] += tmp[i * d + c];
      }
      if (gE) {
        hg.resize(mem.size() * d);
        for (std::size_t i = 0; i < mem.size(); ++i) std::copy_n(H + mem[i] * d, d, hg.data() + i * d);
        tmp.assign(k * d, 0.0);
        blas::gemm(true, false, k, d, mem.size(), 1.0, gg.data(), hg.data(), 0.0, tmp.data());
        for (std::size_t j = 0; j < k; ++j) {
          double* dst = gE + static_cast<std::size_t>(gid[j]) * d;
          for (std::size_t c = 0; c < d; ++c) dst[c] += tmp[j * d + c];
        }
      }
    }
  });
}

}  // namespace tron
