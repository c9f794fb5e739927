// Copyright (c) 2026 tron-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tron/errors.hpp"
#include "tron/tensor.hpp"

namespace tron {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double clip_norm = 0.0;  // global gradient-norm cap; 0 disables
};

/// Adam with bias correction. Moment buffers are indexed like the parameter
/// list handed to step(), which must not change between calls.
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamOptions opts) : opts_(opts) {}

  const AdamOptions& options() const { return opts_; }
  std::uint64_t steps() const { return t_; }

  /// Global L2 norm of the gradients (parameters without a grad count as 0).
  static double grad_norm(const std::vector<Tensor>& params) {
    double s = 0.0;
    for (const auto& p : params) {
      for (double g : p.grad()) s += g * g;
    }
    return std::sqrt(s);
  }

  /// Rescales gradients in place so their global norm is at most max_norm.
  /// Returns the norm before clipping.
  static double clip_gradients(std::vector<Tensor>& params, double max_norm) {
    const double norm = grad_norm(params);
    if (max_norm > 0.0 && norm > max_norm) {
      const double f = max_norm / norm;
      for (auto& p : params) {
        if (!p.has_grad()) continue;
        for (double& g : p.mutable_grad()) g *= f;
      }
    }
    return norm;
  }

  void step(std::vector<Tensor>& params) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
      }
    }
    if (m_.size() != params.size()) throw ConfigError("optimizer parameter list changed size");
    for (const auto& p : params) {
      for (double g : p.grad()) {
        if (!std::isfinite(g)) throw NumericError("non-finite gradient; aborting step");
      }
    }
    if (opts_.clip_norm > 0.0) clip_gradients(params, opts_.clip_norm);
    ++t_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      auto w = p.mutable_values();
      const auto g = p.grad();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double gj = g.empty() ? 0.0 : g[j];
        m[j] = opts_.beta1 * m[j] + (1.0 - opts_.beta1) * gj;
        v[j] = opts_.beta2 * v[j] + (1.0 - opts_.beta2) * gj * gj;
        w[j] -= opts_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + opts_.eps);
      }
    }
  }

  // Checkpoint access.
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void restore(std::uint64_t t, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v) {
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  AdamOptions opts_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace tron
