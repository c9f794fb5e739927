// Copyright (c) 2026 tron-cpp contributors
// SPDX-License-Identifier: Apache-2.0

// Ranking losses over one positive score and K negative scores per row:
// pointwise BCE, pairwise BPR-MAX, listwise sampled softmax. Each is a fused
// autodiff op averaging over mask-valid rows.

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "tron/errors.hpp"
#include "tron/tensor.hpp"

namespace tron {

enum class LossKind { kBce, kBprMax, kSsm };

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "bce") return LossKind::kBce;
  if (s == "bpr-max") return LossKind::kBprMax;
  if (s == "ssm") return LossKind::kSsm;
  throw ConfigError("unknown loss '" + s + "' (expected bce, bpr-max or ssm)");
}

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::kBce: return "bce";
    case LossKind::kBprMax: return "bpr-max";
    case LossKind::kSsm: return "ssm";
  }
  return "?";
}

namespace loss_detail {

// log(1 + e^x) without overflow.
inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double log_sigmoid(double x) { return -softplus(-x); }

inline double log_sum_exp(std::span<const double> xs) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : xs) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - mx);
  return mx + std::log(s);
}

// Per-row value and gradients (d/dpos, d/dneg_j) of one loss.
struct RowResult {
  double value = 0.0;
  double dpos = 0.0;
};

inline RowResult bce_row(double pos, std::span<const double> neg, std::span<double> dneg) {
  RowResult r;
  r.value = softplus(-pos);
  r.dpos = sigmoid(pos) - 1.0;
  for (std::size_t j = 0; j < neg.size(); ++j) {
    r.value += softplus(neg[j]);
    dneg[j] = sigmoid(neg[j]);
  }
  return r;
}

inline RowResult bpr_max_row(double pos, std::span<const double> neg, double lambda,
                             std::span<double> dneg) {
  const std::size_t k = neg.size();
  const double lse_neg = log_sum_exp(neg);
  std::vector<double> s(k), sig(k), terms(k);
  for (std::size_t j = 0; j < k; ++j) {
    s[j] = std::exp(neg[j] - lse_neg);
    sig[j] = sigmoid(pos - neg[j]);
    terms[j] = (neg[j] - lse_neg) + log_sigmoid(pos - neg[j]);
  }
  const double log_w = log_sum_exp(terms);  // log sum_j s_j * sigma(pos - neg_j)
  double reg = 0.0;
  for (std::size_t j = 0; j < k; ++j) reg += s[j] * neg[j] * neg[j];

  RowResult r;
  r.value = -log_w + lambda * reg;
  for (std::size_t j = 0; j < k; ++j) {
    // s_j * sigma_j * (1 - sigma_j) / W, formed in log space
    const double share = std::exp(terms[j] - log_w);
    r.dpos -= share * (1.0 - sig[j]);
    // d(-log W)/dneg_j = s_j - s_j * sigma_j^2 / W
    dneg[j] = s[j] - share * sig[j];
    dneg[j] += lambda * s[j] * (neg[j] * neg[j] - reg + 2.0 * neg[j]);
  }
  return r;
}

inline RowResult ssm_row(double pos, std::span<const double> neg, std::span<double> dneg) {
  double mx = pos;
  for (double x : neg) mx = std::max(mx, x);
  double z = std::exp(pos - mx);
  for (double x : neg) z += std::exp(x - mx);
  const double lse = mx + std::log(z);
  RowResult r;
  r.value = lse - pos;
  r.dpos = std::exp(pos - lse) - 1.0;
  for (std::size_t j = 0; j < neg.size(); ++j) dneg[j] = std::exp(neg[j] - lse);
  return r;
}

}  // namespace loss_detail

/// Scalar mean loss. pos is [R], negs is [R, K] with K >= 1; mask (length R,
/// nonzero = valid) may be empty, meaning every row counts.
inline Tensor ranking_loss(LossKind kind, const Tensor& pos, const Tensor& negs,
                           std::span<const std::uint8_t> mask = {}, double bpr_lambda = 1.0) {
  if (pos.rank() != 1 || negs.rank() != 2 || negs.dim(0) != pos.dim(0)) {
    throw DimensionError("ranking_loss: pos " + shape_str(pos.shape()) + " vs negs " +
                         shape_str(negs.shape()));
  }
  const std::size_t rows = pos.dim(0), k = negs.dim(1);
  if (k == 0) throw DimensionError("ranking_loss needs at least one negative per row");
  if (!mask.empty() && mask.size() != rows) throw DimensionError("ranking_loss: mask length mismatch");

  std::size_t valid = 0;
  for (std::size_t r = 0; r < rows; ++r) valid += mask.empty() || mask[r];
  if (valid == 0) throw DataError("ranking_loss: no valid rows");
  const double inv = 1.0 / static_cast<double>(valid);

  std::vector<double> dpos(rows, 0.0), dneg(rows * k, 0.0);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask.empty() && !mask[r]) continue;
    auto nr = negs.values().subspan(r * k, k);
    std::span<double> dn(dneg.data() + r * k, k);
    loss_detail::RowResult rr;
    switch (kind) {
      case LossKind::kBce: rr = loss_detail::bce_row(pos[r], nr, dn); break;
      case LossKind::kBprMax: rr = loss_detail::bpr_max_row(pos[r], nr, bpr_lambda, dn); break;
      case LossKind::kSsm: rr = loss_detail::ssm_row(pos[r], nr, dn); break;
    }
    total += rr.value;
    dpos[r] = rr.dpos * inv;
    for (double& v : dn) v *= inv;
  }
  return make_result({}, {total * inv}, {pos, negs},
                     [dpos = std::move(dpos), dneg = std::move(dneg)](detail::Node& self) {
    const double g = self.grad[0];
    auto& pn = *self.parents[0];
    auto& nn = *self.parents[1];
    if (pn.requires_grad) {
      auto& gp = pn.ensure_grad();
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g * dpos[i];
    }
    if (nn.requires_grad) {
      auto& gn = nn.ensure_grad();
      for (std::size_t i = 0; i < gn.size(); ++i) gn[i] += g * dneg[i];
    }
  });
}

inline Tensor bce(const Tensor& pos, const Tensor& negs, std::span<const std::uint8_t> mask = {}) {
  return ranking_loss(LossKind::kBce, pos, negs, mask);
}

inline Tensor bpr_max(const Tensor& pos, const Tensor& negs, double lambda,
                      std::span<const std::uint8_t> mask = {}) {
  return ranking_loss(LossKind::kBprMax, pos, negs, mask, lambda);
}

inline Tensor ssm(const Tensor& pos, const Tensor& negs, std::span<const std::uint8_t> mask = {}) {
  return ranking_loss(LossKind::kSsm, pos, negs, mask);
}

}  // namespace tron
