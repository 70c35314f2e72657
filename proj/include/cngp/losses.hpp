#pragma once

// Training objective: photometric MSE plus the distortion and ray-entropy
// regularizers, combined as mse + lambda_ent * ent + lambda_dist * dist.
// All terms are batch means over rays.

#include <cmath>
#include <span>
#include <vector>

#include "cngp/common.hpp"
#include "cngp/renderer.hpp"

namespace cngp {

struct LossWeights {
  double lambda_ent = 1e-3;
  double lambda_dist = 1e-2;
  // Normalize opacities over the ray before taking the entropy (otherwise raw alphas).
  bool entropy_normalized = true;
  // Scale the distortion term by 1 / depth.
  bool distortion_prefactor = true;
};

inline constexpr double kEntropyMask = 1e-3;

struct LossBreakdown {
  double mse = 0.0;
  double dist = 0.0;
  double ent = 0.0;
  double total = 0.0;
  std::size_t rays = 0;

  LossBreakdown& operator+=(const LossBreakdown& o) {
    mse += o.mse;
    dist += o.dist;
    ent += o.ent;
    total += o.total;
    rays += o.rays;
    return *this;
  }
};

template <typename Real>
struct MseResult {
  Real value = 0;
  std::vector<Rgb<Real>> d_pred;
};

// Mean over rays of ||pred - gt||^2.
template <typename Real>
MseResult<Real> mse_loss(std::span<const Rgb<Real>> pred, std::span<const Rgb<Real>> gt) {
  if (pred.size() != gt.size()) throw ValidationError("mse_loss: shape mismatch");
  MseResult<Real> r;
  r.d_pred.resize(pred.size());
  if (pred.empty()) return r;
  const Real inv_n = Real(1) / static_cast<Real>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (int k = 0; k < 3; ++k) {
      const Real e = pred[i][k] - gt[i][k];
      r.value += e * e;
      r.d_pred[i][k] = Real(2) * e * inv_n;
    }
  }
  r.value *= inv_n;
  return r;
}

template <typename Real>
struct DistortionResult {
  Real value = 0;
  std::vector<Real> d_weights;  // holding depth fixed
  Real d_depth = 0;
};

// Distortion for one ray:
//   (1/d) * (sum_{i<j} w_i w_j |m_i - m_j| + 1/3 sum_i w_i^2 delta_i)
// with m_i the interval midpoints. O(N) via prefix sums (midpoints ascend).
template <typename Real>
DistortionResult<Real> distortion_loss(std::span<const Real> w, std::span<const Real> boundaries, Real depth,
                                       bool prefactor = true) {
  const std::size_t n = w.size();
  if (boundaries.size() != n + 1) throw ValidationError("distortion_loss: need N+1 boundaries for N weights");
  DistortionResult<Real> r;
  r.d_weights.assign(n, Real(0));
  Real wsum = Real(0);
  for (Real v : w) wsum += v;
  if (wsum <= Real(0) || (prefactor && depth <= Real(kDepthEpsilon))) return r;

  // prefix: W_{<k}, M_{<k}; suffix: W_{>k}, M_{>k}
  Real total_w = Real(0), total_wm = Real(0);
  for (std::size_t i = 0; i < n; ++i) {
    const Real m = Real(0.5) * (boundaries[i] + boundaries[i + 1]);
    total_w += w[i];
    total_wm += w[i] * m;
  }
  Real pair = Real(0), unary = Real(0);
  Real pre_w = Real(0), pre_wm = Real(0);
  for (std::size_t k = 0; k < n; ++k) {
    const Real m = Real(0.5) * (boundaries[k] + boundaries[k + 1]);
    const Real delta = boundaries[k + 1] - boundaries[k];
    const Real post_w = total_w - pre_w - w[k];
    const Real post_wm = total_wm - pre_wm - w[k] * m;
    pair += w[k] * (m * pre_w - pre_wm);
    unary += w[k] * w[k] * delta;
    r.d_weights[k] = (m * pre_w - pre_wm) + (post_wm - m * post_w) + Real(2.0 / 3.0) * w[k] * delta;
    pre_w += w[k];
    pre_wm += w[k] * m;
  }
  const Real raw = pair + unary / Real(3);
  if (!prefactor) {
    r.value = raw;
    return r;
  }
  const Real inv_d = Real(1) / depth;
  r.value = raw * inv_d;
  for (Real& g : r.d_weights) g *= inv_d;
  r.d_depth = -raw * inv_d * inv_d;
  return r;
}

template <typename Real>
struct EntropyResult {
  Real value = 0;
  std::vector<Real> d_alphas;
  bool masked = false;
};

// -sum p_i log p_i for one ray, p_i = alpha_i / sum alpha (or raw alpha).
// Rays with total opacity below kEntropyMask contribute nothing.
template <typename Real>
EntropyResult<Real> entropy_ray(std::span<const Real> alphas, bool normalized = true) {
  EntropyResult<Real> r;
  r.d_alphas.assign(alphas.size(), Real(0));
  Real s = Real(0);
  for (Real a : alphas) s += a;
  if (s < Real(kEntropyMask)) {
    r.masked = true;
    return r;
  }
  if (!normalized) {
    for (std::size_t i = 0; i < alphas.size(); ++i) {
      const Real a = alphas[i];
      if (a <= Real(0)) continue;
      r.value -= a * std::log(a);
      r.d_alphas[i] = -(std::log(a) + Real(1));
    }
    return r;
  }
  const Real inv_s = Real(1) / std::max(s, Real(kDepthEpsilon));
  for (Real a : alphas) {
    const Real p = a * inv_s;
    if (p > Real(0)) r.value -= p * std::log(p);
  }
  // dH/dalpha_k = (-log p_k - H) / s
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    const Real p = alphas[i] * inv_s;
    if (p > Real(0)) r.d_alphas[i] = (-std::log(p) - r.value) * inv_s;
  }
  return r;
}

// Batch mean of entropy_ray; masked rays count in the denominator as zeros.
template <typename Real>
Real entropy_loss(const std::vector<std::vector<Real>>& alphas_per_ray, bool normalized = true) {
  if (alphas_per_ray.empty()) return Real(0);
  Real acc = Real(0);
  for (const auto& a : alphas_per_ray) acc += entropy_ray<Real>(a, normalized).value;
  return acc / static_cast<Real>(alphas_per_ray.size());
}

// Loss terms and upstream compositing gradients contributed by one ray of a
// batch of `batch_size` rays.
template <typename Real>
struct RayLoss {
  LossBreakdown terms;
  Rgb<Real> d_color{};
  std::vector<Real> d_weights;
  Real d_depth = 0;
  std::vector<Real> d_alphas;

  CompositeUpstream<Real> upstream() const {
    return {d_color, std::span<const Real>(d_weights), d_depth, std::span<const Real>(d_alphas)};
  }
};

template <typename Real>
void ray_loss(const CompositeResult<Real>& r, const SampleSet<Real>& s, const Rgb<Real>& gt, const LossWeights& lw,
              std::size_t batch_size, RayLoss<Real>& out) {
  const Real inv_b = Real(1) / static_cast<Real>(batch_size);
  const int n = s.size();
  out.terms = {};
  out.terms.rays = 1;
  Real se = Real(0);
  for (int k = 0; k < 3; ++k) {
    const Real e = r.color[k] - gt[k];
    se += e * e;
    out.d_color[k] = Real(2) * e * inv_b;
  }
  out.terms.mse = static_cast<double>(se * inv_b);

  out.d_weights.assign(n, Real(0));
  out.d_alphas.assign(n, Real(0));
  out.d_depth = Real(0);
  if (lw.lambda_dist != 0.0) {
    const auto dist = distortion_loss<Real>(std::span<const Real>(r.weights), std::span<const Real>(s.boundaries),
                                            r.depth, lw.distortion_prefactor);
    const Real scale = static_cast<Real>(lw.lambda_dist) * inv_b;
    out.terms.dist = static_cast<double>(dist.value * inv_b);
    for (int i = 0; i < n; ++i) out.d_weights[i] = scale * dist.d_weights[i];
    out.d_depth = scale * dist.d_depth;
  }
  if (lw.lambda_ent != 0.0) {
    const auto ent = entropy_ray<Real>(std::span<const Real>(r.alphas), lw.entropy_normalized);
    const Real scale = static_cast<Real>(lw.lambda_ent) * inv_b;
    out.terms.ent = static_cast<double>(ent.value * inv_b);
    for (int i = 0; i < n; ++i) out.d_alphas[i] = scale * ent.d_alphas[i];
  }
  out.terms.total = out.terms.mse + lw.lambda_ent * out.terms.ent + lw.lambda_dist * out.terms.dist;
}

template <typename Real>
struct BatchLoss {
  LossBreakdown breakdown;
  std::vector<RayLoss<Real>> per_ray;
};

// Combined objective over a batch of composited rays.
template <typename Real>
BatchLoss<Real> total_loss(std::span<const CompositeResult<Real>> results, std::span<const SampleSet<Real>> samples,
                           std::span<const Rgb<Real>> gt, const LossWeights& lw) {
  if (results.size() != samples.size() || results.size() != gt.size()) {
    throw ValidationError("total_loss: inconsistent batch");
  }
  BatchLoss<Real> out;
  out.per_ray.resize(results.size());
  for (std::size_t i = 0; i < results.size(); ++i) {
    ray_loss(results[i], samples[i], gt[i], lw, results.size(), out.per_ray[i]);
    out.breakdown += out.per_ray[i].terms;
  }
  // Recombine from the summed components so total is exact for the batch.
  out.breakdown.total = out.breakdown.mse + lw.lambda_ent * out.breakdown.ent + lw.lambda_dist * out.breakdown.dist;
  return out;
}

}  // namespace cngp
