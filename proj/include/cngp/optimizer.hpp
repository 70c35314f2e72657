#pragma once

// Adaptive-moment optimizer with sparse hash-table updates.

#include <cmath>
#include <span>
#include <string>

#include "cngp/field_net.hpp"

namespace cngp {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.99;
  double epsilon = 1e-15;
};

template <typename Real>
struct OptimizerState {
  ModelTensors<Real> m;
  ModelTensors<Real> v;
  std::uint64_t step = 0;

  OptimizerState() = default;
  explicit OptimizerState(const ModelParams<Real>& p)
      : m(p.cfg, p.mode, p.dims), v(p.cfg, p.mode, p.dims) {}
};

namespace detail {

template <typename Real>
void check_grads_finite(const ParamGrads<Real>& g) {
  g.for_each([](const std::string& name, std::span<const Real> v, const std::vector<std::size_t>&) {
    for (Real x : v) {
      if (!std::isfinite(x)) throw NumericalError("non-finite gradient in tensor " + name);
    }
  });
}

}  // namespace detail

// One bias-corrected update. Hash-table rows whose gradient is entirely zero
// this step are skipped (parameters and moments untouched). When
// `trainable` is ColorOnly, only the color MLP is updated.
template <typename Real>
void adam_step(ModelParams<Real>& p, const ParamGrads<Real>& g, OptimizerState<Real>& st, double lr,
               const AdamConfig& ac = {}, Trainable trainable = Trainable::All) {
  detail::check_grads_finite(g);
  ++st.step;
  const double t = static_cast<double>(st.step);
  const Real b1 = static_cast<Real>(ac.beta1), b2 = static_cast<Real>(ac.beta2);
  const Real corr1 = static_cast<Real>(1.0 - std::pow(ac.beta1, t));
  const Real corr2 = static_cast<Real>(1.0 - std::pow(ac.beta2, t));
  const Real step_size = static_cast<Real>(lr) / corr1;
  const Real inv_sqrt_corr2 = Real(1) / std::sqrt(corr2);
  const Real eps = static_cast<Real>(ac.epsilon);

  auto update = [&](Real& param, Real grad, Real& m, Real& v) {
    m = b1 * m + (Real(1) - b1) * grad;
    v = b2 * v + (Real(1) - b2) * grad * grad;
    param -= step_size * m / (std::sqrt(v) * inv_sqrt_corr2 + eps);
  };
  auto dense = [&](Dense<Real>& prm, const Dense<Real>& grd, Dense<Real>& m, Dense<Real>& v) {
    for (std::size_t i = 0; i < prm.w.size(); ++i) update(prm.w[i], grd.w[i], m.w[i], v.w[i]);
    for (std::size_t i = 0; i < prm.b.size(); ++i) update(prm.b[i], grd.b[i], m.b[i], v.b[i]);
  };

  ModelTensors<Real>& t_ = p.tensors;
  if (trainable == Trainable::All) {
    const int F = p.cfg.features;
    auto& vals = t_.tables.values;
    const auto& gv = g.tables.values;
    auto& mv = st.m.tables.values;
    auto& vv = st.v.tables.values;
    for (std::size_t row = 0; row < t_.tables.rows(); ++row) {
      const std::size_t off = row * F;
      bool touched = false;
      for (int f = 0; f < F; ++f) touched |= gv[off + f] != Real(0);
      if (!touched) continue;
      for (int f = 0; f < F; ++f) update(vals[off + f], gv[off + f], mv[off + f], vv[off + f]);
    }
    dense(t_.density_hidden, g.density_hidden, st.m.density_hidden, st.v.density_hidden);
    dense(t_.density_out, g.density_out, st.m.density_out, st.v.density_out);
  }
  dense(t_.color_hidden0, g.color_hidden0, st.m.color_hidden0, st.v.color_hidden0);
  dense(t_.color_hidden1, g.color_hidden1, st.m.color_hidden1, st.v.color_hidden1);
  dense(t_.color_out, g.color_out, st.m.color_out, st.v.color_out);
}

}  // namespace cngp
