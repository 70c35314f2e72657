#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "cngp/field_net.hpp"

namespace cngp::test {

// Small double-precision model for gradient checks.
inline HashGridConfig tiny_grid(int levels = 2, int log2_t = 8, int features = 2, int n_min = 4, int n_max = 8) {
  HashGridConfig g;
  g.levels = levels;
  g.log2_table_size = log2_t;
  g.features = features;
  g.n_min = n_min;
  g.n_max = n_max;
  return g;
}

// Parameters with every tensor drawn uniformly from [-scale, scale] so the
// ReLUs are mixed and the tables are far from zero.
inline ModelParams<double> random_params(const HashGridConfig& g, ConditioningMode mode, NetDims dims,
                                         std::uint64_t seed, double table_scale = 0.5, double mlp_scale = 0.6) {
  ModelParams<double> p = init_params<double>(g, mode, dims, seed);
  Rng rng(seed + 17);
  for (double& v : p.tensors.tables.values) v = (2 * uniform01(rng) - 1) * table_scale;
  p.tensors.for_each([&](const std::string& name, std::span<double> v, const std::vector<std::size_t>&) {
    if (name == "hash.tables") return;
    for (double& x : v) x = (2 * uniform01(rng) - 1) * mlp_scale;
  });
  return p;
}

inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Central difference of f at v[i] with step h.
inline double central_diff(double& v, double h, const std::function<double()>& f) {
  const double keep = v;
  v = keep + h;
  const double fp = f();
  v = keep - h;
  const double fm = f();
  v = keep;
  return (fp - fm) / (2 * h);
}

inline Vec3T<double> random_unit(Rng& rng) {
  while (true) {
    Vec3T<double> d{2 * uniform01(rng) - 1, 2 * uniform01(rng) - 1, 2 * uniform01(rng) - 1};
    const double n = norm(d);
    if (n > 0.1 && n <= 1.0) return d * (1.0 / n);
  }
}

}  // namespace cngp::test
