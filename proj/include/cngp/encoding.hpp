#pragma once

// Label-conditioned multi-resolution hash encoding, the sinusoidal label
// encoding, the degree-4 spherical-harmonics direction encoding, and the
// assembly of MLP inputs for each conditioning mode.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "cngp/common.hpp"

namespace cngp {

struct HashGridConfig {
  int levels = 8;
  int log2_table_size = 14;
  int features = 2;
  int n_min = 16;
  int n_max = 256;
  std::array<std::uint32_t, 4> primes{1u, 2654435761u, 805459861u, 3674653429u};

  std::uint32_t table_size() const { return 1u << log2_table_size; }
  int output_dim() const { return levels * features; }

  // N_l = floor(N_min * b^l), b = exp((ln N_max - ln N_min) / (L - 1)).
  // The 1e-9 guard keeps exact integers (e.g. the last level, N_max) from
  // rounding down to N - 1.
  int resolution(int level) const {
    if (levels == 1) return n_min;
    const double b = std::exp((std::log(double(n_max)) - std::log(double(n_min))) / (levels - 1));
    return static_cast<int>(std::floor(n_min * std::pow(b, level) + 1e-9));
  }

  std::vector<int> resolutions() const {
    std::vector<int> r(levels);
    for (int l = 0; l < levels; ++l) r[l] = resolution(l);
    return r;
  }

  friend bool operator==(const HashGridConfig&, const HashGridConfig&) = default;
};

inline void validate(const HashGridConfig& cfg) {
  if (cfg.levels < 1) throw ValidationError("hash grid: levels must be >= 1");
  if (cfg.log2_table_size < 1 || cfg.log2_table_size > 30) throw ValidationError("hash grid: table size out of range");
  if (cfg.features < 1) throw ValidationError("hash grid: features must be >= 1");
  if (cfg.n_min < 1 || cfg.n_min > cfg.n_max) throw ValidationError("hash grid: require 1 <= n_min <= n_max");
}

// The four ways of feeding the scene label to the network.
enum class ConditioningMode {
  CoordLabel,           // label hashed with the coordinates only
  CoordPsi,             // no label in the hash; psi appended to the density input
  CoordLabelPsi,        // label hashed and psi appended to the density input
  CoordLabelPsiDirPsi,  // as above, plus psi appended to the color input
};

inline const char* to_string(ConditioningMode m) {
  switch (m) {
    case ConditioningMode::CoordLabel: return "coord_label";
    case ConditioningMode::CoordPsi: return "coord_psi";
    case ConditioningMode::CoordLabelPsi: return "coord_label_psi";
    case ConditioningMode::CoordLabelPsiDirPsi: return "coord_label_psi_dirpsi";
  }
  return "?";
}

inline ConditioningMode conditioning_mode_from_string(const std::string& s) {
  for (auto m : {ConditioningMode::CoordLabel, ConditioningMode::CoordPsi, ConditioningMode::CoordLabelPsi,
                 ConditioningMode::CoordLabelPsiDirPsi}) {
    if (s == to_string(m)) return m;
  }
  throw ValidationError("unknown conditioning mode '" + s + "'");
}

inline bool hashes_label(ConditioningMode m) { return m != ConditioningMode::CoordPsi; }
inline bool psi_in_density(ConditioningMode m) { return m != ConditioningMode::CoordLabel; }
inline bool psi_in_color(ConditioningMode m) { return m == ConditioningMode::CoordLabelPsiDirPsi; }

inline constexpr int kShDim = 16;

struct EncodingLayout {
  int nhe = 0;
  int psi = 0;

  int density_input(ConditioningMode m) const { return nhe + (psi_in_density(m) ? psi : 0); }
  int color_suffix(ConditioningMode m) const { return kShDim + (psi_in_color(m) ? psi : 0); }
};

// (v1*p1 ^ v2*p2 ^ v3*p3 ^ C*p4) mod T. Products wrap at 32 bits, which leaves
// the low log2(T) bits identical to the exact-integer result.
inline std::uint32_t hash_index(std::array<std::uint32_t, 3> vertex, std::uint32_t label, const HashGridConfig& cfg,
                                bool with_label = true) {
  std::uint32_t h = vertex[0] * cfg.primes[0];
  h ^= vertex[1] * cfg.primes[1];
  h ^= vertex[2] * cfg.primes[2];
  if (with_label) h ^= label * cfg.primes[3];
  return h & (cfg.table_size() - 1u);
}

// Flat table storage: level-major, then row, then feature.
template <typename Real>
struct HashTables {
  HashGridConfig cfg;
  std::vector<int> level_resolution;
  std::vector<Real> values;

  HashTables() = default;
  explicit HashTables(const HashGridConfig& c)
      : cfg(c),
        level_resolution(c.resolutions()),
        values(static_cast<std::size_t>(c.levels) * c.table_size() * c.features, Real(0)) {}

  std::size_t row_offset(int level, std::uint32_t row) const {
    return (static_cast<std::size_t>(level) * cfg.table_size() + row) * cfg.features;
  }
  std::size_t rows() const { return static_cast<std::size_t>(cfg.levels) * cfg.table_size(); }
};

// One level's cell lookup: 8 table rows and their trilinear weights.
template <typename Real>
struct CellCorners {
  std::array<std::uint32_t, 8> rows;
  std::array<Real, 8> weights;
};

// Corner c has offset bits (c & 1, c >> 1 & 1, c >> 2 & 1) along (x, y, z).
template <typename Real>
CellCorners<Real> locate_cell(const Vec3T<Real>& x, int label, int res, const HashGridConfig& cfg, bool with_label) {
  std::array<std::uint32_t, 3> base{};
  std::array<Real, 3> frac{};
  for (int k = 0; k < 3; ++k) {
    const Real xc = std::clamp(x[k], Real(0), Real(1));
    const Real pos = xc * Real(res);
    int cell = static_cast<int>(std::floor(pos));
    cell = std::clamp(cell, 0, res - 1);
    base[k] = static_cast<std::uint32_t>(cell);
    frac[k] = pos - Real(cell);
  }
  CellCorners<Real> out;
  for (int c = 0; c < 8; ++c) {
    std::array<std::uint32_t, 3> v = base;
    Real w = Real(1);
    for (int k = 0; k < 3; ++k) {
      const bool hi = (c >> k) & 1;
      v[k] += hi ? 1u : 0u;
      w *= hi ? frac[k] : Real(1) - frac[k];
    }
    out.rows[c] = hash_index(v, static_cast<std::uint32_t>(label), cfg, with_label);
    out.weights[c] = w;
  }
  return out;
}

// Writes L*F interpolated features into `out`, coarse level first.
template <typename Real>
void hash_encode(const Vec3T<Real>& x, int label, const HashTables<Real>& tables, std::span<Real> out,
                 bool with_label = true) {
  const HashGridConfig& cfg = tables.cfg;
  const int F = cfg.features;
  for (int l = 0; l < cfg.levels; ++l) {
    const CellCorners<Real> cell = locate_cell(x, label, tables.level_resolution[l], cfg, with_label);
    Real* dst = out.data() + l * F;
    for (int f = 0; f < F; ++f) dst[f] = Real(0);
    for (int c = 0; c < 8; ++c) {
      const Real* row = &tables.values[tables.row_offset(l, cell.rows[c])];
      const Real w = cell.weights[c];
      for (int f = 0; f < F; ++f) dst[f] += w * row[f];
    }
  }
}

template <typename Real>
std::vector<Real> hash_encode(const Vec3T<Real>& x, int label, const HashTables<Real>& tables, bool with_label = true) {
  std::vector<Real> out(tables.cfg.output_dim());
  hash_encode(x, label, tables, std::span<Real>(out), with_label);
  return out;
}

// Accumulates d(loss)/d(table) into `grad` (same layout as the tables):
// each touched row receives weight * upstream slice, collisions add up.
template <typename Real>
void hash_encode_backward(const Vec3T<Real>& x, int label, const HashTables<Real>& tables,
                          std::span<const Real> upstream, std::vector<Real>& grad, bool with_label = true) {
  const HashGridConfig& cfg = tables.cfg;
  const int F = cfg.features;
  for (int l = 0; l < cfg.levels; ++l) {
    const Real* up = upstream.data() + l * F;
    bool any = false;
    for (int f = 0; f < F; ++f) any |= up[f] != Real(0);
    if (!any) continue;
    const CellCorners<Real> cell = locate_cell(x, label, tables.level_resolution[l], cfg, with_label);
    for (int c = 0; c < 8; ++c) {
      Real* g = &grad[(static_cast<std::size_t>(l) * cfg.table_size() + cell.rows[c]) * F];
      const Real w = cell.weights[c];
      for (int f = 0; f < F; ++f) g[f] += w * up[f];
    }
  }
}

// psi = [sin(2^0 pi C'), cos(2^0 pi C'), ..., sin(2^(a-1) pi C'), cos(...)]
// with C' = C / max(1, registered_labels).
template <typename Real>
void label_pe(int label, int alpha, int registered_labels, std::span<Real> out) {
  const double scaled = static_cast<double>(label) / std::max(1, registered_labels);
  for (int k = 0; k < alpha; ++k) {
    const double arg = std::ldexp(std::numbers::pi, k) * scaled;
    out[2 * k] = static_cast<Real>(std::sin(arg));
    out[2 * k + 1] = static_cast<Real>(std::cos(arg));
  }
}

template <typename Real = double>
std::vector<Real> label_pe(int label, int alpha, int registered_labels) {
  std::vector<Real> out(2 * alpha);
  label_pe<Real>(label, alpha, registered_labels, std::span<Real>(out));
  return out;
}

// Real spherical harmonics for l = 0..3 (Condon-Shortley phase), component
// index l*l + l + m, i.e. (0,0), (1,-1), (1,0), (1,1), (2,-2), ..., (3,3).
template <typename Real>
void sh_encode(const Vec3T<Real>& d, std::span<Real> out) {
  const Real x = d.x, y = d.y, z = d.z;
  const Real xx = x * x, yy = y * y, zz = z * z;
  out[0] = Real(0.28209479177387814);
  out[1] = Real(-0.48860251190291987) * y;
  out[2] = Real(0.48860251190291987) * z;
  out[3] = Real(-0.48860251190291987) * x;
  out[4] = Real(1.0925484305920792) * x * y;
  out[5] = Real(-1.0925484305920792) * y * z;
  out[6] = Real(0.94617469575755997) * zz - Real(0.31539156525251999);
  out[7] = Real(-1.0925484305920792) * x * z;
  out[8] = Real(0.54627421529603959) * (xx - yy);
  out[9] = Real(0.59004358992664352) * y * (Real(-3) * xx + yy);
  out[10] = Real(2.8906114426405538) * x * y * z;
  out[11] = Real(0.45704579946446572) * y * (Real(1) - Real(5) * zz);
  out[12] = Real(0.3731763325901154) * z * (Real(5) * zz - Real(3));
  out[13] = Real(0.45704579946446572) * x * (Real(1) - Real(5) * zz);
  out[14] = Real(1.4453057213202769) * z * (xx - yy);
  out[15] = Real(0.59004358992664352) * x * (-xx + Real(3) * yy);
}

template <typename Real>
std::vector<Real> sh_encode(const Vec3T<Real>& d) {
  if (std::abs(norm(d) - Real(1)) > Real(1e-4)) throw ValidationError("sh_encode: direction is not unit length");
  std::vector<Real> out(kShDim);
  sh_encode(d, std::span<Real>(out));
  return out;
}

template <typename Real>
struct EncodedPoint {
  std::vector<Real> nhe;
  std::vector<Real> psi;
  std::vector<Real> she;
};

template <typename Real>
struct AssembledInputs {
  std::vector<Real> density_input;
  std::vector<Real> color_suffix;
};

template <typename Real>
AssembledInputs<Real> assemble_inputs(const EncodedPoint<Real>& enc, ConditioningMode mode) {
  if (enc.she.size() != static_cast<std::size_t>(kShDim)) throw ValidationError("assemble_inputs: SH block must have 16 entries");
  if ((psi_in_density(mode) || psi_in_color(mode)) && enc.psi.empty()) {
    throw ValidationError(std::string("assemble_inputs: mode ") + to_string(mode) + " needs a label encoding");
  }
  if (enc.nhe.empty()) throw ValidationError("assemble_inputs: hash features missing");
  AssembledInputs<Real> out;
  out.density_input = enc.nhe;
  if (psi_in_density(mode)) out.density_input.insert(out.density_input.end(), enc.psi.begin(), enc.psi.end());
  out.color_suffix = enc.she;
  if (psi_in_color(mode)) out.color_suffix.insert(out.color_suffix.end(), enc.psi.begin(), enc.psi.end());
  return out;
}

}  // namespace cngp
