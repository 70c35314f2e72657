#pragma once

// The conditioned radiance field: hash encoding -> density MLP (one hidden
// layer, outputs sigma logit + scene feature) -> color MLP (two hidden
// layers) with explicit reverse-mode gradients.

#include <cmath>
#include <functional>
#include <span>
#include <type_traits>
#include <string>
#include <vector>

#include "cngp/common.hpp"
#include "cngp/encoding.hpp"

namespace cngp {

// Fully connected layer, weights row-major [out][in].
template <typename Real>
struct Dense {
  int in = 0;
  int out = 0;
  std::vector<Real> w;
  std::vector<Real> b;

  Dense() = default;
  Dense(int in_dim, int out_dim)
      : in(in_dim), out(out_dim), w(static_cast<std::size_t>(in_dim) * out_dim, Real(0)), b(out_dim, Real(0)) {}

  std::size_t parameter_count() const { return w.size() + b.size(); }

  void forward(const Real* x, Real* y) const {
    for (int o = 0; o < out; ++o) {
      const Real* row = &w[static_cast<std::size_t>(o) * in];
      Real acc = b[o];
      for (int i = 0; i < in; ++i) acc += row[i] * x[i];
      y[o] = acc;
    }
  }

  // grad.w += dy x^T, grad.b += dy, and dx = W^T dy when dx is non-null.
  void backward(const Real* x, const Real* dy, Dense& grad, Real* dx) const {
    for (int o = 0; o < out; ++o) {
      const Real g = dy[o];
      if (g == Real(0)) continue;
      grad.b[o] += g;
      Real* grow = &grad.w[static_cast<std::size_t>(o) * in];
      for (int i = 0; i < in; ++i) grow[i] += g * x[i];
    }
    if (!dx) return;
    for (int i = 0; i < in; ++i) dx[i] = Real(0);
    for (int o = 0; o < out; ++o) {
      const Real g = dy[o];
      if (g == Real(0)) continue;
      const Real* row = &w[static_cast<std::size_t>(o) * in];
      for (int i = 0; i < in; ++i) dx[i] += row[i] * g;
    }
  }
};

struct NetDims {
  int width = 32;
  int feature_dim = 7;  // G
  int pe_alpha = 2;     // label encoding frequencies; psi has 2*alpha entries

  friend bool operator==(const NetDims&, const NetDims&) = default;
};

// Every trainable tensor. Also used for gradients and optimizer moments.
template <typename Real>
struct ModelTensors {
  HashTables<Real> tables;
  Dense<Real> density_hidden;
  Dense<Real> density_out;
  Dense<Real> color_hidden0;
  Dense<Real> color_hidden1;
  Dense<Real> color_out;

  ModelTensors() = default;
  ModelTensors(const HashGridConfig& cfg, ConditioningMode mode, const NetDims& dims)
      : tables(cfg),
        density_hidden(layout(cfg, dims).density_input(mode), dims.width),
        density_out(dims.width, 1 + dims.feature_dim),
        color_hidden0(dims.feature_dim + layout(cfg, dims).color_suffix(mode), dims.width),
        color_hidden1(dims.width, dims.width),
        color_out(dims.width, 3) {}

  static EncodingLayout layout(const HashGridConfig& cfg, const NetDims& dims) {
    return {cfg.output_dim(), 2 * dims.pe_alpha};
  }

  // fn(name, values, shape) over every tensor in a fixed order.
  template <typename Fn>
  void for_each(Fn&& fn) {
    visit(*this, fn);
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    visit(*this, fn);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, auto values, const std::vector<std::size_t>&) { n += values.size(); });
    return n;
  }

  void set_zero() {
    for_each([](const std::string&, std::span<Real> v, const std::vector<std::size_t>&) {
      std::fill(v.begin(), v.end(), Real(0));
    });
  }

 private:
  template <typename Self, typename Fn>
  static void visit(Self& self, Fn& fn) {
    using Span = std::conditional_t<std::is_const_v<Self>, std::span<const Real>, std::span<Real>>;
    const HashGridConfig& c = self.tables.cfg;
    fn("hash.tables", Span(self.tables.values),
       std::vector<std::size_t>{std::size_t(c.levels), std::size_t(c.table_size()), std::size_t(c.features)});
    auto layer = [&](const std::string& name, auto& d) {
      fn(name + ".weight", Span(d.w), std::vector<std::size_t>{std::size_t(d.out), std::size_t(d.in)});
      fn(name + ".bias", Span(d.b), std::vector<std::size_t>{std::size_t(d.out)});
    };
    layer("density.hidden", self.density_hidden);
    layer("density.out", self.density_out);
    layer("color.hidden0", self.color_hidden0);
    layer("color.hidden1", self.color_hidden1);
    layer("color.out", self.color_out);
  }
};

template <typename Real>
struct ModelParams {
  HashGridConfig cfg;
  ConditioningMode mode = ConditioningMode::CoordLabelPsiDirPsi;
  NetDims dims;
  ModelTensors<Real> tensors;
  std::vector<int> label_registry;

  EncodingLayout layout() const { return ModelTensors<Real>::layout(cfg, dims); }
  int density_input_dim() const { return layout().density_input(mode); }
  int color_input_dim() const { return dims.feature_dim + layout().color_suffix(mode); }
  std::size_t parameter_count() const { return tensors.parameter_count(); }

  bool has_label(int label) const {
    return std::find(label_registry.begin(), label_registry.end(), label) != label_registry.end();
  }
  int registered() const { return static_cast<int>(label_registry.size()); }
};

template <typename Real>
using ParamGrads = ModelTensors<Real>;

// Shape signature: (name, shape) for every tensor, in order.
template <typename Real>
std::vector<std::pair<std::string, std::vector<std::size_t>>> shape_signature(const ModelParams<Real>& p) {
  std::vector<std::pair<std::string, std::vector<std::size_t>>> sig;
  p.tensors.for_each([&](const std::string& name, auto, const std::vector<std::size_t>& shape) {
    sig.emplace_back(name, shape);
  });
  return sig;
}

// Tables uniform in [-1e-4, 1e-4]; MLP weights He-uniform on fan-in; biases 0.
template <typename Real>
ModelParams<Real> init_params(const HashGridConfig& cfg, ConditioningMode mode, const NetDims& dims, std::uint64_t seed) {
  validate(cfg);
  if (dims.width < 1 || dims.feature_dim < 1 || dims.pe_alpha < 1) {
    throw ValidationError("init_params: width, feature dim and pe alpha must be >= 1");
  }
  ModelParams<Real> p;
  p.cfg = cfg;
  p.mode = mode;
  p.dims = dims;
  p.tensors = ModelTensors<Real>(cfg, mode, dims);
  Rng rng(seed);
  for (Real& v : p.tensors.tables.values) v = static_cast<Real>((2.0 * uniform01(rng) - 1.0) * 1e-4);
  auto he = [&](Dense<Real>& d) {
    const double bound = std::sqrt(6.0 / d.in);
    for (Real& v : d.w) v = static_cast<Real>((2.0 * uniform01(rng) - 1.0) * bound);
  };
  he(p.tensors.density_hidden);
  he(p.tensors.density_out);
  he(p.tensors.color_hidden0);
  he(p.tensors.color_hidden1);
  he(p.tensors.color_out);
  return p;
}

template <typename Real>
Real softplus(Real x) {
  return std::max(x, Real(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <typename Real>
Real sigmoid(Real x) {
  if (x >= Real(0)) return Real(1) / (Real(1) + std::exp(-x));
  const Real e = std::exp(x);
  return e / (Real(1) + e);
}

// Activation record for one point; buffers are reused across calls.
template <typename Real>
struct FieldTape {
  Vec3T<Real> x;
  int label = 0;
  std::vector<Real> density_in;   // nhe | psi (per mode)
  std::vector<Real> density_hid;  // post-ReLU
  std::vector<Real> density_out;  // [sigma logit, feature...]
  std::vector<Real> color_in;     // feature | she | psi (per mode)
  std::vector<Real> color_hid0;
  std::vector<Real> color_hid1;
  std::vector<Real> rgb;

  void resize(const ModelParams<Real>& p) {
    density_in.resize(p.density_input_dim());
    density_hid.resize(p.dims.width);
    density_out.resize(1 + p.dims.feature_dim);
    color_in.resize(p.color_input_dim());
    color_hid0.resize(p.dims.width);
    color_hid1.resize(p.dims.width);
    rgb.resize(3);
  }

  std::span<const Real> feature() const { return std::span<const Real>(density_out).subspan(1); }
};

// Per-ray constants: label encoding and direction encoding.
template <typename Real>
struct RayEncoding {
  std::vector<Real> psi;
  std::vector<Real> she;
};

template <typename Real>
RayEncoding<Real> encode_ray(const ModelParams<Real>& p, const Vec3T<Real>& direction, int label) {
  RayEncoding<Real> e;
  e.psi.resize(2 * p.dims.pe_alpha);
  label_pe<Real>(label, p.dims.pe_alpha, p.registered(), std::span<Real>(e.psi));
  e.she.resize(kShDim);
  sh_encode(direction, std::span<Real>(e.she));
  return e;
}

template <typename Real>
struct FieldOutput {
  Real sigma;
  std::array<Real, 3> rgb;
};

namespace detail {

template <typename Real>
void check_finite(std::span<const Real> v, const char* layer) {
  Real s = Real(0);
  for (Real x : v) s += x;
  if (!std::isfinite(s)) throw NumericalError(std::string("non-finite activation in layer ") + layer);
}

template <typename Real>
void relu_inplace(std::vector<Real>& v) {
  for (Real& x : v) x = x > Real(0) ? x : Real(0);
}

}  // namespace detail

template <typename Real>
FieldOutput<Real> forward_field(const ModelParams<Real>& p, const Vec3T<Real>& x, int label, const RayEncoding<Real>& enc,
                                FieldTape<Real>& tape) {
  tape.resize(p);
  tape.x = x;
  tape.label = label;
  const int nhe = p.cfg.output_dim();
  hash_encode(x, label, p.tensors.tables, std::span<Real>(tape.density_in.data(), nhe), hashes_label(p.mode));
  if (psi_in_density(p.mode)) std::copy(enc.psi.begin(), enc.psi.end(), tape.density_in.begin() + nhe);

  p.tensors.density_hidden.forward(tape.density_in.data(), tape.density_hid.data());
  detail::check_finite<Real>(tape.density_hid, "density.hidden");
  detail::relu_inplace(tape.density_hid);
  p.tensors.density_out.forward(tape.density_hid.data(), tape.density_out.data());
  detail::check_finite<Real>(tape.density_out, "density.out");

  const int G = p.dims.feature_dim;
  std::copy(tape.density_out.begin() + 1, tape.density_out.end(), tape.color_in.begin());
  std::copy(enc.she.begin(), enc.she.end(), tape.color_in.begin() + G);
  if (psi_in_color(p.mode)) std::copy(enc.psi.begin(), enc.psi.end(), tape.color_in.begin() + G + kShDim);

  p.tensors.color_hidden0.forward(tape.color_in.data(), tape.color_hid0.data());
  detail::check_finite<Real>(tape.color_hid0, "color.hidden0");
  detail::relu_inplace(tape.color_hid0);
  p.tensors.color_hidden1.forward(tape.color_hid0.data(), tape.color_hid1.data());
  detail::check_finite<Real>(tape.color_hid1, "color.hidden1");
  detail::relu_inplace(tape.color_hid1);
  p.tensors.color_out.forward(tape.color_hid1.data(), tape.rgb.data());
  detail::check_finite<Real>(tape.rgb, "color.out");

  FieldOutput<Real> out;
  out.sigma = softplus(tape.density_out[0]);
  for (int k = 0; k < 3; ++k) {
    tape.rgb[k] = sigmoid(tape.rgb[k]);
    out.rgb[k] = tape.rgb[k];
  }
  return out;
}

// Convenience overload that encodes label and direction itself.
template <typename Real>
FieldOutput<Real> forward_field(const ModelParams<Real>& p, const Vec3T<Real>& x, const Vec3T<Real>& direction,
                                int label, FieldTape<Real>& tape) {
  return forward_field(p, x, label, encode_ray(p, direction, label), tape);
}

// Which tensors receive gradients.
enum class Trainable { All, ColorOnly };

// Gradients with respect to the encoder outputs.
template <typename Real>
struct FieldInputGrads {
  std::vector<Real> d_nhe;
  std::vector<Real> d_psi_density;
  std::vector<Real> d_color_suffix;
};

// Scratch buffers for backward_field.
template <typename Real>
struct FieldBackwardScratch {
  std::vector<Real> d_color_hid1, d_color_hid0, d_color_in, d_density_out, d_density_hid, d_density_in;
};

// Reverse pass for one point. Accumulates MLP gradients into `grads` and,
// unless `trainable` is ColorOnly, the hash-table gradients too. Returns the
// gradient with respect to the density input (nhe | psi) and the color suffix
// in `scratch`.
template <typename Real>
void backward_field(const ModelParams<Real>& p, const FieldTape<Real>& tape, Real d_sigma,
                    const std::array<Real, 3>& d_rgb, ParamGrads<Real>& grads, FieldBackwardScratch<Real>& s,
                    Trainable trainable = Trainable::All) {
  const ModelTensors<Real>& t = p.tensors;
  const int W = p.dims.width;
  const int G = p.dims.feature_dim;
  s.d_color_hid1.assign(W, Real(0));
  s.d_color_hid0.assign(W, Real(0));
  s.d_color_in.assign(p.color_input_dim(), Real(0));
  s.d_density_out.assign(1 + G, Real(0));
  s.d_density_hid.assign(W, Real(0));
  s.d_density_in.assign(p.density_input_dim(), Real(0));

  std::array<Real, 3> d_logit;
  bool color_active = false;
  for (int k = 0; k < 3; ++k) {
    const Real y = tape.rgb[k];
    d_logit[k] = d_rgb[k] * y * (Real(1) - y);
    color_active |= d_logit[k] != Real(0);
  }
  const bool full = trainable == Trainable::All;
  if (color_active) {
    t.color_out.backward(tape.color_hid1.data(), d_logit.data(), grads.color_out, s.d_color_hid1.data());
    for (int i = 0; i < W; ++i) {
      if (tape.color_hid1[i] <= Real(0)) s.d_color_hid1[i] = Real(0);
    }
    t.color_hidden1.backward(tape.color_hid0.data(), s.d_color_hid1.data(), grads.color_hidden1, s.d_color_hid0.data());
    for (int i = 0; i < W; ++i) {
      if (tape.color_hid0[i] <= Real(0)) s.d_color_hid0[i] = Real(0);
    }
    t.color_hidden0.backward(tape.color_in.data(), s.d_color_hid0.data(), grads.color_hidden0,
                             full ? s.d_color_in.data() : nullptr);
  }
  if (!full) return;

  s.d_density_out[0] = d_sigma * sigmoid(tape.density_out[0]);
  for (int g = 0; g < G; ++g) s.d_density_out[1 + g] = s.d_color_in[g];
  bool density_active = false;
  for (Real v : s.d_density_out) density_active |= v != Real(0);
  if (!density_active) return;

  t.density_out.backward(tape.density_hid.data(), s.d_density_out.data(), grads.density_out, s.d_density_hid.data());
  for (int i = 0; i < W; ++i) {
    if (tape.density_hid[i] <= Real(0)) s.d_density_hid[i] = Real(0);
  }
  t.density_hidden.backward(tape.density_in.data(), s.d_density_hid.data(), grads.density_hidden, s.d_density_in.data());
  const int nhe = p.cfg.output_dim();
  hash_encode_backward(tape.x, tape.label, t.tables, std::span<const Real>(s.d_density_in.data(), nhe),
                       grads.tables.values, hashes_label(p.mode));
}

// Splits the scratch gradients into the encoder-facing blocks.
template <typename Real>
FieldInputGrads<Real> input_grads(const ModelParams<Real>& p, const FieldBackwardScratch<Real>& s) {
  FieldInputGrads<Real> g;
  const int nhe = p.cfg.output_dim();
  const int G = p.dims.feature_dim;
  g.d_nhe.assign(s.d_density_in.begin(), s.d_density_in.begin() + nhe);
  g.d_psi_density.assign(s.d_density_in.begin() + nhe, s.d_density_in.end());
  g.d_color_suffix.assign(s.d_color_in.begin() + G, s.d_color_in.end());
  return g;
}

}  // namespace cngp
