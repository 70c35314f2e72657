#pragma once

// Ray sampling, emission-absorption compositing with its reverse pass, and
// full-frame rendering of a learned field under a scene label.

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "cngp/common.hpp"
#include "cngp/field_net.hpp"
#include "cngp/image_io.hpp"
#include "cngp/scene_data.hpp"

namespace cngp {

inline constexpr double kDepthEpsilon = 1e-10;

// N segments of [near, far]: boundaries[0..N], one sample t[i] per segment.
template <typename Real>
struct SampleSet {
  std::vector<Real> boundaries;
  std::vector<Real> t;
  std::vector<Real> delta;

  int size() const { return static_cast<int>(t.size()); }
};

// Midpoints when `rng` is null, otherwise one uniform draw per segment.
template <typename Real>
void sample_points(Real near, Real far, int n, Rng* rng, SampleSet<Real>& s) {
  if (n < 1) throw ValidationError("sample_points: need at least one sample");
  if (!(near < far)) throw ValidationError("sample_points: require near < far");
  s.boundaries.resize(n + 1);
  s.t.resize(n);
  s.delta.resize(n);
  const Real span = far - near;
  for (int i = 0; i <= n; ++i) s.boundaries[i] = near + span * Real(i) / Real(n);
  s.boundaries[n] = far;
  for (int i = 0; i < n; ++i) {
    const Real u = rng ? static_cast<Real>(uniform01(*rng)) : Real(0.5);
    s.t[i] = s.boundaries[i] + u * (s.boundaries[i + 1] - s.boundaries[i]);
    s.delta[i] = s.boundaries[i + 1] - s.boundaries[i];
  }
}

template <typename Real>
SampleSet<Real> sample_points(Real near, Real far, int n, Rng* rng = nullptr) {
  SampleSet<Real> s;
  sample_points(near, far, n, rng, s);
  return s;
}

template <typename Real>
using Rgb = std::array<Real, 3>;

template <typename Real>
struct CompositeResult {
  Rgb<Real> color{};
  std::vector<Real> alphas;
  std::vector<Real> transmittance;  // T_i per sample, then T_final at index N
  std::vector<Real> weights;
  Real weight_sum = 0;
  Real depth = 0;

  Real t_final() const { return transmittance.back(); }
};

// alpha_i = 1 - exp(-sigma_i delta_i), T_i = prod_{j<i} (1 - alpha_j),
// w_i = T_i alpha_i, color = sum w_i c_i + T_final * background,
// depth = sum w_i t_i / max(sum w_i, eps).
template <typename Real>
void composite(std::span<const Real> sigmas, std::span<const Rgb<Real>> colors, const SampleSet<Real>& s,
               const Rgb<Real>& background, CompositeResult<Real>& r) {
  const int n = s.size();
  if (static_cast<int>(sigmas.size()) != n || static_cast<int>(colors.size()) != n) {
    throw ValidationError("composite: sample count mismatch");
  }
  r.alphas.resize(n);
  r.transmittance.resize(n + 1);
  r.weights.resize(n);
  r.color = {Real(0), Real(0), Real(0)};
  Real trans = Real(1);
  Real wsum = Real(0);
  Real wt = Real(0);
  for (int i = 0; i < n; ++i) {
    if (!std::isfinite(sigmas[i])) throw NumericalError("composite: non-finite density at sample " + std::to_string(i));
    const Real alpha = Real(1) - std::exp(-sigmas[i] * s.delta[i]);
    const Real w = trans * alpha;
    r.alphas[i] = alpha;
    r.transmittance[i] = trans;
    r.weights[i] = w;
    for (int k = 0; k < 3; ++k) r.color[k] += w * colors[i][k];
    wsum += w;
    wt += w * s.t[i];
    trans *= Real(1) - alpha;
  }
  r.transmittance[n] = trans;
  for (int k = 0; k < 3; ++k) r.color[k] += trans * background[k];
  r.weight_sum = wsum;
  r.depth = wt / std::max(wsum, Real(kDepthEpsilon));
}

template <typename Real>
CompositeResult<Real> composite(std::span<const Real> sigmas, std::span<const Rgb<Real>> colors,
                                const SampleSet<Real>& s, const Rgb<Real>& background) {
  CompositeResult<Real> r;
  composite(sigmas, colors, s, background, r);
  return r;
}

// Upstream gradients for composite_backward. `d_weights` and `d_alphas` may
// be empty, meaning zero.
template <typename Real>
struct CompositeUpstream {
  Rgb<Real> d_color{};
  std::span<const Real> d_weights;
  Real d_depth = 0;
  std::span<const Real> d_alphas;
};

// Reverse pass of composite. With G_i the total gradient reaching w_i:
//   dL/dsigma_k = delta_k * (G_k T_{k+1} + d_alpha_k (1 - alpha_k)
//                 - sum_{i>k} G_i w_i - dL/dT_final * T_final)
//   dL/dc_k = w_k * d_color.
template <typename Real>
void composite_backward(const CompositeResult<Real>& r, const SampleSet<Real>& s, std::span<const Rgb<Real>> colors,
                        const Rgb<Real>& background, const CompositeUpstream<Real>& up, std::span<Real> d_sigmas,
                        std::span<Rgb<Real>> d_colors) {
  const int n = s.size();
  const bool depth_live = r.weight_sum > Real(kDepthEpsilon);
  const Real inv_sum = Real(1) / std::max(r.weight_sum, Real(kDepthEpsilon));
  Real suffix = (up.d_color[0] * background[0] + up.d_color[1] * background[1] + up.d_color[2] * background[2]) *
                r.transmittance[n];
  for (int k = n - 1; k >= 0; --k) {
    Real g = up.d_color[0] * colors[k][0] + up.d_color[1] * colors[k][1] + up.d_color[2] * colors[k][2];
    if (!up.d_weights.empty()) g += up.d_weights[k];
    if (up.d_depth != Real(0)) g += up.d_depth * (depth_live ? (s.t[k] - r.depth) * inv_sum : s.t[k] * inv_sum);
    Real d = g * r.transmittance[k + 1] - suffix;
    if (!up.d_alphas.empty()) d += up.d_alphas[k] * (Real(1) - r.alphas[k]);
    d_sigmas[k] = s.delta[k] * d;
    suffix += g * r.weights[k];
    for (int c = 0; c < 3; ++c) d_colors[k][c] = r.weights[k] * up.d_color[c];
  }
}

inline bool inside_unit_cube(double x, double y, double z) {
  return x >= 0.0 && x <= 1.0 && y >= 0.0 && y <= 1.0 && z >= 0.0 && z <= 1.0;
}

// Per-ray working memory for the learned-field pipeline.
template <typename Real>
struct RayWorkspace {
  SampleSet<Real> samples;
  std::vector<Real> sigmas;
  std::vector<Rgb<Real>> colors;
  std::vector<char> inside;
  std::vector<FieldTape<Real>> tapes;
  RayEncoding<Real> enc;
  CompositeResult<Real> result;
  std::vector<Real> d_sigmas;
  std::vector<Rgb<Real>> d_colors;
  FieldBackwardScratch<Real> scratch;
};

// Samples a ray, evaluates the field at every sample inside the unit cube
// (density is zero outside it) and composites. Fills `ws`.
template <typename Real>
void trace_ray(const ModelParams<Real>& p, const Ray& ray, int label, int n_samples, Rng* rng,
               const Rgb<Real>& background, RayWorkspace<Real>& ws) {
  sample_points(static_cast<Real>(ray.near), static_cast<Real>(ray.far), n_samples, rng, ws.samples);
  const Vec3T<Real> dir = ray.direction.template cast<Real>();
  ws.enc = encode_ray(p, dir, label);
  ws.sigmas.assign(n_samples, Real(0));
  ws.colors.assign(n_samples, Rgb<Real>{});
  ws.inside.assign(n_samples, 0);
  if (static_cast<int>(ws.tapes.size()) < n_samples) ws.tapes.resize(n_samples);
  for (int i = 0; i < n_samples; ++i) {
    const double t = static_cast<double>(ws.samples.t[i]);
    const Vec3 x = ray.origin + ray.direction * t;
    if (!inside_unit_cube(x.x, x.y, x.z)) continue;
    ws.inside[i] = 1;
    const FieldOutput<Real> f = forward_field(p, x.template cast<Real>(), label, ws.enc, ws.tapes[i]);
    ws.sigmas[i] = f.sigma;
    ws.colors[i] = f.rgb;
  }
  composite(std::span<const Real>(ws.sigmas), std::span<const Rgb<Real>>(ws.colors), ws.samples, background,
            ws.result);
}

// Back-propagates upstream compositing gradients through every evaluated
// sample of the last trace_ray call into `grads`.
template <typename Real>
void backprop_ray(const ModelParams<Real>& p, const Rgb<Real>& background, const CompositeUpstream<Real>& up,
                  RayWorkspace<Real>& ws, ParamGrads<Real>& grads, Trainable trainable = Trainable::All) {
  const int n = ws.samples.size();
  ws.d_sigmas.assign(n, Real(0));
  ws.d_colors.assign(n, Rgb<Real>{});
  composite_backward(ws.result, ws.samples, std::span<const Rgb<Real>>(ws.colors), background, up,
                     std::span<Real>(ws.d_sigmas), std::span<Rgb<Real>>(ws.d_colors));
  for (int i = 0; i < n; ++i) {
    if (!ws.inside[i]) continue;
    backward_field(p, ws.tapes[i], ws.d_sigmas[i], ws.d_colors[i], grads, ws.scratch, trainable);
  }
}

template <typename Real>
Rgb<Real> to_rgb(const Color& c) {
  return {static_cast<Real>(c[0]), static_cast<Real>(c[1]), static_cast<Real>(c[2])};
}

inline void require_label(const std::vector<int>& registry, int label) {
  if (std::find(registry.begin(), registry.end(), label) != registry.end()) return;
  std::string known;
  for (int l : registry) known += (known.empty() ? "" : ",") + std::to_string(l);
  throw UnknownLabelError("label " + std::to_string(label) + " is not registered (known labels: [" + known + "])");
}

enum class FeatureReduction { MaxWeight, WeightedMean };

struct RenderOptions {
  int n_samples = 64;
  int chunk = 4096;
  int threads = 1;
  Color background{1.0f, 1.0f, 1.0f};
  // When set, the per-pixel scene feature is also returned.
  std::optional<FeatureReduction> features;
};

struct RenderOutput {
  Image image;
  DepthMap depth;
  std::vector<float> features;  // pixel-major, feature_dim per pixel
};

// Deterministic (midpoint-sampled) full-frame render. Chunks are independent
// and write disjoint pixel ranges, so the chunk size never changes the result.
template <typename Real>
RenderOutput render_image(const ModelParams<Real>& p, const Camera& cam, int label, const RenderOptions& opt) {
  validate(cam);
  require_label(p.label_registry, label);
  if (opt.chunk < 1) throw ValidationError("render_image: chunk must be >= 1");
  const int G = p.dims.feature_dim;
  RenderOutput out;
  out.image = Image(cam.width, cam.height);
  out.depth.width = cam.width;
  out.depth.height = cam.height;
  out.depth.values.assign(out.image.pixel_count(), 0.0f);
  if (opt.features) out.features.assign(out.image.pixel_count() * G, 0.0f);
  const Rgb<Real> bg = to_rgb<Real>(opt.background);
  const std::size_t n_pixels = out.image.pixel_count();
  const int n_chunks = static_cast<int>((n_pixels + opt.chunk - 1) / opt.chunk);
  parallel_for(n_chunks, opt.threads, [&](int chunk_id) {
    RayWorkspace<Real> ws;
    const std::size_t begin = static_cast<std::size_t>(chunk_id) * opt.chunk;
    const std::size_t end = std::min(n_pixels, begin + opt.chunk);
    for (std::size_t pix = begin; pix < end; ++pix) {
      const int row = static_cast<int>(pix / cam.width);
      const int col = static_cast<int>(pix % cam.width);
      trace_ray(p, camera_ray(cam, row, col), label, opt.n_samples, nullptr, bg, ws);
      float* px = out.image.at(row, col);
      for (int k = 0; k < 3; ++k) px[k] = static_cast<float>(std::clamp(ws.result.color[k], Real(0), Real(1)));
      out.depth.values[pix] = static_cast<float>(ws.result.depth);
      if (!opt.features) continue;
      float* feat = &out.features[pix * G];
      const auto& w = ws.result.weights;
      if (*opt.features == FeatureReduction::MaxWeight) {
        int best = -1;
        for (int i = 0; i < ws.samples.size(); ++i) {
          if (ws.inside[i] && (best < 0 || w[i] > w[best])) best = i;
        }
        if (best >= 0) {
          const auto f = ws.tapes[best].feature();
          for (int g = 0; g < G; ++g) feat[g] = static_cast<float>(f[g]);
        }
      } else if (ws.result.weight_sum > Real(0)) {
        for (int i = 0; i < ws.samples.size(); ++i) {
          if (!ws.inside[i]) continue;
          const auto f = ws.tapes[i].feature();
          for (int g = 0; g < G; ++g) feat[g] += static_cast<float>(w[i] * f[g] / ws.result.weight_sum);
        }
      }
    }
  });
  return out;
}

}  // namespace cngp
