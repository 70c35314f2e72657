#include <gtest/gtest.h>

#include <cmath>

#include "cngp/renderer.hpp"
#include "helpers.hpp"

using namespace cngp;
using cngp::test::random_params;
using cngp::test::tiny_grid;

TEST(SamplePoints, MidpointsWithoutRng) {
  const auto s = sample_points(1.0, 3.0, 4);
  ASSERT_EQ(s.size(), 4);
  const std::vector<double> t{1.25, 1.75, 2.25, 2.75};
  for (int i = 0; i < 4; ++i) {
    EXPECT_DOUBLE_EQ(s.t[i], t[i]);
    EXPECT_DOUBLE_EQ(s.delta[i], 0.5);
  }
  EXPECT_EQ(s.boundaries.front(), 1.0);
  EXPECT_EQ(s.boundaries.back(), 3.0);
}

TEST(SamplePoints, StratifiedStaysInSegment) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = sample_points(0.1, 4.0, 64, &rng);
    for (int i = 0; i < s.size(); ++i) {
      ASSERT_GE(s.t[i], s.boundaries[i]);
      ASSERT_LE(s.t[i], s.boundaries[i + 1]);
      if (i == 0) continue;
      ASSERT_GE(s.t[i], s.t[i - 1]);
    }
  }
}

TEST(SamplePoints, RejectsBadRanges) {
  EXPECT_THROW(sample_points(1.0, 1.0, 4), ValidationError);
  EXPECT_THROW(sample_points(0.1, 1.0, 0), ValidationError);
}

namespace {

struct Case {
  SampleSet<double> s;
  std::vector<double> sigma;
  std::vector<Rgb<double>> color;
  Rgb<double> bg;
};

Case random_case(Rng& rng, int n, double max_sigma = 4.0) {
  Case c;
  c.s = sample_points(0.5, 2.5, n, &rng);
  for (int i = 0; i < n; ++i) {
    c.sigma.push_back(max_sigma * uniform01(rng));
    c.color.push_back({uniform01(rng), uniform01(rng), uniform01(rng)});
  }
  c.bg = {uniform01(rng), uniform01(rng), uniform01(rng)};
  return c;
}

CompositeResult<double> run(const Case& c) {
  return composite(std::span<const double>(c.sigma), std::span<const Rgb<double>>(c.color), c.s, c.bg);
}

}  // namespace

TEST(Composite, EmptySpaceShowsBackground) {
  Rng rng(2);
  Case c = random_case(rng, 16);
  std::fill(c.sigma.begin(), c.sigma.end(), 0.0);
  const auto r = run(c);
  for (int k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(r.color[k], c.bg[k]);
  EXPECT_EQ(r.weight_sum, 0.0);
  EXPECT_EQ(r.t_final(), 1.0);
  EXPECT_EQ(r.depth, 0.0);
}

TEST(Composite, SingleSample) {
  Case c;
  c.s = sample_points(0.0, 2.0, 1);
  c.sigma = {0.7};
  c.color = {{0.2, 0.4, 0.6}};
  c.bg = {1.0, 1.0, 1.0};
  const auto r = run(c);
  const double a = 1 - std::exp(-1.4);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(r.color[k], a * c.color[0][k] + (1 - a), 1e-15);
  EXPECT_NEAR(r.depth, 1.0, 1e-15);
}

TEST(Composite, MatchesExplicitProductExpansion) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Case c = random_case(rng, 1 + static_cast<int>(uniform_index(rng, 40)));
    const auto r = run(c);
    const int n = c.s.size();
    Rgb<double> color{};
    double wsum = 0, wt = 0;
    for (int i = 0; i < n; ++i) {
      double optical = 0;  // T_i = exp(-sum_{j<i} sigma_j delta_j)
      for (int j = 0; j < i; ++j) optical += c.sigma[j] * c.s.delta[j];
      const double w = std::exp(-optical) * (1 - std::exp(-c.sigma[i] * c.s.delta[i]));
      for (int k = 0; k < 3; ++k) color[k] += w * c.color[i][k];
      wsum += w;
      wt += w * c.s.t[i];
    }
    double total = 0;
    for (int j = 0; j < n; ++j) total += c.sigma[j] * c.s.delta[j];
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(r.color[k], color[k] + std::exp(-total) * c.bg[k], 1e-12);
    EXPECT_NEAR(r.depth, wt / wsum, 1e-12);
    EXPECT_NEAR(r.weight_sum + r.t_final(), 1.0, 1e-12);
  }
}

TEST(Composite, NonFiniteDensityRaises) {
  Rng rng(4);
  Case c = random_case(rng, 8);
  c.sigma[3] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(run(c), NumericalError);
}

TEST(CompositeBackward, MatchesCentralDifferences) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    Case c = random_case(rng, 12);
    const int n = c.s.size();
    const Rgb<double> dc{uniform01(rng) - 0.5, uniform01(rng) - 0.5, uniform01(rng) - 0.5};
    std::vector<double> dw(n), da(n);
    for (int i = 0; i < n; ++i) {
      dw[i] = uniform01(rng) - 0.5;
      da[i] = uniform01(rng) - 0.5;
    }
    const double dd = uniform01(rng) - 0.5;
    auto objective = [&] {
      const auto r = run(c);
      double v = dd * r.depth;
      for (int k = 0; k < 3; ++k) v += dc[k] * r.color[k];
      for (int i = 0; i < n; ++i) v += dw[i] * r.weights[i] + da[i] * r.alphas[i];
      return v;
    };
    const auto r = run(c);
    std::vector<double> ds(n);
    std::vector<Rgb<double>> dcol(n);
    composite_backward(r, c.s, std::span<const Rgb<double>>(c.color), c.bg,
                       CompositeUpstream<double>{dc, std::span<const double>(dw), dd, std::span<const double>(da)},
                       std::span<double>(ds), std::span<Rgb<double>>(dcol));
    for (int i = 0; i < n; ++i) {
      ASSERT_LT(cngp::test::rel_err(ds[i], cngp::test::central_diff(c.sigma[i], 1e-6, objective)), 1e-6) << i;
      for (int k = 0; k < 3; ++k) {
        ASSERT_LT(cngp::test::rel_err(dcol[i][k], cngp::test::central_diff(c.color[i][k], 1e-6, objective), 1e-4), 1e-6);
      }
    }
  }
}

TEST(CompositeBackward, ColorOnlyUpstreamNeedsNoSpans) {
  Rng rng(6);
  Case c = random_case(rng, 8);
  const auto r = run(c);
  const Rgb<double> dc{0.3, -0.2, 0.1};
  std::vector<double> ds(8), ds_zero(8);
  std::vector<Rgb<double>> dcol(8), dcol2(8);
  const std::vector<double> zeros(8, 0.0);
  composite_backward(r, c.s, std::span<const Rgb<double>>(c.color), c.bg, CompositeUpstream<double>{dc, {}, 0.0, {}},
                     std::span<double>(ds), std::span<Rgb<double>>(dcol));
  composite_backward(r, c.s, std::span<const Rgb<double>>(c.color), c.bg,
                     CompositeUpstream<double>{dc, std::span<const double>(zeros), 0.0, std::span<const double>(zeros)},
                     std::span<double>(ds_zero), std::span<Rgb<double>>(dcol2));
  EXPECT_EQ(ds, ds_zero);
}

namespace {

Camera test_camera(int w = 6, int h = 5) {
  Camera cam;
  cam.width = w;
  cam.height = h;
  cam.focal = focal_from_angle(0.6, w);
  cam.pose = look_at(Vec3{0.5, 0.9, 2.2}, Vec3{0.5, 0.5, 0.5});
  cam.near = 0.5;
  cam.far = 3.5;
  return cam;
}

}  // namespace

TEST(TraceRay, SamplesOutsideCubeAreEmpty) {
  auto p = random_params(tiny_grid(), ConditioningMode::CoordLabelPsiDirPsi, NetDims{8, 3, 2}, 1);
  p.label_registry = {0};
  RayWorkspace<double> ws;
  const Ray ray{Vec3{0.5, 0.5, 3.0}, Vec3{0, 0, -1}, 0.5, 4.0};
  trace_ray(p, ray, 0, 35, nullptr, Rgb<double>{1, 1, 1}, ws);
  for (int i = 0; i < ws.samples.size(); ++i) {
    const double z = 3.0 - ws.samples.t[i];
    EXPECT_EQ(ws.inside[i] != 0, z >= 0.0 && z <= 1.0) << i;
    if (ws.inside[i]) continue;
    EXPECT_EQ(ws.sigmas[i], 0.0);
  }
}

TEST(TraceRay, ParameterGradientsThroughPipeline) {
  auto p = random_params(tiny_grid(2, 6, 2, 3, 7), ConditioningMode::CoordLabelPsiDirPsi, NetDims{6, 3, 2}, 2, 0.5, 0.4);
  p.label_registry = {0, 1};
  const Ray ray = camera_ray(test_camera(), 2, 3);
  const Rgb<double> bg{0.9, 0.8, 0.7};
  const Rgb<double> dc{0.6, -0.3, 0.4};
  const double dd = 0.2;
  auto objective = [&] {
    RayWorkspace<double> ws;
    trace_ray(p, ray, 1, 24, nullptr, bg, ws);
    return dc[0] * ws.result.color[0] + dc[1] * ws.result.color[1] + dc[2] * ws.result.color[2] +
           dd * ws.result.depth;
  };
  RayWorkspace<double> ws;
  trace_ray(p, ray, 1, 24, nullptr, bg, ws);
  ParamGrads<double> grads(p.cfg, p.mode, p.dims);
  backprop_ray(p, bg, CompositeUpstream<double>{dc, {}, dd, {}}, ws, grads);

  std::vector<std::span<double>> pv, gv;
  p.tensors.for_each([&](const std::string&, std::span<double> v, const std::vector<std::size_t>&) { pv.push_back(v); });
  grads.for_each([&](const std::string&, std::span<double> v, const std::vector<std::size_t>&) { gv.push_back(v); });
  int checked = 0;
  for (std::size_t t = 0; t < pv.size(); ++t) {
    for (std::size_t i = 0; i < pv[t].size(); i += 3) {
      const double fd = cngp::test::central_diff(pv[t][i], 1e-5, objective);
      if (std::abs(fd) < 1e-7 && std::abs(gv[t][i]) < 1e-7) continue;
      ASSERT_LT(cngp::test::rel_err(gv[t][i], fd), 1e-4) << "tensor " << t << " entry " << i;
      ++checked;
    }
  }
  EXPECT_GT(checked, 50);
}

TEST(RenderImage, UnknownLabelRaises) {
  auto p = random_params(tiny_grid(), ConditioningMode::CoordLabelPsiDirPsi, NetDims{8, 3, 2}, 3);
  p.label_registry = {0, 1};
  try {
    render_image(p, test_camera(), 7, RenderOptions{});
    FAIL() << "expected UnknownLabelError";
  } catch (const UnknownLabelError& e) {
    EXPECT_NE(std::string(e.what()).find("[0,1]"), std::string::npos);
  }
}

TEST(RenderImage, ChunkAndThreadInvariant) {
  auto p = random_params(tiny_grid(), ConditioningMode::CoordLabelPsiDirPsi, NetDims{8, 3, 2}, 4);
  p.label_registry = {0};
  const Camera cam = test_camera(7, 5);
  RenderOptions a;
  a.n_samples = 16;
  a.features = FeatureReduction::WeightedMean;
  RenderOptions b = a;
  b.chunk = 3;
  b.threads = 2;
  RenderOptions c = a;
  c.chunk = 1;
  const auto ra = render_image(p, cam, 0, a), rb = render_image(p, cam, 0, b), rc = render_image(p, cam, 0, c);
  EXPECT_EQ(ra.image, rb.image);
  EXPECT_EQ(ra.image, rc.image);
  EXPECT_EQ(ra.depth, rb.depth);
  EXPECT_EQ(ra.features, rc.features);
  EXPECT_EQ(ra.features.size(), 7u * 5u * 3u);
}

TEST(RenderImage, MatchesPerPixelTrace) {
  auto p = random_params(tiny_grid(), ConditioningMode::CoordLabelPsiDirPsi, NetDims{8, 3, 2}, 5);
  p.label_registry = {0};
  const Camera cam = test_camera(4, 3);
  RenderOptions opt;
  opt.n_samples = 20;
  opt.background = {0.25f, 0.5f, 0.75f};
  const auto out = render_image(p, cam, 0, opt);
  RayWorkspace<double> ws;
  for (int r = 0; r < cam.height; ++r) {
    for (int c = 0; c < cam.width; ++c) {
      trace_ray(p, camera_ray(cam, r, c), 0, 20, nullptr, Rgb<double>{0.25, 0.5, 0.75}, ws);
      for (int k = 0; k < 3; ++k) EXPECT_FLOAT_EQ(out.image.at(r, c)[k], float(std::clamp(ws.result.color[k], 0.0, 1.0)));
    }
  }
}
