#include <gtest/gtest.h>

#include <cmath>

#include "cngp/metrics.hpp"
#include "helpers.hpp"

using namespace cngp;

namespace {

Image random_image(Rng& rng, int w, int h) {
  Image img(w, h);
  for (float& v : img.rgb) v = static_cast<float>(uniform01(rng));
  return img;
}

// Direct SSIM: for every window position, a 2-D Gaussian weighted mean,
// variance and covariance of the channel-mean image.
double naive_ssim(const Image& a, const Image& b, int win = 11, double sigma = 1.5) {
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  std::vector<double> g(win * win);
  double gs = 0;
  for (int i = 0; i < win; ++i) {
    for (int j = 0; j < win; ++j) {
      const double di = i - (win - 1) / 2.0, dj = j - (win - 1) / 2.0;
      g[i * win + j] = std::exp(-(di * di + dj * dj) / (2 * sigma * sigma));
      gs += g[i * win + j];
    }
  }
  auto lum = [](const Image& im, int r, int c) {
    const float* p = im.at(r, c);
    return (double(p[0]) + p[1] + p[2]) / 3.0;
  };
  double acc = 0;
  int count = 0;
  for (int r0 = 0; r0 + win <= a.height; ++r0) {
    for (int c0 = 0; c0 + win <= a.width; ++c0) {
      double mx = 0, my = 0;
      for (int i = 0; i < win; ++i) {
        for (int j = 0; j < win; ++j) {
          const double w = g[i * win + j] / gs;
          mx += w * lum(a, r0 + i, c0 + j);
          my += w * lum(b, r0 + i, c0 + j);
        }
      }
      double vx = 0, vy = 0, cxy = 0;
      for (int i = 0; i < win; ++i) {
        for (int j = 0; j < win; ++j) {
          const double w = g[i * win + j] / gs;
          const double dx = lum(a, r0 + i, c0 + j) - mx, dy = lum(b, r0 + i, c0 + j) - my;
          vx += w * dx * dx;
          vy += w * dy * dy;
          cxy += w * dx * dy;
        }
      }
      acc += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return acc / count;
}

}  // namespace

TEST(Psnr, ConstantOffset) {
  Image a(8, 8, 0.5f), b(8, 8, 0.5f);
  for (float& v : b.rgb) v = 0.25f;
  EXPECT_NEAR(psnr(a, b), -10 * std::log10(0.0625), 1e-12);
}

TEST(Psnr, IdenticalIsInfinite) {
  Rng rng(1);
  const Image a = random_image(rng, 5, 4);
  EXPECT_TRUE(std::isinf(psnr(a, a)));
}

TEST(Psnr, MatchesDirectSum) {
  Rng rng(2);
  const Image a = random_image(rng, 13, 9), b = random_image(rng, 13, 9);
  double se = 0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) se += std::pow(double(a.rgb[i]) - double(b.rgb[i]), 2);
  EXPECT_NEAR(psnr(a, b), -10 * std::log10(se / a.rgb.size()), 1e-9);
}

TEST(Psnr, ShapeMismatchRaises) {
  EXPECT_THROW(psnr(Image(4, 4), Image(4, 5)), ValidationError);
}

TEST(Ssim, IdenticalIsOne) {
  Rng rng(3);
  const Image a = random_image(rng, 20, 16);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
}

TEST(Ssim, MatchesNaiveWindowOracle) {
  Rng rng(4);
  for (int trial = 0; trial < 3; ++trial) {
    const Image a = random_image(rng, 19 + trial, 14);
    Image b = a;
    for (float& v : b.rgb) v = std::clamp(v + static_cast<float>(0.2 * (uniform01(rng) - 0.5)), 0.0f, 1.0f);
    EXPECT_NEAR(ssim(a, b), naive_ssim(a, b), 1e-9);
  }
}

TEST(Ssim, SymmetricAndBounded) {
  Rng rng(5);
  const Image a = random_image(rng, 16, 16), b = random_image(rng, 16, 16);
  EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-14);
  EXPECT_LT(ssim(a, b), 1.0);
  EXPECT_GT(ssim(a, b), -1.0);
}

TEST(Ssim, TooSmallRaises) {
  EXPECT_THROW(ssim(Image(10, 20), Image(10, 20)), ValidationError);
}

TEST(Report, JsonCarriesInfinityAsString) {
  EvalReport rep;
  SceneScore s;
  s.label = 3;
  s.views.push_back({"view_0", std::numeric_limits<double>::infinity(), 48.0, 1.0});
  s.mean_psnr = s.views[0].psnr;
  s.mean_ssim = 1.0;
  rep.scenes.push_back(s);
  rep.mean_psnr = s.mean_psnr;
  rep.mean_ssim = 1.0;
  rep.fingerprint = "desk-0";
  const auto j = to_json(rep);
  EXPECT_EQ(j["scenes"][0]["views"][0]["psnr"], "inf");
  EXPECT_EQ(j["scenes"][0]["label"], 3);
  EXPECT_EQ(j["fingerprint"], "desk-0");
  EXPECT_EQ(to_csv(rep), "scene_label,view,psnr,psnr_8bit,ssim\n3,view_0,inf,48,1\n");
}

TEST(FeatureSeparation, HandBuiltMatrix) {
  FeatureMatrix fm;
  fm.feature_dim = 2;
  fm.labels = {0, 0, 1};
  fm.patch_ids = {0, 1, 0};
  fm.rows = {{0.0f, 0.0f}, {3.0f, 4.0f}, {0.0f, 1.0f}};
  const auto sep = feature_separation(fm);
  EXPECT_DOUBLE_EQ(sep.same_label, 5.0);
  EXPECT_DOUBLE_EQ(sep.cross_label, (1.0 + std::sqrt(18.0)) / 2);
}

namespace {

Camera small_camera(int w, int h) {
  Camera cam;
  cam.width = w;
  cam.height = h;
  cam.focal = focal_from_angle(0.7, w);
  cam.pose = look_at(Vec3{0.5, 0.7, 2.3}, Vec3{0.5, 0.5, 0.5});
  return cam;
}

}  // namespace

TEST(DumpFeatures, OneRowPerFullPatch) {
  auto p = cngp::test::random_params(cngp::test::tiny_grid(), ConditioningMode::CoordLabelPsiDirPsi, NetDims{8, 3, 2}, 6);
  p.label_registry = {0, 1};
  RenderOptions opt;
  opt.n_samples = 16;
  const std::vector<FeatureView> views{{0, small_camera(10, 7)}, {1, small_camera(10, 7)}};
  const auto fm = dump_features(p, views, 3, opt);
  EXPECT_EQ(fm.size(), 2u * 3u * 2u);
  EXPECT_EQ(fm.feature_dim, 3);
  EXPECT_EQ(fm.labels.front(), 0);
  EXPECT_EQ(fm.labels.back(), 1);
  EXPECT_EQ(fm.patch_ids[5], 5);
  const std::string csv = to_csv(fm);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "label,patch,f0,f1,f2");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 13);
}

TEST(DumpFeatures, PatchMeanOfPixelFeatures) {
  auto p = cngp::test::random_params(cngp::test::tiny_grid(), ConditioningMode::CoordLabelPsiDirPsi, NetDims{8, 3, 2}, 7);
  p.label_registry = {0};
  RenderOptions opt;
  opt.n_samples = 16;
  const Camera cam = small_camera(4, 4);
  const auto fm = dump_features(p, {{0, cam}}, 2, opt, FeatureReduction::WeightedMean);
  opt.features = FeatureReduction::WeightedMean;
  const auto r = render_image(p, cam, 0, opt);
  for (int g = 0; g < 3; ++g) {
    double m = 0;
    for (int px : {0, 1, 4, 5}) m += r.features[px * 3 + g] / 4.0;
    EXPECT_NEAR(fm.rows[0][g], m, 1e-6);
  }
}

TEST(Evaluate, ScoresMatchDirectRender) {
  auto p = cngp::test::random_params(cngp::test::tiny_grid(), ConditioningMode::CoordLabelPsiDirPsi, NetDims{8, 3, 2}, 8);
  p.label_registry = {0};
  Rng rng(9);
  SceneDataset ds;
  ds.label = 0;
  ds.background = {0.2f, 0.3f, 0.4f};
  for (int v = 0; v < 2; ++v) {
    ds.cameras.push_back(small_camera(12, 12));
    ds.images.push_back(random_image(rng, 12, 12));
  }
  RenderOptions opt;
  opt.n_samples = 8;
  const auto rep = evaluate(p, {{0, &ds}}, opt, "fp");
  ASSERT_EQ(rep.scenes.size(), 1u);
  ASSERT_EQ(rep.scenes[0].views.size(), 2u);
  opt.background = ds.background;
  const auto r = render_image(p, ds.cameras[1], 0, opt);
  EXPECT_DOUBLE_EQ(rep.scenes[0].views[1].psnr, psnr(r.image, ds.images[1]));
  EXPECT_DOUBLE_EQ(rep.scenes[0].views[1].ssim, ssim(r.image, ds.images[1]));
  EXPECT_NEAR(rep.mean_psnr, (rep.scenes[0].views[0].psnr + rep.scenes[0].views[1].psnr) / 2, 1e-12);
  EXPECT_THROW(evaluate(p, {{4, &ds}}, opt), UnknownLabelError);
}
