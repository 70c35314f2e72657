#include <gtest/gtest.h>

#include <cmath>

#include "cngp/losses.hpp"
#include "helpers.hpp"

using namespace cngp;
using cngp::test::central_diff;
using cngp::test::rel_err;

TEST(MseLoss, KnownValueAndGradient) {
  const std::vector<Rgb<double>> pred{{0.5, 0.5, 0.5}, {1.0, 0.0, 0.0}};
  const std::vector<Rgb<double>> gt{{0.5, 0.5, 0.0}, {0.0, 0.0, 0.0}};
  const auto r = mse_loss(std::span<const Rgb<double>>(pred), std::span<const Rgb<double>>(gt));
  EXPECT_DOUBLE_EQ(r.value, (0.25 + 1.0) / 2);
  EXPECT_DOUBLE_EQ(r.d_pred[0][2], 0.5);
  EXPECT_DOUBLE_EQ(r.d_pred[1][0], 1.0);
  EXPECT_DOUBLE_EQ(r.d_pred[0][0], 0.0);
}

TEST(MseLoss, ShapeMismatchRaises) {
  const std::vector<Rgb<double>> a(2), b(3);
  EXPECT_THROW(mse_loss(std::span<const Rgb<double>>(a), std::span<const Rgb<double>>(b)), ValidationError);
}

namespace {

// Direct double sum over all unordered pairs.
double distortion_oracle(const std::vector<double>& w, const std::vector<double>& b) {
  double pair = 0, unary = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double mi = 0.5 * (b[i] + b[i + 1]);
    for (std::size_t j = i + 1; j < w.size(); ++j) pair += w[i] * w[j] * std::abs(mi - 0.5 * (b[j] + b[j + 1]));
    unary += w[i] * w[i] * (b[i + 1] - b[i]);
  }
  return pair + unary / 3;
}

struct RayCase {
  std::vector<double> w;
  std::vector<double> b;
};

RayCase random_ray(Rng& rng, int n) {
  RayCase c;
  const auto s = sample_points(0.3, 3.0, n, &rng);
  c.b = s.boundaries;
  for (int i = 0; i < n; ++i) c.w.push_back(uniform01(rng) / n);
  return c;
}

}  // namespace

TEST(DistortionLoss, SingleIntervalIsOneSixth) {
  const std::vector<double> w{1.0}, b{0.0, 0.5};
  const auto r = distortion_loss<double>(std::span<const double>(w), std::span<const double>(b), 1.0, false);
  EXPECT_NEAR(r.value, 1.0 / 6.0, 1e-15);
}

TEST(DistortionLoss, TwoIntervalsByHand) {
  // pair 0.5*0.5*1 + unary (0.25+0.25)/3
  const std::vector<double> w{0.5, 0.5}, b{0.0, 1.0, 2.0};
  const auto r = distortion_loss<double>(std::span<const double>(w), std::span<const double>(b), 2.0, false);
  EXPECT_NEAR(r.value, 0.25 + 1.0 / 6.0, 1e-15);
  const auto rp = distortion_loss<double>(std::span<const double>(w), std::span<const double>(b), 2.0, true);
  EXPECT_NEAR(rp.value, (0.25 + 1.0 / 6.0) / 2.0, 1e-15);
}

TEST(DistortionLoss, LinearTimeMatchesQuadraticOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const RayCase c = random_ray(rng, 1 + static_cast<int>(uniform_index(rng, 96)));
    const auto r = distortion_loss<double>(std::span<const double>(c.w), std::span<const double>(c.b), 1.0, false);
    EXPECT_NEAR(r.value, distortion_oracle(c.w, c.b), 1e-10);
  }
}

TEST(DistortionLoss, GradientsMatchCentralDifferences) {
  Rng rng(2);
  for (bool prefactor : {false, true}) {
    RayCase c = random_ray(rng, 20);
    double depth = 1.7;
    const auto r = distortion_loss<double>(std::span<const double>(c.w), std::span<const double>(c.b), depth, prefactor);
    auto f = [&] {
      return distortion_loss<double>(std::span<const double>(c.w), std::span<const double>(c.b), depth, prefactor).value;
    };
    for (std::size_t i = 0; i < c.w.size(); ++i) EXPECT_LT(rel_err(r.d_weights[i], central_diff(c.w[i], 1e-6, f)), 1e-7);
    if (prefactor) {
      EXPECT_LT(rel_err(r.d_depth, central_diff(depth, 1e-6, f)), 1e-7);
    } else {
      EXPECT_EQ(r.d_depth, 0.0);
    }
  }
}

TEST(DistortionLoss, ZeroWeightsGiveZero) {
  const std::vector<double> w(4, 0.0), b{0, 1, 2, 3, 4};
  const auto r = distortion_loss<double>(std::span<const double>(w), std::span<const double>(b), 0.0);
  EXPECT_EQ(r.value, 0.0);
  EXPECT_EQ(r.d_depth, 0.0);
}

TEST(DistortionLoss, BoundaryCountChecked) {
  const std::vector<double> w(4, 0.1), b{0, 1, 2};
  EXPECT_THROW(distortion_loss<double>(std::span<const double>(w), std::span<const double>(b), 1.0), ValidationError);
}

TEST(EntropyRay, UniformIsLogN) {
  for (int n : {2, 7, 64}) {
    const std::vector<double> a(n, 0.3);
    EXPECT_NEAR(entropy_ray<double>(std::span<const double>(a)).value, std::log(double(n)), 1e-12);
  }
}

TEST(EntropyRay, SingleSpikeIsZero) {
  std::vector<double> a(10, 0.0);
  a[4] = 0.9;
  EXPECT_NEAR(entropy_ray<double>(std::span<const double>(a)).value, 0.0, 1e-15);
}

TEST(EntropyRay, LowOpacityRayIsMasked) {
  const std::vector<double> a(8, 1e-5);
  const auto r = entropy_ray<double>(std::span<const double>(a));
  EXPECT_TRUE(r.masked);
  EXPECT_EQ(r.value, 0.0);
}

TEST(EntropyRay, GradientsMatchCentralDifferences) {
  Rng rng(3);
  for (bool normalized : {true, false}) {
    std::vector<double> a(16);
    for (double& v : a) v = 0.05 + 0.9 * uniform01(rng);
    const auto r = entropy_ray<double>(std::span<const double>(a), normalized);
    auto f = [&] { return entropy_ray<double>(std::span<const double>(a), normalized).value; };
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LT(rel_err(r.d_alphas[i], central_diff(a[i], 1e-6, f)), 1e-7);
  }
}

TEST(EntropyLoss, MaskedRaysCountAsZero) {
  const std::vector<std::vector<double>> rays{std::vector<double>(4, 0.5), std::vector<double>(4, 0.0)};
  EXPECT_NEAR(entropy_loss(rays), std::log(4.0) / 2, 1e-12);
  EXPECT_EQ(entropy_loss(std::vector<std::vector<double>>{}), 0.0);
}

namespace {

struct Batch {
  std::vector<SampleSet<double>> samples;
  std::vector<std::vector<double>> sigma;
  std::vector<std::vector<Rgb<double>>> color;
  std::vector<Rgb<double>> gt;
  Rgb<double> bg{1.0, 1.0, 1.0};
};

std::vector<CompositeResult<double>> composite_all(const Batch& b) {
  std::vector<CompositeResult<double>> out;
  for (std::size_t r = 0; r < b.samples.size(); ++r) {
    out.push_back(composite(std::span<const double>(b.sigma[r]), std::span<const Rgb<double>>(b.color[r]), b.samples[r],
                            b.bg));
  }
  return out;
}

}  // namespace

TEST(TotalLoss, CombinesWeightedTerms) {
  Rng rng(4);
  Batch b;
  for (int r = 0; r < 5; ++r) {
    b.samples.push_back(sample_points(0.5, 2.5, 12, &rng));
    b.sigma.emplace_back();
    b.color.emplace_back();
    for (int i = 0; i < 12; ++i) {
      b.sigma.back().push_back(3 * uniform01(rng));
      b.color.back().push_back({uniform01(rng), uniform01(rng), uniform01(rng)});
    }
    b.gt.push_back({uniform01(rng), uniform01(rng), uniform01(rng)});
  }
  const auto res = composite_all(b);
  LossWeights lw;
  const auto loss = total_loss(std::span<const CompositeResult<double>>(res),
                               std::span<const SampleSet<double>>(b.samples), std::span<const Rgb<double>>(b.gt), lw);
  std::vector<Rgb<double>> pred;
  std::vector<std::vector<double>> alphas;
  double dist = 0;
  for (std::size_t r = 0; r < res.size(); ++r) {
    pred.push_back(res[r].color);
    alphas.push_back(res[r].alphas);
    dist += distortion_oracle(res[r].weights, b.samples[r].boundaries) / res[r].depth;
  }
  const double mse = mse_loss(std::span<const Rgb<double>>(pred), std::span<const Rgb<double>>(b.gt)).value;
  const double ent = entropy_loss(alphas);
  dist /= res.size();
  EXPECT_NEAR(loss.breakdown.mse, mse, 1e-12);
  EXPECT_NEAR(loss.breakdown.ent, ent, 1e-12);
  EXPECT_NEAR(loss.breakdown.dist, dist, 1e-12);
  EXPECT_NEAR(loss.breakdown.total, mse + lw.lambda_ent * ent + lw.lambda_dist * dist, 1e-12);
  EXPECT_EQ(loss.breakdown.rays, 5u);
}

TEST(TotalLoss, UpstreamGradientsReachDensities) {
  Rng rng(5);
  Batch b;
  for (int r = 0; r < 3; ++r) {
    b.samples.push_back(sample_points(0.5, 2.5, 10, &rng));
    b.sigma.emplace_back();
    b.color.emplace_back();
    for (int i = 0; i < 10; ++i) {
      b.sigma.back().push_back(0.2 + 2 * uniform01(rng));
      b.color.back().push_back({uniform01(rng), uniform01(rng), uniform01(rng)});
    }
    b.gt.push_back({uniform01(rng), uniform01(rng), uniform01(rng)});
  }
  LossWeights lw;
  lw.lambda_dist = 0.3;
  lw.lambda_ent = 0.2;
  auto objective = [&] {
    const auto res = composite_all(b);
    return total_loss(std::span<const CompositeResult<double>>(res), std::span<const SampleSet<double>>(b.samples),
                      std::span<const Rgb<double>>(b.gt), lw)
        .breakdown.total;
  };
  const auto res = composite_all(b);
  const auto loss = total_loss(std::span<const CompositeResult<double>>(res),
                               std::span<const SampleSet<double>>(b.samples), std::span<const Rgb<double>>(b.gt), lw);
  for (std::size_t r = 0; r < res.size(); ++r) {
    std::vector<double> ds(10);
    std::vector<Rgb<double>> dc(10);
    composite_backward(res[r], b.samples[r], std::span<const Rgb<double>>(b.color[r]), b.bg,
                       loss.per_ray[r].upstream(), std::span<double>(ds), std::span<Rgb<double>>(dc));
    for (int i = 0; i < 10; ++i) {
      EXPECT_LT(rel_err(ds[i], central_diff(b.sigma[r][i], 1e-6, objective)), 1e-6) << r << "," << i;
      EXPECT_LT(rel_err(dc[i][1], central_diff(b.color[r][i][1], 1e-6, objective)), 1e-6);
    }
  }
}
