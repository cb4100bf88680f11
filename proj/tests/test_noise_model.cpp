#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "bldn/noise_model.hpp"
#include "bldn/selftest.hpp"

using namespace bldn;

namespace {

double normal_pdf(double x, double m, double s) {
  return std::exp(-0.5 * (x - m) * (x - m) / (s * s)) / (s * std::sqrt(2 * std::numbers::pi));
}

Mixture two_component(double w0, double m0, double s0, double s1) {
  const double w[] = {w0, 1 - w0};
  const double fm[] = {m0};
  const double s[] = {s0, s1};
  return make_centered_mixture(2, w, fm, s);
}

}  // namespace

TEST(CenterMixture, HandCases) {
  const double w2[] = {0.5, 0.5};
  const double m2[] = {1.0};
  EXPECT_DOUBLE_EQ(center_mixture(w2, m2).last_mean, -1.0);

  const double w3[] = {0.2, 0.3, 0.5};
  const double m3[] = {1.0, -2.0};
  EXPECT_NEAR(center_mixture(w3, m3).last_mean, 0.8, 1e-15);

  const double w1[] = {1.0};
  EXPECT_EQ(center_mixture(w1, std::span<const double>{}).last_mean, 0.0);
}

TEST(CenterMixture, ClampsDegenerateLastWeight) {
  const double w[] = {1.0, 0.0};
  const double m[] = {0.5};
  const Centering c = center_mixture(w, m);
  EXPECT_TRUE(c.degenerate);
  EXPECT_TRUE(std::isfinite(c.last_mean));
}

TEST(CenterMixture, RandomHeadsAreCentered) {
  for (int n = 2; n <= 3; ++n) EXPECT_LT(max_centering_residual(n, 10000, 17), 1e-6);
}

TEST(GaussianNll, HandValues) {
  EXPECT_DOUBLE_EQ(gaussian_nll(1, 1, 1), 0.0);
  EXPECT_DOUBLE_EQ(gaussian_nll(2, 1, 1), 1.0);
  EXPECT_NEAR(gaussian_nll(0, 1, 0.5), std::log(0.25) + 4, 1e-12);
  EXPECT_NEAR(gaussian_nll(0, 1, 0.5), 2.6137, 1e-4);
}

TEST(GaussianNll, UniqueMinimumAtAbsoluteResidual) {
  const double r = 0.7;
  for (double s = 0.1; s < r - 0.01; s += 0.05) EXPECT_GT(gaussian_nll(r, 0, s), gaussian_nll(r, 0, s + 0.01));
  for (double s = r + 0.01; s < 3; s += 0.05) EXPECT_LT(gaussian_nll(r, 0, s), gaussian_nll(r, 0, s + 0.01));
}

TEST(GmmNll, ReducesToGaussian) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  for (int i = 0; i < 100; ++i) {
    const double y = normal(rng);
    const double mu = normal(rng);
    const double s = std::exp(normal(rng));
    EXPECT_NEAR(gmm_nll(y, mu, Mixture::gaussian(s)), gaussian_nll(y, mu, s), 1e-6);
  }
}

TEST(GmmNll, TwoComponentDirectDensity) {
  const Mixture m = two_component(0.5, 1.0, 1.0, 1.0);
  const double density = 0.5 * normal_pdf(0, 1, 1) + 0.5 * normal_pdf(0, -1, 1);
  EXPECT_NEAR(gmm_nll(3.0, 3.0, m), -2 * std::log(density) - std::log(2 * std::numbers::pi), 1e-12);
}

TEST(GmmNll, TranslationInvariant) {
  const Mixture m = two_component(0.3, 0.8, 0.5, 1.4);
  EXPECT_NEAR(gmm_nll(0.2, -0.4, m), gmm_nll(100.2, 99.6, m), 1e-9);
}

TEST(GmmNll, FarTailStaysFinite) {
  const Mixture m = two_component(0.5, 1.0, 1e-3, 1e-3);
  const double v = gmm_nll(1e4, 0, m);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_GT(v, 1e12);
}

TEST(GmmNllGradient, MatchesFiniteDifferences) {
  const double h = 1e-6;
  for (int n = 1; n <= 3; ++n) {
    std::vector<double> w = n == 1 ? std::vector<double>{1.0}
                                   : n == 2 ? std::vector<double>{0.35, 0.65} : std::vector<double>{0.2, 0.5, 0.3};
    std::vector<double> fm = n == 1 ? std::vector<double>{} : n == 2 ? std::vector<double>{0.4} : std::vector<double>{0.3, -0.6};
    std::vector<double> s = n == 1 ? std::vector<double>{0.8} : n == 2 ? std::vector<double>{0.5, 1.2} : std::vector<double>{0.4, 0.9, 1.5};
    const double y = 0.37;
    const double mu = -0.11;
    auto f = [&](double y_, double mu_, std::vector<double> w_, std::vector<double> fm_, std::vector<double> s_) {
      return gmm_nll_gradient(y_, mu_, n, w_, fm_, s_).value;
    };
    const GmmNllGradient g = gmm_nll_gradient(y, mu, n, w, fm, s);
    auto rel = [](double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); };
    EXPECT_LT(rel(g.d_mu, (f(y, mu + h, w, fm, s) - f(y, mu - h, w, fm, s)) / (2 * h)), 1e-4);
    for (int i = 0; i < n; ++i) {
      auto sp = s, sm = s;
      sp[i] += h;
      sm[i] -= h;
      EXPECT_LT(rel(g.d_stddev[i], (f(y, mu, w, fm, sp) - f(y, mu, w, fm, sm)) / (2 * h)), 1e-4);
      auto wp = w, wm = w;
      wp[i] += h;
      wm[i] -= h;
      EXPECT_LT(rel(g.d_weight[i], (f(y, mu, wp, fm, s) - f(y, mu, wm, fm, s)) / (2 * h)), 1e-4);
    }
    for (int i = 0; i + 1 < n; ++i) {
      auto mp = fm, mm = fm;
      mp[i] += h;
      mm[i] -= h;
      EXPECT_LT(rel(g.d_free_mean[i], (f(y, mu, w, mp, s) - f(y, mu, w, mm, s)) / (2 * h)), 1e-4);
    }
  }
}

TEST(MixtureMoments, GaussianCase) {
  const Moments m = mixture_moments(Mixture::gaussian(2.0));
  EXPECT_NEAR(m.mean, 0, 1e-12);
  EXPECT_NEAR(m.variance, 4, 1e-12);
  EXPECT_NEAR(m.skewness, 0, 1e-12);
  EXPECT_TRUE(m.skewness_defined);
}

TEST(MixtureMoments, CenteredMixtureHasZeroMean) {
  EXPECT_NEAR(mixture_moments(two_component(0.9, -0.3, 0.5, 2.0)).mean, 0, 1e-9);
}

TEST(MixtureMoments, UndefinedSkewnessForZeroVariance) {
  EXPECT_FALSE(mixture_moments(Mixture::gaussian(1e-12)).skewness_defined);
}

TEST(MixtureMoments, MatchesMonteCarlo) {
  const Mixture mix = two_component(0.9, -0.2, 0.4, 1.1);
  const Moments m = mixture_moments(mix);
  std::mt19937_64 rng(99);
  const int n = 10'000'000;
  double s1 = 0, s2 = 0, s3 = 0;
  std::vector<double> draws(n);
  for (double& d : draws) {
    d = sample_noise(mix, rng);
    s1 += d;
  }
  const double mean = s1 / n;
  for (double d : draws) {
    s2 += (d - mean) * (d - mean);
    s3 += (d - mean) * (d - mean) * (d - mean);
  }
  const double var = s2 / n;
  const double skew = (s3 / n) / std::pow(var, 1.5);
  const double sd = std::sqrt(m.variance);
  EXPECT_NEAR(mean, m.mean, 3 * sd / std::sqrt(n));
  // Standard error of the sample variance is about sqrt((mu4 - sigma^4) / n); bound mu4 by 10 sigma^4.
  EXPECT_NEAR(var, m.variance, 3 * std::sqrt(9.0) * m.variance / std::sqrt(n));
  // Skewness standard error is at most a few times sqrt(6 / n) for a mildly non-Gaussian law.
  EXPECT_NEAR(skew, m.skewness, 3 * 3 * std::sqrt(6.0 / n));
}

TEST(SampleNoise, CenteredAndUnitVariance) {
  std::mt19937_64 rng(5);
  const Mixture mix = Mixture::gaussian(1.0);
  const int n = 1'000'000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double d = sample_noise(mix, rng);
    s += d;
    s2 += d * d;
  }
  EXPECT_NEAR(s / n, 0, 4.0 / 1000);
  EXPECT_NEAR(s2 / n, 1.0, 4 * std::sqrt(2.0 / n));
}

TEST(KlBin, SelfDistributionIsNearZero) {
  const Mixture mix = two_component(0.7, -0.5, 0.6, 1.3);
  std::mt19937_64 rng(8);
  std::vector<double> v(1'000'000);
  for (double& d : v) d = sample_noise(mix, rng);
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const HistogramBin h = HistogramBin::from_samples(v, 64, *lo, *hi);
  const double kl = kl_bin(h, mix);
  EXPECT_GE(kl, 0);
  EXPECT_LT(kl, 0.01);
}

TEST(KlBin, PointMassEqualsMinusLogMass) {
  const std::vector<double> v(50, 0.05);
  const HistogramBin h = HistogramBin::from_samples(v, 10, -0.5, 0.5);
  const Mixture wide = Mixture::gaussian(3.0);
  const double q = mixture_cdf(0.1, wide) - mixture_cdf(0.0, wide);
  EXPECT_NEAR(kl_bin(h, wide), -std::log(q), 1e-9);
}

TEST(KlBin, NonNegative) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal(0.3, 2.0);
  std::vector<double> v(5000);
  for (double& d : v) d = normal(rng);
  const HistogramBin h = HistogramBin::from_samples(v, 32, -8, 8);
  for (double s : {0.1, 0.5, 1.0, 2.0, 5.0}) EXPECT_GE(kl_bin(h, Mixture::gaussian(s)), 0.0);
}

TEST(HistogramBin, EdgesIncreasingAndCountsComplete) {
  const std::vector<double> v{0.0, 0.5, 1.0, 1.0, 0.25};
  const HistogramBin h = HistogramBin::from_samples(v, 4, 0.0, 1.0);
  ASSERT_EQ(h.edges.size(), 5u);
  for (std::size_t i = 1; i < h.edges.size(); ++i) EXPECT_GT(h.edges[i], h.edges[i - 1]);
  double total = 0;
  for (double c : h.counts) total += c;
  EXPECT_EQ(total, 5);
  EXPECT_EQ(h.samples, 5u);
}

TEST(NoiseParams, RoundTripsMixture) {
  NoiseParams p(2, 3, 4);
  const Mixture m = two_component(0.25, 0.4, 0.3, 0.9);
  p.set(2, 1, m);
  const Mixture r = p.at(2, 1);
  for (int i = 0; i < 2; ++i) {
    EXPECT_NEAR(r.weight[i], m.weight[i], 1e-7);
    EXPECT_NEAR(r.mean[i], m.mean[i], 1e-7);
    EXPECT_NEAR(r.stddev[i], m.stddev[i], 1e-7);
  }
}
