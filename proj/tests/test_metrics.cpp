#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "bldn/metrics.hpp"

using namespace bldn;

namespace {

Image2D wave(int h, int w) {
  Image2D img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img.at(y, x) = static_cast<float>(100 + 50 * std::sin(0.3 * x) * std::cos(0.2 * y));
  return img;
}

template <typename F>
Image2D map_xy(const Image2D& base, F f) {
  Image2D out = base;
  for (int y = 0; y < base.height; ++y)
    for (int x = 0; x < base.width; ++x) out.at(y, x) = static_cast<float>(f(base.at(y, x), y, x));
  return out;
}

Image2D noisy_copy(const Image2D& img, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, sigma);
  Image2D out = img;
  for (float& v : out.values) v = static_cast<float>(v + n(rng));
  return out;
}

// Direct SSIM: explicit 2D Gaussian window at every valid position.
double brute_ssim(const Image2D& a, const Image2D& b) {
  const int r = kSsimWindow / 2;
  std::vector<double> w;
  double total = 0;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      w.push_back(std::exp(-(dy * dy + dx * dx) / (2 * kSsimSigma * kSsimSigma)));
      total += w.back();
    }
  for (double& v : w) v /= total;
  const double L = double(b.max()) - b.min();
  const double c1 = std::pow(kSsimK1 * L, 2), c2 = std::pow(kSsimK2 * L, 2);
  double sum = 0;
  int n = 0;
  for (int y = r; y < a.height - r; ++y)
    for (int x = r; x < a.width - r; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      int k = 0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx, ++k) {
          const double va = a.at(y + dy, x + dx), vb = b.at(y + dy, x + dx);
          ma += w[k] * va;
          mb += w[k] * vb;
          saa += w[k] * va * va;
          sbb += w[k] * vb * vb;
          sab += w[k] * va * vb;
        }
      saa -= ma * ma;
      sbb -= mb * mb;
      sab -= ma * mb;
      sum += (2 * ma * mb + c1) * (2 * sab + c2) / ((ma * ma + mb * mb + c1) * (saa + sbb + c2));
      ++n;
    }
  return sum / n;
}

}  // namespace

TEST(Psnr, HandCases) {
  Image2D gt(1, 4);
  gt.values = {0, 100, 50, 50};
  EXPECT_EQ(psnr(gt, gt), std::numeric_limits<double>::infinity());
  Image2D pred = map_xy(gt, [](float v, int, int x) { return v + (x % 2 ? 1.0 : -1.0); });
  EXPECT_NEAR(psnr(pred, gt), 40.0, 1e-9);
  Image2D half = gt;
  half.values[0] += 2;  // MSE 1 again
  EXPECT_NEAR(psnr(half, gt), 40.0, 1e-9);
  EXPECT_THROW(psnr(Image2D(2, 2), gt), ContractViolation);
}

TEST(Psnr, ConstantOffsetAndDihedralInvariant) {
  const Image2D gt = wave(20, 24);
  const Image2D pred = noisy_copy(gt, 3.0, 1);
  const double base = psnr(pred, gt);
  const auto shift = [](const Image2D& i) { return map_xy(i, [](float v, int, int) { return v + 1000.0; }); };
  // Exact in real arithmetic; the float images lose low bits when shifted.
  EXPECT_NEAR(psnr(shift(pred), shift(gt)), base, 1e-4);
  for (Dihedral g : kAllDihedral) EXPECT_NEAR(psnr(apply(g, pred), apply(g, gt)), base, 1e-9);
}

TEST(Ssim, IdenticalIsOne) {
  const Image2D gt = wave(16, 16);
  EXPECT_DOUBLE_EQ(ssim(gt, gt), 1.0);
  EXPECT_THROW(ssim(Image2D(10, 10, 1.0f), Image2D(10, 10, 1.0f)), ContractViolation);
}

TEST(Ssim, MatchesReferenceImplementation) {
  // Values from skimage.metrics.structural_similarity(gaussian_weights=True,
  // sigma=1.5, use_sample_covariance=False, data_range=max-min of gt).
  const Image2D gt = wave(40, 48);
  struct Case {
    const char* name;
    Image2D pred;
    double expected;
  };
  const Case cases[] = {
      {"offset", map_xy(gt, [](float v, int, int) { return v + 5.0; }), 0.998622438508086},
      {"scaled", map_xy(gt, [](float v, int, int) { return 0.8 * v + 20; }), 0.9754550307078987},
      {"wave", map_xy(gt, [](float v, int y, int x) { return v + 10 * std::sin(0.7 * x + 0.4 * y); }),
       0.8649948235072282},
      {"shift", map_xy(gt, [](float, int y, int x) { return 100 + 50 * std::sin(0.3 * (x + 1)) * std::cos(0.2 * y); }),
       0.9371413690239035},
      {"checker", map_xy(gt, [](float v, int y, int x) { return v + 8.0 * ((x + y) % 2 * 2 - 1); }),
       0.806588765983412},
  };
  for (const Case& c : cases) {
    EXPECT_NEAR(ssim(c.pred, gt), c.expected, 1e-4) << c.name;
    EXPECT_NEAR(ssim(c.pred, gt), brute_ssim(c.pred, gt), 1e-9) << c.name;
  }
}

TEST(Ssim, DecreasesWithNoiseAndIsDihedralInvariant) {
  const Image2D gt = wave(32, 32);
  double last = 1.0;
  for (double s : {1.0, 4.0, 16.0}) {
    const double v = ssim(noisy_copy(gt, s, 2), gt);
    EXPECT_LT(v, last);
    last = v;
  }
  const Image2D pred = noisy_copy(gt, 5.0, 3);
  for (Dihedral g : kAllDihedral) EXPECT_NEAR(ssim(apply(g, pred), apply(g, gt)), ssim(pred, gt), 1e-6);
}

TEST(GaussianBlur, PreservesConstantsAndMass) {
  const Image2D flat(12, 9, 7.0f);
  for (float v : gaussian_blur(flat, 2.0).values) EXPECT_NEAR(v, 7.0f, 1e-5);
  Image2D impulse(41, 41, 0.0f);
  impulse.at(20, 20) = 1.0f;
  const Image2D b = gaussian_blur(impulse, 1.5);
  double total = 0;
  for (float v : b.values) total += v;
  EXPECT_NEAR(total, 1.0, 1e-6);
  EXPECT_NEAR(b.at(20, 21) / b.at(20, 20), std::exp(-1.0 / (2 * 1.5 * 1.5)), 1e-4);
}

TEST(Baseline, GridAndOrdering) {
  const auto grid = default_sigma_grid();
  ASSERT_EQ(grid.size(), 48u);
  EXPECT_DOUBLE_EQ(grid.front(), 0.3);
  EXPECT_DOUBLE_EQ(grid.back(), 5.0);

  const std::vector<Image2D> gt{wave(32, 32), wave(32, 40)};
  // Noise-free input: the narrowest blur wins.
  EXPECT_DOUBLE_EQ(gaussian_baseline(gt, gt, grid).sigma, 0.3);
  std::vector<Image2D> noisy{noisy_copy(gt[0], 20.0, 4), noisy_copy(gt[1], 20.0, 5)};
  const BaselineResult r = gaussian_baseline(noisy, gt, grid);
  const double noisy_psnr = (psnr(noisy[0], gt[0]) + psnr(noisy[1], gt[1])) / 2;
  EXPECT_GT(r.psnr, noisy_psnr + 3);
  EXPECT_GT(r.sigma, 0.3);
}

namespace {

Image2D ramp(int h, int w, double lo, double hi) {
  Image2D img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img.at(y, x) = static_cast<float>(lo + (hi - lo) * (y * w + x) / double(h * w - 1));
  return img;
}

}  // namespace

TEST(NoiseReport, GaussianBinsRecoverSigma) {
  const Image2D clean = ramp(400, 400, 100, 1100);
  std::mt19937_64 rng(6);
  const std::vector<Image2D> gt{clean};
  const std::vector<Image2D> noisy{synth_noise(clean, NoiseKind::gaussian, {}, rng, 100)};
  const BinnedNoiseReport r = noise_report(noisy, gt, {}, 32);
  ASSERT_EQ(r.bins.size(), 32u);
  std::size_t counted = 0;
  for (const NoiseBin& b : r.bins) {
    counted += b.count;
    EXPECT_TRUE(b.confident);
    EXPECT_NEAR(b.noise_std, 20.0, 1.0);
    EXPECT_NEAR(b.noise_mean, 0.0, 1.0);
    EXPECT_NEAR(b.noise_skewness, 0.0, 0.15);
  }
  EXPECT_EQ(counted, r.included);
  EXPECT_EQ(r.total, clean.size());
  EXPECT_DOUBLE_EQ(r.low, 100.0);
  EXPECT_NEAR(r.high, 100 + 0.995 * 1000, 0.01);
  EXPECT_NEAR(double(r.included) / r.total, 0.995, 0.001);
}

TEST(NoiseReport, PoissonGaussianFollowsAnalyticStd) {
  const Image2D clean = ramp(500, 400, 100, 1100);
  std::mt19937_64 rng(7);
  const SynthNoiseParams p;
  const std::vector<Image2D> gt{clean};
  const std::vector<Image2D> noisy{synth_noise(clean, NoiseKind::poisson_gaussian, p, rng, 100)};
  const BinnedNoiseReport r = noise_report(noisy, gt, {}, 20);
  for (const NoiseBin& b : r.bins) {
    const double expected = synth_noise_std(NoiseKind::poisson_gaussian, p, b.reference_mean, 100);
    EXPECT_NEAR(b.noise_std / expected, 1.0, 0.03) << b.reference_mean;
  }
}

TEST(NoiseReport, PixelOrderInvariantAndTsv) {
  const Image2D clean = ramp(60, 50, 0, 500);
  std::mt19937_64 rng(8);
  const Image2D noisy = synth_noise(clean, NoiseKind::speckle, {}, rng, 0);
  const BinnedNoiseReport a = noise_report(std::vector<Image2D>{noisy}, std::vector<Image2D>{clean}, {}, 16);

  // Same pixels, reversed order and split across two images.
  std::vector<float> rc(clean.values.rbegin(), clean.values.rend()), rn(noisy.values.rbegin(), noisy.values.rend());
  Image2D c1(30, 50), c2(30, 50), n1(30, 50), n2(30, 50);
  std::copy(rc.begin(), rc.begin() + 1500, c1.values.begin());
  std::copy(rc.begin() + 1500, rc.end(), c2.values.begin());
  std::copy(rn.begin(), rn.begin() + 1500, n1.values.begin());
  std::copy(rn.begin() + 1500, rn.end(), n2.values.begin());
  const BinnedNoiseReport b = noise_report(std::vector<Image2D>{n1, n2}, std::vector<Image2D>{c1, c2}, {}, 16);
  ASSERT_EQ(a.bins.size(), b.bins.size());
  for (std::size_t i = 0; i < a.bins.size(); ++i) {
    EXPECT_EQ(a.bins[i].count, b.bins[i].count);
    EXPECT_NEAR(a.bins[i].noise_std, b.bins[i].noise_std, 1e-9 * (1 + a.bins[i].noise_std));
  }

  const std::string tsv = format_report_tsv(a);
  EXPECT_EQ(tsv.substr(0, tsv.find('\n')),
            "bin\tlow\thigh\tcount\tconfident\treference_mean\tnoise_mean\tnoise_std\tnoise_skewness");
  EXPECT_EQ(std::count(tsv.begin(), tsv.end(), '\n'), 17);
}

TEST(NoiseReport, ModelColumnsAndKl) {
  DNetConfig d;
  d.base_filters = 4;
  d.tail_filters = 4;
  NetworkBundle bundle = NetworkBundle::create(d, NNetConfig{1, 8, 3}, 3);
  bundle.normalization = NormalizationRecord{100, 400};
  const Image2D clean = ramp(64, 64, 100, 1100);
  std::mt19937_64 rng(9);
  const std::vector<Image2D> gt{clean};
  const std::vector<Image2D> noisy{synth_noise(clean, NoiseKind::gaussian, {}, rng, 100)};
  const std::vector<ReportModel> models{{"m", &bundle}};
  const BinnedNoiseReport r = noise_report(noisy, gt, models, 8);
  ASSERT_EQ(r.model_names, std::vector<std::string>{"m"});
  for (const NoiseBin& b : r.bins) {
    ASSERT_EQ(b.models.size(), 1u);
    EXPECT_GE(b.models[0].kl, 0.0);
    EXPECT_GT(b.models[0].stddev, 0.0);
  }
  EXPECT_TRUE(std::isfinite(median_confident_kl(r, 0)));
  const std::string tsv = format_report_tsv(r);
  EXPECT_NE(tsv.find("\tm_eval\tm_std\tm_skewness\tm_kl\n"), std::string::npos);
}
