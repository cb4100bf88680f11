#include "bldn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>

#include "bldn/data_pipeline.hpp"
#include "bldn/inference.hpp"

namespace bldn {

namespace {

void require_same_shape(const Image2D& a, const Image2D& b, const char* what) {
  if (!a.same_shape(b))
    throw ContractViolation(std::string(what) + ": shape mismatch " + std::to_string(a.height) + "x" +
                            std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                            std::to_string(b.width));
}

std::vector<double> gaussian_kernel(double sigma, int radius) {
  std::vector<double> k(2 * radius + 1);
  double total = 0;
  for (int i = -radius; i <= radius; ++i) total += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= total;
  return k;
}

// Mirror with the edge sample repeated: d c b a | a b c d | d c b a.
int mirror_index(int i, int n) {
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

}  // namespace

double psnr(const Image2D& pred, const Image2D& gt) {
  require_same_shape(pred, gt, "psnr");
  double mse = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double d = static_cast<double>(pred.values[i]) - gt.values[i];
    mse += d * d;
  }
  mse /= static_cast<double>(gt.size());
  if (mse == 0) return std::numeric_limits<double>::infinity();
  const double range = static_cast<double>(gt.max()) - gt.min();
  return 10.0 * std::log10(range * range / mse);
}

double ssim(const Image2D& pred, const Image2D& gt) {
  require_same_shape(pred, gt, "ssim");
  require(gt.height >= kSsimWindow && gt.width >= kSsimWindow, "ssim: images must be at least 11x11");
  const int r = kSsimWindow / 2;
  const std::vector<double> k = gaussian_kernel(kSsimSigma, r);
  const double range = static_cast<double>(gt.max()) - gt.min();
  const double c1 = (kSsimK1 * range) * (kSsimK1 * range);
  const double c2 = (kSsimK2 * range) * (kSsimK2 * range);

  const int h = gt.height;
  const int w = gt.width;
  const int ow = w - 2 * r;
  const int oh = h - 2 * r;
  // Horizontal pass over every row, valid columns only.
  std::vector<std::array<double, 5>> rows(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      std::array<double, 5> acc{};
      for (int t = 0; t < kSsimWindow; ++t) {
        const double a = pred.at(y, x + t);
        const double b = gt.at(y, x + t);
        acc[0] += k[t] * a;
        acc[1] += k[t] * b;
        acc[2] += k[t] * a * a;
        acc[3] += k[t] * b * b;
        acc[4] += k[t] * a * b;
      }
      rows[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  double total = 0;
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      std::array<double, 5> m{};
      for (int t = 0; t < kSsimWindow; ++t) {
        const auto& v = rows[static_cast<std::size_t>(y + t) * ow + x];
        for (int q = 0; q < 5; ++q) m[q] += k[t] * v[q];
      }
      const double vx = m[2] - m[0] * m[0];
      const double vy = m[3] - m[1] * m[1];
      const double vxy = m[4] - m[0] * m[1];
      total += ((2 * m[0] * m[1] + c1) * (2 * vxy + c2)) / ((m[0] * m[0] + m[1] * m[1] + c1) * (vx + vy + c2));
    }
  return total / (static_cast<double>(oh) * ow);
}

Image2D gaussian_blur(const Image2D& image, double sigma) {
  require(sigma > 0, "gaussian_blur: sigma must be positive");
  const int r = static_cast<int>(4.0 * sigma + 0.5);
  const std::vector<double> k = gaussian_kernel(sigma, r);
  const int h = image.height;
  const int w = image.width;
  std::vector<double> tmp(image.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int t = -r; t <= r; ++t) acc += k[t + r] * image.at(y, mirror_index(x + t, w));
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  Image2D out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int t = -r; t <= r; ++t) acc += k[t + r] * tmp[static_cast<std::size_t>(mirror_index(y + t, h)) * w + x];
      out.at(y, x) = static_cast<float>(acc);
    }
  out.bit_depth = image.bit_depth;
  out.pairing_id = image.pairing_id;
  return out;
}

std::vector<double> default_sigma_grid() {
  std::vector<double> grid;
  for (int i = 3; i <= 50; ++i) grid.push_back(i / 10.0);
  return grid;
}

BaselineResult gaussian_baseline(std::span<const Image2D> noisy, std::span<const Image2D> gt,
                                 std::span<const double> sigma_grid) {
  require(!noisy.empty() && noisy.size() == gt.size(), "gaussian_baseline: need equally sized, non-empty sets");
  require(!sigma_grid.empty(), "gaussian_baseline: empty sigma grid");
  BaselineResult best;
  best.psnr = -std::numeric_limits<double>::infinity();
  for (double sigma : sigma_grid) {
    double total = 0;
    for (std::size_t i = 0; i < noisy.size(); ++i) total += psnr(gaussian_blur(noisy[i], sigma), gt[i]);
    const double mean = total / static_cast<double>(noisy.size());
    if (mean > best.psnr) {
      best.sigma = sigma;
      best.psnr = mean;
    }
  }
  double total_ssim = 0;
  for (std::size_t i = 0; i < noisy.size(); ++i) total_ssim += ssim(gaussian_blur(noisy[i], best.sigma), gt[i]);
  best.ssim = total_ssim / static_cast<double>(noisy.size());
  return best;
}

// ---------------------------------------------------------------------------

namespace {

struct SampleMoments {
  double mean = 0;
  double stddev = 0;
  double skewness = 0;
};

SampleMoments sample_moments(std::span<const double> v) {
  SampleMoments out;
  const auto n = static_cast<double>(v.size());
  if (v.empty()) return out;
  for (double x : v) out.mean += x;
  out.mean /= n;
  double m2 = 0;
  double m3 = 0;
  for (double x : v) {
    const double d = x - out.mean;
    m2 += d * d;
    m3 += d * d * d;
  }
  m2 /= n;
  m3 /= n;
  out.stddev = v.size() > 1 ? std::sqrt(m2 * n / (n - 1)) : 0.0;
  out.skewness = m2 > 0 ? m3 / std::pow(m2, 1.5) : 0.0;
  return out;
}

}  // namespace

BinnedNoiseReport noise_report(std::span<const Image2D> noisy, std::span<const Image2D> reference,
                               std::span<const ReportModel> models, int bins) {
  require(!noisy.empty() && noisy.size() == reference.size(), "noise_report: need equally sized, non-empty sets");
  require(bins >= 1, "noise_report: bins must be >= 1");
  for (std::size_t i = 0; i < noisy.size(); ++i) require_same_shape(noisy[i], reference[i], "noise_report");

  BinnedNoiseReport report;
  report.low = dataset_min(reference);
  report.high = dataset_percentile(reference, kReportUpperPercentile);
  require(report.high > report.low, "noise_report: reference set has no value range");
  for (const ReportModel& m : models) {
    require(m.bundle != nullptr, "noise_report: model '" + m.name + "' has no bundle");
    report.model_names.push_back(m.name);
  }

  const double width = (report.high - report.low) / bins;
  auto bin_of = [&](double x) -> int {
    if (x < report.low || x > report.high) return -1;
    return std::min(bins - 1, static_cast<int>((x - report.low) / width));
  };

  std::vector<std::vector<double>> residuals(bins);
  std::vector<double> reference_sum(bins, 0.0);
  for (std::size_t i = 0; i < noisy.size(); ++i) {
    report.total += reference[i].size();
    for (std::size_t k = 0; k < reference[i].size(); ++k) {
      const int b = bin_of(reference[i].values[k]);
      if (b < 0) continue;
      residuals[b].push_back(static_cast<double>(noisy[i].values[k]) - reference[i].values[k]);
      reference_sum[b] += reference[i].values[k];
      ++report.included;
    }
  }

  // Mean denoised value per bin, for each model.
  std::vector<std::vector<double>> denoised_sum(models.size(), std::vector<double>(bins, 0.0));
  for (std::size_t m = 0; m < models.size(); ++m)
    for (std::size_t i = 0; i < noisy.size(); ++i) {
      const Image2D denoised = predict(*models[m].bundle, noisy[i]).denoised;
      for (std::size_t k = 0; k < denoised.size(); ++k) {
        const int b = bin_of(reference[i].values[k]);
        if (b >= 0) denoised_sum[m][b] += denoised.values[k];
      }
    }

  report.bins.resize(bins);
  for (int b = 0; b < bins; ++b) {
    NoiseBin& bin = report.bins[b];
    bin.low = report.low + b * width;
    bin.high = b + 1 == bins ? report.high : report.low + (b + 1) * width;
    bin.count = residuals[b].size();
    bin.confident = bin.count >= kMinConfidentSamples;
    if (bin.count == 0) {
      bin.models.resize(models.size());
      continue;
    }
    bin.reference_mean = reference_sum[b] / static_cast<double>(bin.count);
    const SampleMoments s = sample_moments(residuals[b]);
    bin.noise_mean = s.mean;
    bin.noise_std = s.stddev;
    bin.noise_skewness = s.skewness;

    const auto [lo, hi] = std::minmax_element(residuals[b].begin(), residuals[b].end());
    std::optional<HistogramBin> hist;
    if (*hi > *lo) {
      hist = HistogramBin::from_samples(residuals[b], kKlHistogramBins, *lo, *hi);
      hist->signal_low = bin.low;
      hist->signal_high = bin.high;
    }
    for (std::size_t m = 0; m < models.size(); ++m) {
      NetworkBundle& bundle = *models[m].bundle;
      const NormalizationRecord& norm = *bundle.normalization;
      ModelBinStats stats;
      stats.eval_value = denoised_sum[m][b] / static_cast<double>(bin.count);
      const Mixture mix = nnet_at(bundle, norm.apply(stats.eval_value)).scaled(norm.scale);
      const Moments mo = mixture_moments(mix);
      stats.stddev = std::sqrt(mo.variance);
      stats.skewness = mo.skewness_defined ? mo.skewness : 0.0;
      stats.kl = hist ? kl_bin(*hist, mix) : std::numeric_limits<double>::quiet_NaN();
      bin.models.push_back(stats);
    }
  }
  return report;
}

double median_confident_kl(const BinnedNoiseReport& report, std::size_t model) {
  require(model < report.model_names.size(), "median_confident_kl: model index out of range");
  std::vector<double> v;
  for (const NoiseBin& bin : report.bins)
    if (bin.confident && std::isfinite(bin.models[model].kl)) v.push_back(bin.models[model].kl);
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string format_report_tsv(const BinnedNoiseReport& report) {
  std::ostringstream out;
  out << "bin\tlow\thigh\tcount\tconfident\treference_mean\tnoise_mean\tnoise_std\tnoise_skewness";
  for (const std::string& name : report.model_names)
    out << '\t' << name << "_eval\t" << name << "_std\t" << name << "_skewness\t" << name << "_kl";
  out << '\n';
  char buffer[64];
  auto num = [&](double v) {
    std::snprintf(buffer, sizeof(buffer), "%.9g", v);
    return std::string(buffer);
  };
  for (std::size_t b = 0; b < report.bins.size(); ++b) {
    const NoiseBin& bin = report.bins[b];
    out << b << '\t' << num(bin.low) << '\t' << num(bin.high) << '\t' << bin.count << '\t' << (bin.confident ? 1 : 0)
        << '\t' << num(bin.reference_mean) << '\t' << num(bin.noise_mean) << '\t' << num(bin.noise_std) << '\t'
        << num(bin.noise_skewness);
    for (const ModelBinStats& m : bin.models)
      out << '\t' << num(m.eval_value) << '\t' << num(m.stddev) << '\t' << num(m.skewness) << '\t' << num(m.kl);
    out << '\n';
  }
  return out.str();
}

void write_report_tsv(const std::filesystem::path& path, const BinnedNoiseReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write report " + path.string());
  out << format_report_tsv(report);
  if (!out) throw FormatError("write failed for report " + path.string());
}

}  // namespace bldn
