#pragma once

#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "bldn/image.hpp"
#include "bldn/networks.hpp"

namespace bldn {

/// 10 log10(d^2 / MSE) with d = max(gt) - min(gt); +inf when MSE is zero.
double psnr(const Image2D& pred, const Image2D& gt);

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

/// Mean local SSIM over all fully contained 11x11 Gaussian windows
/// (sigma 1.5), dynamic range max(gt) - min(gt).
double ssim(const Image2D& pred, const Image2D& gt);

/// Separable Gaussian blur, kernel radius round(4 sigma), mirror borders
/// (edge sample repeated).
Image2D gaussian_blur(const Image2D& image, double sigma);

/// 0.3, 0.4, ..., 5.0
std::vector<double> default_sigma_grid();

struct BaselineResult {
  double sigma = 0;
  double psnr = 0;  // mean over images
  double ssim = 0;  // mean over images
};

/// Grid search for the blur width maximising the mean PSNR.
BaselineResult gaussian_baseline(std::span<const Image2D> noisy, std::span<const Image2D> gt,
                                 std::span<const double> sigma_grid);

// ---------------------------------------------------------------------------
// Binned noise diagnostics

inline constexpr int kDefaultReportBins = 64;
inline constexpr std::size_t kMinConfidentSamples = 100;
inline constexpr double kReportUpperPercentile = 0.995;
inline constexpr int kKlHistogramBins = 64;

struct ReportModel {
  std::string name;
  NetworkBundle* bundle = nullptr;
};

struct ModelBinStats {
  double eval_value = 0;  // mean denoised value of the bin's pixels (raw units)
  double stddev = 0;
  double skewness = 0;
  double kl = 0;
};

struct NoiseBin {
  double low = 0;
  double high = 0;
  std::size_t count = 0;
  bool confident = false;
  double reference_mean = 0;
  double noise_mean = 0;
  double noise_std = 0;
  double noise_skewness = 0;
  std::vector<ModelBinStats> models;  // one per report model
};

struct BinnedNoiseReport {
  double low = 0;   // min of the reference set
  double high = 0;  // 99.5th percentile of the reference set
  std::size_t included = 0;
  std::size_t total = 0;
  std::vector<std::string> model_names;
  std::vector<NoiseBin> bins;
};

/// Bins pixels by reference value over [min, p99.5] and compares the
/// empirical distribution of noisy - reference in each bin with every
/// model's predicted mixture.
BinnedNoiseReport noise_report(std::span<const Image2D> noisy, std::span<const Image2D> reference,
                               std::span<const ReportModel> models = {}, int bins = kDefaultReportBins);

/// Median per-bin KL of one model over confident bins (NaN if none).
double median_confident_kl(const BinnedNoiseReport& report, std::size_t model);

/// Tab-separated table with a header row.
std::string format_report_tsv(const BinnedNoiseReport& report);
void write_report_tsv(const std::filesystem::path& path, const BinnedNoiseReport& report);

}  // namespace bldn
