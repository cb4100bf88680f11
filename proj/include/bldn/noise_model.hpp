#pragma once

// Conditional noise distributions: a single Gaussian or a centered Gaussian
// mixture per pixel, their likelihood losses, moments, sampling, and the
// histogram-vs-model KL divergence used by the diagnostics.

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "bldn/autodiff.hpp"

namespace bldn {

inline constexpr int kMaxComponents = 3;
inline constexpr double kMinLastWeight = 1e-12;

/// Mixture parameters at one pixel. Means are offsets from the clean value.
struct Mixture {
  int components = 1;
  std::array<double, kMaxComponents> weight{1.0, 0.0, 0.0};
  std::array<double, kMaxComponents> mean{0.0, 0.0, 0.0};
  std::array<double, kMaxComponents> stddev{1.0, 0.0, 0.0};

  static Mixture gaussian(double sigma) {
    Mixture m;
    m.stddev[0] = sigma;
    return m;
  }
  /// Multiplies every mean and std by `factor` (unit change).
  [[nodiscard]] Mixture scaled(double factor) const;
};

/// Per-pixel mixture parameters for a whole image, stored component-major:
/// weights[i * height * width + y * width + x].
struct NoiseParams {
  int components = 1;
  int height = 0;
  int width = 0;
  std::vector<float> weights;
  std::vector<float> means;
  std::vector<float> stddevs;

  NoiseParams() = default;
  NoiseParams(int n, int h, int w);
  [[nodiscard]] Mixture at(int y, int x) const;
  void set(int y, int x, const Mixture& m);
};

struct Centering {
  double last_mean = 0;
  bool degenerate = false;  // last weight fell below kMinLastWeight and was clamped
};

/// Mean of the last component so that sum_i weight_i * mean_i = 0.
/// `weights` has N entries, `free_means` N - 1.
Centering center_mixture(std::span<const double> weights, std::span<const double> free_means);

/// log(sigma^2) + ((y - mu) / sigma)^2
double gaussian_nll(double y, double mu, double sigma);

/// -2 log sum_i w_i phi(y; mu + m_i, s_i) - log(2 pi); equals gaussian_nll for one component.
double gmm_nll(double y, double mu, const Mixture& mixture);

/// Loss and its gradient w.r.t. the raw mixture inputs: the predicted value,
/// per-component std, all N weights (before the simplex constraint), and the
/// N - 1 free means; the last mean is derived by centering.
struct GmmNllGradient {
  double value = 0;
  double d_mu = 0;
  std::array<double, kMaxComponents> d_stddev{};
  std::array<double, kMaxComponents> d_weight{};
  std::array<double, kMaxComponents> d_free_mean{};
  bool degenerate = false;
};

GmmNllGradient gmm_nll_gradient(double y, double mu, int components, std::span<const double> weights,
                                std::span<const double> free_means, std::span<const double> stddevs);

/// Builds a centered mixture from raw head outputs.
Mixture make_centered_mixture(int components, std::span<const double> weights, std::span<const double> free_means,
                              std::span<const double> stddevs, bool* degenerate = nullptr);

struct Moments {
  double mean = 0;
  double variance = 0;
  double skewness = 0;
  bool skewness_defined = true;  // false when variance < 1e-18
};

Moments mixture_moments(const Mixture& mixture);

double sample_noise(const Mixture& mixture, std::mt19937_64& rng);

/// P(noise <= x) under the mixture.
double mixture_cdf(double x, const Mixture& mixture);

/// Noise-value histogram for one signal bin.
struct HistogramBin {
  double signal_low = 0;
  double signal_high = 0;
  std::vector<double> edges;   // strictly increasing, counts.size() + 1 entries
  std::vector<double> counts;  // non-negative
  std::size_t samples = 0;

  static HistogramBin from_samples(std::span<const double> values, int bins, double low, double high);
};

/// Discrete KL(p || q) between the normalized histogram and the model mass
/// integrated over each histogram bin (q floored at 1e-12).
double kl_bin(const HistogramBin& hist, const Mixture& mixture);

/// Outputs of the N-net heads on a tape. For one component only `stddev`
/// is set; for two, `weight` has a single sigmoid channel (weight of the
/// first component); for three, `weight` holds the softmax channels.
struct NoiseHeads {
  int components = 1;
  Var stddev;
  Var weight;
  Var free_mean;
};

/// Mixture parameters read from head values at column m of (1, C, 1, M) tensors.
template <typename T>
Mixture mixture_from_heads(Tape<T>& tape, const NoiseHeads& heads, int column, bool* degenerate = nullptr);

/// Scalar tape node: scale * sum_m gmm_nll(targets[m], mu[m], heads[m]).
/// `mu` and every head are (1, C, 1, M). `degenerate_count` (optional)
/// receives the number of clamped last-weight evaluations.
template <typename T>
Var gmm_nll_loss(Tape<T>& tape, Var mu, const NoiseHeads& heads, std::span<const T> targets, double scale,
                 int* degenerate_count = nullptr);

}  // namespace bldn
