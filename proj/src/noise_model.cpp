#include "bldn/noise_model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace bldn {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2 pi)

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

}  // namespace

Mixture Mixture::scaled(double factor) const {
  Mixture out = *this;
  for (int i = 0; i < components; ++i) {
    out.mean[i] *= factor;
    out.stddev[i] *= factor;
  }
  return out;
}

NoiseParams::NoiseParams(int n, int h, int w) : components(n), height(h), width(w) {
  require(n >= 1 && n <= kMaxComponents, "NoiseParams: components must be in 1..3");
  const std::size_t size = static_cast<std::size_t>(n) * h * w;
  weights.assign(size, 0.0f);
  means.assign(size, 0.0f);
  stddevs.assign(size, 0.0f);
}

Mixture NoiseParams::at(int y, int x) const {
  Mixture m;
  m.components = components;
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  const std::size_t p = static_cast<std::size_t>(y) * width + x;
  for (int i = 0; i < components; ++i) {
    m.weight[i] = weights[i * plane + p];
    m.mean[i] = means[i * plane + p];
    m.stddev[i] = stddevs[i * plane + p];
  }
  return m;
}

void NoiseParams::set(int y, int x, const Mixture& m) {
  require(m.components == components, "NoiseParams::set: component count mismatch");
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  const std::size_t p = static_cast<std::size_t>(y) * width + x;
  for (int i = 0; i < components; ++i) {
    weights[i * plane + p] = static_cast<float>(m.weight[i]);
    means[i * plane + p] = static_cast<float>(m.mean[i]);
    stddevs[i * plane + p] = static_cast<float>(m.stddev[i]);
  }
}

Centering center_mixture(std::span<const double> weights, std::span<const double> free_means) {
  require(!weights.empty() && free_means.size() + 1 == weights.size(),
          "center_mixture: expected N weights and N-1 free means");
  Centering out;
  double last = weights.back();
  if (last < kMinLastWeight) {
    last = kMinLastWeight;
    out.degenerate = true;
  }
  double weighted = 0;
  for (std::size_t i = 0; i < free_means.size(); ++i) weighted += weights[i] * free_means[i];
  out.last_mean = -weighted / last;
  return out;
}

double gaussian_nll(double y, double mu, double sigma) {
  require(sigma > 0, "gaussian_nll: sigma must be positive");
  const double z = (y - mu) / sigma;
  return 2.0 * std::log(sigma) + z * z;
}

Mixture make_centered_mixture(int components, std::span<const double> weights, std::span<const double> free_means,
                              std::span<const double> stddevs, bool* degenerate) {
  require(components >= 1 && components <= kMaxComponents, "mixture: components must be in 1..3");
  require(weights.size() == static_cast<std::size_t>(components) &&
              stddevs.size() == static_cast<std::size_t>(components) &&
              free_means.size() + 1 == static_cast<std::size_t>(components),
          "mixture: inconsistent parameter counts");
  Mixture m;
  m.components = components;
  for (int i = 0; i < components; ++i) {
    m.weight[i] = weights[i];
    m.stddev[i] = stddevs[i];
  }
  for (int i = 0; i + 1 < components; ++i) m.mean[i] = free_means[i];
  const Centering c = center_mixture(weights, free_means);
  m.mean[components - 1] = c.last_mean;
  if (degenerate != nullptr) *degenerate = c.degenerate;
  return m;
}

double gmm_nll(double y, double mu, const Mixture& mixture) {
  const double r = y - mu;
  std::array<double, kMaxComponents> log_terms{};
  double peak = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < mixture.components; ++i) {
    require(mixture.stddev[i] > 0, "gmm_nll: non-positive component std");
    const double z = (r - mixture.mean[i]) / mixture.stddev[i];
    const double w = std::max(mixture.weight[i], 1e-300);
    log_terms[i] = std::log(w) - std::log(mixture.stddev[i]) - 0.5 * z * z;
    peak = std::max(peak, log_terms[i]);
  }
  double total = 0;
  for (int i = 0; i < mixture.components; ++i) total += std::exp(log_terms[i] - peak);
  // -2 * (peak + log(total) - 0.5 log(2 pi)) - log(2 pi)
  return -2.0 * (peak + std::log(total));
}

GmmNllGradient gmm_nll_gradient(double y, double mu, int components, std::span<const double> weights,
                                std::span<const double> free_means, std::span<const double> stddevs) {
  GmmNllGradient g;
  const Mixture m = make_centered_mixture(components, weights, free_means, stddevs, &g.degenerate);
  const int n = components;
  const double r = y - mu;

  std::array<double, kMaxComponents> log_terms{};
  std::array<double, kMaxComponents> z{};
  double peak = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    z[i] = (r - m.mean[i]) / m.stddev[i];
    log_terms[i] = std::log(std::max(m.weight[i], 1e-300)) - std::log(m.stddev[i]) - 0.5 * z[i] * z[i];
    peak = std::max(peak, log_terms[i]);
  }
  double total = 0;
  std::array<double, kMaxComponents> resp{};
  for (int i = 0; i < n; ++i) {
    resp[i] = std::exp(log_terms[i] - peak);
    total += resp[i];
  }
  for (int i = 0; i < n; ++i) resp[i] /= total;
  g.value = -2.0 * (peak + std::log(total));

  // dL/dlog_term_i = -2 resp_i
  double d_r = 0;
  std::array<double, kMaxComponents> d_mean{};
  for (int i = 0; i < n; ++i) {
    const double s = m.stddev[i];
    d_r += -2.0 * resp[i] * (-z[i] / s);
    d_mean[i] = -2.0 * resp[i] * (z[i] / s);
    g.d_stddev[i] = -2.0 * resp[i] * (z[i] * z[i] - 1.0) / s;
    g.d_weight[i] = -2.0 * resp[i] / std::max(m.weight[i], 1e-300);
  }
  g.d_mu = -d_r;

  // Chain through the centering rule for the last mean.
  if (n > 1) {
    const double last_weight = std::max(m.weight[n - 1], kMinLastWeight);
    const double g_last = d_mean[n - 1];
    for (int i = 0; i + 1 < n; ++i) {
      g.d_free_mean[i] = d_mean[i] - g_last * m.weight[i] / last_weight;
      g.d_weight[i] += -g_last * m.mean[i] / last_weight;
    }
    if (!g.degenerate) g.d_weight[n - 1] += -g_last * m.mean[n - 1] / last_weight;
  }
  return g;
}

Moments mixture_moments(const Mixture& mixture) {
  Moments out;
  for (int i = 0; i < mixture.components; ++i) out.mean += mixture.weight[i] * mixture.mean[i];
  double third = 0;
  for (int i = 0; i < mixture.components; ++i) {
    const double d = mixture.mean[i] - out.mean;
    const double v = mixture.stddev[i] * mixture.stddev[i];
    out.variance += mixture.weight[i] * (v + d * d);
    third += mixture.weight[i] * (d * d * d + 3.0 * d * v);
  }
  if (out.variance < 1e-18) {
    out.skewness_defined = false;
    out.skewness = 0;
  } else {
    out.skewness = third / std::pow(out.variance, 1.5);
  }
  return out;
}

double sample_noise(const Mixture& mixture, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double u = uniform(rng);
  int chosen = mixture.components - 1;
  double cumulative = 0;
  for (int i = 0; i < mixture.components; ++i) {
    cumulative += mixture.weight[i];
    if (u < cumulative) {
      chosen = i;
      break;
    }
  }
  std::normal_distribution<double> normal(mixture.mean[chosen], mixture.stddev[chosen]);
  return normal(rng);
}

double mixture_cdf(double x, const Mixture& mixture) {
  double total = 0;
  for (int i = 0; i < mixture.components; ++i)
    total += mixture.weight[i] * normal_cdf((x - mixture.mean[i]) / mixture.stddev[i]);
  return total;
}

HistogramBin HistogramBin::from_samples(std::span<const double> values, int bins, double low, double high) {
  require(bins >= 1 && high > low, "HistogramBin: need bins >= 1 and high > low");
  HistogramBin h;
  h.edges.resize(bins + 1);
  for (int k = 0; k <= bins; ++k) h.edges[k] = low + (high - low) * k / bins;
  h.counts.assign(bins, 0.0);
  for (double v : values) {
    if (v < low || v > high) continue;
    int k = static_cast<int>((v - low) / (high - low) * bins);
    k = std::clamp(k, 0, bins - 1);
    h.counts[k] += 1;
    ++h.samples;
  }
  return h;
}

double kl_bin(const HistogramBin& hist, const Mixture& mixture) {
  require(hist.edges.size() == hist.counts.size() + 1, "kl_bin: edges/counts size mismatch");
  double total = 0;
  for (double c : hist.counts) {
    require(c >= 0, "kl_bin: negative count");
    total += c;
  }
  require(total > 0, "kl_bin: empty histogram");
  double kl = 0;
  double lower = mixture_cdf(hist.edges[0], mixture);
  for (std::size_t k = 0; k < hist.counts.size(); ++k) {
    require(hist.edges[k + 1] > hist.edges[k], "kl_bin: edges must be strictly increasing");
    const double upper = mixture_cdf(hist.edges[k + 1], mixture);
    const double q = std::max(upper - lower, 1e-12);
    lower = upper;
    if (hist.counts[k] == 0) continue;
    const double p = hist.counts[k] / total;
    kl += p * std::log(p / q);
  }
  return kl;
}

template <typename T>
Mixture mixture_from_heads(Tape<T>& tape, const NoiseHeads& heads, int column, bool* degenerate) {
  const int n = heads.components;
  std::array<double, kMaxComponents> w{1.0, 0.0, 0.0};
  std::array<double, kMaxComponents> s{};
  std::array<double, kMaxComponents> fm{};
  const Tensor4<T>& sd = tape.value(heads.stddev);
  for (int i = 0; i < n; ++i) s[i] = sd.at(0, i, 0, column);
  if (n == 2) {
    w[0] = tape.value(heads.weight).at(0, 0, 0, column);
    w[1] = 1.0 - w[0];
  } else if (n == 3) {
    for (int i = 0; i < n; ++i) w[i] = tape.value(heads.weight).at(0, i, 0, column);
  }
  for (int i = 0; i + 1 < n; ++i) fm[i] = tape.value(heads.free_mean).at(0, i, 0, column);
  return make_centered_mixture(n, std::span(w.data(), n), std::span(fm.data(), n - 1), std::span(s.data(), n),
                               degenerate);
}

template <typename T>
Var gmm_nll_loss(Tape<T>& tape, Var mu, const NoiseHeads& heads, std::span<const T> targets, double scale,
                 int* degenerate_count) {
  const int n = heads.components;
  const Tensor4<T>& mu_value = tape.value(mu);
  const int count = mu_value.width();
  require(mu_value.shape() == Shape4{1, 1, 1, count}, "gmm_nll_loss: mu must be (1,1,1,M)");
  require(targets.size() == static_cast<std::size_t>(count), "gmm_nll_loss: target count mismatch");
  require(tape.value(heads.stddev).shape() == Shape4{1, n, 1, count}, "gmm_nll_loss: stddev head shape");
  if (n == 2) require(tape.value(heads.weight).shape() == Shape4{1, 1, 1, count}, "gmm_nll_loss: weight head shape");
  if (n == 3) require(tape.value(heads.weight).shape() == Shape4{1, 3, 1, count}, "gmm_nll_loss: weight head shape");
  if (n > 1)
    require(tape.value(heads.free_mean).shape() == Shape4{1, n - 1, 1, count}, "gmm_nll_loss: mean head shape");

  Tensor4<T> d_mu({1, 1, 1, count});
  Tensor4<T> d_sd({1, n, 1, count});
  Tensor4<T> d_w(n == 1 ? Shape4{} : tape.value(heads.weight).shape());
  Tensor4<T> d_fm(n == 1 ? Shape4{} : Shape4{1, n - 1, 1, count});
  double total = 0;
  int degenerate = 0;

  std::array<double, kMaxComponents> w{1.0, 0.0, 0.0};
  std::array<double, kMaxComponents> s{};
  std::array<double, kMaxComponents> fm{};
  for (int m = 0; m < count; ++m) {
    for (int i = 0; i < n; ++i) s[i] = tape.value(heads.stddev).at(0, i, 0, m);
    if (n == 2) {
      w[0] = tape.value(heads.weight).at(0, 0, 0, m);
      w[1] = 1.0 - w[0];
    } else if (n == 3) {
      for (int i = 0; i < n; ++i) w[i] = tape.value(heads.weight).at(0, i, 0, m);
    }
    for (int i = 0; i + 1 < n; ++i) fm[i] = tape.value(heads.free_mean).at(0, i, 0, m);

    const GmmNllGradient g = gmm_nll_gradient(targets[m], mu_value.at(0, 0, 0, m), n, std::span(w.data(), n),
                                              std::span(fm.data(), n - 1), std::span(s.data(), n));
    total += g.value;
    degenerate += g.degenerate ? 1 : 0;
    d_mu.at(0, 0, 0, m) = static_cast<T>(scale * g.d_mu);
    for (int i = 0; i < n; ++i) d_sd.at(0, i, 0, m) = static_cast<T>(scale * g.d_stddev[i]);
    if (n == 2) d_w.at(0, 0, 0, m) = static_cast<T>(scale * (g.d_weight[0] - g.d_weight[1]));
    if (n == 3)
      for (int i = 0; i < n; ++i) d_w.at(0, i, 0, m) = static_cast<T>(scale * g.d_weight[i]);
    for (int i = 0; i + 1 < n; ++i) d_fm.at(0, i, 0, m) = static_cast<T>(scale * g.d_free_mean[i]);
  }
  if (degenerate_count != nullptr) *degenerate_count = degenerate;

  std::vector<Var> inputs{mu, heads.stddev};
  if (n > 1) {
    inputs.push_back(heads.weight);
    inputs.push_back(heads.free_mean);
  }
  Var self{static_cast<int>(tape.node_count())};
  return tape.custom(inputs, Tensor4<T>(Shape4{}, static_cast<T>(scale * total)),
                     [=, d_mu = std::move(d_mu), d_sd = std::move(d_sd), d_w = std::move(d_w),
                      d_fm = std::move(d_fm)](Tape<T>& t) {
                       const T upstream = t.grad(self).data()[0];
                       auto push = [&](Var v, const Tensor4<T>& local) {
                         if (!t.requires_grad(v)) return;
                         Tensor4<T> g = local;
                         for (T& e : g.data()) e *= upstream;
                         t.accumulate(v, g);
                       };
                       push(mu, d_mu);
                       push(heads.stddev, d_sd);
                       if (n > 1) {
                         push(heads.weight, d_w);
                         push(heads.free_mean, d_fm);
                       }
                     });
}

template Mixture mixture_from_heads(Tape<float>&, const NoiseHeads&, int, bool*);
template Mixture mixture_from_heads(Tape<double>&, const NoiseHeads&, int, bool*);
template Var gmm_nll_loss(Tape<float>&, Var, const NoiseHeads&, std::span<const float>, double, int*);
template Var gmm_nll_loss(Tape<double>&, Var, const NoiseHeads&, std::span<const double>, double, int*);

}  // namespace bldn
