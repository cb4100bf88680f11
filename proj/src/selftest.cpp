#include "bldn/selftest.hpp"

#include <cmath>
#include <random>

#include "bldn/grad_check.hpp"
#include "bldn/masking.hpp"
#include "bldn/networks.hpp"

namespace bldn {

namespace {

Tensor4<double> random_tensor(Shape4 shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Tensor4<double> t(shape);
  for (double& v : t.data()) v = normal(rng);
  return t;
}

CheckResult conv_check(const std::string& name, int k, ConvPadding pad, std::mt19937_64& rng) {
  ParamSet<double> params;
  params.add("k", random_tensor({4, 3, k, k}, rng, 0.5));
  params.add("b", random_tensor({1, 4, 1, 1}, rng, 0.5));
  Fragment f = [&params, pad](Tape<double>& t, Var x) {
    return t.conv2d(x, t.param(params.at("k")), t.param(params.at("b")), pad);
  };
  return {name, grad_check(f, random_tensor({2, 3, 6, 7}, rng), &params), kPrimitiveGradTolerance};
}

CheckResult input_check(const std::string& name, const Fragment& f, Shape4 shape, std::mt19937_64& rng) {
  return {name, grad_check(f, random_tensor(shape, rng), nullptr), kPrimitiveGradTolerance};
}

}  // namespace

std::vector<CheckResult> primitive_grad_checks() {
  std::mt19937_64 rng(2024);
  std::vector<CheckResult> out;
  out.push_back(conv_check("conv2d 3x3 same", 3, ConvPadding::same(3), rng));
  out.push_back(conv_check("conv2d 2x2 same", 2, ConvPadding::same(2), rng));
  out.push_back(conv_check("conv2d 1x1", 1, ConvPadding::same(1), rng));
  out.push_back(conv_check("conv2d 3x3 valid", 3, ConvPadding::uniform(0), rng));
  out.push_back(input_check("max pool 2x2", [](Tape<double>& t, Var x) { return t.pool2(x); }, {2, 2, 6, 8}, rng));
  out.push_back(input_check(
      "nearest upsample x2", [](Tape<double>& t, Var x) { return t.upsample_nearest(x, 2); }, {1, 2, 3, 4}, rng));
  for (Activation a : {Activation::linear, Activation::relu, Activation::leaky_relu, Activation::tanh,
                       Activation::exp, Activation::sigmoid, Activation::softmax_channels}) {
    out.push_back(input_check(
        "activation " + std::string(to_string(a)), [a](Tape<double>& t, Var x) { return t.activation(x, a); },
        {2, 3, 4, 5}, rng));
  }
  out.push_back(input_check(
      "concat channels",
      [](Tape<double>& t, Var x) { return t.concat_channels(x, t.activation(x, Activation::tanh)); }, {1, 2, 3, 3},
      rng));
  out.push_back(input_check(
      "gather",
      [](Tape<double>& t, Var x) {
        return t.gather(x, {{0, 1, 2}, {1, 0, 0}, {0, 1, 2}, {1, 3, 1}});
      },
      {2, 2, 4, 3}, rng));

  for (int n = 1; n <= kMaxComponents; ++n) {
    NNetConfig cfg{n, 8, 3};
    ParamSet<float> init;
    std::mt19937_64 init_rng(100 + n);
    build_nnet(cfg, init, init_rng);
    ParamSet<double> params = init.cast<double>();
    const int m = 12;
    std::vector<double> targets(m);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& y : targets) y = normal(rng);
    Fragment f = [&params, cfg, targets](Tape<double>& t, Var x) {
      const NoiseHeads heads = nnet_forward(t, cfg, params, x);
      return gmm_nll_loss<double>(t, x, heads, targets, 1.0 / static_cast<double>(targets.size()));
    };
    out.push_back({"gmm nll loss N=" + std::to_string(n),
                   grad_check(f, random_tensor({1, 1, 1, m}, rng, 0.5), &params), kPrimitiveGradTolerance});
  }
  return out;
}

CheckResult composition_grad_check(int components, std::uint64_t seed) {
  DNetConfig dcfg;
  dcfg.base_filters = 4;
  dcfg.tail_filters = 4;
  NNetConfig ncfg{components, 8, 3};
  NetworkBundle bundle = NetworkBundle::create(dcfg, ncfg, seed);
  ParamSet<double> params = bundle.params.cast<double>();

  std::mt19937_64 rng(seed);
  // Biases start at zero, which puts dead ReLU units exactly on their kink.
  // Move to a generic point so central differences are valid.
  std::normal_distribution<double> jitter(0.0, 0.1);
  for (auto& [name, p] : params)
    if (name.ends_with(".b"))
      for (double& v : p.value.data()) v = jitter(rng);
  const int size = 12;
  const MaskPlan plan = sample_grid(size, size, rng);
  std::vector<PixelIndex> indices;
  std::vector<double> targets;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const GridPosition& p : plan.loss_positions()) {
    indices.push_back({0, p.y, p.x});
    targets.push_back(normal(rng));
  }
  Fragment f = [&](Tape<double>& t, Var x) {
    Var mu = t.gather(dnet_forward(t, dcfg, params, x), indices);
    const NoiseHeads heads = nnet_forward(t, ncfg, params, mu);
    return gmm_nll_loss<double>(t, mu, heads, targets, 1.0 / static_cast<double>(targets.size()));
  };
  GradCheckOptions options;
  options.samples = 20;
  options.seed = seed;
  // With thousands of ReLU and max-pool units a step regularly straddles a
  // kink; those coordinates are resampled.
  options.epsilon = 1e-5;
  options.kink_threshold = kCompositionGradTolerance;
  return {"D-net + N-net + loss N=" + std::to_string(components),
          grad_check(f, random_tensor({1, 1, size, size}, rng), &params, options), kCompositionGradTolerance};
}

double mean_masked_fraction(int grids, int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double total = 0;
  for (int i = 0; i < grids; ++i) total += sample_grid(size, size, rng).masked_fraction();
  return total / grids;
}

double max_centering_residual(int components, int trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 2.0);
  double worst = 0;
  for (int t = 0; t < trials; ++t) {
    // Raw head outputs pushed through the same simplex maps as the N-net.
    std::array<double, kMaxComponents> logits{};
    for (int i = 0; i < components; ++i) logits[i] = normal(rng);
    std::array<double, kMaxComponents> weights{};
    if (components == 2) {
      weights[0] = 1.0 / (1.0 + std::exp(-logits[0]));
      weights[1] = 1.0 - weights[0];
    } else {
      double z = 0;
      for (int i = 0; i < components; ++i) z += weights[i] = std::exp(logits[i]);
      for (int i = 0; i < components; ++i) weights[i] /= z;
    }
    std::array<double, kMaxComponents> free_means{};
    std::array<double, kMaxComponents> stddevs{};
    for (int i = 0; i < components; ++i) {
      free_means[i] = normal(rng);
      stddevs[i] = std::exp(normal(rng) * 0.5);
    }
    const Mixture mix = make_centered_mixture(components, std::span(weights.data(), components),
                                              std::span(free_means.data(), components - 1),
                                              std::span(stddevs.data(), components));
    double s = 0;
    for (int i = 0; i < components; ++i) s += mix.weight[i] * mix.mean[i];
    worst = std::max(worst, std::abs(s));
  }
  return worst;
}

}  // namespace bldn
