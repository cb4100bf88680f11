#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "bldn/networks.hpp"

using namespace bldn;

namespace {

DNetConfig small_dnet() {
  DNetConfig c;
  c.base_filters = 6;
  c.tail_filters = 6;
  return c;
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("bldn_test_" + name);
}

Tensor4<float> random_input(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal;
  Tensor4<float> t({1, 1, h, w});
  for (float& v : t.data()) v = normal(rng);
  return t;
}

}  // namespace

TEST(DNet, DefaultConfigPreservesShape) {
  NetworkBundle b = NetworkBundle::create(DNetConfig{}, NNetConfig{}, 1);
  for (int s : {8, 12, 96}) {
    const Tensor4<float> out = dnet_apply(b, random_input(s, s + 4, 2));
    EXPECT_EQ(out.shape(), (Shape4{1, 1, s, s + 4}));
  }
}

TEST(DNet, ZeroInputGivesFiniteOutput) {
  NetworkBundle b = NetworkBundle::create(small_dnet(), NNetConfig{}, 1);
  EXPECT_TRUE(all_finite(dnet_apply(b, Tensor4<float>({1, 1, 16, 16}))));
}

TEST(DNet, RejectsSizesNotMultipleOfFour) {
  NetworkBundle b = NetworkBundle::create(small_dnet(), NNetConfig{}, 1);
  EXPECT_THROW(dnet_apply(b, Tensor4<float>({1, 1, 10, 12})), ContractViolation);
}

TEST(DNet, DeterministicOutput) {
  NetworkBundle b = NetworkBundle::create(small_dnet(), NNetConfig{}, 3);
  const auto x = random_input(16, 16, 4);
  EXPECT_EQ(dnet_apply(b, x).storage(), dnet_apply(b, x).storage());
}

TEST(DNet, ReceptiveFieldIs35) {
  NetworkBundle b = NetworkBundle::create(small_dnet(), NNetConfig{}, 5);
  EXPECT_EQ(measure_receptive_radius(b), 17);
}

// Exact perturbation probe: pixels beyond R never affect the output at p,
// and some pixel at distance exactly R does.
TEST(DNet, PerturbationProbeMatchesMeasuredRadius) {
  NetworkBundle b = NetworkBundle::create(small_dnet(), NNetConfig{}, 6);
  const int r = measure_receptive_radius(b);
  ASSERT_LE(r, 20);
  const int size = 64;
  const Tensor4<float> base = random_input(size, size, 7);
  const Tensor4<float> ref = dnet_apply(b, base);
  for (int p : {30, 31, 32, 33}) {
    Tensor4<float> far = base;
    std::mt19937_64 rng(p);
    std::normal_distribution<float> normal(0.0f, 5.0f);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        if (std::max(std::abs(y - p), std::abs(x - p)) > r) far.at(0, 0, y, x) += normal(rng);
    EXPECT_EQ(dnet_apply(b, far).at(0, 0, p, p), ref.at(0, 0, p, p)) << "p=" << p;
  }
  bool reached = false;
  for (int p : {30, 31, 32, 33}) {
    for (int y = p - r; y <= p + r && !reached; ++y)
      for (int x = p - r; x <= p + r && !reached; ++x) {
        if (std::max(std::abs(y - p), std::abs(x - p)) != r) continue;
        Tensor4<float> edge = base;
        edge.at(0, 0, y, x) += 10.0f;
        reached = dnet_apply(b, edge).at(0, 0, p, p) != ref.at(0, 0, p, p);
      }
  }
  EXPECT_TRUE(reached);
}

TEST(NNet, SingleComponentIsPositive) {
  NetworkBundle b = NetworkBundle::create(small_dnet(), NNetConfig{1, 16, 3}, 1);
  Image2D d(4, 5);
  for (std::size_t i = 0; i < d.size(); ++i) d.values[i] = static_cast<float>(i) - 10.0f;
  const NoiseParams p = nnet_apply(b, d);
  EXPECT_EQ(p.components, 1);
  for (float s : p.stddevs) EXPECT_GT(s, 0.0f);
  for (float m : p.means) EXPECT_EQ(m, 0.0f);
}

TEST(NNet, ThreeComponentsZeroWeightHeadGivesUniformWeights) {
  NetworkBundle b = NetworkBundle::create(small_dnet(), NNetConfig{3, 16, 3}, 1);
  b.params.at("nnet.weight.head.w").value.fill(0.0f);
  b.params.at("nnet.weight.head.b").value.fill(0.0f);
  const Mixture m = nnet_at(b, 0.7);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(m.weight[i], 1.0 / 3.0, 1e-7);
}

TEST(NNet, WeightsSumToOneAndMixtureIsCentered) {
  for (int n = 2; n <= 3; ++n) {
    NetworkBundle b = NetworkBundle::create(small_dnet(), NNetConfig{n, 16, 3}, 9);
    Image2D d(8, 8);
    std::mt19937_64 rng(n);
    std::normal_distribution<float> normal(0.0f, 2.0f);
    for (float& v : d.values) v = normal(rng);
    const NoiseParams p = nnet_apply(b, d);
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        const Mixture m = p.at(y, x);
        double w = 0, c = 0;
        for (int i = 0; i < n; ++i) {
          EXPECT_GT(m.weight[i], 0.0);
          EXPECT_LT(m.weight[i], 1.0);
          EXPECT_GT(m.stddev[i], 0.0);
          w += m.weight[i];
          c += m.weight[i] * m.mean[i];
        }
        EXPECT_NEAR(w, 1.0, 1e-6);
        EXPECT_NEAR(c, 0.0, 1e-6);
      }
  }
}

TEST(NNet, PerPixelFunction) {
  NetworkBundle b = NetworkBundle::create(small_dnet(), NNetConfig{2, 16, 3}, 2);
  Image2D d(1, 4);
  d.values = {0.3f, -1.0f, 0.3f, 2.0f};
  const NoiseParams p = nnet_apply(b, d);
  const Mixture a = p.at(0, 0);
  const Mixture c = p.at(0, 2);
  for (int i = 0; i < 2; ++i) {
    EXPECT_EQ(a.weight[i], c.weight[i]);
    EXPECT_EQ(a.mean[i], c.mean[i]);
    EXPECT_EQ(a.stddev[i], c.stddev[i]);
  }
  Image2D swapped(1, 4);
  swapped.values = {2.0f, 0.3f, -1.0f, 0.3f};
  const NoiseParams q = nnet_apply(b, swapped);
  EXPECT_EQ(q.at(0, 0).stddev[0], p.at(0, 3).stddev[0]);
  EXPECT_EQ(q.at(0, 2).stddev[1], p.at(0, 1).stddev[1]);
}

TEST(NNet, ParameterNamesFollowLayout) {
  ParamSet<float> params;
  std::mt19937_64 rng(1);
  build_nnet(NNetConfig{2, 8, 3}, params, rng);
  for (const char* name : {"nnet.shared.l0.w", "nnet.shared.l3.b", "nnet.sigma.l1.w", "nnet.weight.head.w",
                           "nnet.mean.head.b"})
    EXPECT_TRUE(params.contains(name)) << name;
  EXPECT_FALSE(params.contains("nnet.shared.l4.w"));
  EXPECT_EQ(params.at("nnet.weight.head.w").value.shape().batch, 1);
  EXPECT_EQ(params.at("nnet.mean.head.w").value.shape().batch, 1);
  EXPECT_EQ(params.at("nnet.sigma.head.w").value.shape().batch, 2);
}

TEST(Networks, LossGradientReachesDNetThroughNoiseBranch) {
  NetworkBundle b = NetworkBundle::create(small_dnet(), NNetConfig{1, 8, 3}, 4);
  ParamSet<float> with = b.params;
  ParamSet<float> without = b.params;
  const Tensor4<float> x = random_input(16, 16, 3);
  std::vector<float> targets = {0.5f, -0.2f, 1.0f};
  auto run = [&](ParamSet<float>& params, bool detach) {
    Tape<float> tape;
    Var mu = tape.gather(dnet_forward(tape, b.dnet, params, tape.constant(x)), {{0, 2, 3}, {0, 7, 9}, {0, 12, 1}});
    const NoiseHeads heads = nnet_forward(tape, b.nnet, params, detach ? tape.detach(mu) : mu);
    tape.backward(gmm_nll_loss<float>(tape, mu, heads, targets, 1.0 / 3));
  };
  run(with, false);
  run(without, true);
  bool differs = false;
  for (const auto& [name, p] : with) {
    if (!name.starts_with("dnet.")) continue;
    const auto a = p.grad.data();
    const auto c = without.at(name).grad.data();
    for (std::size_t i = 0; i < a.size(); ++i) differs = differs || a[i] != c[i];
  }
  EXPECT_TRUE(differs);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  NetworkBundle b = NetworkBundle::create(small_dnet(), NNetConfig{3, 8, 3}, 11);
  b.normalization = NormalizationRecord{123.456789012345, 0.1 + 0.2};
  b.receptive_field = 35;
  b.provenance.epochs = 7;
  b.provenance.allow_transpose = false;
  b.provenance.replacement_mode = "axial-vertical";
  b.extra["note"] = "x y";
  const auto p1 = temp_path("rt1.ckpt");
  const auto p2 = temp_path("rt2.ckpt");
  save_checkpoint(p1, b);
  const NetworkBundle r = load_checkpoint(p1);
  save_checkpoint(p2, r);
  EXPECT_EQ(read_bytes(p1), read_bytes(p2));
  EXPECT_EQ(r.dnet, b.dnet);
  EXPECT_EQ(r.nnet, b.nnet);
  EXPECT_EQ(r.normalization->center, b.normalization->center);
  EXPECT_EQ(r.normalization->scale, b.normalization->scale);
  EXPECT_EQ(r.provenance.seed, 11u);
  EXPECT_EQ(r.provenance.epochs, 7);
  EXPECT_FALSE(r.provenance.allow_transpose);
  EXPECT_EQ(r.extra.at("note"), "x y");
  for (const auto& [name, p] : b.params) EXPECT_EQ(r.params.at(name).value.storage(), p.value.storage()) << name;
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST(Checkpoint, CorruptFilesAreFormatErrors) {
  NetworkBundle b = NetworkBundle::create(small_dnet(), NNetConfig{}, 1);
  const auto p = temp_path("bad.ckpt");
  save_checkpoint(p, b);
  std::string bytes = read_bytes(p);
  {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 5));
  }
  EXPECT_THROW(load_checkpoint(p), FormatError);
  bytes[0] = 'X';
  {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  EXPECT_THROW(load_checkpoint(p), FormatError);
  EXPECT_THROW(load_checkpoint(temp_path("missing.ckpt")), FormatError);
  std::filesystem::remove(p);
}
