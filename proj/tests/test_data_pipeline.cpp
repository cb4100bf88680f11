#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "bldn/data_pipeline.hpp"
#include "bldn/image.hpp"

using namespace bldn;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("bldn_dp_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Image2D random_image(int h, int w, std::uint64_t seed, float lo = 0, float hi = 1000) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  Image2D img(h, w);
  for (float& v : img.values) v = u(rng);
  return img;
}

}  // namespace

TEST(ImageIo, RawRoundTripIsBitExact) {
  const fs::path dir = temp_dir("raw");
  Image2D img = random_image(9, 13, 1, -5e3f, 5e3f);
  img.values[3] = 1e-38f;
  img.values[4] = -0.0f;
  write_image(dir / "a.blim", img);
  const Image2D r = read_image(dir / "a.blim");
  ASSERT_TRUE(r.same_shape(img));
  EXPECT_EQ(std::memcmp(r.values.data(), img.values.data(), img.size() * sizeof(float)), 0);
}

TEST(ImageIo, PgmConstantHundred) {
  const fs::path dir = temp_dir("pgm");
  std::string bytes = "P5\n# comment\n4 3\n65535\n";
  for (int i = 0; i < 12; ++i) bytes += std::string{'\0', 'd'};
  write_bytes(dir / "c.pgm", bytes);
  const Image2D img = read_image(dir / "c.pgm");
  EXPECT_EQ(img.height, 3);
  EXPECT_EQ(img.width, 4);
  EXPECT_EQ(img.bit_depth, 16);
  for (float v : img.values) EXPECT_EQ(v, 100.0f);
}

TEST(ImageIo, PgmWriteClampsAndRounds) {
  const fs::path dir = temp_dir("pgmw");
  Image2D img(1, 4);
  img.values = {-3.0f, 1.4f, 1.6f, 70000.0f};
  write_image(dir / "w.pgm", img);
  const Image2D r = read_image(dir / "w.pgm");
  EXPECT_EQ(r.values, (std::vector<float>{0.0f, 1.0f, 2.0f, 65535.0f}));
}

TEST(ImageIo, MalformedFilesAreFormatErrors) {
  const fs::path dir = temp_dir("bad");
  std::string bytes = "P5\n4 3\n65535\n";
  bytes += std::string(10, '\0');
  write_bytes(dir / "trunc.pgm", bytes);
  EXPECT_THROW(read_image(dir / "trunc.pgm"), FormatError);
  write_bytes(dir / "maxval.pgm", "P5\n1 1\n255\n\x01");
  EXPECT_THROW(read_image(dir / "maxval.pgm"), FormatError);
  write_bytes(dir / "magic.pgm", "P2\n1 1\n65535\n1\n");
  EXPECT_THROW(read_image(dir / "magic.pgm"), FormatError);
  write_bytes(dir / "short.blim", "BLIM\x02\0\0\0\x02\0\0\0abc");
  EXPECT_THROW(read_image(dir / "short.blim"), FormatError);
  EXPECT_THROW(read_image(dir / "missing.blim"), FormatError);
}

TEST(ImageIo, DirectoryAndManifest) {
  const fs::path dir = temp_dir("dir");
  write_image(dir / "b.blim", Image2D(8, 8, 2.0f));
  write_image(dir / "a.pgm", Image2D(8, 8, 1.0f));
  write_bytes(dir / "notes.txt", "ignored");
  const auto images = read_image_dir(dir);
  ASSERT_EQ(images.size(), 2u);
  EXPECT_EQ(images[0].pairing_id, "a");
  EXPECT_EQ(images[1].values[0], 2.0f);
  write_bytes(dir / "pairs.txt", "a.pgm\tb.blim\n");
  const auto pairs = read_manifest(dir / "pairs.txt");
  ASSERT_EQ(pairs.size(), 1u);
  EXPECT_EQ(pairs[0].first, dir / "a.pgm");
  EXPECT_EQ(pairs[0].second, dir / "b.blim");
}

TEST(Normalization, ConstantDatasetIsDegenerate) {
  const std::vector<Image2D> data(3, Image2D(8, 8, 5.0f));
  EXPECT_THROW(fit_normalization(data), ContractViolation);
}

TEST(Normalization, ModeAndPercentileOracle) {
  // 90% of pixels at 100, 10% uniform on [100, 1100]: p95 of the mixture is
  // the median of the uniform part, 600.
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(100.0f, 1100.0f);
  std::bernoulli_distribution bright(0.1);
  std::vector<Image2D> data;
  for (int i = 0; i < 10; ++i) {
    Image2D img(100, 100, 100.0f);
    for (float& v : img.values)
      if (bright(rng)) v = u(rng);
    data.push_back(img);
  }
  const NormalizationRecord r = fit_normalization(data);
  const double bin = (dataset_max(data) - 100.0) / kModeHistogramBins;
  EXPECT_NEAR(r.center, 100.0, bin);
  EXPECT_NEAR(r.scale, 600.0 - r.center, 25.0);
  EXPECT_NEAR(r.scale + r.center, dataset_percentile(data, 0.95), 1e-9);
}

TEST(Normalization, RoundTrip) {
  const Image2D img = random_image(16, 16, 4);
  const NormalizationRecord r{123.5, 47.25};
  const Image2D back = denormalize(normalize(img, r), r);
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(back.values[i], img.values[i], 1e-5 * std::abs(img.values[i]) + 1e-6);
}

TEST(Normalization, AffineEquivariance) {
  std::vector<Image2D> data{random_image(32, 32, 5, 0, 100), random_image(32, 32, 6, 0, 100)};
  data[0].values[0] = 50.0f;
  for (int i = 0; i < 300; ++i) data[1].values[i] = 10.0f;  // clear mode
  std::vector<Image2D> scaled = data;
  for (auto& img : scaled)
    for (float& v : img.values) v = 4.0f * v + 8.0f;
  const NormalizationRecord a = fit_normalization(data);
  const NormalizationRecord b = fit_normalization(scaled);
  EXPECT_NEAR(b.center, 4 * a.center + 8, 1e-3);
  EXPECT_NEAR(b.scale, 4 * a.scale, 1e-3);
  const Image2D na = normalize(data[1], a);
  const Image2D nb = normalize(scaled[1], b);
  for (std::size_t i = 0; i < na.size(); ++i) EXPECT_NEAR(na.values[i], nb.values[i], 1e-5);
}

TEST(Dihedral, GroupLaws) {
  const Image2D img = random_image(5, 7, 8);
  for (Dihedral g : kAllDihedral) {
    const Image2D t = apply(g, img);
    EXPECT_EQ(t.height, swaps_axes(g) ? 7 : 5);
    EXPECT_EQ(apply(inverse(g), t).values, img.values) << to_string(g);
  }
  EXPECT_EQ(apply(Dihedral::rot90, apply(Dihedral::rot90, img)).values, apply(Dihedral::rot180, img).values);
  EXPECT_EQ(apply(Dihedral::rot90, apply(Dihedral::rot180, img)).values, apply(Dihedral::rot270, img).values);
  // Counter-clockwise: the top-right corner moves to the top-left.
  EXPECT_EQ(apply(Dihedral::rot90, img).at(0, 0), img.at(0, 6));
}

TEST(Dihedral, NonTransposingSubsetKeepsAxes) {
  for (Dihedral g : dihedral_group(false)) EXPECT_FALSE(swaps_axes(g));
  EXPECT_EQ(dihedral_group(false).size(), 4u);
  EXPECT_EQ(dihedral_group(true).size(), 8u);
  // A horizontal run stays horizontal under every allowed transform.
  Image2D img(6, 6, 0.0f);
  for (int x = 1; x < 5; ++x) img.at(2, x) = 1.0f;
  for (Dihedral g : dihedral_group(false)) {
    const Image2D t = apply(g, img);
    int rows_with_ones = 0;
    for (int y = 0; y < 6; ++y) {
      bool any = false;
      for (int x = 0; x < 6; ++x) any = any || t.at(y, x) == 1.0f;
      rows_with_ones += any ? 1 : 0;
    }
    EXPECT_EQ(rows_with_ones, 1) << to_string(g);
  }
}

TEST(Tiles, CountBoundsAndDeterminism) {
  const Image2D img = random_image(512, 512, 9);
  std::mt19937_64 a(1), b(1);
  const TileBatch t = make_tiles(img, 96, 100, a);
  const TileBatch u = make_tiles(img, 96, 100, b);
  ASSERT_EQ(t.tiles.size(), 100u);
  for (std::size_t i = 0; i < t.tiles.size(); ++i) {
    const Tile& tile = t.tiles[i];
    EXPECT_TRUE(tile.origin_y >= 0 && tile.origin_y + 96 <= 512 && tile.origin_x >= 0 && tile.origin_x + 96 <= 512);
    EXPECT_EQ(tile.image.at(5, 7), img.at(tile.origin_y + 5, tile.origin_x + 7));
    EXPECT_EQ(tile.origin_y, u.tiles[i].origin_y);
    EXPECT_EQ(tile.origin_x, u.tiles[i].origin_x);
  }
}

TEST(Tiles, ExactSizeImageGivesIdenticalTiles) {
  const Image2D img = random_image(96, 96, 10);
  std::mt19937_64 rng(2);
  for (const Tile& t : make_tiles(img, 96, 5, rng).tiles) EXPECT_EQ(t.image.values, img.values);
  EXPECT_THROW(make_tiles(Image2D(50, 96), 96, 1, rng), ContractViolation);
}

TEST(Augment, SymmetricTileUnchangedAndInvertible) {
  Image2D sym(6, 6);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) sym.at(y, x) = static_cast<float>(std::min({y, x, 5 - y, 5 - x}));
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(augment(Tile{sym}, rng, true).image.values, sym.values);
  const Image2D img = random_image(8, 8, 11);
  for (int i = 0; i < 20; ++i) {
    const Tile t = augment(Tile{img}, rng, false);
    EXPECT_FALSE(swaps_axes(t.transform));
    EXPECT_EQ(apply(inverse(t.transform), t.image).values, img.values);
  }
}

TEST(SynthNoise, StdAtReferencePoints) {
  const SynthNoiseParams p;
  EXPECT_EQ(synth_noise_std(NoiseKind::gaussian, p, 500, 0), 20.0);
  EXPECT_EQ(synth_noise_std(NoiseKind::poisson_gaussian, p, 30, 30), 12.0);
  EXPECT_EQ(synth_noise_std(NoiseKind::speckle, p, 30, 30), 0.0);
  EXPECT_NEAR(synth_noise_std(NoiseKind::poisson_gaussian, p, 130, 30), std::sqrt(5 * 100 + 144.0), 1e-12);
  EXPECT_THROW(synth_noise_std(NoiseKind::poisson_gaussian, p, 0, 100), ContractViolation);
}

TEST(SynthNoise, EmpiricalMomentsPerModel) {
  const int n = 1'000'000;
  for (NoiseKind kind : {NoiseKind::gaussian, NoiseKind::poisson_gaussian, NoiseKind::speckle,
                         NoiseKind::shifted_exponential}) {
    Image2D clean(1000, 1000, 200.0f);
    std::mt19937_64 rng(12);
    const SynthNoiseParams p;
    const Image2D noisy = synth_noise(clean, kind, p, rng, 100.0);
    const double s = synth_noise_std(kind, p, 200.0, 100.0);
    double m = 0, v = 0, k3 = 0;
    for (std::size_t i = 0; i < noisy.size(); ++i) m += noisy.values[i] - 200.0;
    m /= n;
    for (std::size_t i = 0; i < noisy.size(); ++i) {
      const double d = noisy.values[i] - 200.0 - m;
      v += d * d;
      k3 += d * d * d;
    }
    v /= n;
    const double skew = k3 / n / std::pow(v, 1.5);
    EXPECT_NEAR(m, 0.0, 4 * s / std::sqrt(n)) << to_string(kind);
    EXPECT_NEAR(std::sqrt(v), s, 0.01 * s) << to_string(kind);
    EXPECT_NEAR(skew, kind == NoiseKind::shifted_exponential ? 2.0 : 0.0, 0.05) << to_string(kind);
  }
}

TEST(SynthNoise, DeterministicUnderSeed) {
  const Image2D clean = random_image(16, 16, 13, 100, 200);
  std::mt19937_64 a(5), b(5);
  EXPECT_EQ(synth_noise(clean, NoiseKind::speckle, {}, a, 100).values,
            synth_noise(clean, NoiseKind::speckle, {}, b, 100).values);
  EXPECT_EQ(parse_noise_kind("poisson-gaussian"), NoiseKind::poisson_gaussian);
  EXPECT_THROW(parse_noise_kind("salt"), ContractViolation);
}

TEST(Phantom, BackgroundAndMode) {
  std::mt19937_64 rng(14);
  PhantomOptions none;
  none.blob_count = 0;
  for (float v : generate_phantom(32, 40, rng, none).values) EXPECT_EQ(v, 100.0f);

  std::vector<Image2D> set;
  for (int i = 0; i < 100; ++i) set.push_back(generate_phantom(64, 64, rng));
  EXPECT_EQ(dataset_min(set), 100.0);
  const double bin = (dataset_max(set) - 100.0) / kModeHistogramBins;
  EXPECT_NEAR(histogram_mode(set), 100.0, 0.5 * bin + 1e-9);
  EXPECT_THROW(generate_phantom(16, 64, rng), ContractViolation);
}

TEST(Phantom, Deterministic) {
  std::mt19937_64 a(15), b(15);
  EXPECT_EQ(generate_phantom(48, 48, a).values, generate_phantom(48, 48, b).values);
}
