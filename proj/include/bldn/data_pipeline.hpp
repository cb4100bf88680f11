#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "bldn/image.hpp"

namespace bldn {

// ---------------------------------------------------------------------------
// Normalization

/// Dataset-wide affine map: normalized = (raw - center) / scale.
struct NormalizationRecord {
  double center = 0.0;  // modal value
  double scale = 1.0;   // 95th percentile - mode

  [[nodiscard]] double apply(double raw) const { return (raw - center) / scale; }
  [[nodiscard]] double invert(double normalized) const { return normalized * scale + center; }
};

inline constexpr int kModeHistogramBins = 1024;
inline constexpr std::size_t kMaxPercentileSamples = 10'000'000;

/// Midpoint of the fullest bin of a 1024-bin histogram over [min, max].
double histogram_mode(std::span<const Image2D> dataset, int bins = kModeHistogramBins);
/// Linear-interpolated percentile (q in [0, 1]) of the pooled pixel values.
double dataset_percentile(std::span<const Image2D> dataset, double q);

/// Throws ContractViolation when the data is degenerate (scale <= 0).
NormalizationRecord fit_normalization(std::span<const Image2D> dataset);
Image2D normalize(const Image2D& image, const NormalizationRecord& record);
Image2D denormalize(const Image2D& image, const NormalizationRecord& record);

// ---------------------------------------------------------------------------
// Dihedral group of the square

enum class Dihedral : std::uint8_t {
  identity,
  rot90,   // counter-clockwise
  rot180,
  rot270,
  flip_h,  // mirror columns
  flip_v,  // mirror rows
  transpose,
  anti_transpose,
};

inline constexpr std::array<Dihedral, 8> kAllDihedral{
    Dihedral::identity, Dihedral::rot90,  Dihedral::rot180,    Dihedral::rot270,
    Dihedral::flip_h,   Dihedral::flip_v, Dihedral::transpose, Dihedral::anti_transpose};
/// The elements that never swap the row and column axes.
inline constexpr std::array<Dihedral, 4> kNonTransposingDihedral{Dihedral::identity, Dihedral::flip_h,
                                                                 Dihedral::flip_v, Dihedral::rot180};

std::string_view to_string(Dihedral g);
Dihedral inverse(Dihedral g);
bool swaps_axes(Dihedral g);
Image2D apply(Dihedral g, const Image2D& image);
/// The group elements used for augmentation and ensembling.
std::span<const Dihedral> dihedral_group(bool allow_transpose);

// ---------------------------------------------------------------------------
// Tiling and augmentation

struct Tile {
  Image2D image;
  int origin_y = 0;
  int origin_x = 0;
  Dihedral transform = Dihedral::identity;
};

struct TileBatch {
  std::vector<Tile> tiles;
};

/// `count` tiles with origins uniform over valid positions (tiles may overlap).
TileBatch make_tiles(const Image2D& image, int tile, int count, std::mt19937_64& rng);

/// Uniform draw from dihedral_group(allow_transpose), applied to the tile.
Tile augment(Tile tile, std::mt19937_64& rng, bool allow_transpose);

// ---------------------------------------------------------------------------
// Synthetic noise

enum class NoiseKind { gaussian, poisson_gaussian, speckle, shifted_exponential };

std::string_view to_string(NoiseKind kind);
NoiseKind parse_noise_kind(std::string_view name);

struct SynthNoiseParams {
  double sigma = 20.0;           // gaussian
  double alpha = 5.0;            // poisson_gaussian / shifted_exponential gain
  double eta = 12.0;             // poisson_gaussian / shifted_exponential read noise
  double speckle_sigma = 0.405;  // speckle
};

/// Standard deviation of the generated noise at clean value x.
double synth_noise_std(NoiseKind kind, const SynthNoiseParams& params, double x, double dataset_min);

/// Y = X + s(X) eps with per-pixel independent eps. Gaussian-family models
/// use a standard normal eps; shifted_exponential uses Exp(1) - 1 (centered,
/// unit variance, skewness 2).
Image2D synth_noise(const Image2D& clean, NoiseKind kind, const SynthNoiseParams& params, std::mt19937_64& rng,
                    double dataset_min);

double dataset_min(std::span<const Image2D> dataset);
double dataset_max(std::span<const Image2D> dataset);

// ---------------------------------------------------------------------------
// Phantoms

struct PhantomOptions {
  int blob_count = 40;
  double background = 100.0;
  double peak = 1100.0;           // background + largest blob amplitude
  double min_amplitude = 0.1;     // fraction of (peak - background)
  double min_sigma = 1.5;
  double max_sigma = 6.0;
  double support_sigmas = 3.0;    // blobs are truncated beyond this many sigmas
};

/// Sum of truncated anisotropic Gaussian blobs over a constant background.
Image2D generate_phantom(int height, int width, std::mt19937_64& rng, const PhantomOptions& options = {});

}  // namespace bldn
