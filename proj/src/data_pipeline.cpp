#include "bldn/data_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace bldn {

double dataset_min(std::span<const Image2D> dataset) {
  require(!dataset.empty(), "dataset_min: empty dataset");
  double lo = dataset.front().min();
  for (const auto& image : dataset) lo = std::min(lo, static_cast<double>(image.min()));
  return lo;
}

double dataset_max(std::span<const Image2D> dataset) {
  require(!dataset.empty(), "dataset_max: empty dataset");
  double hi = dataset.front().max();
  for (const auto& image : dataset) hi = std::max(hi, static_cast<double>(image.max()));
  return hi;
}

double histogram_mode(std::span<const Image2D> dataset, int bins) {
  const double lo = dataset_min(dataset);
  const double hi = dataset_max(dataset);
  if (!(hi > lo)) return lo;
  const double width = (hi - lo) / bins;
  std::vector<std::size_t> counts(bins, 0);
  for (const auto& image : dataset)
    for (float v : image.values) {
      const int k = std::clamp(static_cast<int>((v - lo) / width), 0, bins - 1);
      ++counts[k];
    }
  const auto best = std::max_element(counts.begin(), counts.end()) - counts.begin();
  return lo + (static_cast<double>(best) + 0.5) * width;
}

double dataset_percentile(std::span<const Image2D> dataset, double q) {
  require(q >= 0.0 && q <= 1.0, "dataset_percentile: q must be in [0, 1]");
  std::size_t total = 0;
  for (const auto& image : dataset) total += image.size();
  require(total > 0, "dataset_percentile: empty dataset");
  const std::size_t stride = (total + kMaxPercentileSamples - 1) / kMaxPercentileSamples;
  std::vector<float> pooled;
  pooled.reserve(total / stride + 1);
  std::size_t index = 0;
  for (const auto& image : dataset)
    for (float v : image.values) {
      if (index++ % stride == 0) pooled.push_back(v);
    }
  std::sort(pooled.begin(), pooled.end());
  const double pos = q * static_cast<double>(pooled.size() - 1);
  const auto below = static_cast<std::size_t>(std::floor(pos));
  const std::size_t above = std::min(below + 1, pooled.size() - 1);
  const double frac = pos - static_cast<double>(below);
  return pooled[below] + frac * (static_cast<double>(pooled[above]) - pooled[below]);
}

NormalizationRecord fit_normalization(std::span<const Image2D> dataset) {
  require(!dataset.empty(), "fit_normalization: dataset is empty");
  NormalizationRecord record;
  record.center = histogram_mode(dataset);
  record.scale = dataset_percentile(dataset, 0.95) - record.center;
  require(record.scale > 0, "fit_normalization: degenerate data (95th percentile does not exceed the mode)");
  return record;
}

Image2D normalize(const Image2D& image, const NormalizationRecord& record) {
  Image2D out = image;
  for (float& v : out.values) v = static_cast<float>(record.apply(v));
  return out;
}

Image2D denormalize(const Image2D& image, const NormalizationRecord& record) {
  Image2D out = image;
  for (float& v : out.values) v = static_cast<float>(record.invert(v));
  return out;
}

// ---------------------------------------------------------------------------

std::string_view to_string(Dihedral g) {
  switch (g) {
    case Dihedral::identity: return "identity";
    case Dihedral::rot90: return "rot90";
    case Dihedral::rot180: return "rot180";
    case Dihedral::rot270: return "rot270";
    case Dihedral::flip_h: return "flip_h";
    case Dihedral::flip_v: return "flip_v";
    case Dihedral::transpose: return "transpose";
    case Dihedral::anti_transpose: return "anti_transpose";
  }
  return "unknown";
}

Dihedral inverse(Dihedral g) {
  if (g == Dihedral::rot90) return Dihedral::rot270;
  if (g == Dihedral::rot270) return Dihedral::rot90;
  return g;
}

bool swaps_axes(Dihedral g) {
  return g == Dihedral::rot90 || g == Dihedral::rot270 || g == Dihedral::transpose || g == Dihedral::anti_transpose;
}

Image2D apply(Dihedral g, const Image2D& image) {
  const int h = image.height;
  const int w = image.width;
  Image2D out = swaps_axes(g) ? Image2D(w, h) : Image2D(h, w);
  out.bit_depth = image.bit_depth;
  out.pairing_id = image.pairing_id;
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) {
      float v = 0;
      switch (g) {
        case Dihedral::identity: v = image.at(y, x); break;
        case Dihedral::rot90: v = image.at(x, w - 1 - y); break;
        case Dihedral::rot180: v = image.at(h - 1 - y, w - 1 - x); break;
        case Dihedral::rot270: v = image.at(h - 1 - x, y); break;
        case Dihedral::flip_h: v = image.at(y, w - 1 - x); break;
        case Dihedral::flip_v: v = image.at(h - 1 - y, x); break;
        case Dihedral::transpose: v = image.at(x, y); break;
        case Dihedral::anti_transpose: v = image.at(h - 1 - x, w - 1 - y); break;
      }
      out.at(y, x) = v;
    }
  return out;
}

std::span<const Dihedral> dihedral_group(bool allow_transpose) {
  if (allow_transpose) return kAllDihedral;
  return kNonTransposingDihedral;
}

TileBatch make_tiles(const Image2D& image, int tile, int count, std::mt19937_64& rng) {
  require(tile >= 1 && count >= 1, "make_tiles: tile size and count must be positive");
  if (image.height < tile || image.width < tile) {
    throw ContractViolation("make_tiles: image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                            " is smaller than tile " + std::to_string(tile));
  }
  std::uniform_int_distribution<int> pick_y(0, image.height - tile);
  std::uniform_int_distribution<int> pick_x(0, image.width - tile);
  TileBatch batch;
  batch.tiles.reserve(count);
  for (int k = 0; k < count; ++k) {
    Tile t;
    t.origin_y = pick_y(rng);
    t.origin_x = pick_x(rng);
    t.image = Image2D(tile, tile);
    t.image.bit_depth = image.bit_depth;
    for (int y = 0; y < tile; ++y)
      std::copy_n(&image.values[static_cast<std::size_t>(t.origin_y + y) * image.width + t.origin_x], tile,
                  &t.image.values[static_cast<std::size_t>(y) * tile]);
    batch.tiles.push_back(std::move(t));
  }
  return batch;
}

Tile augment(Tile tile, std::mt19937_64& rng, bool allow_transpose) {
  require(tile.image.height == tile.image.width, "augment: tile must be square");
  const auto group = dihedral_group(allow_transpose);
  std::uniform_int_distribution<std::size_t> pick(0, group.size() - 1);
  const Dihedral g = group[pick(rng)];
  tile.image = apply(g, tile.image);
  tile.transform = g;
  return tile;
}

// ---------------------------------------------------------------------------

std::string_view to_string(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::gaussian: return "gaussian";
    case NoiseKind::poisson_gaussian: return "poisson-gaussian";
    case NoiseKind::speckle: return "speckle";
    case NoiseKind::shifted_exponential: return "shifted-exponential";
  }
  return "unknown";
}

NoiseKind parse_noise_kind(std::string_view name) {
  for (NoiseKind k : {NoiseKind::gaussian, NoiseKind::poisson_gaussian, NoiseKind::speckle,
                      NoiseKind::shifted_exponential})
    if (to_string(k) == name) return k;
  throw ContractViolation("unknown noise model '" + std::string(name) + "'");
}

double synth_noise_std(NoiseKind kind, const SynthNoiseParams& params, double x, double min_value) {
  switch (kind) {
    case NoiseKind::gaussian: return params.sigma;
    case NoiseKind::speckle: return std::abs(x - min_value) * params.speckle_sigma;
    case NoiseKind::poisson_gaussian:
    case NoiseKind::shifted_exponential: {
      const double variance = params.alpha * (x - min_value) + params.eta * params.eta;
      require(variance >= 0, "synth_noise: negative variance (clean value below the dataset minimum?)");
      return std::sqrt(variance);
    }
  }
  return 0;
}

Image2D synth_noise(const Image2D& clean, NoiseKind kind, const SynthNoiseParams& params, std::mt19937_64& rng,
                    double min_value) {
  Image2D noisy = clean;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::exponential_distribution<double> exponential(1.0);
  for (float& v : noisy.values) {
    const double s = synth_noise_std(kind, params, v, min_value);
    const double eps = kind == NoiseKind::shifted_exponential ? exponential(rng) - 1.0 : normal(rng);
    v = static_cast<float>(v + s * eps);
  }
  return noisy;
}

// ---------------------------------------------------------------------------

Image2D generate_phantom(int height, int width, std::mt19937_64& rng, const PhantomOptions& options) {
  require(height >= 32 && width >= 32, "generate_phantom: dims must be >= 32");
  require(options.peak > options.background && options.max_sigma >= options.min_sigma && options.min_sigma > 0,
          "generate_phantom: invalid options");
  std::vector<double> acc(static_cast<std::size_t>(height) * width, 0.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double span = options.peak - options.background;

  for (int b = 0; b < options.blob_count; ++b) {
    const double cy = unit(rng) * height;
    const double cx = unit(rng) * width;
    const double sa = options.min_sigma + unit(rng) * (options.max_sigma - options.min_sigma);
    const double sb = options.min_sigma + unit(rng) * (options.max_sigma - options.min_sigma);
    const double angle = unit(rng) * std::numbers::pi;
    const double amplitude = span * (options.min_amplitude + unit(rng) * (1.0 - options.min_amplitude));
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const double reach = options.support_sigmas * std::max(sa, sb);
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - reach)));
    const int y1 = std::min(height - 1, static_cast<int>(std::ceil(cy + reach)));
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - reach)));
    const int x1 = std::min(width - 1, static_cast<int>(std::ceil(cx + reach)));
    const double cutoff = options.support_sigmas * options.support_sigmas;
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double dy = y - cy;
        const double dx = x - cx;
        const double u = (c * dx + s * dy) / sa;
        const double v = (-s * dx + c * dy) / sb;
        const double r2 = u * u + v * v;
        if (r2 > cutoff) continue;
        acc[static_cast<std::size_t>(y) * width + x] += amplitude * std::exp(-0.5 * r2);
      }
  }

  Image2D image(height, width);
  for (std::size_t i = 0; i < acc.size(); ++i) image.values[i] = static_cast<float>(options.background + acc[i]);
  return image;
}

}  // namespace bldn
