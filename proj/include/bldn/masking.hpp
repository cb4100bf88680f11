#pragma once

// Training-time masking: a random grid of target pixels whose values are
// replaced by a weighted mean of their neighbours, so the network never sees
// the value it is asked to predict.

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "bldn/image.hpp"

namespace bldn {

enum class ReplacementKind {
  gaussian8,  // exp(-d^2/2) weights over the 8 neighbours
  uniform8,   // plain mean of the 8 neighbours
  axial,      // gaussian8 without the two neighbours along the correlation axis
};

/// Direction along which the noise is correlated.
enum class CorrelationAxis {
  horizontal,  // neighbours (y, x +- k)
  vertical,    // neighbours (y +- k, x)
};

struct ReplacementMode {
  ReplacementKind kind = ReplacementKind::gaussian8;
  CorrelationAxis axis = CorrelationAxis::horizontal;
  int extent = 3;  // axial only: pixels masked on each side along the axis

  static ReplacementMode gaussian8() { return {}; }
  static ReplacementMode uniform8() { return {ReplacementKind::uniform8}; }
  static ReplacementMode axial(CorrelationAxis axis, int extent = 3) { return {ReplacementKind::axial, axis, extent}; }
};

std::string_view to_string(ReplacementKind kind);
std::string to_string(const ReplacementMode& mode);
/// Accepts "gaussian8", "uniform8", "axial-horizontal", "axial-vertical".
ReplacementMode parse_replacement_mode(std::string_view text);

struct GridPosition {
  int y = 0;
  int x = 0;
  friend bool operator==(const GridPosition&, const GridPosition&) = default;
};

struct MaskPlan {
  int height = 0;
  int width = 0;
  int spacing_y = 0;
  int spacing_x = 0;
  int phase_y = 0;
  int phase_x = 0;
  ReplacementMode mode;
  std::vector<GridPosition> positions;  // the grid lattice, row-major
  std::vector<std::uint8_t> loss_mask;  // height * width, 1 where the loss is evaluated

  [[nodiscard]] std::size_t masked_count() const;
  [[nodiscard]] double masked_fraction() const;
  /// Loss-mask pixels in row-major order.
  [[nodiscard]] std::vector<GridPosition> loss_positions() const;
};

inline constexpr int kDefaultSpacingMin = 3;
inline constexpr int kDefaultSpacingMax = 5;

/// Independent per-axis spacing uniform in [spacing_min, spacing_max] and a
/// phase uniform in [0, spacing). The loss mask covers the lattice and, in
/// axial mode, `extent` pixels on each side along the axis.
MaskPlan sample_grid(int height, int width, std::mt19937_64& rng, ReplacementMode mode = {},
                     int spacing_min = kDefaultSpacingMin, int spacing_max = kDefaultSpacingMax);

/// Builds a plan for an explicit lattice (no randomness).
MaskPlan make_grid(int height, int width, int spacing_y, int spacing_x, int phase_y, int phase_x,
                   ReplacementMode mode = {});

/// Plan masking an explicit set of positions.
MaskPlan make_plan(int height, int width, std::vector<GridPosition> positions, ReplacementMode mode = {});

/// Neighbour-weighted replacement for pixel `pos`; never reads image(pos).
double replacement_value(const Image2D& image, GridPosition pos, const ReplacementMode& mode);

/// Replaces every loss-mask pixel by its replacement value computed on the
/// original image. Returns the masked image; the loss mask is plan.loss_mask.
Image2D apply_mask(const Image2D& image, const MaskPlan& plan);

}  // namespace bldn
