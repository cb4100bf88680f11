#include "bldn/masking.hpp"

#include <cmath>

namespace bldn {

std::string_view to_string(ReplacementKind kind) {
  switch (kind) {
    case ReplacementKind::gaussian8: return "gaussian8";
    case ReplacementKind::uniform8: return "uniform8";
    case ReplacementKind::axial: return "axial";
  }
  return "unknown";
}

std::string to_string(const ReplacementMode& mode) {
  if (mode.kind != ReplacementKind::axial) return std::string(to_string(mode.kind));
  return mode.axis == CorrelationAxis::horizontal ? "axial-horizontal" : "axial-vertical";
}

ReplacementMode parse_replacement_mode(std::string_view text) {
  if (text == "gaussian8") return ReplacementMode::gaussian8();
  if (text == "uniform8") return ReplacementMode::uniform8();
  if (text == "axial-horizontal") return ReplacementMode::axial(CorrelationAxis::horizontal);
  if (text == "axial-vertical") return ReplacementMode::axial(CorrelationAxis::vertical);
  throw ContractViolation("unknown replacement mode '" + std::string(text) + "'");
}

std::size_t MaskPlan::masked_count() const {
  std::size_t n = 0;
  for (auto m : loss_mask) n += m;
  return n;
}

double MaskPlan::masked_fraction() const {
  return static_cast<double>(masked_count()) / static_cast<double>(loss_mask.size());
}

std::vector<GridPosition> MaskPlan::loss_positions() const {
  std::vector<GridPosition> out;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      if (loss_mask[static_cast<std::size_t>(y) * width + x] != 0) out.push_back({y, x});
  return out;
}

namespace {

void mark(MaskPlan& plan, int y, int x) {
  if (y < 0 || y >= plan.height || x < 0 || x >= plan.width) return;
  plan.loss_mask[static_cast<std::size_t>(y) * plan.width + x] = 1;
}

void build_loss_mask(MaskPlan& plan) {
  plan.loss_mask.assign(static_cast<std::size_t>(plan.height) * plan.width, 0);
  for (const GridPosition& p : plan.positions) {
    mark(plan, p.y, p.x);
    if (plan.mode.kind != ReplacementKind::axial) continue;
    for (int k = 1; k <= plan.mode.extent; ++k) {
      if (plan.mode.axis == CorrelationAxis::horizontal) {
        mark(plan, p.y, p.x - k);
        mark(plan, p.y, p.x + k);
      } else {
        mark(plan, p.y - k, p.x);
        mark(plan, p.y + k, p.x);
      }
    }
  }
}

}  // namespace

MaskPlan make_plan(int height, int width, std::vector<GridPosition> positions, ReplacementMode mode) {
  require(height >= 1 && width >= 1, "make_plan: dims must be positive");
  for (const auto& p : positions)
    require(p.y >= 0 && p.y < height && p.x >= 0 && p.x < width, "make_plan: position out of bounds");
  MaskPlan plan;
  plan.height = height;
  plan.width = width;
  plan.mode = mode;
  plan.positions = std::move(positions);
  build_loss_mask(plan);
  return plan;
}

MaskPlan make_grid(int height, int width, int spacing_y, int spacing_x, int phase_y, int phase_x,
                   ReplacementMode mode) {
  require(spacing_y >= 1 && spacing_x >= 1, "make_grid: spacing must be positive");
  require(phase_y >= 0 && phase_y < spacing_y && phase_x >= 0 && phase_x < spacing_x,
          "make_grid: phase must lie in [0, spacing)");
  std::vector<GridPosition> positions;
  for (int y = phase_y; y < height; y += spacing_y)
    for (int x = phase_x; x < width; x += spacing_x) positions.push_back({y, x});
  MaskPlan plan = make_plan(height, width, std::move(positions), mode);
  plan.spacing_y = spacing_y;
  plan.spacing_x = spacing_x;
  plan.phase_y = phase_y;
  plan.phase_x = phase_x;
  return plan;
}

MaskPlan sample_grid(int height, int width, std::mt19937_64& rng, ReplacementMode mode, int spacing_min,
                     int spacing_max) {
  require(spacing_min >= 1 && spacing_min <= spacing_max, "sample_grid: need 1 <= spacing_min <= spacing_max");
  require(height >= spacing_max && width >= spacing_max, "sample_grid: image smaller than the maximum spacing");
  std::uniform_int_distribution<int> spacing(spacing_min, spacing_max);
  const int sy = spacing(rng);
  const int sx = spacing(rng);
  const int py = std::uniform_int_distribution<int>(0, sy - 1)(rng);
  const int px = std::uniform_int_distribution<int>(0, sx - 1)(rng);
  return make_grid(height, width, sy, sx, py, px, mode);
}

double replacement_value(const Image2D& image, GridPosition pos, const ReplacementMode& mode) {
  require(pos.y >= 0 && pos.y < image.height && pos.x >= 0 && pos.x < image.width,
          "replacement_value: position out of bounds");
  static const double kAdjacent = std::exp(-0.5);
  static const double kDiagonal = std::exp(-1.0);
  double weighted = 0;
  double total = 0;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      if (dy == 0 && dx == 0) continue;
      if (mode.kind == ReplacementKind::axial) {
        if (mode.axis == CorrelationAxis::horizontal && dy == 0) continue;
        if (mode.axis == CorrelationAxis::vertical && dx == 0) continue;
      }
      const int y = pos.y + dy;
      const int x = pos.x + dx;
      if (y < 0 || y >= image.height || x < 0 || x >= image.width) continue;
      double w = 1.0;
      if (mode.kind != ReplacementKind::uniform8) w = (dy != 0 && dx != 0) ? kDiagonal : kAdjacent;
      weighted += w * image.at(y, x);
      total += w;
    }
  if (total <= 0) throw ContractViolation("replacement_value: pixel has no available neighbours");
  return weighted / total;
}

Image2D apply_mask(const Image2D& image, const MaskPlan& plan) {
  require(plan.height == image.height && plan.width == image.width, "apply_mask: plan does not match image");
  Image2D masked = image;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      if (plan.loss_mask[static_cast<std::size_t>(y) * image.width + x] != 0)
        masked.at(y, x) = static_cast<float>(replacement_value(image, {y, x}, plan.mode));
  return masked;
}

}  // namespace bldn
