#pragma once

// Numerical self-checks shared by the `selftest` command and the test suite.

#include <cstdint>
#include <string>
#include <vector>

namespace bldn {

struct CheckResult {
  std::string name;
  double value = 0;
  double limit = 0;
  [[nodiscard]] bool passed() const { return value < limit; }
};

inline constexpr double kPrimitiveGradTolerance = 1e-4;
inline constexpr double kCompositionGradTolerance = 1e-3;

/// Finite-difference checks (64-bit) of every layer primitive and of the
/// mixture loss for 1, 2 and 3 components.
std::vector<CheckResult> primitive_grad_checks();

/// D-net + N-net + loss on a small masked tile, 20 random coordinates.
CheckResult composition_grad_check(int components, std::uint64_t seed = 3);

/// Mean masked fraction over `grids` default grids on a size x size image.
double mean_masked_fraction(int grids, int size, std::uint64_t seed);

/// max |sum_i w_i m_i| over `trials` random raw head outputs.
double max_centering_residual(int components, int trials, std::uint64_t seed);

}  // namespace bldn
