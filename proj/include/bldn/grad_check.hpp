#pragma once

#include <cstdint>
#include <functional>

#include "bldn/autodiff.hpp"

namespace bldn {

/// A deterministic differentiable computation from one input to any output.
/// Parameters it reads must come from the ParamSet handed to grad_check so
/// that they can be perturbed.
using Fragment = std::function<Var(Tape<double>&, Var input)>;

struct GradCheckOptions {
  double epsilon = 1e-4;
  int samples = 20;
  std::uint64_t seed = 1;
  bool check_input = true;
  // Resample coordinates where the one-sided differences disagree by more
  // than this (relative), i.e. where the step straddles a ReLU or max-pool
  // kink. Such a kink can bias the central difference by at most half this
  // amount. 0 disables the test.
  double kink_threshold = 0.0;
};

/// Compares the tape gradient with central differences at randomly sampled
/// coordinates of the input and the parameters. Non-scalar outputs are
/// reduced with a fixed random projection. Returns
/// max |analytic - numeric| / max(1, |numeric|).
double grad_check(const Fragment& fragment, const Tensor4<double>& input, ParamSet<double>* params,
                  const GradCheckOptions& options = {});

}  // namespace bldn
