#include "bldn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace bldn {

namespace {

struct Coordinate {
  double* slot;           // value to perturb
  const double* gradient;  // analytic gradient for the same entry
};

}  // namespace

double grad_check(const Fragment& fragment, const Tensor4<double>& input, ParamSet<double>* params,
                  const GradCheckOptions& options) {
  require(options.epsilon >= 1e-5 && options.epsilon <= 1e-3, "grad_check: epsilon outside [1e-5, 1e-3]");
  std::mt19937_64 rng(options.seed);

  Tensor4<double> x = input;
  Tensor4<double> projection;

  auto objective = [&](Tape<double>& tape, Var& leaf) {
    leaf = tape.leaf(x);
    Var out = fragment(tape, leaf);
    const Tensor4<double>& y = tape.value(out);
    if (y.size() == 1) return out;
    if (projection.shape() != y.shape() || projection.empty()) {
      projection = Tensor4<double>(y.shape());
      std::normal_distribution<double> normal(0.0, 1.0);
      for (double& r : projection.data()) r = normal(rng);
    }
    const Tensor4<double> weights = projection;
    double total = 0;
    for (std::size_t i = 0; i < y.size(); ++i) total += weights.data()[i] * y.data()[i];
    return tape.custom({out}, Tensor4<double>(Shape4{}, total), [out, weights, self = Var{static_cast<int>(tape.node_count())}](Tape<double>& t) {
      const double g = t.grad(self).data()[0];
      Tensor4<double> contribution = weights;
      for (double& w : contribution.data()) w *= g;
      t.accumulate(out, contribution);
    });
  };

  auto evaluate = [&]() {
    Tape<double> tape;
    Var leaf;
    Var s = objective(tape, leaf);
    return tape.value(s).data()[0];
  };

  if (params != nullptr) params->zero_grad();
  Tape<double> tape;
  Var leaf;
  Var s = objective(tape, leaf);
  tape.backward(s);
  const Tensor4<double> input_grad = tape.grad(leaf);

  std::vector<Coordinate> coords;
  if (options.check_input) {
    for (std::size_t i = 0; i < x.size(); ++i) coords.push_back({&x.data()[i], &input_grad.data()[i]});
  }
  if (params != nullptr) {
    for (auto& [_, p] : *params)
      for (std::size_t i = 0; i < p.value.size(); ++i) coords.push_back({&p.value.data()[i], &p.grad.data()[i]});
  }
  require(!coords.empty(), "grad_check: nothing to check");

  std::uniform_int_distribution<std::size_t> pick(0, coords.size() - 1);
  const double centre = options.kink_threshold > 0 ? evaluate() : 0.0;
  double worst = 0;
  int checked = 0;
  for (int draws = 0; checked < options.samples; ++draws) {
    require(draws < 20 * options.samples, "grad_check: too many coordinates sit on kinks");
    const Coordinate c = coords[pick(rng)];
    const double saved = *c.slot;
    *c.slot = saved + options.epsilon;
    const double plus = evaluate();
    *c.slot = saved - options.epsilon;
    const double minus = evaluate();
    *c.slot = saved;
    const double numeric = (plus - minus) / (2 * options.epsilon);
    if (options.kink_threshold > 0) {
      const double forward = (plus - centre) / options.epsilon;
      const double backward = (centre - minus) / options.epsilon;
      if (std::abs(forward - backward) > options.kink_threshold * std::max(1.0, std::abs(numeric))) continue;
    }
    worst = std::max(worst, std::abs(*c.gradient - numeric) / std::max(1.0, std::abs(numeric)));
    ++checked;
  }
  if (params != nullptr) params->zero_grad();
  return worst;
}

}  // namespace bldn
