#include <cmath>

#include "bldn/params.hpp"

namespace bldn {

void adam_step(ParamSet<float>& params, AdamState& state) {
  for (const auto& [name, p] : params) {
    if (!all_finite(p.grad)) {
      throw NumericalError("adam_step: non-finite gradient in parameter '" + name + "'; update skipped");
    }
  }

  const std::int64_t t = state.step + 1;
  const double correction1 = 1.0 - std::pow(state.beta1, static_cast<double>(t));
  const double correction2 = 1.0 - std::pow(state.beta2, static_cast<double>(t));
  const double step_size = state.learning_rate / correction1;

  for (auto& [name, p] : params) {
    auto& m = state.moments[name];
    const std::size_t n = p.value.size();
    if (m.first.size() != n) {
      m.first.assign(n, 0.0f);
      m.second.assign(n, 0.0f);
    }
    auto value = p.value.data();
    auto grad = p.grad.data();
    for (std::size_t i = 0; i < n; ++i) {
      const double g = grad[i];
      const double m1 = state.beta1 * m.first[i] + (1.0 - state.beta1) * g;
      const double m2 = state.beta2 * m.second[i] + (1.0 - state.beta2) * g * g;
      m.first[i] = static_cast<float>(m1);
      m.second[i] = static_cast<float>(m2);
      const double denom = std::sqrt(m2 / correction2) + state.epsilon;
      value[i] = static_cast<float>(value[i] - step_size * m1 / denom);
    }
  }
  state.step = t;
  params.zero_grad();
}

}  // namespace bldn
