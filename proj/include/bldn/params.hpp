#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bldn/tensor.hpp"

namespace bldn {

template <typename T>
struct Param {
  Tensor4<T> value;
  Tensor4<T> grad;
};

/// Named parameter tensors with gradient accumulators of identical shape.
/// Iteration order is the lexicographic name order, which fixes the layout
/// used by serialization and by the optimizer.
template <typename T>
class ParamSet {
 public:
  Param<T>& add(const std::string& name, Tensor4<T> value) {
    require(!entries_.contains(name), "ParamSet: duplicate parameter name '" + name + "'");
    Shape4 shape = value.shape();
    auto [it, _] = entries_.emplace(name, Param<T>{std::move(value), Tensor4<T>(shape)});
    return it->second;
  }

  [[nodiscard]] bool contains(const std::string& name) const { return entries_.contains(name); }

  Param<T>& at(const std::string& name) {
    auto it = entries_.find(name);
    require(it != entries_.end(), "ParamSet: unknown parameter '" + name + "'");
    return it->second;
  }
  const Param<T>& at(const std::string& name) const {
    auto it = entries_.find(name);
    require(it != entries_.end(), "ParamSet: unknown parameter '" + name + "'");
    return it->second;
  }

  void zero_grad() {
    for (auto& [_, p] : entries_) p.grad.fill(T(0));
  }

  /// Adds another set's gradients into this one (shapes must match).
  void accumulate_grad(const ParamSet& other) {
    for (auto& [name, p] : entries_) {
      const auto& src = other.at(name).grad.data();
      auto dst = p.grad.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }

  [[nodiscard]] std::size_t parameter_count() const {
    std::size_t total = 0;
    for (const auto& [_, p] : entries_) total += p.value.size();
    return total;
  }

  template <typename U>
  [[nodiscard]] ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& [name, p] : entries_) out.add(name, p.value.template cast<U>());
    return out;
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  [[nodiscard]] auto begin() const { return entries_.begin(); }
  [[nodiscard]] auto end() const { return entries_.end(); }
  [[nodiscard]] std::size_t size() const { return entries_.size(); }

 private:
  std::map<std::string, Param<T>> entries_;
};

struct AdamMoments {
  std::vector<float> first;
  std::vector<float> second;
};

struct AdamState {
  double learning_rate = 4e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  std::map<std::string, AdamMoments> moments;
};

/// One bias-corrected Adam update, then clears the gradients. Throws
/// NumericalError and leaves parameters and state untouched when any
/// gradient is non-finite.
void adam_step(ParamSet<float>& params, AdamState& state);

}  // namespace bldn
