#pragma once

// Reverse-mode tape over Tensor4 values. Nodes are appended in evaluation
// order; backward() walks them in reverse and calls each node's local
// gradient rule. A tape is single-use and single-threaded.

#include <functional>
#include <vector>

#include "bldn/layers.hpp"
#include "bldn/params.hpp"

namespace bldn {

struct Var {
  int id = -1;
  [[nodiscard]] bool valid() const { return id >= 0; }
};

/// Flat (batch, y, x) pixel address used by gather().
struct PixelIndex {
  int batch = 0;
  int y = 0;
  int x = 0;
};

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor4<T> value);
  /// Differentiable leaf; read its gradient with grad() after backward().
  Var leaf(Tensor4<T> value);
  /// Leaf bound to a parameter; backward() adds into param.grad.
  Var param(Param<T>& param);

  Var conv2d(Var x, Var kernel, Var bias, ConvPadding pad);
  Var pool2(Var x);
  Var upsample_nearest(Var x, int factor = 2);
  Var activation(Var x, Activation kind);
  Var concat_channels(Var a, Var b);
  /// Collects pixels into a (1, C, 1, M) tensor, one column per index.
  Var gather(Var x, std::vector<PixelIndex> indices);
  /// Same value, no gradient flows back through it.
  Var detach(Var x);
  /// Sum of all elements (scalar output).
  Var sum(Var x);
  /// Generic node: the backward rule reads grad(output) and calls accumulate() on inputs.
  Var custom(const std::vector<Var>& inputs, Tensor4<T> value, BackwardFn backward);

  [[nodiscard]] const Tensor4<T>& value(Var v) const { return nodes_.at(v.id).value; }
  /// Gradient of the last backward() target w.r.t. v; zeros if none flowed.
  [[nodiscard]] const Tensor4<T>& grad(Var v);
  [[nodiscard]] bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  void accumulate(Var v, const Tensor4<T>& g);
  /// Mutable gradient buffer (allocated on demand) for accumulation by backward rules.
  Tensor4<T>& grad_buffer(Var v);

  /// Seeds d(target)/d(target) = 1 (target must have one element).
  void backward(Var target);
  [[nodiscard]] std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor4<T> value;
    Tensor4<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
    Param<T>* bound = nullptr;
  };

  Var push(Tensor4<T> value, bool requires_grad, BackwardFn backward);
  bool any_requires_grad(std::initializer_list<Var> vars) const;

  std::vector<Node> nodes_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace bldn
