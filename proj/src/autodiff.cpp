#include "bldn/autodiff.hpp"

namespace bldn {

template <typename T>
Var Tape<T>::push(Tensor4<T> value, bool requires_grad, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  if (requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
bool Tape<T>::any_requires_grad(std::initializer_list<Var> vars) const {
  for (Var v : vars)
    if (v.valid() && nodes_.at(v.id).requires_grad) return true;
  return false;
}

template <typename T>
Var Tape<T>::constant(Tensor4<T> value) {
  return push(std::move(value), false, {});
}

template <typename T>
Var Tape<T>::leaf(Tensor4<T> value) {
  return push(std::move(value), true, {});
}

template <typename T>
Var Tape<T>::param(Param<T>& p) {
  Var v = push(p.value, true, {});
  nodes_.back().bound = &p;
  return v;
}

template <typename T>
Tensor4<T>& Tape<T>::grad_buffer(Var v) {
  Node& node = nodes_.at(v.id);
  if (node.grad.empty()) node.grad = Tensor4<T>(node.value.shape());
  return node.grad;
}

template <typename T>
const Tensor4<T>& Tape<T>::grad(Var v) {
  return grad_buffer(v);
}

template <typename T>
void Tape<T>::accumulate(Var v, const Tensor4<T>& g) {
  if (!nodes_.at(v.id).requires_grad) return;
  Tensor4<T>& dst = grad_buffer(v);
  require(dst.shape() == g.shape(), "Tape::accumulate: gradient shape mismatch");
  auto d = dst.data();
  auto s = g.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

template <typename T>
Var Tape<T>::conv2d(Var x, Var kernel, Var bias, ConvPadding pad) {
  const Tensor4<T>* b = bias.valid() ? &value(bias) : nullptr;
  Tensor4<T> out = conv2d_forward(value(x), value(kernel), b, pad);
  return push(std::move(out), any_requires_grad({x, kernel, bias}), [x, kernel, bias, pad, self = Var{static_cast<int>(nodes_.size())}](Tape& t) {
    Tensor4<T>* gx = t.requires_grad(x) ? &t.grad_buffer(x) : nullptr;
    Tensor4<T>* gk = t.requires_grad(kernel) ? &t.grad_buffer(kernel) : nullptr;
    Tensor4<T>* gb = bias.valid() && t.requires_grad(bias) ? &t.grad_buffer(bias) : nullptr;
    conv2d_backward(t.value(x), t.value(kernel), pad, t.grad(self), gx, gk, gb);
  });
}

template <typename T>
Var Tape<T>::pool2(Var x) {
  Var self{static_cast<int>(nodes_.size())};
  return push(pool2_forward(value(x)), any_requires_grad({x}), [x, self](Tape& t) {
    pool2_backward(t.value(x), t.grad(self), t.grad_buffer(x));
  });
}

template <typename T>
Var Tape<T>::upsample_nearest(Var x, int factor) {
  Var self{static_cast<int>(nodes_.size())};
  return push(upsample_nearest_forward(value(x), factor), any_requires_grad({x}), [x, self, factor](Tape& t) {
    upsample_nearest_backward(t.grad(self), factor, t.grad_buffer(x));
  });
}

template <typename T>
Var Tape<T>::activation(Var x, Activation kind) {
  Var self{static_cast<int>(nodes_.size())};
  return push(activation_forward(value(x), kind), any_requires_grad({x}), [x, self, kind](Tape& t) {
    activation_backward(t.value(x), t.value(self), kind, t.grad(self), t.grad_buffer(x));
  });
}

template <typename T>
Var Tape<T>::concat_channels(Var a, Var b) {
  Var self{static_cast<int>(nodes_.size())};
  return push(concat_channels_forward(value(a), value(b)), any_requires_grad({a, b}), [a, b, self](Tape& t) {
    const Tensor4<T>& g = t.grad(self);
    const int ca = t.value(a).channels();
    const int cb = t.value(b).channels();
    const std::size_t plane = g.shape().plane();
    for (int n = 0; n < g.batch(); ++n) {
      if (t.requires_grad(a)) {
        T* dst = t.grad_buffer(a).plane(n, 0);
        const T* src = g.plane(n, 0);
        for (std::size_t i = 0; i < plane * ca; ++i) dst[i] += src[i];
      }
      if (t.requires_grad(b)) {
        T* dst = t.grad_buffer(b).plane(n, 0);
        const T* src = g.plane(n, ca);
        for (std::size_t i = 0; i < plane * cb; ++i) dst[i] += src[i];
      }
    }
  });
}

template <typename T>
Var Tape<T>::gather(Var x, std::vector<PixelIndex> indices) {
  const Tensor4<T>& in = value(x);
  require(!indices.empty(), "Tape::gather: no indices");
  const int count = static_cast<int>(indices.size());
  Tensor4<T> out({1, in.channels(), 1, count});
  for (int m = 0; m < count; ++m) {
    const PixelIndex& p = indices[m];
    require(p.batch >= 0 && p.batch < in.batch() && p.y >= 0 && p.y < in.height() && p.x >= 0 &&
                p.x < in.width(),
            "Tape::gather: index out of bounds");
    for (int c = 0; c < in.channels(); ++c) out.at(0, c, 0, m) = in.at(p.batch, c, p.y, p.x);
  }
  Var self{static_cast<int>(nodes_.size())};
  return push(std::move(out), any_requires_grad({x}), [x, self, idx = std::move(indices)](Tape& t) {
    const Tensor4<T>& g = t.grad(self);
    Tensor4<T>& dst = t.grad_buffer(x);
    for (std::size_t m = 0; m < idx.size(); ++m)
      for (int c = 0; c < g.channels(); ++c)
        dst.at(idx[m].batch, c, idx[m].y, idx[m].x) += g.at(0, c, 0, static_cast<int>(m));
  });
}

template <typename T>
Var Tape<T>::detach(Var x) {
  return push(value(x), false, {});
}

template <typename T>
Var Tape<T>::sum(Var x) {
  T total = 0;
  for (T v : value(x).data()) total += v;
  Var self{static_cast<int>(nodes_.size())};
  return push(Tensor4<T>(Shape4{}, total), any_requires_grad({x}), [x, self](Tape& t) {
    const T g = t.grad(self).data()[0];
    for (T& d : t.grad_buffer(x).data()) d += g;
  });
}

template <typename T>
Var Tape<T>::custom(const std::vector<Var>& inputs, Tensor4<T> value, BackwardFn backward) {
  bool needs = false;
  for (Var v : inputs) needs = needs || (v.valid() && nodes_.at(v.id).requires_grad);
  return push(std::move(value), needs, std::move(backward));
}

template <typename T>
void Tape<T>::backward(Var target) {
  require(value(target).size() == 1, "Tape::backward: target must be a scalar");
  require(target.id < static_cast<int>(nodes_.size()), "Tape::backward: unknown target");
  for (Node& node : nodes_) node.grad = Tensor4<T>();
  grad_buffer(target).data()[0] = T(1);
  for (int id = target.id; id >= 0; --id) {
    Node& node = nodes_[id];
    if (!node.requires_grad || node.grad.empty()) continue;
    if (node.backward) node.backward(*this);
  }
  for (Node& node : nodes_) {
    if (node.bound == nullptr || node.grad.empty()) continue;
    auto dst = node.bound->grad.data();
    auto src = node.grad.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace bldn
