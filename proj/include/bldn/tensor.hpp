#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "bldn/errors.hpp"

namespace bldn {

struct Shape4 {
  int batch = 1;
  int channels = 1;
  int height = 1;
  int width = 1;

  [[nodiscard]] std::size_t size() const {
    return static_cast<std::size_t>(batch) * channels * height * width;
  }
  [[nodiscard]] std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  friend bool operator==(const Shape4&, const Shape4&) = default;
};

std::string to_string(const Shape4& shape);

/// Dense NCHW tensor. All network activations and parameters use this layout.
template <typename T>
class Tensor4 {
 public:
  Tensor4() = default;
  explicit Tensor4(Shape4 shape, T fill = T(0)) : shape_(shape) {
    require(shape.batch >= 1 && shape.channels >= 1 && shape.height >= 1 && shape.width >= 1,
            "Tensor4: every dimension must be >= 1, got " + to_string(shape));
    data_.assign(shape.size(), fill);
  }
  Tensor4(Shape4 shape, std::vector<T> values) : shape_(shape), data_(std::move(values)) {
    require(data_.size() == shape.size(), "Tensor4: data length does not match " + to_string(shape));
  }

  [[nodiscard]] const Shape4& shape() const { return shape_; }
  [[nodiscard]] int batch() const { return shape_.batch; }
  [[nodiscard]] int channels() const { return shape_.channels; }
  [[nodiscard]] int height() const { return shape_.height; }
  [[nodiscard]] int width() const { return shape_.width; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  [[nodiscard]] std::span<T> data() { return data_; }
  [[nodiscard]] std::span<const T> data() const { return data_; }
  [[nodiscard]] std::vector<T>& storage() { return data_; }
  [[nodiscard]] const std::vector<T>& storage() const { return data_; }

  [[nodiscard]] std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.channels + c) * shape_.height + y) * shape_.width + x;
  }
  T& at(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  const T& at(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }

  /// Contiguous H*W plane of one (n, c) slice.
  T* plane(int n, int c) { return data_.data() + index(n, c, 0, 0); }
  const T* plane(int n, int c) const { return data_.data() + index(n, c, 0, 0); }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  template <typename U>
  [[nodiscard]] Tensor4<U> cast() const {
    Tensor4<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.data()[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  Shape4 shape_{};
  std::vector<T> data_;
};

template <typename T>
bool all_finite(const Tensor4<T>& t);

}  // namespace bldn
