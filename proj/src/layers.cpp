#include "bldn/layers.hpp"

#include <cmath>

#include <Eigen/Core>

namespace bldn {

std::string to_string(const Shape4& s) {
  return "(" + std::to_string(s.batch) + "," + std::to_string(s.channels) + "," +
         std::to_string(s.height) + "," + std::to_string(s.width) + ")";
}

template <typename T>
bool all_finite(const Tensor4<T>& t) {
  for (T v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

std::string_view to_string(Activation kind) {
  switch (kind) {
    case Activation::relu: return "relu";
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::tanh: return "tanh";
    case Activation::exp: return "exp";
    case Activation::sigmoid: return "sigmoid";
    case Activation::softmax_channels: return "softmax_channels";
    case Activation::linear: return "linear";
  }
  return "unknown";
}

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

struct ConvGeometry {
  int in_channels, height, width, kh, kw, out_height, out_width;
  ConvPadding pad;

  [[nodiscard]] bool pointwise() const {
    return kh == 1 && kw == 1 && pad.top == 0 && pad.left == 0 && pad.bottom == 0 && pad.right == 0;
  }
  [[nodiscard]] int rows() const { return in_channels * kh * kw; }
  [[nodiscard]] int cols() const { return out_height * out_width; }
};

template <typename T>
ConvGeometry geometry(const Tensor4<T>& input, const Tensor4<T>& kernel, ConvPadding pad) {
  require(kernel.channels() == input.channels(),
          "conv2d: kernel expects " + std::to_string(kernel.channels()) + " input channels, got " +
              std::to_string(input.channels()));
  require(pad.top >= 0 && pad.left >= 0 && pad.bottom >= 0 && pad.right >= 0, "conv2d: negative padding");
  ConvGeometry g{input.channels(), input.height(), input.width(), kernel.height(), kernel.width(), 0, 0, pad};
  g.out_height = g.height + pad.top + pad.bottom - g.kh + 1;
  g.out_width = g.width + pad.left + pad.right - g.kw + 1;
  require(g.out_height >= 1 && g.out_width >= 1, "conv2d: kernel larger than padded input");
  return g;
}

// col(row = (c*kh + a)*kw + b, col = y*out_w + x) = in(c, y + a - top, x + b - left)
template <typename T>
void im2col(const T* in, const ConvGeometry& g, T* col) {
  for (int c = 0; c < g.in_channels; ++c) {
    const T* plane = in + static_cast<std::size_t>(c) * g.height * g.width;
    for (int a = 0; a < g.kh; ++a) {
      for (int b = 0; b < g.kw; ++b) {
        T* row = col + static_cast<std::size_t>((c * g.kh + a) * g.kw + b) * g.cols();
        for (int y = 0; y < g.out_height; ++y) {
          const int sy = y + a - g.pad.top;
          T* dst = row + static_cast<std::size_t>(y) * g.out_width;
          if (sy < 0 || sy >= g.height) {
            std::fill(dst, dst + g.out_width, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(sy) * g.width;
          const int shift = b - g.pad.left;
          const int x0 = std::min(g.out_width, std::max(0, -shift));
          const int x1 = std::min(g.out_width, g.width - shift);
          for (int x = 0; x < x0; ++x) dst[x] = T(0);
          for (int x = x0; x < x1; ++x) dst[x] = src[x + shift];
          for (int x = std::max(x1, x0); x < g.out_width; ++x) dst[x] = T(0);
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* in) {
  for (int c = 0; c < g.in_channels; ++c) {
    T* plane = in + static_cast<std::size_t>(c) * g.height * g.width;
    for (int a = 0; a < g.kh; ++a) {
      for (int b = 0; b < g.kw; ++b) {
        const T* row = col + static_cast<std::size_t>((c * g.kh + a) * g.kw + b) * g.cols();
        for (int y = 0; y < g.out_height; ++y) {
          const int sy = y + a - g.pad.top;
          if (sy < 0 || sy >= g.height) continue;
          const T* src = row + static_cast<std::size_t>(y) * g.out_width;
          T* dst = plane + static_cast<std::size_t>(sy) * g.width;
          const int shift = b - g.pad.left;
          const int x0 = std::max(0, -shift);
          const int x1 = std::min(g.out_width, g.width - shift);
          for (int x = x0; x < x1; ++x) dst[x + shift] += src[x];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor4<T> conv2d_forward(const Tensor4<T>& input, const Tensor4<T>& kernel,
                          const std::type_identity_t<Tensor4<T>>* bias,
                          ConvPadding pad) {
  const ConvGeometry g = geometry(input, kernel, pad);
  const int out_channels = kernel.batch();
  Tensor4<T> out({input.batch(), out_channels, g.out_height, g.out_width});
  ConstMatrixMap<T> w(kernel.data().data(), out_channels, g.rows());
  std::vector<T> col;
  if (!g.pointwise()) col.resize(static_cast<std::size_t>(g.rows()) * g.cols());

  for (int n = 0; n < input.batch(); ++n) {
    MatrixMap<T> y(out.plane(n, 0), out_channels, g.cols());
    if (g.pointwise()) {
      y.noalias() = w * ConstMatrixMap<T>(input.plane(n, 0), g.rows(), g.cols());
    } else {
      im2col(input.plane(n, 0), g, col.data());
      y.noalias() = w * ConstMatrixMap<T>(col.data(), g.rows(), g.cols());
    }
    if (bias != nullptr && !bias->empty()) {
      require(bias->size() == static_cast<std::size_t>(out_channels), "conv2d: bias size mismatch");
      for (int c = 0; c < out_channels; ++c) y.row(c).array() += bias->data()[c];
    }
  }
  return out;
}

template <typename T>
void conv2d_backward(const Tensor4<T>& input, const Tensor4<T>& kernel, ConvPadding pad,
                     const Tensor4<T>& grad_out, Tensor4<T>* grad_input, Tensor4<T>* grad_kernel,
                     Tensor4<T>* grad_bias) {
  const ConvGeometry g = geometry(input, kernel, pad);
  const int out_channels = kernel.batch();
  require(grad_out.shape() == Shape4{input.batch(), out_channels, g.out_height, g.out_width},
          "conv2d_backward: grad_out shape mismatch");
  ConstMatrixMap<T> w(kernel.data().data(), out_channels, g.rows());
  std::vector<T> col;
  if (!g.pointwise()) col.resize(static_cast<std::size_t>(g.rows()) * g.cols());

  for (int n = 0; n < input.batch(); ++n) {
    ConstMatrixMap<T> dy(grad_out.plane(n, 0), out_channels, g.cols());
    if (grad_kernel != nullptr) {
      MatrixMap<T> dw(grad_kernel->data().data(), out_channels, g.rows());
      if (g.pointwise()) {
        dw.noalias() += dy * ConstMatrixMap<T>(input.plane(n, 0), g.rows(), g.cols()).transpose();
      } else {
        im2col(input.plane(n, 0), g, col.data());
        dw.noalias() += dy * ConstMatrixMap<T>(col.data(), g.rows(), g.cols()).transpose();
      }
    }
    if (grad_bias != nullptr) {
      for (int c = 0; c < out_channels; ++c) grad_bias->data()[c] += dy.row(c).sum();
    }
    if (grad_input != nullptr) {
      if (g.pointwise()) {
        MatrixMap<T> dx(grad_input->plane(n, 0), g.rows(), g.cols());
        dx.noalias() += w.transpose() * dy;
      } else {
        MatrixMap<T> dcol(col.data(), g.rows(), g.cols());
        dcol.noalias() = w.transpose() * dy;
        col2im_add(col.data(), g, grad_input->plane(n, 0));
      }
    }
  }
}

template <typename T>
Tensor4<T> pool2_forward(const Tensor4<T>& input) {
  require(input.height() % 2 == 0 && input.width() % 2 == 0,
          "pool2: spatial dims must be even, got " + to_string(input.shape()));
  Tensor4<T> out({input.batch(), input.channels(), input.height() / 2, input.width() / 2});
  for (int n = 0; n < input.batch(); ++n)
    for (int c = 0; c < input.channels(); ++c)
      for (int y = 0; y < out.height(); ++y)
        for (int x = 0; x < out.width(); ++x) {
          T best = input.at(n, c, 2 * y, 2 * x);
          best = std::max(best, input.at(n, c, 2 * y, 2 * x + 1));
          best = std::max(best, input.at(n, c, 2 * y + 1, 2 * x));
          best = std::max(best, input.at(n, c, 2 * y + 1, 2 * x + 1));
          out.at(n, c, y, x) = best;
        }
  return out;
}

template <typename T>
void pool2_backward(const Tensor4<T>& input, const Tensor4<T>& grad_out, Tensor4<T>& grad_input) {
  for (int n = 0; n < input.batch(); ++n)
    for (int c = 0; c < input.channels(); ++c)
      for (int y = 0; y < grad_out.height(); ++y)
        for (int x = 0; x < grad_out.width(); ++x) {
          int by = 2 * y;
          int bx = 2 * x;
          T best = input.at(n, c, by, bx);
          for (int k = 1; k < 4; ++k) {
            const int yy = 2 * y + k / 2;
            const int xx = 2 * x + k % 2;
            if (input.at(n, c, yy, xx) > best) {
              best = input.at(n, c, yy, xx);
              by = yy;
              bx = xx;
            }
          }
          grad_input.at(n, c, by, bx) += grad_out.at(n, c, y, x);
        }
}

template <typename T>
Tensor4<T> upsample_nearest_forward(const Tensor4<T>& input, int factor) {
  require(factor == 2, "upsample_nearest: only factor 2 is supported");
  Tensor4<T> out({input.batch(), input.channels(), input.height() * factor, input.width() * factor});
  for (int n = 0; n < input.batch(); ++n)
    for (int c = 0; c < input.channels(); ++c)
      for (int y = 0; y < out.height(); ++y)
        for (int x = 0; x < out.width(); ++x) out.at(n, c, y, x) = input.at(n, c, y / factor, x / factor);
  return out;
}

template <typename T>
void upsample_nearest_backward(const Tensor4<T>& grad_out, int factor, Tensor4<T>& grad_input) {
  for (int n = 0; n < grad_out.batch(); ++n)
    for (int c = 0; c < grad_out.channels(); ++c)
      for (int y = 0; y < grad_out.height(); ++y)
        for (int x = 0; x < grad_out.width(); ++x)
          grad_input.at(n, c, y / factor, x / factor) += grad_out.at(n, c, y, x);
}

template <typename T>
Tensor4<T> activation_forward(const Tensor4<T>& input, Activation kind) {
  Tensor4<T> out = input;
  auto v = out.data();
  switch (kind) {
    case Activation::relu:
      for (T& e : v) e = e > T(0) ? e : T(0);
      break;
    case Activation::leaky_relu:
      for (T& e : v) e = e > T(0) ? e : static_cast<T>(kLeakyReluSlope) * e;
      break;
    case Activation::tanh:
      for (T& e : v) e = std::tanh(e);
      break;
    case Activation::exp:
      for (T& e : v) e = std::exp(e);
      break;
    case Activation::sigmoid:
      for (T& e : v) e = T(1) / (T(1) + std::exp(-e));
      break;
    case Activation::softmax_channels: {
      require(input.channels() >= 2, "softmax_channels needs at least 2 channels");
      const std::size_t plane = input.shape().plane();
      for (int n = 0; n < input.batch(); ++n) {
        for (std::size_t p = 0; p < plane; ++p) {
          T peak = input.plane(n, 0)[p];
          for (int c = 1; c < input.channels(); ++c) peak = std::max(peak, input.plane(n, c)[p]);
          T total = 0;
          for (int c = 0; c < input.channels(); ++c) {
            T e = std::exp(input.plane(n, c)[p] - peak);
            out.plane(n, c)[p] = e;
            total += e;
          }
          for (int c = 0; c < input.channels(); ++c) out.plane(n, c)[p] /= total;
        }
      }
      break;
    }
    case Activation::linear:
      break;
  }
  return out;
}

template <typename T>
void activation_backward(const Tensor4<T>& input, const Tensor4<T>& output, Activation kind,
                         const Tensor4<T>& grad_out, Tensor4<T>& grad_input) {
  auto x = input.data();
  auto y = output.data();
  auto dy = grad_out.data();
  auto dx = grad_input.data();
  const std::size_t count = dx.size();
  switch (kind) {
    case Activation::relu:
      for (std::size_t i = 0; i < count; ++i) dx[i] += x[i] > T(0) ? dy[i] : T(0);
      break;
    case Activation::leaky_relu:
      for (std::size_t i = 0; i < count; ++i)
        dx[i] += x[i] > T(0) ? dy[i] : static_cast<T>(kLeakyReluSlope) * dy[i];
      break;
    case Activation::tanh:
      for (std::size_t i = 0; i < count; ++i) dx[i] += dy[i] * (T(1) - y[i] * y[i]);
      break;
    case Activation::exp:
      for (std::size_t i = 0; i < count; ++i) dx[i] += dy[i] * y[i];
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < count; ++i) dx[i] += dy[i] * y[i] * (T(1) - y[i]);
      break;
    case Activation::softmax_channels: {
      const std::size_t plane = input.shape().plane();
      for (int n = 0; n < input.batch(); ++n) {
        for (std::size_t p = 0; p < plane; ++p) {
          T dot = 0;
          for (int c = 0; c < input.channels(); ++c) dot += grad_out.plane(n, c)[p] * output.plane(n, c)[p];
          for (int c = 0; c < input.channels(); ++c)
            grad_input.plane(n, c)[p] += output.plane(n, c)[p] * (grad_out.plane(n, c)[p] - dot);
        }
      }
      break;
    }
    case Activation::linear:
      for (std::size_t i = 0; i < count; ++i) dx[i] += dy[i];
      break;
  }
}

template <typename T>
Tensor4<T> concat_channels_forward(const Tensor4<T>& a, const Tensor4<T>& b) {
  require(a.batch() == b.batch() && a.height() == b.height() && a.width() == b.width(),
          "concat_channels: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  Tensor4<T> out({a.batch(), a.channels() + b.channels(), a.height(), a.width()});
  const std::size_t plane = a.shape().plane();
  for (int n = 0; n < a.batch(); ++n) {
    std::copy_n(a.plane(n, 0), plane * a.channels(), out.plane(n, 0));
    std::copy_n(b.plane(n, 0), plane * b.channels(), out.plane(n, a.channels()));
  }
  return out;
}

#define BLDN_INSTANTIATE_LAYERS(T)                                                                      \
  template bool all_finite(const Tensor4<T>&);                                                          \
  template Tensor4<T> conv2d_forward(const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>*,           \
                                     ConvPadding);                                                      \
  template void conv2d_backward(const Tensor4<T>&, const Tensor4<T>&, ConvPadding, const Tensor4<T>&,   \
                                Tensor4<T>*, Tensor4<T>*, Tensor4<T>*);                                 \
  template Tensor4<T> pool2_forward(const Tensor4<T>&);                                                 \
  template void pool2_backward(const Tensor4<T>&, const Tensor4<T>&, Tensor4<T>&);                      \
  template Tensor4<T> upsample_nearest_forward(const Tensor4<T>&, int);                                 \
  template void upsample_nearest_backward(const Tensor4<T>&, int, Tensor4<T>&);                         \
  template Tensor4<T> activation_forward(const Tensor4<T>&, Activation);                                \
  template void activation_backward(const Tensor4<T>&, const Tensor4<T>&, Activation, const Tensor4<T>&, \
                                    Tensor4<T>&);                                                       \
  template Tensor4<T> concat_channels_forward(const Tensor4<T>&, const Tensor4<T>&);

BLDN_INSTANTIATE_LAYERS(float)
BLDN_INSTANTIATE_LAYERS(double)

}  // namespace bldn
