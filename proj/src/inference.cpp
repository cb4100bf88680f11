#include "bldn/inference.hpp"

#include "bldn/parallel.hpp"

namespace bldn {

namespace {

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

const NormalizationRecord& normalization_of(const NetworkBundle& bundle) {
  if (!bundle.normalization) throw ContractViolation("bundle has no normalization record; it cannot denoise raw images");
  return *bundle.normalization;
}

// Denoised image in normalized units, same shape as `normalized`.
Image2D denoise_normalized(NetworkBundle& bundle, const Image2D& normalized) {
  const int m = dnet_size_multiple(bundle.dnet);
  const int ph = (normalized.height + m - 1) / m * m;
  const int pw = (normalized.width + m - 1) / m * m;
  const Image2D padded = reflect_pad(normalized, ph, pw);
  const Tensor4<float> out = dnet_apply(bundle, Tensor4<float>({1, 1, ph, pw}, padded.values));
  Image2D full(ph, pw);
  std::copy(out.data().begin(), out.data().end(), full.values.begin());
  return crop(full, normalized.height, normalized.width);
}

}  // namespace

Image2D reflect_pad(const Image2D& image, int height, int width) {
  require(height >= image.height && width >= image.width, "reflect_pad: target smaller than image");
  Image2D out(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      out.at(y, x) = image.at(reflect_index(y, image.height), reflect_index(x, image.width));
  out.bit_depth = image.bit_depth;
  out.pairing_id = image.pairing_id;
  return out;
}

Image2D crop(const Image2D& image, int height, int width) {
  require(height >= 1 && width >= 1 && height <= image.height && width <= image.width, "crop: invalid size");
  Image2D out(height, width);
  for (int y = 0; y < height; ++y)
    std::copy_n(image.values.begin() + static_cast<std::ptrdiff_t>(y) * image.width, width,
                out.values.begin() + static_cast<std::ptrdiff_t>(y) * width);
  out.bit_depth = image.bit_depth;
  out.pairing_id = image.pairing_id;
  return out;
}

Prediction predict(NetworkBundle& bundle, const Image2D& image) {
  const NormalizationRecord& norm = normalization_of(bundle);
  const Image2D denoised = denoise_normalized(bundle, normalize(image, norm));
  NoiseParams noise = nnet_apply(bundle, denoised);
  const auto scale = static_cast<float>(norm.scale);
  for (float& v : noise.means) v *= scale;
  for (float& v : noise.stddevs) v *= scale;
  Image2D out = denormalize(denoised, norm);
  out.bit_depth = image.bit_depth;
  out.pairing_id = image.pairing_id;
  return {std::move(out), std::move(noise)};
}

Image2D predict_dihedral(NetworkBundle& bundle, const Image2D& image, int threads) {
  const NormalizationRecord& norm = normalization_of(bundle);
  const Image2D normalized = normalize(image, norm);
  const std::span<const Dihedral> group = dihedral_group(bundle.provenance.allow_transpose);
  std::vector<Image2D> passes(group.size());
  parallel_for(static_cast<int>(group.size()), threads, [&](int i) {
    passes[i] = apply(inverse(group[i]), denoise_normalized(bundle, apply(group[i], normalized)));
  });
  std::vector<double> sum(image.size(), 0.0);
  for (const Image2D& p : passes)
    for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += p.values[k];
  Image2D out(image.height, image.width);
  const double count = static_cast<double>(group.size());
  for (std::size_t k = 0; k < sum.size(); ++k) out.values[k] = static_cast<float>(norm.invert(sum[k] / count));
  out.bit_depth = image.bit_depth;
  out.pairing_id = image.pairing_id;
  return out;
}

}  // namespace bldn
