#pragma once

#include "bldn/networks.hpp"

namespace bldn {

struct Prediction {
  Image2D denoised;  // raw units
  NoiseParams noise;  // means and stddevs in raw units
};

/// Reflect padding (edge sample not repeated) on the bottom and right.
Image2D reflect_pad(const Image2D& image, int height, int width);
Image2D crop(const Image2D& image, int height, int width);

/// D-net on the full image (no masking), then the N-net on the denoised
/// values. Requires bundle.normalization.
Prediction predict(NetworkBundle& bundle, const Image2D& image);

/// Mean of g^-1(Dnet(g(image))) over dihedral_group(bundle.provenance.allow_transpose).
Image2D predict_dihedral(NetworkBundle& bundle, const Image2D& image, int threads = 1);

}  // namespace bldn
