#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bldn/errors.hpp"

namespace bldn {

/// Single-channel float raster, row-major.
struct Image2D {
  int height = 0;
  int width = 0;
  std::vector<float> values;
  int bit_depth = 32;      // 16 when read from PGM
  std::string pairing_id;  // links a noisy image to its ground truth

  Image2D() = default;
  Image2D(int h, int w, float fill = 0.0f) : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {
    require(h >= 1 && w >= 1, "Image2D: dims must be positive");
  }

  float& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  [[nodiscard]] float at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  [[nodiscard]] std::size_t size() const { return values.size(); }
  [[nodiscard]] bool same_shape(const Image2D& other) const {
    return height == other.height && width == other.width;
  }
  [[nodiscard]] float min() const;
  [[nodiscard]] float max() const;
};

/// Raw format: "BLIM", u32 height, u32 width, little-endian float32 row-major.
/// PGM: binary P5 with maxval 65535 (big-endian 16-bit samples).
Image2D read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Image2D& image);

Image2D read_raw(const std::filesystem::path& path);
void write_raw(const std::filesystem::path& path, const Image2D& image);
Image2D read_pgm16(const std::filesystem::path& path);
/// Values are clamped to [0, 65535] and rounded.
void write_pgm16(const std::filesystem::path& path, const Image2D& image);

/// Image files (.blim, .pgm) in a directory, sorted by file name.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);
std::vector<Image2D> read_image_dir(const std::filesystem::path& dir);

/// Reads "noisy_path<TAB>gt_path" lines; relative paths resolve against the manifest's directory.
std::vector<std::pair<std::filesystem::path, std::filesystem::path>> read_manifest(
    const std::filesystem::path& manifest);

}  // namespace bldn
