#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "bldn/image.hpp"

namespace bldn {

namespace fs = std::filesystem;

float Image2D::min() const {
  require(!values.empty(), "Image2D::min on empty image");
  return *std::min_element(values.begin(), values.end());
}

float Image2D::max() const {
  require(!values.empty(), "Image2D::max on empty image");
  return *std::max_element(values.begin(), values.end());
}

namespace {

constexpr char kRawMagic[4] = {'B', 'L', 'I', 'M'};
constexpr std::uint32_t kMaxDim = 1u << 16;

std::string read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::uint32_t load_u32le(const char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(p[i]);
  return v;
}

void store_u32le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void write_all(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

std::string lowercase_extension(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

}  // namespace

Image2D read_raw(const fs::path& path) {
  const std::string bytes = read_all(path);
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kRawMagic, 4) != 0)
    throw FormatError(path.string() + ": missing BLIM header");
  const std::uint32_t h = load_u32le(bytes.data() + 4);
  const std::uint32_t w = load_u32le(bytes.data() + 8);
  if (h == 0 || w == 0 || h > kMaxDim || w > kMaxDim) throw FormatError(path.string() + ": invalid dimensions");
  const std::size_t count = static_cast<std::size_t>(h) * w;
  if (bytes.size() != 12 + 4 * count) throw FormatError(path.string() + ": payload size does not match header");
  Image2D image(static_cast<int>(h), static_cast<int>(w));
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint32_t bits = load_u32le(bytes.data() + 12 + 4 * i);
    image.values[i] = std::bit_cast<float>(bits);
  }
  return image;
}

void write_raw(const fs::path& path, const Image2D& image) {
  std::string bytes(kRawMagic, 4);
  store_u32le(bytes, static_cast<std::uint32_t>(image.height));
  store_u32le(bytes, static_cast<std::uint32_t>(image.width));
  bytes.reserve(bytes.size() + 4 * image.size());
  for (float v : image.values) store_u32le(bytes, std::bit_cast<std::uint32_t>(v));
  write_all(path, bytes);
}

Image2D read_pgm16(const fs::path& path) {
  const std::string bytes = read_all(path);
  std::size_t pos = 0;
  auto skip_space_and_comments = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> long {
    skip_space_and_comments();
    const std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos || pos - start > 9) throw FormatError(path.string() + ": malformed PGM header");
    return std::stol(bytes.substr(start, pos - start));
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw FormatError(path.string() + ": not a P5 PGM");
  pos = 2;
  const long w = read_int();
  const long h = read_int();
  const long maxval = read_int();
  if (w <= 0 || h <= 0 || w > static_cast<long>(kMaxDim) || h > static_cast<long>(kMaxDim))
    throw FormatError(path.string() + ": invalid PGM dimensions");
  if (maxval != 65535) throw FormatError(path.string() + ": unsupported PGM maxval " + std::to_string(maxval));
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw FormatError(path.string() + ": malformed PGM header");
  ++pos;
  const std::size_t count = static_cast<std::size_t>(w) * h;
  if (bytes.size() - pos < 2 * count) throw FormatError(path.string() + ": truncated PGM payload");

  Image2D image(static_cast<int>(h), static_cast<int>(w));
  image.bit_depth = 16;
  for (std::size_t i = 0; i < count; ++i) {
    const auto hi = static_cast<unsigned char>(bytes[pos + 2 * i]);
    const auto lo = static_cast<unsigned char>(bytes[pos + 2 * i + 1]);
    image.values[i] = static_cast<float>((hi << 8) | lo);
  }
  return image;
}

void write_pgm16(const fs::path& path, const Image2D& image) {
  std::string bytes = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n65535\n";
  bytes.reserve(bytes.size() + 2 * image.size());
  for (float v : image.values) {
    const double clamped = std::clamp(static_cast<double>(v), 0.0, 65535.0);
    const auto q = static_cast<std::uint16_t>(std::lround(clamped));
    bytes.push_back(static_cast<char>(q >> 8));
    bytes.push_back(static_cast<char>(q & 0xff));
  }
  write_all(path, bytes);
}

Image2D read_image(const fs::path& path) {
  const std::string ext = lowercase_extension(path);
  if (ext == ".pgm") return read_pgm16(path);
  if (ext == ".blim") return read_raw(path);
  // Unknown extension: sniff the magic.
  const std::string head = read_all(path).substr(0, 4);
  if (head.starts_with("P5")) return read_pgm16(path);
  if (head == std::string(kRawMagic, 4)) return read_raw(path);
  throw FormatError(path.string() + ": unrecognized image format");
}

void write_image(const fs::path& path, const Image2D& image) {
  if (lowercase_extension(path) == ".pgm") {
    write_pgm16(path, image);
  } else {
    write_raw(path, image);
  }
}

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FormatError(dir.string() + " is not a directory");
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = lowercase_extension(entry.path());
    if (ext == ".pgm" || ext == ".blim") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<Image2D> read_image_dir(const fs::path& dir) {
  std::vector<Image2D> images;
  for (const auto& path : list_images(dir)) {
    Image2D image = read_image(path);
    image.pairing_id = path.stem().string();
    images.push_back(std::move(image));
  }
  if (images.empty()) throw FormatError(dir.string() + ": no .pgm or .blim images found");
  return images;
}

std::vector<std::pair<fs::path, fs::path>> read_manifest(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw FormatError("cannot open manifest " + manifest.string());
  const fs::path base = manifest.parent_path();
  std::vector<std::pair<fs::path, fs::path>> pairs;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw FormatError(manifest.string() + ":" + std::to_string(number) + ": expected noisy<TAB>gt");
    fs::path noisy = line.substr(0, tab);
    fs::path gt = line.substr(tab + 1);
    if (noisy.is_relative()) noisy = base / noisy;
    if (gt.is_relative()) gt = base / gt;
    pairs.emplace_back(noisy, gt);
  }
  return pairs;
}

}  // namespace bldn
