#include "bldn/networks.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace bldn {

void validate(const DNetConfig& c) {
  require(c.levels >= 1 && c.levels <= 6, "DNetConfig: levels must be in 1..6");
  require(c.base_filters >= 1 && c.convs_per_block >= 1 && c.final_decoder_convs >= 1 && c.bottleneck_convs >= 0 && c.tail_1x1_layers >= 0 &&
              c.tail_filters >= 1,
          "DNetConfig: filter and layer counts must be positive");
}

void validate(const NNetConfig& c) {
  require(c.components >= 1 && c.components <= kMaxComponents, "NNetConfig: components must be 1, 2 or 3");
  require(c.hidden_filters >= 1 && c.blocks >= 1, "NNetConfig: hidden_filters and blocks must be >= 1");
}

int dnet_size_multiple(const DNetConfig& config) { return 1 << config.levels; }

namespace {

void add_conv(ParamSet<float>& params, const std::string& name, int out, int in, int k, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / (static_cast<double>(in) * k * k));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor4<float> w({out, in, k, k});
  for (float& v : w.data()) v = static_cast<float>(dist(rng));
  params.add(name + ".w", std::move(w));
  params.add(name + ".b", Tensor4<float>({1, out, 1, 1}));
}

// Hidden 1x1 layers of the N-net alternate tanh / leaky ReLU, counted
// across the whole path from input to head.
Activation nnet_activation(int layer) { return layer % 2 == 0 ? Activation::tanh : Activation::leaky_relu; }

struct NNetLayout {
  int shared_layers;
  int branch_layers;
};

int decoder_convs(const DNetConfig& c, int level) { return level == 0 ? c.final_decoder_convs : c.convs_per_block; }

NNetLayout nnet_layout(const NNetConfig& c) {
  if (c.components == 1) return {2 * c.blocks, 0};
  return {2 * (c.blocks - 1), 2};
}

template <typename T>
Var conv(Tape<T>& tape, ParamSet<T>& params, const std::string& name, Var x, ConvPadding pad, bool trainable) {
  Param<T>& w = params.at(name + ".w");
  Param<T>& b = params.at(name + ".b");
  Var wv = trainable ? tape.param(w) : tape.constant(w.value);
  Var bv = trainable ? tape.param(b) : tape.constant(b.value);
  return tape.conv2d(x, wv, bv, pad);
}

}  // namespace

void build_dnet(const DNetConfig& c, ParamSet<float>& params, std::mt19937_64& rng) {
  validate(c);
  const int f = c.base_filters;
  int in = 1;
  for (int l = 0; l < c.levels; ++l) {
    for (int k = 0; k < c.convs_per_block; ++k) {
      add_conv(params, "dnet.enc" + std::to_string(l) + ".conv" + std::to_string(k), f, in, 3, rng);
      in = f;
    }
  }
  for (int k = 0; k < c.bottleneck_convs; ++k) {
    add_conv(params, "dnet.mid.conv" + std::to_string(k), f, in, 3, rng);
    in = f;
  }
  for (int l = c.levels - 1; l >= 0; --l) {
    add_conv(params, "dnet.up" + std::to_string(l), f, in, 2, rng);
    in = 2 * f;
    for (int k = 0; k < decoder_convs(c, l); ++k) {
      add_conv(params, "dnet.dec" + std::to_string(l) + ".conv" + std::to_string(k), f, in, 3, rng);
      in = f;
    }
  }
  for (int k = 0; k < c.tail_1x1_layers; ++k) {
    add_conv(params, "dnet.tail" + std::to_string(k), c.tail_filters, in, 1, rng);
    in = c.tail_filters;
  }
  add_conv(params, "dnet.out", 1, in, 1, rng);
}

void build_nnet(const NNetConfig& c, ParamSet<float>& params, std::mt19937_64& rng) {
  validate(c);
  const int h = c.hidden_filters;
  const NNetLayout layout = nnet_layout(c);
  int in = 1;
  for (int j = 0; j < layout.shared_layers; ++j) {
    add_conv(params, "nnet.shared.l" + std::to_string(j), h, in, 1, rng);
    in = h;
  }
  const int trunk = in;
  if (c.components == 1) {
    add_conv(params, "nnet.sigma.head", 1, trunk, 1, rng);
    return;
  }
  const int n = c.components;
  const std::pair<const char*, int> heads[] = {{"sigma", n}, {"weight", n == 2 ? 1 : n}, {"mean", n - 1}};
  for (const auto& [branch, channels] : heads) {
    int b_in = trunk;
    for (int j = 0; j < layout.branch_layers; ++j) {
      add_conv(params, std::string("nnet.") + branch + ".l" + std::to_string(j), h, b_in, 1, rng);
      b_in = h;
    }
    add_conv(params, std::string("nnet.") + branch + ".head", channels, b_in, 1, rng);
  }
}

template <typename T>
Var dnet_forward(Tape<T>& tape, const DNetConfig& c, ParamSet<T>& params, Var input, bool trainable) {
  const Shape4& s = tape.value(input).shape();
  const int multiple = dnet_size_multiple(c);
  require(s.channels == 1, "dnet_forward: input must have one channel");
  require(s.height % multiple == 0 && s.width % multiple == 0 && s.height >= multiple && s.width >= multiple,
          "dnet_forward: spatial dims must be positive multiples of " + std::to_string(multiple) + ", got " +
              to_string(s));
  const ConvPadding same3 = ConvPadding::same(3);
  const ConvPadding same2 = ConvPadding::same(2);
  const ConvPadding none = ConvPadding::same(1);

  auto relu = [&](Var v) { return tape.activation(v, Activation::relu); };
  Var x = input;
  std::vector<Var> skips;
  for (int l = 0; l < c.levels; ++l) {
    for (int k = 0; k < c.convs_per_block; ++k)
      x = relu(conv(tape, params, "dnet.enc" + std::to_string(l) + ".conv" + std::to_string(k), x, same3, trainable));
    skips.push_back(x);
    x = tape.pool2(x);
  }
  for (int k = 0; k < c.bottleneck_convs; ++k)
    x = relu(conv(tape, params, "dnet.mid.conv" + std::to_string(k), x, same3, trainable));
  for (int l = c.levels - 1; l >= 0; --l) {
    x = tape.upsample_nearest(x, 2);
    x = relu(conv(tape, params, "dnet.up" + std::to_string(l), x, same2, trainable));
    x = tape.concat_channels(x, skips[l]);
    for (int k = 0; k < decoder_convs(c, l); ++k)
      x = relu(conv(tape, params, "dnet.dec" + std::to_string(l) + ".conv" + std::to_string(k), x, same3, trainable));
  }
  for (int k = 0; k < c.tail_1x1_layers; ++k)
    x = relu(conv(tape, params, "dnet.tail" + std::to_string(k), x, none, trainable));
  return conv(tape, params, "dnet.out", x, none, trainable);
}

template <typename T>
NoiseHeads nnet_forward(Tape<T>& tape, const NNetConfig& c, ParamSet<T>& params, Var input, bool trainable) {
  require(tape.value(input).channels() == 1, "nnet_forward: input must have one channel");
  const ConvPadding none = ConvPadding::same(1);
  const NNetLayout layout = nnet_layout(c);
  Var x = input;
  for (int j = 0; j < layout.shared_layers; ++j)
    x = tape.activation(conv(tape, params, "nnet.shared.l" + std::to_string(j), x, none, trainable), nnet_activation(j));

  NoiseHeads heads;
  heads.components = c.components;
  if (c.components == 1) {
    heads.stddev = tape.activation(conv(tape, params, "nnet.sigma.head", x, none, trainable), Activation::exp);
    return heads;
  }
  auto branch = [&](const std::string& name) {
    Var b = x;
    for (int j = 0; j < layout.branch_layers; ++j)
      b = tape.activation(conv(tape, params, "nnet." + name + ".l" + std::to_string(j), b, none, trainable),
                          nnet_activation(layout.shared_layers + j));
    return conv(tape, params, "nnet." + name + ".head", b, none, trainable);
  };
  heads.stddev = tape.activation(branch("sigma"), Activation::exp);
  heads.weight = tape.activation(branch("weight"), c.components == 2 ? Activation::sigmoid : Activation::softmax_channels);
  heads.free_mean = branch("mean");
  return heads;
}

template Var dnet_forward(Tape<float>&, const DNetConfig&, ParamSet<float>&, Var, bool);
template Var dnet_forward(Tape<double>&, const DNetConfig&, ParamSet<double>&, Var, bool);
template NoiseHeads nnet_forward(Tape<float>&, const NNetConfig&, ParamSet<float>&, Var, bool);
template NoiseHeads nnet_forward(Tape<double>&, const NNetConfig&, ParamSet<double>&, Var, bool);

NetworkBundle NetworkBundle::create(const DNetConfig& dnet, const NNetConfig& nnet, std::uint64_t seed) {
  NetworkBundle bundle;
  bundle.dnet = dnet;
  bundle.nnet = nnet;
  bundle.provenance.seed = seed;
  std::mt19937_64 rng(seed);
  build_dnet(dnet, bundle.params, rng);
  build_nnet(nnet, bundle.params, rng);
  return bundle;
}

Tensor4<float> dnet_apply(NetworkBundle& bundle, const Tensor4<float>& input) {
  Tape<float> tape;
  Var x = tape.constant(input);
  return tape.value(dnet_forward(tape, bundle.dnet, bundle.params, x, false));
}

NoiseParams nnet_apply(NetworkBundle& bundle, const Image2D& denoised) {
  const int n = bundle.nnet.components;
  const int count = static_cast<int>(denoised.size());
  Tape<float> tape;
  Var x = tape.constant(Tensor4<float>({1, 1, 1, count}, denoised.values));
  const NoiseHeads heads = nnet_forward(tape, bundle.nnet, bundle.params, x, false);
  NoiseParams out(n, denoised.height, denoised.width);
  for (int m = 0; m < count; ++m) {
    const Mixture mix = mixture_from_heads(tape, heads, m);
    out.set(m / denoised.width, m % denoised.width, mix);
  }
  return out;
}

Mixture nnet_at(NetworkBundle& bundle, double denoised) {
  Image2D one(1, 1, static_cast<float>(denoised));
  return nnet_apply(bundle, one).at(0, 0);
}

int measure_receptive_radius(NetworkBundle& bundle, int size, std::uint64_t seed) {
  const int multiple = dnet_size_multiple(bundle.dnet);
  require(size % multiple == 0, "measure_receptive_radius: probe size must be a multiple of 2^levels");
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  int radius = 0;
  const int centre = size / 2;
  for (int trial = 0; trial < 3; ++trial) {
    Tensor4<float> input({1, 1, size, size});
    for (float& v : input.data()) v = normal(rng);
    for (int offset = 0; offset < multiple; ++offset) {
      const int cy = centre + offset;
      const int cx = centre + offset;
      Tape<float> tape;
      Var x = tape.leaf(input);
      Var y = dnet_forward(tape, bundle.dnet, bundle.params, x, false);
      Var picked = tape.gather(y, {PixelIndex{0, cy, cx}});
      Var s = tape.sum(picked);
      tape.backward(s);
      const Tensor4<float>& g = tape.grad(x);
      for (int yy = 0; yy < size; ++yy)
        for (int xx = 0; xx < size; ++xx)
          if (g.at(0, 0, yy, xx) != 0.0f) radius = std::max({radius, std::abs(yy - cy), std::abs(xx - cx)});
    }
  }
  return radius;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[4] = {'B', 'L', 'D', 'N'};

std::string format_double(double v) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.17g", v);
  return buffer;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(std::string bytes, std::string origin) : bytes_(std::move(bytes)), origin_(std::move(origin)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(bytes_[pos_ + i]);
    pos_ += 4;
    return v;
  }
  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  [[nodiscard]] bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError(origin_ + ": truncated checkpoint");
  }
  std::string bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

std::map<std::string, std::string> parse_metadata(const std::string& text, const std::string& origin) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(origin + ": malformed metadata line '" + line + "'");
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const NetworkBundle& bundle) {
  std::map<std::string, std::string> meta;
  meta["dnet.base_filters"] = std::to_string(bundle.dnet.base_filters);
  meta["dnet.levels"] = std::to_string(bundle.dnet.levels);
  meta["dnet.convs_per_block"] = std::to_string(bundle.dnet.convs_per_block);
  meta["dnet.final_decoder_convs"] = std::to_string(bundle.dnet.final_decoder_convs);
  meta["dnet.bottleneck_convs"] = std::to_string(bundle.dnet.bottleneck_convs);
  meta["dnet.tail_1x1_layers"] = std::to_string(bundle.dnet.tail_1x1_layers);
  meta["dnet.tail_filters"] = std::to_string(bundle.dnet.tail_filters);
  meta["nnet.components"] = std::to_string(bundle.nnet.components);
  meta["nnet.hidden_filters"] = std::to_string(bundle.nnet.hidden_filters);
  meta["nnet.blocks"] = std::to_string(bundle.nnet.blocks);
  if (bundle.normalization) {
    meta["normalization.center"] = format_double(bundle.normalization->center);
    meta["normalization.scale"] = format_double(bundle.normalization->scale);
  }
  meta["receptive_field"] = std::to_string(bundle.receptive_field);
  meta["provenance.epochs"] = std::to_string(bundle.provenance.epochs);
  meta["provenance.seed"] = std::to_string(bundle.provenance.seed);
  meta["provenance.allow_transpose"] = bundle.provenance.allow_transpose ? "1" : "0";
  meta["provenance.replacement_mode"] = bundle.provenance.replacement_mode;
  for (const auto& [k, v] : bundle.extra) {
    require(k.find_first_of("=\n") == std::string::npos && v.find('\n') == std::string::npos,
            "save_checkpoint: metadata keys/values may not contain '=' or newlines");
    meta["extra." + k] = v;
  }
  std::string text;
  for (const auto& [k, v] : meta) text += k + "=" + v + "\n";

  std::string bytes(kMagic, 4);
  put_u32(bytes, kCheckpointVersion);
  put_u32(bytes, static_cast<std::uint32_t>(text.size()));
  bytes += text;
  put_u32(bytes, static_cast<std::uint32_t>(bundle.params.size()));
  for (const auto& [name, p] : bundle.params) {
    put_u32(bytes, static_cast<std::uint32_t>(name.size()));
    bytes += name;
    const Shape4& s = p.value.shape();
    put_u32(bytes, 4);
    for (int d : {s.batch, s.channels, s.height, s.width}) put_u32(bytes, static_cast<std::uint32_t>(d));
    for (float v : p.value.data()) put_u32(bytes, std::bit_cast<std::uint32_t>(v));
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for checkpoint " + path.string());
}

NetworkBundle load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  const std::string origin = path.string();
  Reader r(buffer.str(), origin);

  if (r.take(4) != std::string(kMagic, 4)) throw FormatError(origin + ": not a BLDN checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError(origin + ": unsupported checkpoint version " + std::to_string(version));
  const auto meta = parse_metadata(r.take(r.u32()), origin);

  auto get = [&](const std::string& key) -> const std::string& {
    auto it = meta.find(key);
    if (it == meta.end()) throw FormatError(origin + ": metadata key '" + key + "' missing");
    return it->second;
  };
  auto get_int = [&](const std::string& key) {
    try {
      return std::stoi(get(key));
    } catch (const std::logic_error&) {
      throw FormatError(origin + ": metadata key '" + key + "' is not an integer");
    }
  };

  NetworkBundle bundle;
  bundle.dnet.base_filters = get_int("dnet.base_filters");
  bundle.dnet.levels = get_int("dnet.levels");
  bundle.dnet.convs_per_block = get_int("dnet.convs_per_block");
  bundle.dnet.final_decoder_convs = get_int("dnet.final_decoder_convs");
  bundle.dnet.bottleneck_convs = get_int("dnet.bottleneck_convs");
  bundle.dnet.tail_1x1_layers = get_int("dnet.tail_1x1_layers");
  bundle.dnet.tail_filters = get_int("dnet.tail_filters");
  bundle.nnet.components = get_int("nnet.components");
  bundle.nnet.hidden_filters = get_int("nnet.hidden_filters");
  bundle.nnet.blocks = get_int("nnet.blocks");
  if (meta.contains("normalization.center")) {
    bundle.normalization =
        NormalizationRecord{std::stod(get("normalization.center")), std::stod(get("normalization.scale"))};
  }
  bundle.receptive_field = get_int("receptive_field");
  bundle.provenance.epochs = get_int("provenance.epochs");
  bundle.provenance.seed = std::stoull(get("provenance.seed"));
  bundle.provenance.allow_transpose = get("provenance.allow_transpose") == "1";
  bundle.provenance.replacement_mode = get("provenance.replacement_mode");
  for (const auto& [k, v] : meta)
    if (k.starts_with("extra.")) bundle.extra[k.substr(6)] = v;
  try {
    validate(bundle.dnet);
    validate(bundle.nnet);
  } catch (const ContractViolation& e) {
    throw FormatError(origin + ": " + e.what());
  }

  const std::uint32_t arrays = r.u32();
  for (std::uint32_t a = 0; a < arrays; ++a) {
    const std::string name = r.take(r.u32());
    const std::uint32_t rank = r.u32();
    if (rank != 4) throw FormatError(origin + ": array '" + name + "' has unsupported rank");
    Shape4 s;
    s.batch = static_cast<int>(r.u32());
    s.channels = static_cast<int>(r.u32());
    s.height = static_cast<int>(r.u32());
    s.width = static_cast<int>(r.u32());
    if (s.batch < 1 || s.channels < 1 || s.height < 1 || s.width < 1 || s.size() > (1u << 28))
      throw FormatError(origin + ": array '" + name + "' has invalid shape");
    Tensor4<float> t(s);
    for (float& v : t.data()) v = std::bit_cast<float>(r.u32());
    bundle.params.add(name, std::move(t));
  }
  if (!r.done()) throw FormatError(origin + ": trailing bytes after checkpoint payload");

  // The stored arrays must match the declared architecture exactly.
  NetworkBundle reference = NetworkBundle::create(bundle.dnet, bundle.nnet, 0);
  if (reference.params.size() != bundle.params.size())
    throw FormatError(origin + ": parameter arrays do not match the declared architecture");
  for (const auto& [name, p] : reference.params) {
    if (!bundle.params.contains(name) || bundle.params.at(name).value.shape() != p.value.shape())
      throw FormatError(origin + ": parameter '" + name + "' missing or misshapen");
  }
  return bundle;
}

}  // namespace bldn
