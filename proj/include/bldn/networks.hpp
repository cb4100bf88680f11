#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>

#include "bldn/autodiff.hpp"
#include "bldn/data_pipeline.hpp"
#include "bldn/noise_model.hpp"

namespace bldn {

/// U-net denoiser. Every convolution in the encoder, bottleneck and decoder
/// has `base_filters` output channels. The defaults give a 35x35 receptive
/// field.
struct DNetConfig {
  int base_filters = 64;
  int levels = 2;
  int convs_per_block = 2;
  int final_decoder_convs = 1;  // full-resolution decoder block
  int bottleneck_convs = 0;
  int tail_1x1_layers = 2;
  int tail_filters = 64;

  friend bool operator==(const DNetConfig&, const DNetConfig&) = default;
};

/// Per-pixel MLP (1x1 convolutions) mapping a denoised value to noise
/// mixture parameters.
struct NNetConfig {
  int components = 1;
  int hidden_filters = 64;
  int blocks = 3;

  friend bool operator==(const NNetConfig&, const NNetConfig&) = default;
};

void validate(const DNetConfig& config);
void validate(const NNetConfig& config);

/// Parameter names start with "dnet." or "nnet.".
void build_dnet(const DNetConfig& config, ParamSet<float>& params, std::mt19937_64& rng);
void build_nnet(const NNetConfig& config, ParamSet<float>& params, std::mt19937_64& rng);

/// Smallest spatial multiple the D-net accepts (2^levels).
int dnet_size_multiple(const DNetConfig& config);

/// D-net on a (B, 1, H, W) input; H and W must be multiples of 2^levels.
template <typename T>
Var dnet_forward(Tape<T>& tape, const DNetConfig& config, ParamSet<T>& params, Var input,
                 bool trainable = true);

/// N-net on any (B, 1, H, W) tensor of denoised values. With trainable =
/// false the parameters enter the tape as constants.
template <typename T>
NoiseHeads nnet_forward(Tape<T>& tape, const NNetConfig& config, ParamSet<T>& params, Var input,
                        bool trainable = true);

struct Provenance {
  int epochs = 0;
  std::uint64_t seed = 0;
  bool allow_transpose = true;
  std::string replacement_mode = "gaussian8";
};

/// Both networks, their configs and the normalization needed at inference.
struct NetworkBundle {
  DNetConfig dnet;
  NNetConfig nnet;
  ParamSet<float> params;
  std::optional<NormalizationRecord> normalization;
  Provenance provenance;
  int receptive_field = 0;  // measured window width (2R + 1), 0 if not measured
  std::map<std::string, std::string> extra;

  static NetworkBundle create(const DNetConfig& dnet, const NNetConfig& nnet, std::uint64_t seed);
};

/// D-net applied to a (B, 1, H, W) tensor without gradients.
Tensor4<float> dnet_apply(NetworkBundle& bundle, const Tensor4<float>& input);
/// N-net applied per pixel to a single-channel image of denoised values
/// (normalized units). Returns centered mixtures in normalized units.
NoiseParams nnet_apply(NetworkBundle& bundle, const Image2D& denoised);
/// N-net at one denoised value (normalized units).
Mixture nnet_at(NetworkBundle& bundle, double denoised);

/// Chebyshev radius R beyond which perturbing the input never changes the
/// D-net output at the centre of a `size` x `size` probe. The receptive
/// window is 2R + 1.
int measure_receptive_radius(NetworkBundle& bundle, int size = 64, std::uint64_t seed = 11);

/// Binary checkpoint: "BLDN", u32 version, u32 metadata length, key=value
/// metadata text, u32 array count, then per array: u32 name length, name,
/// u32 rank, u32 dims, little-endian float32 payload.
void save_checkpoint(const std::filesystem::path& path, const NetworkBundle& bundle);
NetworkBundle load_checkpoint(const std::filesystem::path& path);

inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace bldn
