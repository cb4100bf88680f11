#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "bldn/masking.hpp"
#include "bldn/networks.hpp"

namespace bldn {

struct TrainConfig {
  int epochs = 400;
  int steps_per_epoch = 200;
  int tiles_per_step = 100;
  int tile_size = 96;
  double lr_initial = 4e-4;
  double lr_floor = 1e-6;
  int plateau_patience = 30;
  int spacing_min = kDefaultSpacingMin;
  int spacing_max = kDefaultSpacingMax;
  ReplacementMode replacement;
  int components = 1;
  bool allow_transpose = true;
  std::uint64_t seed = 0;
  bool stop_nnet_gradient = false;
  int threads = 1;
  int checkpoint_every = 0;  // epochs between periodic checkpoints, 0 = only at the end
  DNetConfig dnet;
  int nnet_hidden_filters = 64;
  int nnet_blocks = 3;

  void validate() const;
  [[nodiscard]] NNetConfig nnet() const { return {components, nnet_hidden_filters, nnet_blocks}; }
};

/// Parses `key = value` lines ('#' starts a comment). Unknown keys and
/// malformed values throw FormatError.
TrainConfig parse_train_config(const std::string& text);
TrainConfig read_train_config(const std::filesystem::path& path);
std::string format_train_config(const TrainConfig& config);

inline constexpr int kMaxConsecutiveNonFinite = 50;
inline constexpr double kPlateauRelativeThreshold = 1e-5;

struct TrainState {
  int epoch = 0;
  double best_loss = std::numeric_limits<double>::infinity();
  int epochs_since_improvement = 0;
  double lr = 4e-4;
  std::mt19937_64 rng;
  AdamState adam;
  int consecutive_non_finite = 0;
  std::int64_t skipped_steps = 0;

  static TrainState initial(const TrainConfig& config);
};

/// Loss of one masked tile: scale * sum of gmm_nll over the plan's loss
/// mask, with targets read from `target` and the network fed `masked_input`.
/// When `grads` is given it receives the parameter gradients (same names as
/// bundle.params).
double tile_loss(const NetworkBundle& bundle, const Image2D& masked_input, const Image2D& target, const MaskPlan& plan,
                 double scale, bool stop_nnet_gradient, ParamSet<float>* grads = nullptr);

/// One optimizer update over `tiles_per_step` masked tiles drawn from one
/// image of the (normalized) dataset. Returns the mean loss over all masked
/// positions, or NaN when the step was skipped as non-finite.
double train_step(NetworkBundle& bundle, std::span<const Image2D> images, const TrainConfig& config,
                  TrainState& state);

/// Plateau rule: halve the rate (not below lr_floor) after
/// `plateau_patience` epochs without relative improvement.
void lr_schedule_update(TrainState& state, const TrainConfig& config, double epoch_mean_loss);

struct TrainOutputs {
  std::filesystem::path checkpoint;  // empty: no checkpoints
  std::filesystem::path loss_log;    // empty: no log
  std::function<void(int epoch, double mean_loss, double lr)> on_epoch;
};

/// Fits the normalization on the raw dataset, trains, and returns the
/// last-epoch weights.
NetworkBundle train(const TrainConfig& config, std::span<const Image2D> dataset, const TrainOutputs& outputs = {});

}  // namespace bldn
