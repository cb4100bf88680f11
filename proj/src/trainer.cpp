#include "bldn/trainer.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "bldn/parallel.hpp"

namespace bldn {

void TrainConfig::validate() const {
  require(epochs >= 1 && steps_per_epoch >= 1 && tiles_per_step >= 1, "TrainConfig: epochs, steps and tiles must be >= 1");
  require(tile_size >= 8 && tile_size % dnet_size_multiple(dnet) == 0,
          "TrainConfig: tile_size must be >= 8 and a multiple of 2^levels");
  require(lr_initial > 0 && lr_floor > 0 && lr_floor < lr_initial, "TrainConfig: need 0 < lr_floor < lr_initial");
  require(plateau_patience >= 1, "TrainConfig: plateau_patience must be >= 1");
  require(spacing_min >= 2 && spacing_min <= spacing_max && spacing_max <= tile_size,
          "TrainConfig: need 2 <= spacing_min <= spacing_max <= tile_size");
  require(threads >= 1, "TrainConfig: threads must be >= 1");
  require(checkpoint_every >= 0, "TrainConfig: checkpoint_every must be >= 0");
  bldn::validate(dnet);
  bldn::validate(nnet());
}

// ---------------------------------------------------------------------------
// Config files

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& v) {
  Int out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw FormatError("config: '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size() && std::isfinite(d)) return d;
  } catch (const std::exception&) {
  }
  throw FormatError("config: '" + key + "' expects a number, got '" + v + "'");
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw FormatError("config: '" + key + "' expects true or false, got '" + v + "'");
}

std::string format_double(double v) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.17g", v);
  return buffer;
}

}  // namespace

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig c;
  using Setter = std::function<void(const std::string&, const std::string&)>;
  auto int_field = [](int& field) -> Setter {
    return [&field](const std::string& k, const std::string& v) { field = parse_int<int>(k, v); };
  };
  const std::map<std::string, Setter> setters = {
      {"epochs", int_field(c.epochs)},
      {"steps_per_epoch", int_field(c.steps_per_epoch)},
      {"tiles_per_step", int_field(c.tiles_per_step)},
      {"tile_size", int_field(c.tile_size)},
      {"lr_initial", [&](auto& k, auto& v) { c.lr_initial = parse_double(k, v); }},
      {"lr_floor", [&](auto& k, auto& v) { c.lr_floor = parse_double(k, v); }},
      {"plateau_patience", int_field(c.plateau_patience)},
      {"spacing_min", int_field(c.spacing_min)},
      {"spacing_max", int_field(c.spacing_max)},
      {"replacement_mode",
       [&](auto&, auto& v) {
         try {
           c.replacement = parse_replacement_mode(v);
         } catch (const ContractViolation& e) {
           throw FormatError(std::string("config: ") + e.what());
         }
       }},
      {"components", int_field(c.components)},
      {"allow_transpose", [&](auto& k, auto& v) { c.allow_transpose = parse_bool(k, v); }},
      {"seed", [&](auto& k, auto& v) { c.seed = parse_int<std::uint64_t>(k, v); }},
      {"stop_nnet_gradient", [&](auto& k, auto& v) { c.stop_nnet_gradient = parse_bool(k, v); }},
      {"threads", int_field(c.threads)},
      {"checkpoint_every", int_field(c.checkpoint_every)},
      {"base_filters", int_field(c.dnet.base_filters)},
      {"levels", int_field(c.dnet.levels)},
      {"convs_per_block", int_field(c.dnet.convs_per_block)},
      {"final_decoder_convs", int_field(c.dnet.final_decoder_convs)},
      {"bottleneck_convs", int_field(c.dnet.bottleneck_convs)},
      {"tail_1x1_layers", int_field(c.dnet.tail_1x1_layers)},
      {"tail_filters", int_field(c.dnet.tail_filters)},
      {"nnet_hidden_filters", int_field(c.nnet_hidden_filters)},
      {"nnet_blocks", int_field(c.nnet_blocks)},
  };

  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = setters.find(key);
    if (it == setters.end()) throw FormatError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    it->second(key, value);
  }
  try {
    c.validate();
  } catch (const ContractViolation& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  return c;
}

TrainConfig read_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_train_config(buffer.str());
}

std::string format_train_config(const TrainConfig& c) {
  std::ostringstream out;
  out << "epochs = " << c.epochs << "\n"
      << "steps_per_epoch = " << c.steps_per_epoch << "\n"
      << "tiles_per_step = " << c.tiles_per_step << "\n"
      << "tile_size = " << c.tile_size << "\n"
      << "lr_initial = " << format_double(c.lr_initial) << "\n"
      << "lr_floor = " << format_double(c.lr_floor) << "\n"
      << "plateau_patience = " << c.plateau_patience << "\n"
      << "spacing_min = " << c.spacing_min << "\n"
      << "spacing_max = " << c.spacing_max << "\n"
      << "replacement_mode = " << to_string(c.replacement) << "\n"
      << "components = " << c.components << "\n"
      << "allow_transpose = " << (c.allow_transpose ? "true" : "false") << "\n"
      << "seed = " << c.seed << "\n"
      << "stop_nnet_gradient = " << (c.stop_nnet_gradient ? "true" : "false") << "\n"
      << "threads = " << c.threads << "\n"
      << "checkpoint_every = " << c.checkpoint_every << "\n"
      << "base_filters = " << c.dnet.base_filters << "\n"
      << "levels = " << c.dnet.levels << "\n"
      << "convs_per_block = " << c.dnet.convs_per_block << "\n"
      << "final_decoder_convs = " << c.dnet.final_decoder_convs << "\n"
      << "bottleneck_convs = " << c.dnet.bottleneck_convs << "\n"
      << "tail_1x1_layers = " << c.dnet.tail_1x1_layers << "\n"
      << "tail_filters = " << c.dnet.tail_filters << "\n"
      << "nnet_hidden_filters = " << c.nnet_hidden_filters << "\n"
      << "nnet_blocks = " << c.nnet_blocks << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Training

TrainState TrainState::initial(const TrainConfig& config) {
  TrainState s;
  s.lr = config.lr_initial;
  s.adam.learning_rate = config.lr_initial;
  // Separate stream from the one used for weight initialisation.
  std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32), 0x7261u};
  s.rng.seed(seq);
  return s;
}

double tile_loss(const NetworkBundle& bundle, const Image2D& masked_input, const Image2D& target, const MaskPlan& plan,
                 double scale, bool stop_nnet_gradient, ParamSet<float>* grads) {
  require(masked_input.same_shape(target) && plan.height == target.height && plan.width == target.width,
          "tile_loss: input, target and plan must share one shape");
  const std::vector<GridPosition> positions = plan.loss_positions();
  require(!positions.empty(), "tile_loss: empty loss mask");

  // Each call owns its parameter copy so tiles can run concurrently.
  ParamSet<float> params = bundle.params;
  params.zero_grad();
  const bool trainable = grads != nullptr;

  Tape<float> tape;
  Var x = tape.constant(Tensor4<float>({1, 1, masked_input.height, masked_input.width}, masked_input.values));
  Var denoised = dnet_forward(tape, bundle.dnet, params, x, trainable);
  std::vector<PixelIndex> indices;
  std::vector<float> targets;
  indices.reserve(positions.size());
  targets.reserve(positions.size());
  for (const GridPosition& p : positions) {
    indices.push_back({0, p.y, p.x});
    targets.push_back(target.at(p.y, p.x));
  }
  Var mu = tape.gather(denoised, std::move(indices));
  Var nnet_input = stop_nnet_gradient ? tape.detach(mu) : mu;
  const NoiseHeads heads = nnet_forward(tape, bundle.nnet, params, nnet_input, trainable);
  Var loss = gmm_nll_loss<float>(tape, mu, heads, targets, scale);
  const double value = tape.value(loss).data()[0];
  if (grads != nullptr) {
    tape.backward(loss);
    *grads = std::move(params);
  }
  return value;
}

namespace {

struct PreparedTile {
  Image2D masked;
  Image2D target;
  MaskPlan plan;
};

bool grads_finite(const ParamSet<float>& params) {
  for (const auto& [_, p] : params)
    for (float g : p.grad.data())
      if (!std::isfinite(g)) return false;
  return true;
}

}  // namespace

double train_step(NetworkBundle& bundle, std::span<const Image2D> images, const TrainConfig& config,
                  TrainState& state) {
  require(!images.empty(), "train_step: empty dataset");
  std::mt19937_64& rng = state.rng;
  const auto image_index = std::uniform_int_distribution<std::size_t>(0, images.size() - 1)(rng);
  TileBatch batch = make_tiles(images[image_index], config.tile_size, config.tiles_per_step, rng);

  std::vector<PreparedTile> tiles;
  tiles.reserve(batch.tiles.size());
  std::size_t masked_total = 0;
  for (Tile& tile : batch.tiles) {
    Tile t = augment(std::move(tile), rng, config.allow_transpose);
    MaskPlan plan = sample_grid(t.image.height, t.image.width, rng, config.replacement, config.spacing_min,
                                config.spacing_max);
    masked_total += plan.masked_count();
    Image2D masked = apply_mask(t.image, plan);
    tiles.push_back({std::move(masked), std::move(t.image), std::move(plan)});
  }
  const double scale = 1.0 / static_cast<double>(masked_total);

  std::vector<double> losses(tiles.size());
  std::vector<ParamSet<float>> grads(tiles.size());
  parallel_for(static_cast<int>(tiles.size()), config.threads, [&](int i) {
    losses[i] = tile_loss(bundle, tiles[i].masked, tiles[i].target, tiles[i].plan, scale, config.stop_nnet_gradient,
                          &grads[i]);
  });

  // Fixed reduction order keeps results independent of the thread count.
  double loss = 0;
  bundle.params.zero_grad();
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    loss += losses[i];
    bundle.params.accumulate_grad(grads[i]);
  }

  if (!std::isfinite(loss) || !grads_finite(bundle.params)) {
    bundle.params.zero_grad();
    ++state.skipped_steps;
    if (++state.consecutive_non_finite >= kMaxConsecutiveNonFinite)
      throw NumericalError("training aborted after " + std::to_string(kMaxConsecutiveNonFinite) +
                           " consecutive non-finite steps");
    return std::numeric_limits<double>::quiet_NaN();
  }
  state.consecutive_non_finite = 0;
  state.adam.learning_rate = state.lr;
  adam_step(bundle.params, state.adam);
  return loss;
}

void lr_schedule_update(TrainState& state, const TrainConfig& config, double epoch_mean_loss) {
  const bool improved = std::isfinite(epoch_mean_loss) &&
                        (!std::isfinite(state.best_loss) ||
                         epoch_mean_loss < state.best_loss - kPlateauRelativeThreshold * std::abs(state.best_loss));
  if (improved) {
    state.best_loss = epoch_mean_loss;
    state.epochs_since_improvement = 0;
    return;
  }
  if (++state.epochs_since_improvement >= config.plateau_patience) {
    state.lr = std::max(config.lr_floor, state.lr * 0.5);
    state.epochs_since_improvement = 0;
  }
}

NetworkBundle train(const TrainConfig& config, std::span<const Image2D> dataset, const TrainOutputs& outputs) {
  config.validate();
  if (dataset.empty()) throw FormatError("training dataset is empty");
  for (const Image2D& image : dataset)
    if (image.height < config.tile_size || image.width < config.tile_size)
      throw FormatError("training image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                        " is smaller than tile_size " + std::to_string(config.tile_size));

  NormalizationRecord norm;
  try {
    norm = fit_normalization(dataset);
  } catch (const ContractViolation& e) {
    throw FormatError(std::string("cannot normalize dataset: ") + e.what());
  }
  std::vector<Image2D> images;
  images.reserve(dataset.size());
  for (const Image2D& image : dataset) images.push_back(normalize(image, norm));

  NetworkBundle bundle = NetworkBundle::create(config.dnet, config.nnet(), config.seed);
  bundle.normalization = norm;
  bundle.provenance.seed = config.seed;
  bundle.provenance.allow_transpose = config.allow_transpose;
  bundle.provenance.replacement_mode = to_string(config.replacement);
  bundle.receptive_field = 2 * measure_receptive_radius(bundle) + 1;

  std::ofstream log;
  if (!outputs.loss_log.empty()) {
    log.open(outputs.loss_log, std::ios::trunc);
    if (!log) throw FormatError("cannot write loss log " + outputs.loss_log.string());
  }

  TrainState state = TrainState::initial(config);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    state.epoch = epoch;
    double sum = 0;
    int finite = 0;
    for (int step = 0; step < config.steps_per_epoch; ++step) {
      const double loss = train_step(bundle, images, config, state);
      if (std::isfinite(loss)) {
        sum += loss;
        ++finite;
      }
    }
    const double mean = finite > 0 ? sum / finite : std::numeric_limits<double>::quiet_NaN();
    const double lr_used = state.lr;
    if (log) {
      char line[128];
      std::snprintf(line, sizeof(line), "%d\t%.9g\t%.9g\n", epoch + 1, mean, lr_used);
      log << line << std::flush;
    }
    if (outputs.on_epoch) outputs.on_epoch(epoch + 1, mean, lr_used);
    lr_schedule_update(state, config, mean);
    bundle.provenance.epochs = epoch + 1;
    if (!outputs.checkpoint.empty() && config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 &&
        epoch + 1 < config.epochs)
      save_checkpoint(outputs.checkpoint, bundle);
  }
  if (state.skipped_steps > 0) bundle.extra["skipped_steps"] = std::to_string(state.skipped_steps);
  if (!outputs.checkpoint.empty()) save_checkpoint(outputs.checkpoint, bundle);
  return bundle;
}

}  // namespace bldn
