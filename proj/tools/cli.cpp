#include "cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "bldn/data_pipeline.hpp"
#include "bldn/image.hpp"
#include "bldn/inference.hpp"
#include "bldn/metrics.hpp"
#include "bldn/selftest.hpp"
#include "bldn/trainer.hpp"

namespace fs = std::filesystem;

namespace bldn {

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string num(double v, const char* fmt = "%.6f") {
  if (std::isinf(v)) return v > 0 ? "+inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), fmt, v);
  return buffer;
}

std::vector<Image2D> load_images(const fs::path& path) {
  if (fs::is_directory(path)) return read_image_dir(path);
  if (!fs::exists(path)) throw FormatError("no such file or directory: " + path.string());
  Image2D image = read_image(path);
  image.pairing_id = path.stem().string();
  return {std::move(image)};
}

struct PairedSets {
  std::vector<Image2D> first;
  std::vector<Image2D> second;
};

// Pairs images by file stem.
PairedSets load_pairs(const fs::path& a, const fs::path& b) {
  std::vector<Image2D> left = load_images(a);
  std::vector<Image2D> right = load_images(b);
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < right.size(); ++i) index[right[i].pairing_id] = i;
  if (left.size() != right.size())
    throw FormatError(a.string() + " has " + std::to_string(left.size()) + " images but " + b.string() + " has " +
                      std::to_string(right.size()));
  PairedSets out;
  for (Image2D& image : left) {
    auto it = index.find(image.pairing_id);
    if (it == index.end()) throw FormatError("no counterpart for '" + image.pairing_id + "' in " + b.string());
    Image2D& other = right[it->second];
    if (!image.same_shape(other)) throw FormatError("shape mismatch for pair '" + image.pairing_id + "'");
    out.second.push_back(std::move(other));
    out.first.push_back(std::move(image));
  }
  return out;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw FormatError("cannot create directory " + dir.string());
}

std::pair<int, int> parse_size(const std::string& text) {
  int h = 0;
  int w = 0;
  char sep = 0;
  std::istringstream in(text);
  if (!(in >> h >> sep >> w) || sep != 'x' || !in.eof() || h < 1 || w < 1)
    throw UsageError("--size expects HxW, got '" + text + "'");
  return {h, w};
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config, data, out, log;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool verbose = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  TrainConfig config = read_train_config(a.config);
  if (a.seed) config.seed = *a.seed;
  if (a.threads) config.threads = *a.threads;
  config.validate();
  const std::vector<Image2D> data = load_images(a.data);
  TrainOutputs outputs;
  outputs.checkpoint = a.out;
  if (!a.log.empty()) outputs.loss_log = a.log;
  double last_loss = 0;
  double last_lr = 0;
  outputs.on_epoch = [&](int epoch, double loss, double lr) {
    last_loss = loss;
    last_lr = lr;
    if (a.verbose) err << "epoch " << epoch << " loss " << num(loss) << " lr " << num(lr, "%g") << "\n";
  };
  const NetworkBundle bundle = train(config, data, outputs);
  out << "RESULT command=train images=" << data.size() << " epochs=" << bundle.provenance.epochs
      << " final_loss=" << num(last_loss) << " final_lr=" << num(last_lr, "%g")
      << " receptive_field=" << bundle.receptive_field << " parameters=" << bundle.params.parameter_count()
      << " checkpoint=" << a.out << "\n";
  return kExitOk;
}

struct DenoiseArgs {
  std::string ckpt, in, out;
  bool no_ensemble = false;
  int threads = 1;
};

int cmd_denoise(const DenoiseArgs& a, std::ostream& out) {
  NetworkBundle bundle = load_checkpoint(a.ckpt);
  if (!bundle.normalization) throw FormatError(a.ckpt + ": checkpoint has no normalization record");
  auto run = [&](const Image2D& image) {
    return a.no_ensemble ? predict(bundle, image).denoised : predict_dihedral(bundle, image, a.threads);
  };
  std::size_t count = 0;
  if (fs::is_directory(a.in)) {
    ensure_dir(a.out);
    for (const fs::path& p : list_images(a.in)) {
      write_image(fs::path(a.out) / p.filename(), run(read_image(p)));
      ++count;
    }
  } else {
    write_image(a.out, run(read_image(a.in)));
    count = 1;
  }
  out << "RESULT command=denoise images=" << count << " ensemble=" << (a.no_ensemble ? 0 : 1) << " out=" << a.out
      << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& pred, const std::string& gt, std::ostream& out) {
  const PairedSets sets = load_pairs(pred, gt);
  out << "image\tpsnr\tssim\n";
  double total_psnr = 0;
  double total_ssim = 0;
  for (std::size_t i = 0; i < sets.first.size(); ++i) {
    const double p = psnr(sets.first[i], sets.second[i]);
    const double s = ssim(sets.first[i], sets.second[i]);
    total_psnr += p;
    total_ssim += s;
    out << sets.first[i].pairing_id << "\t" << num(p) << "\t" << num(s) << "\n";
  }
  const auto n = static_cast<double>(sets.first.size());
  out << "mean\t" << num(total_psnr / n) << "\t" << num(total_ssim / n) << "\n";
  out << "RESULT command=eval images=" << sets.first.size() << " mean_psnr=" << num(total_psnr / n)
      << " mean_ssim=" << num(total_ssim / n) << "\n";
  return kExitOk;
}

struct ReportArgs {
  std::string noisy, gt, out;
  std::vector<std::string> ckpts;
  int bins = kDefaultReportBins;
};

int cmd_noise_report(const ReportArgs& a, std::ostream& out) {
  const PairedSets sets = load_pairs(a.noisy, a.gt);
  std::vector<NetworkBundle> bundles;
  bundles.reserve(a.ckpts.size());
  std::vector<ReportModel> models;
  for (const std::string& c : a.ckpts) {
    bundles.push_back(load_checkpoint(c));
    if (!bundles.back().normalization) throw FormatError(c + ": checkpoint has no normalization record");
  }
  for (std::size_t i = 0; i < bundles.size(); ++i) {
    std::string name = fs::path(a.ckpts[i]).stem().string();
    for (const ReportModel& m : models)
      if (m.name == name) name += "_" + std::to_string(i);
    models.push_back({name, &bundles[i]});
  }
  const BinnedNoiseReport report = noise_report(sets.first, sets.second, models, a.bins);
  write_report_tsv(a.out, report);
  std::size_t confident = 0;
  for (const NoiseBin& b : report.bins) confident += b.confident ? 1 : 0;
  out << "RESULT command=noise-report bins=" << report.bins.size() << " confident=" << confident
      << " included=" << report.included << " total=" << report.total << " low=" << num(report.low)
      << " high=" << num(report.high);
  for (std::size_t m = 0; m < models.size(); ++m)
    out << " median_kl_" << models[m].name << "=" << num(median_confident_kl(report, m), "%.6g");
  out << " out=" << a.out << "\n";
  return kExitOk;
}

struct SynthArgs {
  std::string gt, model, out;
  SynthNoiseParams params;
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  NoiseKind kind{};
  try {
    kind = parse_noise_kind(a.model);
  } catch (const ContractViolation& e) {
    throw UsageError(e.what());
  }
  const bool is_dir = fs::is_directory(a.gt);
  const std::vector<fs::path> files = is_dir ? list_images(a.gt) : std::vector<fs::path>{a.gt};
  std::vector<Image2D> clean;
  for (const fs::path& p : files) clean.push_back(read_image(p));
  if (clean.empty()) throw FormatError("no images in " + a.gt);
  const double lo = dataset_min(clean);
  std::mt19937_64 rng(a.seed);
  if (is_dir) ensure_dir(a.out);
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const Image2D noisy = synth_noise(clean[i], kind, a.params, rng, lo);
    write_image(is_dir ? fs::path(a.out) / files[i].filename() : fs::path(a.out), noisy);
  }
  out << "RESULT command=synth images=" << clean.size() << " model=" << to_string(kind) << " seed=" << a.seed
      << " out=" << a.out << "\n";
  return kExitOk;
}

struct PhantomArgs {
  int count = 1;
  std::string size = "128x128";
  std::string out;
  std::string format = "blim";
  std::uint64_t seed = 0;
};

int cmd_phantom(const PhantomArgs& a, std::ostream& out) {
  const auto [h, w] = parse_size(a.size);
  if (h < 32 || w < 32) throw UsageError("--size must be at least 32x32");
  if (a.count < 1) throw UsageError("--count must be >= 1");
  ensure_dir(a.out);
  std::mt19937_64 rng(a.seed);
  for (int i = 0; i < a.count; ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "phantom_%03d.%s", i, a.format.c_str());
    write_image(fs::path(a.out) / name, generate_phantom(h, w, rng));
  }
  out << "RESULT command=phantom count=" << a.count << " size=" << h << "x" << w << " seed=" << a.seed
      << " out=" << a.out << "\n";
  return kExitOk;
}

int cmd_baseline(const std::string& noisy, const std::string& gt, double lo, double hi, double step,
                 std::ostream& out) {
  if (!(lo > 0 && hi >= lo && step > 0)) throw UsageError("sigma grid needs 0 < min <= max and step > 0");
  std::vector<double> grid;
  for (int i = 0;; ++i) {
    const double s = lo + i * step;
    if (s > hi + 1e-9) break;
    grid.push_back(s);
  }
  const PairedSets sets = load_pairs(noisy, gt);
  const BaselineResult r = gaussian_baseline(sets.first, sets.second, grid);
  double noisy_psnr = 0;
  for (std::size_t i = 0; i < sets.first.size(); ++i) noisy_psnr += psnr(sets.first[i], sets.second[i]);
  noisy_psnr /= static_cast<double>(sets.first.size());
  out << "RESULT command=baseline images=" << sets.first.size() << " sigma=" << num(r.sigma, "%.2f")
      << " psnr=" << num(r.psnr) << " ssim=" << num(r.ssim) << " noisy_psnr=" << num(noisy_psnr) << "\n";
  return kExitOk;
}

int cmd_selftest(std::uint64_t seed, std::ostream& out) {
  std::vector<CheckResult> checks = primitive_grad_checks();
  for (int n = 1; n <= kMaxComponents; ++n) checks.push_back(composition_grad_check(n, seed + 3));
  const double fraction = mean_masked_fraction(1000, 256, seed + 1);
  checks.push_back({"masked fraction |mean - 0.068|", std::abs(fraction - 0.068), 0.003});
  for (int n = 2; n <= kMaxComponents; ++n)
    checks.push_back({"centering N=" + std::to_string(n), max_centering_residual(n, 10000, seed + 2), 1e-6});
  int failed = 0;
  for (const CheckResult& c : checks) {
    out << (c.passed() ? "PASS " : "FAIL ") << c.name << " value=" << num(c.value, "%.3e")
        << " limit=" << num(c.limit, "%.1e") << "\n";
    failed += c.passed() ? 0 : 1;
  }
  out << "RESULT command=selftest checks=" << checks.size() << " failed=" << failed << "\n";
  return failed == 0 ? kExitOk : kExitNumerical;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Self-supervised blind denoising with a learned noise model", "bldn"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train the denoiser and noise networks");
  train_cmd->add_option("--config", train_args.config, "key = value training config")->required();
  train_cmd->add_option("--data", train_args.data, "Directory (or file) of noisy training images")->required();
  train_cmd->add_option("--out", train_args.out, "Checkpoint path")->required();
  train_cmd->add_option("--log", train_args.log, "Loss log (epoch, mean loss, lr)");
  train_cmd->add_option("--seed", train_args.seed, "Overrides the config seed");
  train_cmd->add_option("--threads", train_args.threads, "Worker threads (1 = deterministic)")
      ->check(CLI::PositiveNumber);
  train_cmd->add_flag("--verbose", train_args.verbose, "Print per-epoch progress to stderr");

  DenoiseArgs denoise_args;
  std::uint64_t unused_seed = 0;
  auto* denoise_cmd = app.add_subcommand("denoise", "Denoise an image or a directory of images");
  denoise_cmd->add_option("--ckpt", denoise_args.ckpt, "Checkpoint")->required();
  denoise_cmd->add_option("--in", denoise_args.in, "Input image or directory")->required();
  denoise_cmd->add_option("--out", denoise_args.out, "Output image or directory")->required();
  denoise_cmd->add_flag("--no-ensemble", denoise_args.no_ensemble, "Single pass instead of the dihedral average");
  denoise_cmd->add_option("--threads", denoise_args.threads, "Worker threads")->check(CLI::PositiveNumber);
  denoise_cmd->add_option("--seed", unused_seed, "Accepted for uniformity; inference uses no randomness");

  std::string eval_pred;
  std::string eval_gt;
  auto* eval_cmd = app.add_subcommand("eval", "PSNR and SSIM per image");
  eval_cmd->add_option("--pred", eval_pred, "Predictions")->required();
  eval_cmd->add_option("--gt", eval_gt, "Ground truth")->required();
  eval_cmd->add_option("--seed", unused_seed, "Accepted for uniformity; unused");

  ReportArgs report_args;
  auto* report_cmd = app.add_subcommand("noise-report", "Binned noise statistics and model comparison");
  report_cmd->add_option("--noisy", report_args.noisy, "Noisy images")->required();
  report_cmd->add_option("--gt", report_args.gt, "Reference (ground truth) images")->required();
  report_cmd->add_option("--ckpt", report_args.ckpts, "Checkpoint(s) to compare; repeatable");
  report_cmd->add_option("--out", report_args.out, "TSV output")->required();
  report_cmd->add_option("--bins", report_args.bins, "Signal bins")->check(CLI::PositiveNumber);
  report_cmd->add_option("--seed", unused_seed, "Accepted for uniformity; unused");

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "Add synthetic noise to clean images");
  synth_cmd->add_option("--gt", synth_args.gt, "Clean image or directory")->required();
  synth_cmd->add_option("--model", synth_args.model, "gaussian | poisson-gaussian | speckle | shifted-exponential")
      ->required();
  synth_cmd->add_option("--out", synth_args.out, "Output image or directory")->required();
  synth_cmd->add_option("--sigma", synth_args.params.sigma, "Gaussian std")->capture_default_str();
  synth_cmd->add_option("--alpha", synth_args.params.alpha, "Signal gain")->capture_default_str();
  synth_cmd->add_option("--eta", synth_args.params.eta, "Read-noise std")->capture_default_str();
  synth_cmd->add_option("--speckle-sigma", synth_args.params.speckle_sigma, "Speckle slope")->capture_default_str();
  synth_cmd->add_option("--seed", synth_args.seed, "RNG seed");

  PhantomArgs phantom_args;
  auto* phantom_cmd = app.add_subcommand("phantom", "Generate ground-truth phantoms");
  phantom_cmd->add_option("--count", phantom_args.count, "Number of images");
  phantom_cmd->add_option("--size", phantom_args.size, "HxW")->capture_default_str();
  phantom_cmd->add_option("--out", phantom_args.out, "Output directory")->required();
  phantom_cmd->add_option("--format", phantom_args.format, "blim or pgm")
      ->check(CLI::IsMember({"blim", "pgm"}))
      ->capture_default_str();
  phantom_cmd->add_option("--seed", phantom_args.seed, "RNG seed");

  std::string base_noisy;
  std::string base_gt;
  double sigma_min = 0.3;
  double sigma_max = 5.0;
  double sigma_step = 0.1;
  auto* baseline_cmd = app.add_subcommand("baseline", "Best Gaussian-blur baseline");
  baseline_cmd->add_option("--noisy", base_noisy, "Noisy images")->required();
  baseline_cmd->add_option("--gt", base_gt, "Ground truth")->required();
  baseline_cmd->add_option("--sigma-min", sigma_min)->capture_default_str();
  baseline_cmd->add_option("--sigma-max", sigma_max)->capture_default_str();
  baseline_cmd->add_option("--sigma-step", sigma_step)->capture_default_str();
  baseline_cmd->add_option("--seed", unused_seed, "Accepted for uniformity; unused");

  std::uint64_t selftest_seed = 0;
  auto* selftest_cmd = app.add_subcommand("selftest", "Gradient, masking and centering checks");
  selftest_cmd->add_option("--seed", selftest_seed, "RNG seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*train_cmd) return cmd_train(train_args, out, err);
    if (*denoise_cmd) return cmd_denoise(denoise_args, out);
    if (*eval_cmd) return cmd_eval(eval_pred, eval_gt, out);
    if (*report_cmd) return cmd_noise_report(report_args, out);
    if (*synth_cmd) return cmd_synth(synth_args, out);
    if (*phantom_cmd) return cmd_phantom(phantom_args, out);
    if (*baseline_cmd) return cmd_baseline(base_noisy, base_gt, sigma_min, sigma_max, sigma_step, out);
    if (*selftest_cmd) return cmd_selftest(selftest_seed, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const ContractViolation& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  err << "error: no subcommand\n";
  return kExitUsage;
}

}  // namespace bldn
