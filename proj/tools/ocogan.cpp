#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ocogan/checkpoint.hpp"
#include "ocogan/config.hpp"
#include "ocogan/datagen.hpp"
#include "ocogan/errors.hpp"
#include "ocogan/image_io.hpp"
#include "ocogan/metrics.hpp"
#include "ocogan/trainer.hpp"

namespace fs = std::filesystem;
using namespace ocogan;

namespace {

RunConfig make_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig cfg = path.empty() ? RunConfig{} : load_run_config(path);
  for (const auto& o : overrides) apply_override(cfg, o);
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw IoError("cannot write '" + path.string() + "'");
}

// Dataset on disk, with the configuration's data section updated to match it.
Dataset load_for(RunConfig& cfg, const std::string& dir) {
  auto data = load_dataset(dir, cfg.data.resolution, 0);
  cfg.data.num_classes = data.num_classes;
  cfg.data.resolution = data.resolution;
  cfg.finalize();
  return data;
}

struct GenDataArgs {
  std::string out;
  std::string config;
  std::vector<std::string> set;
  bool force = false;
};

void cmd_gen_data(const GenDataArgs& a) {
  auto cfg = make_config(a.config, a.set);
  cfg.finalize();
  const fs::path root(a.out);
  if (fs::exists(root) && !fs::is_empty(root)) {
    if (!a.force) throw ConfigError("output directory '" + a.out + "' is not empty (use --force)");
    fs::remove_all(root / "train");
    fs::remove_all(root / "val");
    fs::remove(root / "dataset.json");
  }
  const auto data = generate_shapes_dataset(cfg.data);
  write_dataset(a.out, data, cfg.data);
  std::cout << "wrote " << data.train.size() << " train + " << data.val.size() << " val pairs to "
            << a.out << '\n';
}

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string resume;
  std::vector<std::string> set;
  bool quiet = false;
};

void cmd_train(const TrainArgs& a) {
  RunConfig cfg;
  if (!a.resume.empty()) {
    cfg = parse_run_config(read_checkpoint_file(a.resume).bytes("meta/config"));
  } else {
    cfg = make_config(a.config, a.set);
  }
  const auto data = load_for(cfg, a.data);
  RunOptions options;
  if (!a.resume.empty()) options.resume = a.resume;
  options.verbose = !a.quiet;
  const auto art = run(cfg, data, a.out, options);
  std::cout << "trained to step " << art.final_step << "; final checkpoint " << art.final_checkpoint << '\n';
}

struct SampleArgs {
  std::string ckpt;
  std::string mode;
  std::string seg;
  int64_t n = 16;
  std::string out;
  uint64_t seed = 0;
};

void cmd_sample(const SampleArgs& a) {
  if (a.mode == "cond" && a.seg.empty()) throw ConfigError("--mode cond requires --seg");
  if (a.n < 1) throw ConfigError("--n must be at least 1");
  auto loaded = load_ema_generator(a.ckpt);
  auto& gen = loaded.generator;
  const auto& mc = loaded.config.model;
  torch::NoGradGuard no_grad;
  auto rng = at::make_generator<at::CPUGeneratorImpl>(a.seed);
  torch::Tensor images;
  if (a.mode == "uncond") {
    images = gen->generate_uncond(sample_latent(a.n, mc.latent_dim, rng), GumbelMode::kEval);
  } else {
    const auto labels = gray8_to_labels(read_png(a.seg, 1));
    if (labels.size(0) != mc.resolution || labels.size(1) != mc.resolution) {
      throw DataError("segmentation map is " + std::to_string(labels.size(1)) + "x" +
                      std::to_string(labels.size(0)) + " but the model generates " +
                      std::to_string(mc.resolution) + "x" + std::to_string(mc.resolution));
    }
    auto seg = one_hot_encode(labels, mc.num_classes).unsqueeze(0).expand({a.n, -1, -1, -1});
    images = gen->generate_cond(sample_latent(a.n, mc.noise_dim, rng), seg, GumbelMode::kEval);
    fs::path map_path(a.out);
    map_path.replace_filename(map_path.stem().string() + "_map.png");
    write_png(map_path.string(), tensor_to_rgb8(colorize_labels(labels, mc.num_classes)));
  }
  write_png(a.out, make_grid(images));
  std::cout << "wrote " << a.n << " samples to " << a.out << '\n';
}

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::optional<int64_t> sets;
  std::optional<int64_t> samples;
  std::string out;
};

void cmd_eval(const EvalArgs& a) {
  auto loaded = load_ema_generator(a.ckpt);
  auto cfg = loaded.config;
  const auto data = load_dataset(a.data, cfg.model.resolution, 0);
  if (data.num_classes != cfg.model.num_classes) {
    throw DataError("dataset has " + std::to_string(data.num_classes) + " classes but the checkpoint expects " +
                    std::to_string(cfg.model.num_classes));
  }
  EvalOptions eo;
  eo.sets = a.sets.value_or(cfg.eval.sets);
  eo.samples_per_set = a.samples;
  if (!a.samples && cfg.eval.samples_per_set > 0) eo.samples_per_set = cfg.eval.samples_per_set;
  eo.seed = cfg.eval.seed;
  if (eo.sets < 1) throw ConfigError("--sets must be at least 1");
  auto extractor = make_extractor(cfg.eval, cfg.model.resolution);
  const auto report = evaluate_generator(loaded.generator, data, *extractor, eo);

  fs::path prefix = a.out.empty() ? fs::path(a.ckpt).replace_extension("") : fs::path(a.out);
  write_text(prefix.string() + "_eval.txt", report.to_text());
  write_text(prefix.string() + "_eval.json", report.to_json());
  std::cout << report.to_text();
}

struct AblateArgs {
  std::string data;
  std::string out;
  int64_t budget = 1000;
  std::string config;
  std::vector<std::string> set;
  bool quiet = false;
};

void cmd_ablate(const AblateArgs& a) {
  auto cfg = make_config(a.config, a.set);
  const auto data = load_for(cfg, a.data);
  const auto table = run_ablation(cfg, data, a.out, a.budget, !a.quiet);
  write_text(fs::path(a.out) / "ablation.txt", table.to_text());
  write_text(fs::path(a.out) / "ablation.json", table.to_json());
  std::cout << table.to_text();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid conditional/unconditional GAN on procedural shapes"};
  app.require_subcommand(1);

  GenDataArgs gd;
  auto* gen_data = app.add_subcommand("gen-data", "Write the procedural shapes dataset");
  gen_data->add_option("--out", gd.out, "Output directory")->required();
  gen_data->add_option("--config", gd.config, "Run configuration file");
  gen_data->add_option("--set", gd.set, "Override, e.g. data.seed=3");
  gen_data->add_flag("--force", gd.force, "Overwrite a non-empty output directory");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", tr.config, "Run configuration file");
  train->add_option("--data", tr.data, "Dataset directory")->required();
  train->add_option("--out", tr.out, "Run directory")->required();
  train->add_option("--resume", tr.resume, "Checkpoint to resume from");
  train->add_option("--set", tr.set, "Override, e.g. train.total_steps=10");
  train->add_flag("--quiet", tr.quiet, "No per-step progress on stderr");

  SampleArgs sa;
  auto* sample = app.add_subcommand("sample", "Write a grid of samples from the EMA generator");
  sample->add_option("--ckpt", sa.ckpt, "Checkpoint")->required();
  sample->add_option("--mode", sa.mode, "cond or uncond")->required()->check(CLI::IsMember({"cond", "uncond"}));
  sample->add_option("--seg", sa.seg, "Label-map PNG (cond mode)");
  sample->add_option("--n", sa.n, "Number of samples");
  sample->add_option("--out", sa.out, "Output PNG")->required();
  sample->add_option("--seed", sa.seed, "Noise seed");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "FID, CFID and mIoU of the EMA generator");
  eval->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  eval->add_option("--data", ev.data, "Dataset directory")->required();
  eval->add_option("--sets", ev.sets, "Number of sample sets");
  eval->add_option("--samples", ev.samples, "Samples per set (default: validation size)");
  eval->add_option("--out", ev.out, "Report path prefix (default: next to the checkpoint)");

  AblateArgs ab;
  auto* ablate = app.add_subcommand("ablate", "Train every mode at equal budget and tabulate metrics");
  ablate->add_option("--data", ab.data, "Dataset directory")->required();
  ablate->add_option("--out", ab.out, "Output directory")->required();
  ablate->add_option("--budget", ab.budget, "Steps per mode");
  ablate->add_option("--config", ab.config, "Run configuration file");
  ablate->add_option("--set", ab.set, "Override, e.g. train.bs_uncond=16");
  ablate->add_flag("--quiet", ab.quiet, "No progress on stderr");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::kConfig);
  }

  try {
    if (*gen_data) cmd_gen_data(gd);
    if (*train) cmd_train(tr);
    if (*sample) cmd_sample(sa);
    if (*eval) cmd_eval(ev);
    if (*ablate) cmd_ablate(ab);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.exit_code());
  } catch (const c10::Error& e) {
    std::cerr << "error: " << e.what_without_backtrace() << '\n';
    return static_cast<int>(ExitCode::kData);
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kIo);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kIo);
  }
  return 0;
}
