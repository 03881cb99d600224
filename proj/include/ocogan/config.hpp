#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ocogan {

enum class Regime { kLimited, kPartial, kFull };

enum class TrainMode {
  kJoint,
  kCondOnly,
  kUncondOnly,
  kStageUncondThenCond,
  kStageCondThenUncond,
};

// How the synthesis network doubles resolution.
enum class UpsampleMode { kNearest, kTransposed };

enum class ExtractorKind { kRandomConv, kPixels };

std::string_view to_string(Regime r);
std::string_view to_string(TrainMode m);
std::string_view to_string(UpsampleMode m);
std::string_view to_string(ExtractorKind k);
Regime parse_regime(std::string_view s);
TrainMode parse_train_mode(std::string_view s);
UpsampleMode parse_upsample_mode(std::string_view s);
ExtractorKind parse_extractor_kind(std::string_view s);

// Procedural shapes dataset.
struct ShapesConfig {
  int64_t resolution = 32;
  int64_t num_classes = 4;
  int64_t min_shapes = 1;
  int64_t max_shapes = 3;
  double noise_std = 0.04;
  double color_jitter = 0.12;
  int64_t train_count = 2000;
  int64_t val_count = 256;
  uint64_t seed = 0;

  void validate() const;
};

struct ModelConfig {
  int64_t resolution = 32;
  int64_t num_classes = 4;
  // Synthesis widths, one per resolution level; level count follows from this.
  std::vector<int64_t> gen_widths{128, 64, 32};
  int64_t style_channels = 32;
  int64_t latent_dim = 64;
  int64_t noise_dim = 64;
  int64_t mapping_hidden = 256;
  int64_t mapping_layers = 2;
  int64_t cond_hidden = 32;
  UpsampleMode upsample = UpsampleMode::kNearest;
  std::vector<int64_t> disc_widths{32, 64, 128};
  std::vector<int64_t> aspp_rates{1, 2, 4};
  int64_t aspp_channels = 64;
  double lrelu_slope = 0.2;
  double norm_eps = 1e-8;
  int64_t sn_iterations = 1;

  int64_t levels() const { return static_cast<int64_t>(gen_widths.size()); }
  int64_t base_resolution() const { return resolution >> (levels() - 1); }
  int64_t level_resolution(int64_t level) const { return base_resolution() << level; }
  int64_t bottleneck_resolution() const {
    return resolution >> static_cast<int64_t>(disc_widths.size());
  }

  void validate() const;
};

struct TrainConfig {
  int64_t total_steps = 3000;
  int64_t bs_uncond = 32;
  // Unset means 16, or 4 in the partial regime.
  std::optional<int64_t> bs_cond;
  double lr = 0.002;
  double adam_b1 = 0.0;
  double adam_b2 = 0.99;
  double adam_eps = 1e-8;
  double r1_gamma = 10.0;
  int64_t r1_interval = 16;
  double ema_decay = 0.999;
  double uncond_loss_weight = 1.0;
  double lambda_labelmix = 10.0;
  double gumbel_tau = 1.0;
  TrainMode mode = TrainMode::kJoint;
  uint64_t seed = 0;
  Regime regime = Regime::kLimited;
  int64_t labeled_count = 0;
  double flip_prob = 0.5;
  int64_t checkpoint_interval = 1000;
  int64_t eval_interval = 500;
  int64_t sample_grid = 16;

  int64_t effective_bs_cond() const;
  void validate() const;
};

struct EvalConfig {
  int64_t sets = 5;
  // 0 means one sample per validation image.
  int64_t samples_per_set = 0;
  uint64_t seed = 2024;
  uint64_t extractor_seed = 1234;
  ExtractorKind extractor = ExtractorKind::kRandomConv;

  void validate() const;
};

struct RunConfig {
  ShapesConfig data;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;

  // Copies dataset-level dims into the model section and checks every section.
  void finalize();
};

// INI-style document with [data], [model], [train], [eval] sections.
// Unknown sections or keys and malformed values raise ConfigError naming the line.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::string& path);
std::string serialize_run_config(const RunConfig& cfg);

// Applies one "section.key=value" override (command-line flags).
void apply_override(RunConfig& cfg, std::string_view assignment);

}  // namespace ocogan
