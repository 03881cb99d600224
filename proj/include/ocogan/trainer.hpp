#pragma once

#include <torch/torch.h>

#include <array>
#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ocogan/checkpoint.hpp"
#include "ocogan/config.hpp"
#include "ocogan/datagen.hpp"
#include "ocogan/discriminator.hpp"
#include "ocogan/generator.hpp"
#include "ocogan/metrics.hpp"

namespace ocogan {

// Images (N,3,H,W) with their one-hot maps (N,C,H,W).
struct LabeledBatch {
  torch::Tensor images;
  torch::Tensor seg;
  std::vector<int64_t> indices;  // into Dataset::train
};

struct UnlabeledBatch {
  torch::Tensor images;
  std::vector<int64_t> indices;
};

struct StepMetrics {
  int64_t step = 0;  // completed steps after this update
  int64_t stage = 1;
  int64_t cond_batch = 0;
  int64_t uncond_batch = 0;
  double d_uncond = 0.0;
  double d_uncond_weighted = 0.0;
  double d_cond = 0.0;
  double labelmix = 0.0;
  double r1 = 0.0;
  bool r1_applied = false;
  double d_total = 0.0;
  double g_uncond = 0.0;
  double g_uncond_weighted = 0.0;
  double g_cond = 0.0;
  double g_total = 0.0;
  double grad_norm_d = 0.0;
  double grad_norm_g = 0.0;
  double seconds = 0.0;

  // "step=12 stage=1 d_uncond=... seconds=..." on one line.
  std::string to_log_line() const;
  // Equality of every field except wall-clock time.
  bool same_losses(const StepMetrics& other) const;
};

// ema <- decay * ema + (1 - decay) * live, parameter-wise and over buffers.
void ema_update(torch::nn::Module& live, torch::nn::Module& ema, double decay);

// FNV-1a digest over the names and bytes of every parameter and buffer.
uint64_t parameter_hash(const torch::nn::Module& module);

class Trainer {
 public:
  // Fresh state. Model initialization is a function of cfg.train.seed only.
  Trainer(RunConfig cfg, const Dataset& data);

  // State restored from a checkpoint; the configuration is the one stored in it.
  static std::unique_ptr<Trainer> from_checkpoint(const CheckpointFile& file, const Dataset& data);
  static std::unique_ptr<Trainer> from_checkpoint(const std::string& path, const Dataset& data);

  // Draws the next mixed batch from the training RNG (sampling with replacement + flips).
  std::pair<LabeledBatch, UnlabeledBatch> next_batches();

  // One D update, one G update, one EMA update. A non-finite loss or gradient throws
  // NumericalError before the affected optimizer step.
  StepMetrics train_step(const LabeledBatch& labeled, const UnlabeledBatch& unlabeled);
  StepMetrics step();

  // The two halves of train_step, exposed for isolation checks. Neither advances the step
  // counter or the EMA.
  StepMetrics update_discriminator(const LabeledBatch& labeled, const UnlabeledBatch& unlabeled);
  void update_generator(const LabeledBatch& labeled, const UnlabeledBatch& unlabeled, StepMetrics& m);

  CheckpointFile to_checkpoint() const;
  // Overwrites all state. Throws ShapeMismatchError naming the first offending tensor.
  void load_state(const CheckpointFile& file);
  void save_checkpoint(const std::string& path) const;

  const RunConfig& config() const { return cfg_; }
  int64_t completed_steps() const { return step_; }
  // 1 or 2; stage-wise modes switch at total_steps / 2.
  int64_t stage() const;
  int64_t stage_for(int64_t step) const;
  bool uncond_active() const;
  bool cond_active() const;

  HybridGenerator& generator() { return gen_; }
  HybridGenerator& ema() { return ema_; }
  Discriminator& discriminator() { return disc_; }
  const DatasetSplit& split() const { return split_; }
  int64_t labeled_pool_size() const { return static_cast<int64_t>(labeled_idx_.size()); }
  at::Generator& rng() { return rng_; }

  // Generator parameters the current stage trains (the rest are frozen).
  std::vector<torch::Tensor> trainable_generator_parameters();

 private:
  void configure_stage();
  void check_pools() const;

  RunConfig cfg_;
  DatasetSplit split_;
  std::vector<int64_t> labeled_idx_;
  std::vector<int64_t> uncond_idx_;
  torch::Tensor images_;     // all training images (N,3,H,W)
  torch::Tensor seg_;        // one-hot of all training labels (N,C,H,W)
  HybridGenerator gen_{nullptr};
  HybridGenerator ema_{nullptr};
  Discriminator disc_{nullptr};
  std::unique_ptr<torch::optim::Adam> opt_g_;
  std::unique_ptr<torch::optim::Adam> opt_d_;
  int64_t configured_stage_ = 0;
  int64_t step_ = 0;
  at::Generator rng_;
};

struct RunArtifacts {
  std::string run_dir;
  std::vector<StepMetrics> history;
  std::vector<std::pair<int64_t, MetricsReport>> evaluations;
  std::string final_checkpoint;
  int64_t final_step = 0;
};

struct RunOptions {
  std::optional<std::string> resume;  // checkpoint path
  bool evaluate = true;               // periodic FID/CFID/mIoU
  bool samples = true;                // periodic sample grids
  bool verbose = false;               // progress to stderr
};

// Trains to cfg.train.total_steps inside run_dir:
//   config.snapshot, metrics.log, ckpt/step_NNNNNN.bin, samples/step_NNNNNN_{cond,uncond}.png
// On a non-finite loss the last checkpoint on disk is left untouched and NumericalError
// propagates after an "abort" record is appended to metrics.log.
RunArtifacts run(const RunConfig& cfg, const Dataset& data, const std::string& run_dir,
                 const RunOptions& options = {});

// Loads the EMA generator (the one used for sampling and evaluation) from a checkpoint.
struct LoadedGenerator {
  RunConfig config;
  HybridGenerator generator{nullptr};
  int64_t step = 0;
};
LoadedGenerator load_ema_generator(const std::string& path);

std::string checkpoint_name(int64_t step);

// One row per training mode; nullopt marks a branch the mode never trains.
struct AblationRow {
  TrainMode mode = TrainMode::kJoint;
  std::optional<double> fid;
  std::optional<double> cfid;
  std::optional<double> miou;
  double seconds = 0.0;
};

struct AblationTable {
  int64_t budget = 0;
  std::vector<AblationRow> rows;

  std::string to_text() const;
  std::string to_json() const;
};

inline constexpr std::array<TrainMode, 5> kAblationModes{
    TrainMode::kJoint, TrainMode::kCondOnly, TrainMode::kUncondOnly,
    TrainMode::kStageUncondThenCond, TrainMode::kStageCondThenUncond};

// Trains every mode for `budget` steps from the same seed in out_dir/<mode>/ and evaluates
// the final EMA generator of each.
AblationTable run_ablation(const RunConfig& base, const Dataset& data, const std::string& out_dir,
                           int64_t budget, bool verbose = false);

}  // namespace ocogan
