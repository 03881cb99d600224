#pragma once

#include <torch/torch.h>

#include <optional>
#include <vector>

#include "ocogan/config.hpp"

namespace ocogan {

enum class GumbelMode { kTrain, kEval };
enum class StyleSource { kUnconditional, kConditional };

// One style map per synthesis resolution, coarsest first. Level r has shape
// (N, style_channels, H_r, W_r) and is a per-site probability simplex over channels.
struct StylePyramid {
  std::vector<torch::Tensor> maps;
  StyleSource source = StyleSource::kUnconditional;
};

// Temperature softmax over dim 1. Train mode perturbs logits with Gumbel(0,1) noise first.
torch::Tensor gumbel_softmax(const torch::Tensor& logits, double tau, GumbelMode mode,
                             std::optional<at::Generator> gen = std::nullopt);

// (n, dim) i.i.d. standard normal.
torch::Tensor sample_latent(int64_t n, int64_t dim, at::Generator gen,
                            torch::Dtype dtype = torch::kFloat32);

// Spatially replicates (N, D) to (N, D, H, W).
torch::Tensor noise_field(const torch::Tensor& z, int64_t height, int64_t width);

// Per-channel, per-image standardization: (x - mean) / sqrt(var + eps).
torch::Tensor standardize(const torch::Tensor& x, double eps);

// Normal(0, 1/fan_in) weights and zero biases for every conv/linear layer below `module`.
void init_fan_in(torch::nn::Module& module);

// Normalize, modulate with gamma/beta from the style map through the affine "A" (1x1 conv),
// then 3x3 conv and leaky ReLU.
class ModulatedBlockImpl : public torch::nn::Module {
 public:
  ModulatedBlockImpl(int64_t in_channels, int64_t out_channels, int64_t style_channels,
                     double eps, double slope);

  // gamma * standardize(x) + beta; x and style must share spatial dims.
  torch::Tensor modulate(const torch::Tensor& x, const torch::Tensor& style);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& style);

  // Sets the affine so gamma == 1 and beta == 0 regardless of style.
  void reset_affine_identity();

  int64_t in_channels() const { return in_channels_; }

  torch::nn::Conv2d affine{nullptr};
  torch::nn::Conv2d conv{nullptr};

 private:
  int64_t in_channels_;
  double eps_;
  double slope_;
};
TORCH_MODULE(ModulatedBlock);

// Residual block at one resolution: two modulated convs then 2x upsampling, plus an
// unmodulated skip conv whose upsampled output is added after the main branch.
class SynthesisLevelImpl : public torch::nn::Module {
 public:
  SynthesisLevelImpl(int64_t in_channels, int64_t out_channels, int64_t style_channels,
                     bool upsample, UpsampleMode mode, double eps, double slope);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& style);

  ModulatedBlock mod1{nullptr};
  ModulatedBlock mod2{nullptr};
  torch::nn::Conv2d skip{nullptr};

 private:
  torch::Tensor up(const torch::Tensor& x, torch::nn::ConvTranspose2d& transposed);

  bool upsample_;
  UpsampleMode mode_;
  torch::nn::ConvTranspose2d up_main{nullptr};
  torch::nn::ConvTranspose2d up_skip{nullptr};
};
TORCH_MODULE(SynthesisLevel);

// Shared synthesis network S_G: learned constant -> modulated levels -> RGB -> tanh.
class SynthesisNetworkImpl : public torch::nn::Module {
 public:
  explicit SynthesisNetworkImpl(const ModelConfig& cfg);
  torch::Tensor forward(const StylePyramid& pyramid);

  int64_t levels() const { return static_cast<int64_t>(levels_->size()); }
  SynthesisLevel level(int64_t i) { return levels_->ptr<SynthesisLevelImpl>(i); }

  torch::Tensor base;
  torch::nn::Conv2d to_rgb{nullptr};

 private:
  torch::nn::ModuleList levels_;
};
TORCH_MODULE(SynthesisNetwork);

// S_U: MLP mapping z to a base style map, then conv + upsample stack, one map per level.
class UncondStyleNetImpl : public torch::nn::Module {
 public:
  explicit UncondStyleNetImpl(const ModelConfig& cfg);
  StylePyramid forward(const torch::Tensor& z, double tau, GumbelMode mode,
                       std::optional<at::Generator> gen = std::nullopt);

 private:
  int64_t style_channels_;
  int64_t base_res_;
  double slope_;
  torch::nn::Sequential mapping{nullptr};
  torch::nn::ModuleList convs{nullptr};
  torch::nn::ModuleList to_style{nullptr};
};
TORCH_MODULE(UncondStyleNet);

// S_C: segmentation map extended with spatially constant noise, resized to every level
// and processed by a downsampling conv stack.
class CondStyleNetImpl : public torch::nn::Module {
 public:
  explicit CondStyleNetImpl(const ModelConfig& cfg);
  StylePyramid forward(const torch::Tensor& seg, const torch::Tensor& z_noise, double tau,
                       GumbelMode mode, std::optional<at::Generator> gen = std::nullopt);

 private:
  ModelConfig cfg_;
  torch::nn::ModuleList first{nullptr};
  torch::nn::ModuleList second{nullptr};
  torch::nn::ModuleList to_style{nullptr};
};
TORCH_MODULE(CondStyleNet);

class HybridGeneratorImpl : public torch::nn::Module {
 public:
  explicit HybridGeneratorImpl(const ModelConfig& cfg, double gumbel_tau = 1.0);

  StylePyramid styles_uncond(const torch::Tensor& z, GumbelMode mode,
                             std::optional<at::Generator> gen = std::nullopt);
  StylePyramid styles_cond(const torch::Tensor& seg, const torch::Tensor& z_noise, GumbelMode mode,
                           std::optional<at::Generator> gen = std::nullopt);
  torch::Tensor synthesize(const StylePyramid& pyramid);

  // S_G(S_U(z)) and S_G(S_C(z64, s)).
  torch::Tensor generate_uncond(const torch::Tensor& z, GumbelMode mode,
                                std::optional<at::Generator> gen = std::nullopt);
  torch::Tensor generate_cond(const torch::Tensor& z_noise, const torch::Tensor& seg,
                              GumbelMode mode, std::optional<at::Generator> gen = std::nullopt);

  // cat(S_G(S_U(z)), S_G(S_C(z64, s))) from one synthesis pass. Either half may be empty
  // (undefined z or z_noise).
  torch::Tensor generate_mixed(const torch::Tensor& z, const torch::Tensor& z_noise,
                               const torch::Tensor& seg, GumbelMode mode,
                               std::optional<at::Generator> gen = std::nullopt);

  const ModelConfig& config() const { return cfg_; }
  double gumbel_tau() const { return tau_; }

  UncondStyleNet su{nullptr};
  CondStyleNet sc{nullptr};
  SynthesisNetwork sg{nullptr};

 private:
  ModelConfig cfg_;
  double tau_;
};
TORCH_MODULE(HybridGenerator);

}  // namespace ocogan
