#pragma once

#include <torch/torch.h>

#include <vector>

#include "ocogan/config.hpp"

namespace ocogan {

// Power-iteration vectors for one weight reshaped to (out, in * kh * kw).
struct SpectralState {
  torch::Tensor u;  // (out)
  torch::Tensor v;  // (in * kh * kw)
};

// Returns weight / sigma, sigma = u^T W v after `n_iter` power iterations that update `state`
// in place (no gradient flows through the iteration; gradient flows through sigma).
// n_iter == 0 reuses the stored vectors. A zero weight yields zeros.
torch::Tensor spectral_normalize(const torch::Tensor& weight, SpectralState& state, int64_t n_iter,
                                 double eps = 1e-12);

// Conv2d whose weight is spectrally normalized on every forward. Power iteration runs only
// in training mode, so eval-mode forwards are a pure function of the parameters.
class SNConv2dImpl : public torch::nn::Module {
 public:
  SNConv2dImpl(int64_t in_channels, int64_t out_channels, int64_t kernel, int64_t dilation = 1,
               int64_t n_iter = 1);
  torch::Tensor forward(const torch::Tensor& x);

  // The normalized weight without touching the power-iteration state.
  torch::Tensor normalized_weight();

  torch::Tensor weight;
  torch::Tensor bias;
  torch::Tensor u;
  torch::Tensor v;

 private:
  int64_t padding_;
  int64_t dilation_;
  int64_t n_iter_;
};
TORCH_MODULE(SNConv2d);

// Encoder residual block: two 3x3 convs and 2x average pooling, 1x1 conv shortcut.
class ResBlockDImpl : public torch::nn::Module {
 public:
  ResBlockDImpl(int64_t in_channels, int64_t out_channels, bool preactivate, double slope);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv1{nullptr};
  torch::nn::Conv2d conv2{nullptr};
  torch::nn::Conv2d shortcut{nullptr};

 private:
  bool preactivate_;
  double slope_;
};
TORCH_MODULE(ResBlockD);

// Decoder residual block: 2x nearest upsampling, optional skip concatenation, two
// spectrally normalized 3x3 convs and a spectrally normalized 1x1 shortcut.
class ResBlockUImpl : public torch::nn::Module {
 public:
  ResBlockUImpl(int64_t in_channels, int64_t skip_channels, int64_t out_channels, double slope,
                int64_t n_iter);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& skip = {});

  SNConv2d conv1{nullptr};
  SNConv2d conv2{nullptr};
  SNConv2d shortcut{nullptr};

 private:
  double slope_;
};
TORCH_MODULE(ResBlockU);

// Parallel dilated 3x3 convs, concatenated and fused by a 1x1 conv. Spatial dims preserved.
class AsppImpl : public torch::nn::Module {
 public:
  AsppImpl(int64_t in_channels, int64_t branch_channels, int64_t out_channels,
           std::vector<int64_t> rates, double slope, int64_t n_iter);
  torch::Tensor forward(const torch::Tensor& x);

  const std::vector<int64_t>& rates() const { return rates_; }
  SNConv2d branch(std::size_t i) { return branches_->ptr<SNConv2dImpl>(i); }
  SNConv2d fuse{nullptr};

 private:
  std::vector<int64_t> rates_;
  double slope_;
  torch::nn::ModuleList branches_;
};
TORCH_MODULE(Aspp);

// conv -> global average pooling -> linear, one logit per sample.
class UncondHeadImpl : public torch::nn::Module {
 public:
  UncondHeadImpl(int64_t channels, double slope);
  torch::Tensor forward(const torch::Tensor& bottleneck);

  torch::nn::Conv2d conv{nullptr};
  torch::nn::Linear fc{nullptr};

 private:
  double slope_;
};
TORCH_MODULE(UncondHead);

struct Encoded {
  std::vector<torch::Tensor> skips;  // finest first
  torch::Tensor bottleneck;
};

struct DiscOutput {
  torch::Tensor image_logit;   // (N)
  torch::Tensor pixel_logits;  // (N, C+1, H, W); channel C is "fake"
};

// U-Net discriminator: shared encoder (no spectral norm), whole-image head on the bottleneck,
// and a spectrally normalized conditional head (ASPP + skip-connected decoder).
class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(const ModelConfig& cfg);

  Encoded encode(const torch::Tensor& x);
  torch::Tensor uncond_head(const torch::Tensor& bottleneck);
  torch::Tensor aspp(const torch::Tensor& bottleneck);
  torch::Tensor decode(const torch::Tensor& aspp_out, const std::vector<torch::Tensor>& skips);

  DiscOutput forward(const torch::Tensor& x);
  torch::Tensor image_logit(const torch::Tensor& x);
  torch::Tensor pixel_logits(const torch::Tensor& x);
  // One encoder pass; image logits for the first n_image rows, pixel logits for the rest.
  // The half with no rows is left undefined.
  DiscOutput forward_split(const torch::Tensor& x, int64_t n_image);

  // Every spectrally normalized conv (exactly the conditional-head convs).
  std::vector<SNConv2d> spectral_convs();

  const ModelConfig& config() const { return cfg_; }

  torch::nn::ModuleList encoder{nullptr};
  UncondHead head{nullptr};
  Aspp aspp_block{nullptr};
  torch::nn::ModuleList decoder{nullptr};
  SNConv2d out{nullptr};

 private:
  ModelConfig cfg_;
};
TORCH_MODULE(Discriminator);

}  // namespace ocogan
