#include "ocogan/discriminator.hpp"

#include "ocogan/errors.hpp"
#include "ocogan/generator.hpp"

namespace ocogan {

namespace F = torch::nn::functional;

namespace {

torch::Tensor lrelu(const torch::Tensor& x, double slope) {
  return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(slope));
}

torch::Tensor normalized(const torch::Tensor& x, double eps) {
  return F::normalize(x, F::NormalizeFuncOptions().dim(0).eps(eps));
}

}  // namespace

torch::Tensor spectral_normalize(const torch::Tensor& weight, SpectralState& state, int64_t n_iter,
                                 double eps) {
  auto mat = weight.reshape({weight.size(0), -1});
  {
    torch::NoGradGuard no_grad;
    auto w = mat.detach();
    auto u = state.u.clone();
    auto v = state.v.clone();
    for (int64_t i = 0; i < n_iter; ++i) {
      v = normalized(torch::mv(w.t(), u), eps);
      u = normalized(torch::mv(w, v), eps);
    }
    // A zero weight collapses the vectors; keep the previous direction instead.
    if (u.norm().item<double>() > 0.5 && v.norm().item<double>() > 0.5) {
      state.u.copy_(u);
      state.v.copy_(v);
    }
  }
  // Clones: a later forward updates the state in place while this graph may still need it.
  auto sigma = torch::dot(state.u.clone(), torch::mv(mat, state.v.clone()));
  return weight / sigma.clamp_min(eps);
}

// ---------------------------------------------------------------------------

SNConv2dImpl::SNConv2dImpl(int64_t in_channels, int64_t out_channels, int64_t kernel, int64_t dilation,
                           int64_t n_iter)
    : padding_(dilation * (kernel / 2)), dilation_(dilation), n_iter_(n_iter) {
  const int64_t fan_in = in_channels * kernel * kernel;
  weight = register_parameter(
      "weight", torch::randn({out_channels, in_channels, kernel, kernel}) / std::sqrt(double(fan_in)));
  bias = register_parameter("bias", torch::zeros({out_channels}));
  // Start the power iteration at the leading singular pair, so sigma is exact before any update.
  auto [U, S, Vh] = torch::linalg_svd(weight.detach().reshape({out_channels, -1}), /*full_matrices=*/false);
  u = register_buffer("u", U.select(1, 0).contiguous());
  v = register_buffer("v", Vh.select(0, 0).contiguous());
}

torch::Tensor SNConv2dImpl::normalized_weight() {
  SpectralState state{u, v};
  return spectral_normalize(weight, state, 0);
}

torch::Tensor SNConv2dImpl::forward(const torch::Tensor& x) {
  SpectralState state{u, v};
  auto w = spectral_normalize(weight, state, is_training() ? n_iter_ : 0);
  return F::conv2d(x, w, F::Conv2dFuncOptions().bias(bias).padding(padding_).dilation(dilation_));
}

// ---------------------------------------------------------------------------

ResBlockDImpl::ResBlockDImpl(int64_t in_channels, int64_t out_channels, bool preactivate, double slope)
    : preactivate_(preactivate), slope_(slope) {
  conv1 = register_module(
      "conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, 3).padding(1)));
  conv2 = register_module(
      "conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(out_channels, out_channels, 3).padding(1)));
  shortcut = register_module("shortcut",
                             torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, 1)));
  init_fan_in(*this);
}

torch::Tensor ResBlockDImpl::forward(const torch::Tensor& x) {
  auto h = preactivate_ ? lrelu(x, slope_) : x;
  h = conv2->forward(lrelu(conv1->forward(h), slope_));
  const auto pool = F::AvgPool2dFuncOptions(2);
  return F::avg_pool2d(h, pool) + F::avg_pool2d(shortcut->forward(x), pool);
}

// ---------------------------------------------------------------------------

ResBlockUImpl::ResBlockUImpl(int64_t in_channels, int64_t skip_channels, int64_t out_channels,
                             double slope, int64_t n_iter)
    : slope_(slope) {
  const int64_t in = in_channels + skip_channels;
  conv1 = register_module("conv1", SNConv2d(in, out_channels, 3, 1, n_iter));
  conv2 = register_module("conv2", SNConv2d(out_channels, out_channels, 3, 1, n_iter));
  shortcut = register_module("shortcut", SNConv2d(in, out_channels, 1, 1, n_iter));
}

torch::Tensor ResBlockUImpl::forward(const torch::Tensor& x, const torch::Tensor& skip) {
  auto h = F::interpolate(x, F::InterpolateFuncOptions()
                                 .scale_factor(std::vector<double>{2.0, 2.0})
                                 .mode(torch::kNearest));
  if (skip.defined()) h = torch::cat({h, skip}, 1);
  auto main = conv2->forward(lrelu(conv1->forward(lrelu(h, slope_)), slope_));
  return main + shortcut->forward(h);
}

// ---------------------------------------------------------------------------

AsppImpl::AsppImpl(int64_t in_channels, int64_t branch_channels, int64_t out_channels,
                   std::vector<int64_t> rates, double slope, int64_t n_iter)
    : rates_(std::move(rates)), slope_(slope) {
  branches_ = register_module("branches", torch::nn::ModuleList());
  for (auto r : rates_) {
    if (r < 1) throw ConfigError("ASPP rates must be >= 1");
    branches_->push_back(SNConv2d(in_channels, branch_channels, 3, r, n_iter));
  }
  fuse = register_module(
      "fuse", SNConv2d(branch_channels * static_cast<int64_t>(rates_.size()), out_channels, 1, 1, n_iter));
}

torch::Tensor AsppImpl::forward(const torch::Tensor& x) {
  const int64_t extent = std::min(x.size(2), x.size(3));
  std::vector<torch::Tensor> outs;
  outs.reserve(rates_.size());
  for (std::size_t i = 0; i < rates_.size(); ++i) {
    if (rates_[i] > extent) {
      throw ConfigError("ASPP rate " + std::to_string(rates_[i]) + " is too large for a " +
                        std::to_string(x.size(2)) + "x" + std::to_string(x.size(3)) + " feature map");
    }
    outs.push_back(lrelu(branches_->ptr<SNConv2dImpl>(i)->forward(x), slope_));
  }
  return fuse->forward(torch::cat(outs, 1));
}

// ---------------------------------------------------------------------------

UncondHeadImpl::UncondHeadImpl(int64_t channels, double slope) : slope_(slope) {
  conv = register_module(
      "conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 3).padding(1)));
  fc = register_module("fc", torch::nn::Linear(channels, 1));
  init_fan_in(*this);
}

torch::Tensor UncondHeadImpl::forward(const torch::Tensor& bottleneck) {
  auto h = lrelu(conv->forward(lrelu(bottleneck, slope_)), slope_);
  return fc->forward(h.mean({2, 3})).squeeze(1);
}

// ---------------------------------------------------------------------------

DiscriminatorImpl::DiscriminatorImpl(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const auto& widths = cfg_.disc_widths;
  const auto stages = static_cast<int64_t>(widths.size());
  const double slope = cfg_.lrelu_slope;
  const int64_t n_iter = cfg_.sn_iterations;

  encoder = register_module("encoder", torch::nn::ModuleList());
  int64_t in = 3;
  for (int64_t i = 0; i < stages; ++i) {
    encoder->push_back(ResBlockD(in, widths[i], /*preactivate=*/i > 0, slope));
    in = widths[i];
  }
  head = register_module("head", UncondHead(widths.back(), slope));
  aspp_block = register_module(
      "aspp", Aspp(widths.back(), cfg_.aspp_channels, widths.back(), cfg_.aspp_rates, slope, n_iter));

  decoder = register_module("decoder", torch::nn::ModuleList());
  in = widths.back();
  for (int64_t j = 0; j < stages; ++j) {
    const bool has_skip = j + 1 < stages;
    const int64_t skip_ch = has_skip ? widths[stages - 2 - j] : 0;
    const int64_t out_ch = has_skip ? widths[stages - 2 - j] : widths.front();
    decoder->push_back(ResBlockU(in, skip_ch, out_ch, slope, n_iter));
    in = out_ch;
  }
  out = register_module("out", SNConv2d(in, cfg_.num_classes + 1, 1, 1, n_iter));
}

Encoded DiscriminatorImpl::encode(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != 3 || x.size(2) != cfg_.resolution || x.size(3) != cfg_.resolution) {
    throw DataError("discriminator expects images of shape (N, 3, " + std::to_string(cfg_.resolution) +
                    ", " + std::to_string(cfg_.resolution) + "), got " + c10::str(x.sizes()));
  }
  Encoded enc;
  auto h = x;
  const auto stages = encoder->size();
  for (std::size_t i = 0; i < stages; ++i) {
    h = encoder->ptr<ResBlockDImpl>(i)->forward(h);
    if (i + 1 < stages) enc.skips.push_back(h);
  }
  enc.bottleneck = h;
  return enc;
}

torch::Tensor DiscriminatorImpl::uncond_head(const torch::Tensor& bottleneck) {
  return head->forward(bottleneck);
}

torch::Tensor DiscriminatorImpl::aspp(const torch::Tensor& bottleneck) {
  return aspp_block->forward(bottleneck);
}

torch::Tensor DiscriminatorImpl::decode(const torch::Tensor& aspp_out,
                                        const std::vector<torch::Tensor>& skips) {
  if (skips.size() + 1 != decoder->size()) {
    throw InternalError("decoder expects " + std::to_string(decoder->size() - 1) + " skip tensors");
  }
  auto h = aspp_out;
  for (std::size_t j = 0; j < decoder->size(); ++j) {
    torch::Tensor skip;
    if (j < skips.size()) skip = skips[skips.size() - 1 - j];
    h = decoder->ptr<ResBlockUImpl>(j)->forward(h, skip);
  }
  return out->forward(lrelu(h, cfg_.lrelu_slope));
}

DiscOutput DiscriminatorImpl::forward(const torch::Tensor& x) {
  auto enc = encode(x);
  return {uncond_head(enc.bottleneck), decode(aspp(enc.bottleneck), enc.skips)};
}

torch::Tensor DiscriminatorImpl::image_logit(const torch::Tensor& x) {
  return uncond_head(encode(x).bottleneck);
}

torch::Tensor DiscriminatorImpl::pixel_logits(const torch::Tensor& x) {
  auto enc = encode(x);
  return decode(aspp(enc.bottleneck), enc.skips);
}

DiscOutput DiscriminatorImpl::forward_split(const torch::Tensor& x, int64_t n_image) {
  auto enc = encode(x);
  const int64_t n_pixel = x.size(0) - n_image;
  DiscOutput out_logits;
  if (n_image > 0) out_logits.image_logit = uncond_head(enc.bottleneck.narrow(0, 0, n_image));
  if (n_pixel > 0) {
    std::vector<torch::Tensor> skips;
    for (const auto& s : enc.skips) skips.push_back(s.narrow(0, n_image, n_pixel));
    out_logits.pixel_logits = decode(aspp(enc.bottleneck.narrow(0, n_image, n_pixel)), skips);
  }
  return out_logits;
}

std::vector<SNConv2d> DiscriminatorImpl::spectral_convs() {
  std::vector<SNConv2d> out_convs;
  for (const auto& m : modules(/*include_self=*/false)) {
    if (auto sn = std::dynamic_pointer_cast<SNConv2dImpl>(m)) out_convs.emplace_back(sn);
  }
  return out_convs;
}

}  // namespace ocogan
