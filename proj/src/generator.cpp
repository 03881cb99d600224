#include "ocogan/generator.hpp"

#include <cmath>

#include "ocogan/errors.hpp"

namespace ocogan {

namespace F = torch::nn::functional;

namespace {

torch::Tensor lrelu(const torch::Tensor& x, double slope) {
  return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(slope));
}

torch::Tensor upsample_nearest(const torch::Tensor& x) {
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .scale_factor(std::vector<double>{2.0, 2.0})
                               .mode(torch::kNearest));
}

torch::Tensor resize_area(const torch::Tensor& x, int64_t res) {
  if (x.size(2) == res && x.size(3) == res) return x;
  return F::interpolate(
      x, F::InterpolateFuncOptions().size(std::vector<int64_t>{res, res}).mode(torch::kArea));
}

torch::nn::Conv2d make_conv(int64_t in, int64_t out, int64_t k) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, k).padding(k / 2));
}

void fan_in_normal(torch::Tensor& weight, int64_t fan_in) {
  weight.normal_(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

}  // namespace

torch::Tensor gumbel_softmax(const torch::Tensor& logits, double tau, GumbelMode mode,
                             std::optional<at::Generator> gen) {
  if (!(tau > 0.0)) throw ConfigError("gumbel_softmax: temperature must be positive");
  if (mode == GumbelMode::kEval) return torch::softmax(logits / tau, 1);
  constexpr double kTiny = 1e-20;
  auto u = torch::rand(logits.sizes(), gen, logits.options().requires_grad(false));
  auto g = -torch::log(-torch::log(u + kTiny) + kTiny);
  return torch::softmax((logits + g) / tau, 1);
}

torch::Tensor sample_latent(int64_t n, int64_t dim, at::Generator gen, torch::Dtype dtype) {
  if (n < 1) throw ConfigError("sample_latent: batch size must be >= 1, got " + std::to_string(n));
  return torch::randn({n, dim}, gen, torch::TensorOptions().dtype(dtype));
}

torch::Tensor noise_field(const torch::Tensor& z, int64_t height, int64_t width) {
  return z.view({z.size(0), z.size(1), 1, 1}).expand({z.size(0), z.size(1), height, width});
}

torch::Tensor standardize(const torch::Tensor& x, double eps) {
  // Instance norm without affine: biased variance, eps inside the square root.
  return torch::instance_norm(x, {}, {}, {}, {}, /*use_input_stats=*/true, /*momentum=*/0.0, eps,
                              /*cudnn_enabled=*/false);
}

namespace {

void init_one(torch::nn::Module& m) {
  if (auto* c = m.as<torch::nn::Conv2dImpl>()) {
    fan_in_normal(c->weight, c->weight[0].numel());
    if (c->bias.defined()) c->bias.zero_();
  } else if (auto* t = m.as<torch::nn::ConvTranspose2dImpl>()) {
    // weight is (in, out, kh, kw); each output sees in * kh * kw / stride^2 inputs.
    fan_in_normal(t->weight, t->weight.size(0) * t->weight.size(2) * t->weight.size(3) / 4);
    if (t->bias.defined()) t->bias.zero_();
  } else if (auto* l = m.as<torch::nn::LinearImpl>()) {
    fan_in_normal(l->weight, l->weight.size(1));
    if (l->bias.defined()) l->bias.zero_();
  }
}

}  // namespace

void init_fan_in(torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  // Constructors call this on *this before it is owned by a shared_ptr, so self is visited
  // by reference rather than through modules(include_self=true).
  init_one(module);
  for (auto& m : module.modules(/*include_self=*/false)) init_one(*m);
}

// ---------------------------------------------------------------------------
// ModulatedBlock

ModulatedBlockImpl::ModulatedBlockImpl(int64_t in_channels, int64_t out_channels,
                                       int64_t style_channels, double eps, double slope)
    : in_channels_(in_channels), eps_(eps), slope_(slope) {
  affine = register_module("affine", make_conv(style_channels, 2 * in_channels, 1));
  conv = register_module("conv", make_conv(in_channels, out_channels, 3));
  init_fan_in(*this);
  torch::NoGradGuard no_grad;
  // gamma starts at 1, beta at 0
  affine->bias.narrow(0, 0, in_channels).fill_(1.0);
}

torch::Tensor ModulatedBlockImpl::modulate(const torch::Tensor& x, const torch::Tensor& style) {
  if (x.size(2) != style.size(2) || x.size(3) != style.size(3) || x.size(0) != style.size(0)) {
    throw InternalError("modulated block: feature and style maps disagree in batch or spatial dims");
  }
  auto gb = affine->forward(style);
  auto gamma = gb.narrow(1, 0, in_channels_);
  auto beta = gb.narrow(1, in_channels_, in_channels_);
  return gamma * standardize(x, eps_) + beta;
}

torch::Tensor ModulatedBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& style) {
  return lrelu(conv->forward(modulate(x, style)), slope_);
}

void ModulatedBlockImpl::reset_affine_identity() {
  torch::NoGradGuard no_grad;
  affine->weight.zero_();
  affine->bias.zero_();
  affine->bias.narrow(0, 0, in_channels_).fill_(1.0);
}

// ---------------------------------------------------------------------------
// SynthesisLevel

SynthesisLevelImpl::SynthesisLevelImpl(int64_t in_channels, int64_t out_channels,
                                       int64_t style_channels, bool upsample, UpsampleMode mode,
                                       double eps, double slope)
    : upsample_(upsample), mode_(mode) {
  mod1 = register_module("mod1", ModulatedBlock(in_channels, out_channels, style_channels, eps, slope));
  mod2 = register_module("mod2", ModulatedBlock(out_channels, out_channels, style_channels, eps, slope));
  skip = register_module("skip", make_conv(in_channels, out_channels, 1));
  if (upsample_ && mode_ == UpsampleMode::kTransposed) {
    auto opts = torch::nn::ConvTranspose2dOptions(out_channels, out_channels, 4).stride(2).padding(1);
    up_main = register_module("up_main", torch::nn::ConvTranspose2d(opts));
    up_skip = register_module("up_skip", torch::nn::ConvTranspose2d(opts));
  }
  init_fan_in(*skip);
  if (up_main) {
    init_fan_in(*up_main);
    init_fan_in(*up_skip);
  }
}

torch::Tensor SynthesisLevelImpl::up(const torch::Tensor& x, torch::nn::ConvTranspose2d& transposed) {
  if (!upsample_) return x;
  if (mode_ == UpsampleMode::kTransposed) return transposed->forward(x);
  return upsample_nearest(x);
}

torch::Tensor SynthesisLevelImpl::forward(const torch::Tensor& x, const torch::Tensor& style) {
  auto main = mod2->forward(mod1->forward(x, style), style);
  return up(main, up_main) + up(skip->forward(x), up_skip);
}

// ---------------------------------------------------------------------------
// SynthesisNetwork

SynthesisNetworkImpl::SynthesisNetworkImpl(const ModelConfig& cfg) {
  cfg.validate();
  const int64_t h0 = cfg.base_resolution();
  base = register_parameter("base", torch::randn({1, cfg.gen_widths.front(), h0, h0}));
  levels_ = register_module("levels", torch::nn::ModuleList());
  int64_t in = cfg.gen_widths.front();
  for (int64_t r = 0; r < cfg.levels(); ++r) {
    const bool last = r + 1 == cfg.levels();
    levels_->push_back(SynthesisLevel(in, cfg.gen_widths[r], cfg.style_channels, !last,
                                      cfg.upsample, cfg.norm_eps, cfg.lrelu_slope));
    in = cfg.gen_widths[r];
  }
  to_rgb = register_module("to_rgb", make_conv(in, 3, 1));
  init_fan_in(*to_rgb);
}

torch::Tensor SynthesisNetworkImpl::forward(const StylePyramid& pyramid) {
  if (static_cast<int64_t>(pyramid.maps.size()) != levels()) {
    throw InternalError("synthesis network expects " + std::to_string(levels()) +
                        " style maps, got " + std::to_string(pyramid.maps.size()));
  }
  const int64_t n = pyramid.maps.front().size(0);
  auto x = base.expand({n, base.size(1), base.size(2), base.size(3)});
  for (int64_t r = 0; r < levels(); ++r) {
    x = levels_->ptr<SynthesisLevelImpl>(r)->forward(x, pyramid.maps[r]);
  }
  return torch::tanh(to_rgb->forward(x));
}

// ---------------------------------------------------------------------------
// UncondStyleNet

UncondStyleNetImpl::UncondStyleNetImpl(const ModelConfig& cfg)
    : style_channels_(cfg.style_channels), base_res_(cfg.base_resolution()), slope_(cfg.lrelu_slope) {
  mapping = register_module("mapping", torch::nn::Sequential());
  int64_t in = cfg.latent_dim;
  for (int64_t i = 0; i + 1 < cfg.mapping_layers; ++i) {
    mapping->push_back(torch::nn::Linear(in, cfg.mapping_hidden));
    mapping->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(slope_)));
    in = cfg.mapping_hidden;
  }
  mapping->push_back(torch::nn::Linear(in, style_channels_ * base_res_ * base_res_));
  convs = register_module("convs", torch::nn::ModuleList());
  to_style = register_module("to_style", torch::nn::ModuleList());
  for (int64_t r = 0; r < cfg.levels(); ++r) {
    convs->push_back(make_conv(style_channels_, style_channels_, 3));
    to_style->push_back(make_conv(style_channels_, style_channels_, 1));
  }
  init_fan_in(*this);
}

StylePyramid UncondStyleNetImpl::forward(const torch::Tensor& z, double tau, GumbelMode mode,
                                         std::optional<at::Generator> gen) {
  StylePyramid out;
  out.source = StyleSource::kUnconditional;
  auto h = mapping->forward(z).view({z.size(0), style_channels_, base_res_, base_res_});
  for (std::size_t r = 0; r < convs->size(); ++r) {
    if (r > 0) h = upsample_nearest(h);
    h = lrelu(convs[r]->as<torch::nn::Conv2dImpl>()->forward(h), slope_);
    auto logits = to_style[r]->as<torch::nn::Conv2dImpl>()->forward(h);
    out.maps.push_back(gumbel_softmax(logits, tau, mode, gen));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CondStyleNet

CondStyleNetImpl::CondStyleNetImpl(const ModelConfig& cfg) : cfg_(cfg) {
  first = register_module("first", torch::nn::ModuleList());
  second = register_module("second", torch::nn::ModuleList());
  to_style = register_module("to_style", torch::nn::ModuleList());
  const int64_t ext = cfg.num_classes + cfg.noise_dim;
  for (int64_t r = 0; r < cfg.levels(); ++r) {
    const bool finest = r + 1 == cfg.levels();
    first->push_back(make_conv(ext + (finest ? 0 : cfg.cond_hidden), cfg.cond_hidden, 3));
    second->push_back(make_conv(cfg.cond_hidden, cfg.cond_hidden, 3));
    to_style->push_back(make_conv(cfg.cond_hidden, cfg.style_channels, 1));
  }
  init_fan_in(*this);
}

StylePyramid CondStyleNetImpl::forward(const torch::Tensor& seg, const torch::Tensor& z_noise,
                                       double tau, GumbelMode mode, std::optional<at::Generator> gen) {
  if (seg.dim() != 4 || seg.size(1) != cfg_.num_classes || seg.size(2) != cfg_.resolution ||
      seg.size(3) != cfg_.resolution) {
    throw DataError("conditional style network expects segmentation maps of shape (N, " +
                    std::to_string(cfg_.num_classes) + ", " + std::to_string(cfg_.resolution) + ", " +
                    std::to_string(cfg_.resolution) + "), got " + c10::str(seg.sizes()));
  }
  if (z_noise.dim() != 2 || z_noise.size(0) != seg.size(0) || z_noise.size(1) != cfg_.noise_dim) {
    throw DataError("conditional noise must have shape (N, " + std::to_string(cfg_.noise_dim) + ")");
  }
  auto extended = torch::cat({seg, noise_field(z_noise, seg.size(2), seg.size(3))}, 1);
  const int64_t levels = cfg_.levels();
  std::vector<torch::Tensor> maps(levels);
  torch::Tensor h;
  for (int64_t r = levels - 1; r >= 0; --r) {
    auto x = resize_area(extended, cfg_.level_resolution(r));
    if (h.defined()) x = torch::cat({x, F::avg_pool2d(h, F::AvgPool2dFuncOptions(2))}, 1);
    h = lrelu(first[r]->as<torch::nn::Conv2dImpl>()->forward(x), cfg_.lrelu_slope);
    h = lrelu(second[r]->as<torch::nn::Conv2dImpl>()->forward(h), cfg_.lrelu_slope);
    maps[r] = gumbel_softmax(to_style[r]->as<torch::nn::Conv2dImpl>()->forward(h), tau, mode, gen);
  }
  return {std::move(maps), StyleSource::kConditional};
}

// ---------------------------------------------------------------------------
// HybridGenerator

HybridGeneratorImpl::HybridGeneratorImpl(const ModelConfig& cfg, double gumbel_tau)
    : cfg_(cfg), tau_(gumbel_tau) {
  cfg_.validate();
  if (!(tau_ > 0.0)) throw ConfigError("gumbel temperature must be positive");
  su = register_module("su", UncondStyleNet(cfg_));
  sc = register_module("sc", CondStyleNet(cfg_));
  sg = register_module("sg", SynthesisNetwork(cfg_));
}

StylePyramid HybridGeneratorImpl::styles_uncond(const torch::Tensor& z, GumbelMode mode,
                                                std::optional<at::Generator> gen) {
  return su->forward(z, tau_, mode, gen);
}

StylePyramid HybridGeneratorImpl::styles_cond(const torch::Tensor& seg, const torch::Tensor& z_noise,
                                              GumbelMode mode, std::optional<at::Generator> gen) {
  return sc->forward(seg, z_noise, tau_, mode, gen);
}

torch::Tensor HybridGeneratorImpl::synthesize(const StylePyramid& pyramid) {
  return sg->forward(pyramid);
}

torch::Tensor HybridGeneratorImpl::generate_uncond(const torch::Tensor& z, GumbelMode mode,
                                                   std::optional<at::Generator> gen) {
  return synthesize(styles_uncond(z, mode, gen));
}

torch::Tensor HybridGeneratorImpl::generate_cond(const torch::Tensor& z_noise, const torch::Tensor& seg,
                                                 GumbelMode mode, std::optional<at::Generator> gen) {
  return synthesize(styles_cond(seg, z_noise, mode, gen));
}

torch::Tensor HybridGeneratorImpl::generate_mixed(const torch::Tensor& z, const torch::Tensor& z_noise,
                                                  const torch::Tensor& seg, GumbelMode mode,
                                                  std::optional<at::Generator> gen) {
  const bool u = z.defined() && z.size(0) > 0;
  const bool c = z_noise.defined() && z_noise.size(0) > 0;
  if (!u && !c) throw ConfigError("generate_mixed needs at least one non-empty half");
  if (!c) return generate_uncond(z, mode, gen);
  if (!u) return generate_cond(z_noise, seg, mode, gen);
  auto pu = styles_uncond(z, mode, gen);
  auto pc = styles_cond(seg, z_noise, mode, gen);
  StylePyramid both;
  for (std::size_t i = 0; i < pu.maps.size(); ++i) both.maps.push_back(torch::cat({pu.maps[i], pc.maps[i]}, 0));
  return synthesize(both);
}

}  // namespace ocogan
