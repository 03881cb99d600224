#include "ocogan/losses.hpp"

#include "ocogan/errors.hpp"

namespace ocogan {

namespace F = torch::nn::functional;

torch::Tensor loss_d_uncond(const torch::Tensor& logit_real, const torch::Tensor& logit_fake) {
  return F::softplus(-logit_real).mean() + F::softplus(logit_fake).mean();
}

torch::Tensor loss_g_uncond(const torch::Tensor& logit_fake) { return F::softplus(-logit_fake).mean(); }

torch::Tensor class_weights(const torch::Tensor& seg) {
  torch::NoGradGuard no_grad;
  auto counts = seg.sum({0, 2, 3});
  auto freq = counts / static_cast<double>(seg.size(0) * seg.size(2) * seg.size(3));
  auto present = counts > 0;
  auto n_present = present.sum().to(seg.scalar_type());
  auto safe = torch::where(present, freq, torch::ones_like(freq));
  return torch::where(present, 1.0 / (safe * n_present), torch::zeros_like(freq));
}

namespace {

void check_pixel_shapes(const torch::Tensor& logits, const torch::Tensor& seg) {
  if (logits.dim() != 4 || seg.dim() != 4 || logits.size(0) != seg.size(0) ||
      logits.size(1) != seg.size(1) + 1 || logits.size(2) != seg.size(2) || logits.size(3) != seg.size(3)) {
    throw DataError("pixel logits " + c10::str(logits.sizes()) + " do not match segmentation " +
                    c10::str(seg.sizes()) + " (expected C+1 logit channels)");
  }
}

// -mean over (n,h,w) of sum_k alpha_k s_k log p_k
torch::Tensor weighted_class_nll(const torch::Tensor& logits, const torch::Tensor& seg,
                                 const torch::Tensor& alpha) {
  const int64_t c = seg.size(1);
  auto logp = torch::log_softmax(logits, 1).narrow(1, 0, c);
  return -(alpha.view({1, c, 1, 1}) * seg * logp).sum(1).mean();
}

}  // namespace

torch::Tensor loss_d_cond(const torch::Tensor& logits_real, const torch::Tensor& seg,
                          const torch::Tensor& logits_fake, const torch::Tensor& alpha) {
  check_pixel_shapes(logits_real, seg);
  check_pixel_shapes(logits_fake, seg);
  const int64_t fake = seg.size(1);
  auto fake_term = -torch::log_softmax(logits_fake, 1).select(1, fake).mean();
  return weighted_class_nll(logits_real, seg, alpha) + fake_term;
}

torch::Tensor loss_g_cond(const torch::Tensor& logits_fake, const torch::Tensor& seg,
                          const torch::Tensor& alpha) {
  check_pixel_shapes(logits_fake, seg);
  return weighted_class_nll(logits_fake, seg, alpha);
}

torch::Tensor r1_penalty(const torch::Tensor& x_real, const ImageHead& head, double gamma, double scale) {
  auto x = x_real.detach().requires_grad_(true);
  auto logit = head(x);
  auto grads = torch::autograd::grad({logit.sum()}, {x}, /*grad_outputs=*/{}, /*retain_graph=*/true,
                                     /*create_graph=*/true, /*allow_unused=*/true);
  if (grads.empty() || !grads[0].defined()) {
    throw InternalError("R1 penalty: discriminator output does not depend on its input");
  }
  return 0.5 * gamma * scale * grads[0].pow(2).flatten(1).sum(1).mean();
}

torch::Tensor labelmix_mask(const torch::Tensor& seg, at::Generator gen) {
  const int64_t n = seg.size(0);
  const int64_t c = seg.size(1);
  auto coins = torch::bernoulli(torch::full({n, c}, 0.5, seg.options().dtype(torch::kFloat64)), gen)
                   .to(seg.scalar_type());
  auto cls = seg.argmax(1).flatten(1);  // (N, H*W)
  return coins.gather(1, cls).view({n, 1, seg.size(2), seg.size(3)});
}

torch::Tensor labelmix_consistency(const torch::Tensor& logits_mixed, const torch::Tensor& logits_real,
                                   const torch::Tensor& logits_fake, const torch::Tensor& mask) {
  auto target = mask * logits_real + (1.0 - mask) * logits_fake;
  return (logits_mixed - target).pow(2).mean();
}

torch::Tensor labelmix_loss(const torch::Tensor& x_real, const torch::Tensor& x_fake,
                            const torch::Tensor& mask, const ImageHead& pixel_logits) {
  auto mixed = mask * x_real + (1.0 - mask) * x_fake;
  return labelmix_consistency(pixel_logits(mixed), pixel_logits(x_real), pixel_logits(x_fake), mask);
}

}  // namespace ocogan
