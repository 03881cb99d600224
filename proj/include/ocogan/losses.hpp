#pragma once

#include <torch/torch.h>

#include <functional>

namespace ocogan {

// Unconditional discriminator BCE: mean(softplus(-real) + softplus(fake)).
torch::Tensor loss_d_uncond(const torch::Tensor& logit_real, const torch::Tensor& logit_fake);

// Non-saturating generator loss: mean(softplus(-fake)).
torch::Tensor loss_g_uncond(const torch::Tensor& logit_fake);

// Inverse class frequency over a one-hot batch (N,C,H,W), normalized so a batch with uniform
// frequencies over the present classes gets all-ones. Absent classes get exactly 0.
torch::Tensor class_weights(const torch::Tensor& seg);

// (C+1)-class pixel loss for the discriminator. Real pixels are pushed to their class with
// weight alpha_k, fake pixels to the last ("fake") channel. Both terms are means over N*H*W.
torch::Tensor loss_d_cond(const torch::Tensor& logits_real, const torch::Tensor& seg,
                          const torch::Tensor& logits_fake, const torch::Tensor& alpha);

// Generator side: fake pixels pushed to the class of the conditioning map.
torch::Tensor loss_g_cond(const torch::Tensor& logits_fake, const torch::Tensor& seg,
                          const torch::Tensor& alpha);

using ImageHead = std::function<torch::Tensor(const torch::Tensor&)>;

// (gamma / 2) * mean_n ||d head(x)_n / dx_n||^2 * scale. The graph is kept so the penalty
// can be backpropagated into the head's parameters. `scale` is the lazy-regularization
// interval when the penalty is applied every k steps.
torch::Tensor r1_penalty(const torch::Tensor& x_real, const ImageHead& head, double gamma,
                         double scale = 1.0);

// (N,1,H,W) float mask; every class of every sample is assigned wholly to real (1) or fake (0)
// by a fair coin.
torch::Tensor labelmix_mask(const torch::Tensor& seg, at::Generator gen);

// Mean squared difference between logits(mix) and the same mix of logits(real), logits(fake).
torch::Tensor labelmix_consistency(const torch::Tensor& logits_mixed, const torch::Tensor& logits_real,
                                   const torch::Tensor& logits_fake, const torch::Tensor& mask);

torch::Tensor labelmix_loss(const torch::Tensor& x_real, const torch::Tensor& x_fake,
                            const torch::Tensor& mask, const ImageHead& pixel_logits);

}  // namespace ocogan
