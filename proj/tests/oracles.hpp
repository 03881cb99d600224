#pragma once

// Independent reference implementations used only by tests. They are deliberately naive:
// scalar loops, textbook formulas, extended precision.

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ocogan/config.hpp"

namespace oracle {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double loss_d_uncond(const std::vector<double>& real, const std::vector<double>& fake) {
  double a = 0.0;
  for (double r : real) a += -std::log(sigmoid(r));
  double b = 0.0;
  for (double f : fake) b += -std::log(1.0 - sigmoid(f));
  return a / real.size() + b / fake.size();
}

inline double loss_g_uncond(const std::vector<double>& fake) {
  double a = 0.0;
  for (double f : fake) a += -std::log(sigmoid(f));
  return a / fake.size();
}

// log softmax of logits[n, :, h, w] at channel k, computed from the definition.
inline double log_softmax_at(const torch::Tensor& logits, int64_t n, int64_t k, int64_t h, int64_t w) {
  auto a = logits.accessor<double, 4>();
  double denom = 0.0;
  for (int64_t c = 0; c < logits.size(1); ++c) denom += std::exp(a[n][c][h][w]);
  return std::log(std::exp(a[n][k][h][w]) / denom);
}

inline std::vector<double> class_weights(const torch::Tensor& seg) {
  auto s = seg.accessor<double, 4>();
  const int64_t n = seg.size(0), c = seg.size(1), hh = seg.size(2), ww = seg.size(3);
  std::vector<double> count(c, 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t k = 0; k < c; ++k)
      for (int64_t y = 0; y < hh; ++y)
        for (int64_t x = 0; x < ww; ++x) count[k] += s[i][k][y][x];
  const double total = static_cast<double>(n * hh * ww);
  int present = 0;
  for (double v : count) present += v > 0 ? 1 : 0;
  std::vector<double> alpha(c, 0.0);
  for (int64_t k = 0; k < c; ++k) {
    if (count[k] > 0) alpha[k] = 1.0 / ((count[k] / total) * present);
  }
  return alpha;
}

// Per-pixel weighted class NLL, mean over all pixels of the batch.
inline double weighted_nll(const torch::Tensor& logits, const torch::Tensor& seg, const std::vector<double>& alpha) {
  auto s = seg.accessor<double, 4>();
  const int64_t n = seg.size(0), c = seg.size(1), hh = seg.size(2), ww = seg.size(3);
  double sum = 0.0;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t y = 0; y < hh; ++y)
      for (int64_t x = 0; x < ww; ++x)
        for (int64_t k = 0; k < c; ++k) {
          if (s[i][k][y][x] != 0.0) sum += -alpha[k] * s[i][k][y][x] * log_softmax_at(logits, i, k, y, x);
        }
  return sum / static_cast<double>(n * hh * ww);
}

inline double loss_d_cond(const torch::Tensor& real_logits, const torch::Tensor& seg,
                          const torch::Tensor& fake_logits, const std::vector<double>& alpha) {
  const int64_t n = seg.size(0), c = seg.size(1), hh = seg.size(2), ww = seg.size(3);
  double fake = 0.0;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t y = 0; y < hh; ++y)
      for (int64_t x = 0; x < ww; ++x) fake += -log_softmax_at(fake_logits, i, c, y, x);
  return weighted_nll(real_logits, seg, alpha) + fake / static_cast<double>(n * hh * ww);
}

inline double loss_g_cond(const torch::Tensor& fake_logits, const torch::Tensor& seg,
                          const std::vector<double>& alpha) {
  return weighted_nll(fake_logits, seg, alpha);
}

// Random one-hot batch (N, C, H, W) in double precision.
inline torch::Tensor random_seg(int64_t n, int64_t c, int64_t h, int64_t w, std::mt19937_64& rng) {
  auto seg = torch::zeros({n, c, h, w}, torch::kFloat64);
  auto a = seg.accessor<double, 4>();
  std::uniform_int_distribution<int64_t> cls(0, c - 1);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) a[i][cls(rng)][y][x] = 1.0;
  return seg;
}

// Central finite differences on up to `max_entries` entries of every tensor in `inputs`
// (chosen with a fixed stride). Returns the largest per-tensor relative error
// ||g_analytic - g_fd|| / max(||g_fd||, ||g_analytic||, floor) over the sampled entries.
struct FdResult {
  double max_rel_error = 0.0;
  std::string worst;
  int64_t checked = 0;
  int64_t refined = 0;  // entries whose step was shrunk because of a kink
};

inline FdResult finite_difference_check(const std::function<torch::Tensor()>& scalar_fn,
                                        std::vector<std::pair<std::string, torch::Tensor>> inputs,
                                        double h = 1e-4, int64_t max_entries = 16, double floor = 1e-7) {
  for (auto& [name, t] : inputs) {
    if (t.grad().defined()) t.mutable_grad().zero_();
  }
  auto out = scalar_fn();
  std::vector<torch::Tensor> leaves;
  for (auto& [name, t] : inputs) leaves.push_back(t);
  auto grads = torch::autograd::grad({out}, leaves, {}, false, false, /*allow_unused=*/true);

  FdResult result;
  torch::NoGradGuard no_grad;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto& t = inputs[i].second;
    auto flat = t.view({-1});
    const int64_t numel = flat.numel();
    const int64_t count = std::min(numel, max_entries);
    const int64_t stride = std::max<int64_t>(1, numel / count);
    auto analytic = grads[i].defined() ? grads[i].reshape({-1}) : torch::zeros({numel}, t.options());
    double diff_sq = 0.0, fd_sq = 0.0, an_sq = 0.0;
    for (int64_t j = 0; j < count; ++j) {
      const int64_t idx = (j * stride + j / 3) % numel;
      const double orig = flat[idx].item<double>();
      auto central = [&](double step) {
        flat[idx] = orig + step;
        const double plus = scalar_fn().item<double>();
        flat[idx] = orig - step;
        const double minus = scalar_fn().item<double>();
        flat[idx] = orig;
        return (plus - minus) / (2.0 * step);
      };
      // A step that straddles a ReLU-type kink shows up as disagreement between h and h/2;
      // only then is the step shrunk.
      double step = h;
      double fd = central(step);
      for (double half = central(step / 2);
           std::abs(fd - half) > 1e-5 * std::max({std::abs(fd), std::abs(half), floor}) && step > 1e-7;
           half = central(step / 2)) {
        step /= 10;
        fd = central(step);
        ++result.refined;
      }
      const double an = analytic[idx].item<double>();
      diff_sq += (fd - an) * (fd - an);
      fd_sq += fd * fd;
      an_sq += an * an;
      ++result.checked;
    }
    const double rel = std::sqrt(diff_sq) / std::max({std::sqrt(fd_sq), std::sqrt(an_sq), floor});
    if (rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst = inputs[i].first;
    }
  }
  return result;
}

// Cyclic Jacobi eigendecomposition of a symmetric matrix in long double.
struct Eig {
  std::vector<long double> values;
  std::vector<std::vector<long double>> vectors;  // columns
};

inline Eig jacobi_eigen(std::vector<std::vector<long double>> a) {
  const std::size_t n = a.size();
  std::vector<std::vector<long double>> v(n, std::vector<long double>(n, 0.0L));
  for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0L;
  for (int sweep = 0; sweep < 100; ++sweep) {
    long double off = 0.0L;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-36L) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (a[p][q] == 0.0L) continue;
        const long double theta = (a[q][q] - a[p][p]) / (2.0L * a[p][q]);
        const long double t = (theta >= 0 ? 1.0L : -1.0L) / (std::fabs(theta) + std::sqrt(theta * theta + 1.0L));
        const long double c = 1.0L / std::sqrt(t * t + 1.0L);
        const long double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const long double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const long double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const long double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }
  Eig e;
  for (std::size_t i = 0; i < n; ++i) e.values.push_back(a[i][i]);
  e.vectors = v;
  return e;
}

using MatL = std::vector<std::vector<long double>>;

inline MatL matmul(const MatL& a, const MatL& b) {
  const std::size_t n = a.size();
  MatL c(n, std::vector<long double>(n, 0.0L));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t j = 0; j < n; ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline MatL sqrt_psd(const MatL& a) {
  const auto e = jacobi_eigen(a);
  const std::size_t n = a.size();
  MatL r(n, std::vector<long double>(n, 0.0L));
  for (std::size_t k = 0; k < n; ++k) {
    const long double s = std::sqrt(std::max(e.values[k], 0.0L));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) r[i][j] += s * e.vectors[i][k] * e.vectors[j][k];
  }
  return r;
}

// ||mu1 - mu2||^2 + tr(S1) + tr(S2) - 2 tr sqrt(S1^1/2 S2 S1^1/2), all in long double.
inline long double frechet(const std::vector<long double>& mu1, const MatL& s1, const std::vector<long double>& mu2,
                           const MatL& s2) {
  long double d = 0.0L;
  for (std::size_t i = 0; i < mu1.size(); ++i) d += (mu1[i] - mu2[i]) * (mu1[i] - mu2[i]);
  const auto r = sqrt_psd(s1);
  const auto m = matmul(matmul(r, s2), r);
  const auto e = jacobi_eigen(m);
  long double tr = 0.0L;
  for (std::size_t i = 0; i < s1.size(); ++i) tr += s1[i][i] + s2[i][i];
  long double tr_sqrt = 0.0L;
  for (auto v : e.values) tr_sqrt += std::sqrt(std::max(v, 0.0L));
  return d + tr - 2.0L * tr_sqrt;
}

// Micro-configuration for gradient checks: <= 8 channels, 8x8.
inline ocogan::ModelConfig micro_model() {
  ocogan::ModelConfig m;
  m.resolution = 8;
  m.num_classes = 3;
  m.gen_widths = {8, 8};
  m.style_channels = 4;
  m.latent_dim = 4;
  m.noise_dim = 4;
  m.mapping_hidden = 8;
  m.mapping_layers = 2;
  m.cond_hidden = 4;
  m.disc_widths = {4, 8};
  m.aspp_rates = {1, 2};
  m.aspp_channels = 4;
  m.validate();
  return m;
}

}  // namespace oracle
