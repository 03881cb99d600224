#include "ocogan/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "ocogan/errors.hpp"

namespace ocogan {

namespace F = torch::nn::functional;

namespace {

constexpr int64_t kChunk = 64;

Eigen::MatrixXd to_eigen(const torch::Tensor& t) {
  auto d = t.detach().to(torch::kFloat64).contiguous();
  Eigen::MatrixXd m(d.size(0), d.size(1));
  // torch is row-major, Eigen column-major by default
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> view(
      d.data_ptr<double>(), d.size(0), d.size(1));
  m = view;
  return m;
}

// Clips eigenvalues in [-tol, 0) to zero; anything more negative is an error.
Eigen::VectorXd checked_eigenvalues(const Eigen::VectorXd& ev, const char* what) {
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  const double tol = 1e-8 * scale;
  Eigen::VectorXd out = ev;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (!std::isfinite(ev[i]) || ev[i] < -tol) {
      std::ostringstream msg;
      msg << "Frechet distance: " << what << " has eigenvalue " << ev[i] << " (largest magnitude "
          << scale << "); matrix is not positive semidefinite";
      throw NumericalError(msg.str());
    }
    out[i] = std::max(ev[i], 0.0);
  }
  return out;
}

}  // namespace

RandomConvExtractor::RandomConvExtractor(uint64_t seed, int64_t width) : width_(width) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  const std::vector<std::pair<int64_t, int64_t>> shapes{{3, width}, {width, width}, {width, width}};
  for (const auto& [in, out] : shapes) {
    weights_.push_back(torch::randn({out, in, 3, 3}, gen, torch::kFloat32) / std::sqrt(double(in * 9)));
    biases_.push_back(torch::randn({out}, gen, torch::kFloat32) * 0.1);
  }
}

Eigen::MatrixXd RandomConvExtractor::extract(const torch::Tensor& images) {
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> feats;
  for (int64_t start = 0; start < images.size(0); start += kChunk) {
    auto h = images.narrow(0, start, std::min(kChunk, images.size(0) - start)).to(torch::kFloat32);
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      h = F::conv2d(h, weights_[i], F::Conv2dFuncOptions().bias(biases_[i]).padding(1));
      h = F::leaky_relu(h, F::LeakyReLUFuncOptions().negative_slope(0.2));
      if (i + 1 < weights_.size()) h = F::avg_pool2d(h, F::AvgPool2dFuncOptions(2));
    }
    feats.push_back(torch::cat({h.mean({2, 3}), h.std({2, 3}, /*unbiased=*/false)}, 1));
  }
  return to_eigen(torch::cat(feats, 0));
}

Eigen::MatrixXd PixelExtractor::extract(const torch::Tensor& images) {
  return to_eigen(images.flatten(1));
}

std::unique_ptr<FeatureExtractor> make_extractor(const EvalConfig& cfg, int64_t resolution) {
  switch (cfg.extractor) {
    case ExtractorKind::kRandomConv:
      return std::make_unique<RandomConvExtractor>(cfg.extractor_seed);
    case ExtractorKind::kPixels:
      return std::make_unique<PixelExtractor>(resolution);
  }
  throw ConfigError("unknown feature extractor");
}

GaussianFit gaussian_fit(const Eigen::MatrixXd& features) {
  const Eigen::Index n = features.rows();
  if (n < 2) throw DataError("gaussian_fit needs at least 2 samples, got " + std::to_string(n));
  GaussianFit fit;
  fit.n = n;
  fit.mu = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - fit.mu.transpose();
  fit.sigma = (centered.transpose() * centered) / static_cast<double>(n - 1);
  return fit;
}

double frechet_distance(const GaussianFit& a, const GaussianFit& b) {
  if (a.mu.size() != b.mu.size()) {
    throw DataError("Frechet distance: feature dims differ (" + std::to_string(a.mu.size()) + " vs " +
                    std::to_string(b.mu.size()) + ")");
  }
  const Eigen::MatrixXd s1 = 0.5 * (a.sigma + a.sigma.transpose());
  const Eigen::MatrixXd s2 = 0.5 * (b.sigma + b.sigma.transpose());

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig1(s1);
  const Eigen::VectorXd l1 = checked_eigenvalues(eig1.eigenvalues(), "first covariance");
  const Eigen::MatrixXd root1 =
      eig1.eigenvectors() * l1.cwiseSqrt().asDiagonal() * eig1.eigenvectors().transpose();

  Eigen::MatrixXd inner = root1 * s2 * root1;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig2(inner, Eigen::EigenvaluesOnly);
  const Eigen::VectorXd l2 = checked_eigenvalues(eig2.eigenvalues(), "product covariance");

  const double mean_term = (a.mu - b.mu).squaredNorm();
  const double d = mean_term + s1.trace() + s2.trace() - 2.0 * l2.cwiseSqrt().sum();
  if (!std::isfinite(d)) {
    std::ostringstream msg;
    msg << "Frechet distance is not finite (mean term " << mean_term << ", traces " << s1.trace()
        << ", " << s2.trace() << ", min eigenvalues " << eig1.eigenvalues().minCoeff() << ", "
        << eig2.eigenvalues().minCoeff() << ")";
    throw NumericalError(msg.str());
  }
  return d;
}

double compute_fid(const torch::Tensor& real_images, const torch::Tensor& fake_images,
                   FeatureExtractor& extractor) {
  if (real_images.size(0) == 0 || fake_images.size(0) == 0) {
    throw DataError("compute_fid needs non-empty image sets");
  }
  if (real_images.sizes().slice(1) != fake_images.sizes().slice(1)) {
    throw DataError("compute_fid: real and fake images differ in shape");
  }
  return frechet_distance(gaussian_fit(extractor.extract(real_images)),
                          gaussian_fit(extractor.extract(fake_images)));
}

torch::Tensor oracle_segment(const torch::Tensor& images, const std::vector<Rgb>& palette) {
  const bool single = images.dim() == 3;
  auto x = (single ? images.unsqueeze(0) : images).detach().to(torch::kFloat32);
  const auto k = static_cast<int64_t>(palette.size());
  auto colors = torch::empty({k, 3}, torch::kFloat32);
  for (int64_t i = 0; i < k; ++i) {
    for (int64_t c = 0; c < 3; ++c) colors[i][c] = palette[i][c];
  }
  // (N,1,3,H,W) - (1,K,3,1,1) -> squared distance (N,K,H,W)
  auto dist = (x.unsqueeze(1) - colors.view({1, k, 3, 1, 1})).pow(2).sum(2);
  auto labels = dist.argmin(1);
  return single ? labels.squeeze(0) : labels;
}

MiouResult miou_detail(const torch::Tensor& pred, const torch::Tensor& gt, int64_t num_classes) {
  if (pred.sizes() != gt.sizes()) throw DataError("miou: prediction and ground truth shapes differ");
  MiouResult res;
  res.per_class.resize(num_classes);
  double total = 0.0;
  int64_t counted = 0;
  for (int64_t c = 0; c < num_classes; ++c) {
    auto p = pred == c;
    auto g = gt == c;
    const auto inter = p.logical_and(g).sum().item<int64_t>();
    const auto uni = p.logical_or(g).sum().item<int64_t>();
    if (uni == 0) continue;
    const double iou = static_cast<double>(inter) / static_cast<double>(uni);
    res.per_class[c] = iou;
    total += iou;
    ++counted;
  }
  res.miou = counted ? total / static_cast<double>(counted) : 0.0;
  return res;
}

double miou(const torch::Tensor& pred, const torch::Tensor& gt, int64_t num_classes) {
  return miou_detail(pred, gt, num_classes).miou;
}

Stat mean_std(const std::vector<double>& values) {
  Stat s;
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double acc = 0.0;
    for (double v : values) acc += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(acc / static_cast<double>(values.size() - 1));
  }
  return s;
}

std::string MetricsReport::to_text() const {
  std::ostringstream out;
  out << std::setprecision(6) << std::fixed;
  out << "sets = " << sets << "\n";
  out << "samples_per_set = " << samples_per_set << "\n";
  out << "extractor = " << extractor << "\n";
  auto line = [&](const char* key, const Stat& s, const std::vector<double>& per_set) {
    if (per_set.empty()) return;
    out << key << " = " << s.mean << " +- " << s.std << "\n";
  };
  line("fid", fid, fid_sets);
  line("cfid", cfid, cfid_sets);
  line("miou", miou, miou_sets);
  if (!miou_sets.empty()) {
    out << "\nclass                 iou\n";
    for (std::size_t c = 0; c < per_class_iou.size(); ++c) {
      const std::string name = c < class_names.size() ? class_names[c] : std::to_string(c);
      out << std::left << std::setw(20) << name << "  ";
      if (per_class_iou[c]) {
        out << *per_class_iou[c];
      } else {
        out << "n/a";
      }
      out << "\n";
    }
  }
  return out.str();
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["sets"] = sets;
  j["samples_per_set"] = samples_per_set;
  j["extractor"] = extractor;
  auto put = [&](const char* key, const Stat& s, const std::vector<double>& per_set) {
    if (per_set.empty()) {
      j[key] = nullptr;
      return;
    }
    j[key] = {{"mean", s.mean}, {"std", s.std}, {"per_set", per_set}};
  };
  put("fid", fid, fid_sets);
  put("cfid", cfid, cfid_sets);
  put("miou", miou, miou_sets);
  nlohmann::json per_class = nlohmann::json::object();
  for (std::size_t c = 0; c < per_class_iou.size(); ++c) {
    const std::string name = c < class_names.size() ? class_names[c] : std::to_string(c);
    per_class[name] = per_class_iou[c] ? nlohmann::json(*per_class_iou[c]) : nlohmann::json(nullptr);
  }
  j["per_class_iou"] = per_class;
  return j.dump(2);
}

MetricsReport evaluate_generator(HybridGenerator& generator, const Dataset& data,
                                 FeatureExtractor& extractor, const EvalOptions& options) {
  if (options.sets < 1) throw ConfigError("evaluation needs at least one sample set");
  if (data.val.empty()) throw DataError("evaluation needs a non-empty validation set");
  const int64_t n = options.samples_per_set.value_or(static_cast<int64_t>(data.val.size()));
  if (n < 2) throw ConfigError("evaluation needs at least 2 samples per set");

  torch::NoGradGuard no_grad;
  const bool was_training = generator->is_training();
  generator->eval();
  const auto& cfg = generator->config();
  const auto param = generator->parameters().front();

  MetricsReport report;
  report.sets = options.sets;
  report.samples_per_set = n;
  report.extractor = extractor.name();
  report.class_names = data.class_names;

  const auto real = stack_images(data.val);
  const auto real_fit = gaussian_fit(extractor.extract(real));
  const auto val_labels = stack_labels(data.val);
  const auto palette = shapes_palette(std::min<int64_t>(cfg.num_classes, 8));

  std::vector<double> class_sum(cfg.num_classes, 0.0);
  std::vector<int64_t> class_count(cfg.num_classes, 0);

  for (int64_t s = 0; s < options.sets; ++s) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(options.seed + static_cast<uint64_t>(s));
    if (options.unconditional) {
      std::vector<torch::Tensor> fakes;
      for (int64_t start = 0; start < n; start += kChunk) {
        const int64_t b = std::min(kChunk, n - start);
        auto z = sample_latent(b, cfg.latent_dim, gen).to(param.options());
        fakes.push_back(generator->generate_uncond(z, GumbelMode::kEval).to(torch::kFloat32));
      }
      report.fid_sets.push_back(
          frechet_distance(real_fit, gaussian_fit(extractor.extract(torch::cat(fakes, 0)))));
    }
    if (options.conditional) {
      std::vector<torch::Tensor> fakes;
      std::vector<torch::Tensor> labels;
      const auto val_n = static_cast<int64_t>(data.val.size());
      for (int64_t start = 0; start < n; start += kChunk) {
        const int64_t b = std::min(kChunk, n - start);
        auto idx = torch::arange(start, start + b, torch::kInt64).remainder(val_n);
        auto lab = val_labels.index_select(0, idx);
        auto seg = one_hot_encode(lab, cfg.num_classes).to(param.options());
        auto z = sample_latent(b, cfg.noise_dim, gen).to(param.options());
        fakes.push_back(generator->generate_cond(z, seg, GumbelMode::kEval).to(torch::kFloat32));
        labels.push_back(lab);
      }
      auto fake = torch::cat(fakes, 0);
      report.cfid_sets.push_back(frechet_distance(real_fit, gaussian_fit(extractor.extract(fake))));
      const auto detail = miou_detail(oracle_segment(fake, palette), torch::cat(labels, 0), cfg.num_classes);
      report.miou_sets.push_back(detail.miou);
      for (int64_t c = 0; c < cfg.num_classes; ++c) {
        if (detail.per_class[c]) {
          class_sum[c] += *detail.per_class[c];
          ++class_count[c];
        }
      }
    }
  }
  report.fid = mean_std(report.fid_sets);
  report.cfid = mean_std(report.cfid_sets);
  report.miou = mean_std(report.miou_sets);
  report.per_class_iou.resize(cfg.num_classes);
  for (int64_t c = 0; c < cfg.num_classes; ++c) {
    if (class_count[c] > 0) report.per_class_iou[c] = class_sum[c] / static_cast<double>(class_count[c]);
  }
  if (was_training) generator->train();
  return report;
}

}  // namespace ocogan
