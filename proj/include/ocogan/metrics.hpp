#pragma once

#include <torch/torch.h>

#include <Eigen/Dense>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ocogan/config.hpp"
#include "ocogan/datagen.hpp"
#include "ocogan/generator.hpp"

namespace ocogan {

struct GaussianFit {
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;
  int64_t n = 0;
};

// Deterministic map from an image batch (N,3,H,W) to features (N,F).
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual Eigen::MatrixXd extract(const torch::Tensor& images) = 0;
  virtual int64_t dim() const = 0;
  virtual std::string name() const = 0;
};

// Small convolutional network with weights drawn once from a fixed seed and never trained.
// Features are the per-channel spatial mean and standard deviation of its last layer.
// Distances computed with it are comparable only with other runs using the same seed.
class RandomConvExtractor : public FeatureExtractor {
 public:
  explicit RandomConvExtractor(uint64_t seed, int64_t width = 32);
  Eigen::MatrixXd extract(const torch::Tensor& images) override;
  int64_t dim() const override { return 2 * width_; }
  std::string name() const override { return "random_conv"; }

 private:
  int64_t width_;
  std::vector<torch::Tensor> weights_;
  std::vector<torch::Tensor> biases_;
};

// Raw pixels, flattened.
class PixelExtractor : public FeatureExtractor {
 public:
  explicit PixelExtractor(int64_t resolution) : dim_(3 * resolution * resolution) {}
  Eigen::MatrixXd extract(const torch::Tensor& images) override;
  int64_t dim() const override { return dim_; }
  std::string name() const override { return "pixels"; }

 private:
  int64_t dim_;
};

std::unique_ptr<FeatureExtractor> make_extractor(const EvalConfig& cfg, int64_t resolution);

// Sample mean and unbiased covariance of the rows of `features`.
GaussianFit gaussian_fit(const Eigen::MatrixXd& features);

// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1^{1/2} S2 S1^{1/2})^{1/2}).
double frechet_distance(const GaussianFit& a, const GaussianFit& b);

double compute_fid(const torch::Tensor& real_images, const torch::Tensor& fake_images,
                   FeatureExtractor& extractor);

// Nearest palette color per pixel. (N,3,H,W) -> (N,H,W) or (3,H,W) -> (H,W).
torch::Tensor oracle_segment(const torch::Tensor& images, const std::vector<Rgb>& palette);

struct MiouResult {
  double miou = 0.0;
  std::vector<std::optional<double>> per_class;  // nullopt when the class never occurs
};

// IoU accumulated over the whole set before dividing; classes absent from both pred and gt
// do not enter the mean.
MiouResult miou_detail(const torch::Tensor& pred, const torch::Tensor& gt, int64_t num_classes);
double miou(const torch::Tensor& pred, const torch::Tensor& gt, int64_t num_classes);

struct Stat {
  double mean = 0.0;
  double std = 0.0;
};

Stat mean_std(const std::vector<double>& values);

struct MetricsReport {
  int64_t sets = 0;
  int64_t samples_per_set = 0;
  std::string extractor;
  std::vector<std::string> class_names;
  std::vector<double> fid_sets;
  std::vector<double> cfid_sets;
  std::vector<double> miou_sets;
  Stat fid;
  Stat cfid;
  Stat miou;
  std::vector<std::optional<double>> per_class_iou;  // averaged over sets

  std::string to_text() const;
  std::string to_json() const;
};

struct EvalOptions {
  int64_t sets = 5;
  std::optional<int64_t> samples_per_set;  // unset: one per validation image
  uint64_t seed = 2024;
  bool unconditional = true;
  bool conditional = true;
};

// FID of unconditional samples and CFID of conditional samples (on validation maps) against
// the validation images, plus oracle mIoU of the conditional samples. Generation runs in
// Gumbel eval mode with seeds seed, seed+1, ... per set.
MetricsReport evaluate_generator(HybridGenerator& generator, const Dataset& data,
                                 FeatureExtractor& extractor, const EvalOptions& options);

}  // namespace ocogan
