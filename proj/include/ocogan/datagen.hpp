#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ocogan/config.hpp"

namespace ocogan {

// One training example: image (3,H,W) float32 in [-1,1] and labels (H,W) int64 in [0,C).
struct LabeledSample {
  torch::Tensor image;
  torch::Tensor labels;
};

struct DatasetSplit {
  std::vector<LabeledSample> labeled;
  std::vector<torch::Tensor> unlabeled;
  // Indices into the sample list the split was made from.
  std::vector<int64_t> labeled_indices;
  std::vector<int64_t> unlabeled_indices;
  Regime regime = Regime::kLimited;
  uint64_t seed = 0;
};

struct Dataset {
  int64_t resolution = 0;
  int64_t num_classes = 0;
  std::vector<std::string> class_names;
  std::vector<LabeledSample> train;
  std::vector<LabeledSample> val;
};

using Rgb = std::array<float, 3>;

// Class colors of the shapes family; index 0 is background.
std::vector<Rgb> shapes_palette(int64_t num_classes);
std::vector<std::string> shapes_class_names(int64_t num_classes);

// Pure function of (seed, cfg). Pixel values are quantized to the 8-bit grid so a sample
// survives a PNG round trip unchanged.
LabeledSample generate_shapes_sample(uint64_t seed, const ShapesConfig& cfg);

// cfg.train_count + cfg.val_count samples with disjoint seed streams.
Dataset generate_shapes_dataset(const ShapesConfig& cfg);

// (H,W) -> (C,H,W) or (N,H,W) -> (N,C,H,W), float32 one-hot.
torch::Tensor one_hot_encode(const torch::Tensor& labels, int64_t num_classes);

DatasetSplit make_split(const std::vector<LabeledSample>& samples, Regime regime,
                        int64_t labeled_count, uint64_t seed);

// Flips image and labels together with probability p.
LabeledSample horizontal_flip(const LabeledSample& sample, double p, std::mt19937_64& rng);

// (H,W) labels -> (3,H,W) palette colors in [-1,1].
torch::Tensor colorize_labels(const torch::Tensor& labels, int64_t num_classes);

torch::Tensor stack_images(const std::vector<LabeledSample>& samples);
torch::Tensor stack_labels(const std::vector<LabeledSample>& samples);

// Directory layout: DIR/dataset.json, DIR/{train,val}/NNNN_img.png + NNNN_lab.png.
void write_dataset(const std::string& dir, const Dataset& dataset, const ShapesConfig& cfg);

// Reads the paired-PNG layout. Images are resized to `resolution` (area/bilinear) and labels
// with nearest neighbour. num_classes <= 0 takes C from dataset.json.
Dataset load_dataset(const std::string& dir, int64_t resolution, int64_t num_classes);

}  // namespace ocogan
