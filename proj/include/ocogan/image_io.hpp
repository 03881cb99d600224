#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

namespace ocogan {

// 8-bit interleaved image, row-major.
struct Image8 {
  int64_t width = 0;
  int64_t height = 0;
  int64_t channels = 0;  // 1 (gray) or 3 (RGB)
  std::vector<uint8_t> pixels;

  uint8_t& at(int64_t y, int64_t x, int64_t c) { return pixels[(y * width + x) * channels + c]; }
  uint8_t at(int64_t y, int64_t x, int64_t c) const {
    return pixels[(y * width + x) * channels + c];
  }
};

// Reads an 8-bit PNG as RGB (channels == 3) or single-channel (channels == 1).
// A single-channel read rejects color and palette files instead of converting them.
Image8 read_png(const std::string& path, int64_t channels);
void write_png(const std::string& path, const Image8& image);

// (3,H,W) in [-1,1] <-> 8-bit RGB. Conversion is round((x + 1) * 127.5).
Image8 tensor_to_rgb8(const torch::Tensor& image);
torch::Tensor rgb8_to_tensor(const Image8& image);

// (H,W) integer labels <-> 8-bit single channel.
Image8 labels_to_gray8(const torch::Tensor& labels);
torch::Tensor gray8_to_labels(const Image8& image);

// Lays out a batch (N,3,H,W) row-major with 2-pixel separators.
Image8 make_grid(const torch::Tensor& images, int64_t columns = 0, uint8_t separator = 255);

}  // namespace ocogan
