#include "ocogan/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstring>

#include "ocogan/errors.hpp"

namespace ocogan {

Image8 read_png(const std::string& path, int64_t channels) {
  if (channels != 1 && channels != 3) throw InternalError("read_png: channels must be 1 or 3");
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw IoError("cannot read PNG '" + path + "': " + img.message);
  }
  if (channels == 1 && (img.format & (PNG_FORMAT_FLAG_COLOR | PNG_FORMAT_FLAG_COLORMAP))) {
    png_image_free(&img);
    throw DataError("label PNG '" + path + "' must be 8-bit single-channel");
  }
  img.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image8 out;
  out.width = img.width;
  out.height = img.height;
  out.channels = channels;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw DataError("cannot decode PNG '" + path + "': " + msg);
  }
  return out;
}

void write_png(const std::string& path, const Image8& image) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw IoError("cannot write PNG '" + path + "': " + img.message);
  }
}

Image8 tensor_to_rgb8(const torch::Tensor& image) {
  TORCH_CHECK(image.dim() == 3 && image.size(0) == 3, "expected a (3,H,W) image");
  // (3,H,W) -> (H,W,3) bytes
  auto bytes = ((image.detach().to(torch::kFloat64).clamp(-1.0, 1.0) + 1.0) * 127.5)
                   .round()
                   .to(torch::kUInt8)
                   .permute({1, 2, 0})
                   .contiguous();
  Image8 out;
  out.height = image.size(1);
  out.width = image.size(2);
  out.channels = 3;
  out.pixels.assign(bytes.data_ptr<uint8_t>(), bytes.data_ptr<uint8_t>() + bytes.numel());
  return out;
}

torch::Tensor rgb8_to_tensor(const Image8& image) {
  if (image.channels != 3) throw DataError("expected an RGB image");
  auto t = torch::from_blob(const_cast<uint8_t*>(image.pixels.data()),
                            {image.height, image.width, 3}, torch::kUInt8)
               .permute({2, 0, 1})
               .to(torch::kFloat32);
  return (t / 127.5 - 1.0).contiguous();
}

Image8 labels_to_gray8(const torch::Tensor& labels) {
  TORCH_CHECK(labels.dim() == 2, "expected an (H,W) label map");
  auto bytes = labels.to(torch::kUInt8).contiguous();
  Image8 out;
  out.height = labels.size(0);
  out.width = labels.size(1);
  out.channels = 1;
  out.pixels.assign(bytes.data_ptr<uint8_t>(), bytes.data_ptr<uint8_t>() + bytes.numel());
  return out;
}

torch::Tensor gray8_to_labels(const Image8& image) {
  if (image.channels != 1) throw DataError("expected a single-channel label image");
  return torch::from_blob(const_cast<uint8_t*>(image.pixels.data()), {image.height, image.width},
                          torch::kUInt8)
      .to(torch::kInt64);
}

Image8 make_grid(const torch::Tensor& images, int64_t columns, uint8_t separator) {
  TORCH_CHECK(images.dim() == 4 && images.size(1) == 3, "expected an (N,3,H,W) batch");
  const int64_t n = images.size(0);
  const int64_t h = images.size(2);
  const int64_t w = images.size(3);
  constexpr int64_t kSep = 2;
  if (columns <= 0) columns = static_cast<int64_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  columns = std::max<int64_t>(1, std::min(columns, n));
  const int64_t rows = (n + columns - 1) / columns;
  Image8 grid;
  grid.channels = 3;
  grid.width = columns * w + (columns - 1) * kSep;
  grid.height = rows * h + (rows - 1) * kSep;
  grid.pixels.assign(grid.width * grid.height * 3, separator);
  for (int64_t i = 0; i < n; ++i) {
    const Image8 tile = tensor_to_rgb8(images[i]);
    const int64_t oy = (i / columns) * (h + kSep);
    const int64_t ox = (i % columns) * (w + kSep);
    for (int64_t y = 0; y < h; ++y) {
      std::memcpy(&grid.at(oy + y, ox, 0), &tile.pixels[y * w * 3], w * 3);
    }
  }
  return grid;
}

}  // namespace ocogan
