#include "ocogan/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "ocogan/errors.hpp"
#include "ocogan/image_io.hpp"

namespace fs = std::filesystem;

namespace ocogan {

namespace {

constexpr std::array<Rgb, 8> kPalette{{
    {-0.6f, -0.6f, -0.6f},
    {0.8f, -0.7f, -0.7f},
    {-0.7f, 0.8f, -0.7f},
    {-0.7f, -0.7f, 0.8f},
    {0.8f, 0.8f, -0.7f},
    {0.8f, -0.7f, 0.8f},
    {-0.7f, 0.8f, 0.8f},
    {0.8f, 0.8f, 0.8f},
}};

enum class ShapeKind { kRectangle, kDisk, kTriangle };

ShapeKind kind_of_class(int64_t cls) { return static_cast<ShapeKind>((cls - 1) % 3); }

uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

uint64_t stream_seed(uint64_t base, uint64_t stream, uint64_t index) {
  return splitmix64(splitmix64(base ^ (stream << 56)) + index);
}

double edge(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

std::string stem(int64_t index) {
  std::ostringstream s;
  s.width(4);
  s.fill('0');
  s << index;
  return s.str();
}

LabeledSample resize_sample(LabeledSample s, int64_t resolution) {
  namespace F = torch::nn::functional;
  const int64_t h = s.image.size(1);
  const int64_t w = s.image.size(2);
  if (h == resolution && w == resolution) return s;
  const std::vector<int64_t> size{resolution, resolution};
  auto img = s.image.unsqueeze(0);
  if (h >= resolution && w >= resolution) {
    img = F::interpolate(img, F::InterpolateFuncOptions().size(size).mode(torch::kArea));
  } else {
    img = F::interpolate(
        img, F::InterpolateFuncOptions().size(size).mode(torch::kBilinear).align_corners(false));
  }
  auto lab = F::interpolate(s.labels.to(torch::kFloat32).unsqueeze(0).unsqueeze(0),
                            F::InterpolateFuncOptions().size(size).mode(torch::kNearest));
  return {img.squeeze(0).clamp(-1.0, 1.0).contiguous(),
          lab.squeeze(0).squeeze(0).round().to(torch::kInt64).contiguous()};
}

void check_label_range(const torch::Tensor& labels, int64_t num_classes, const std::string& where) {
  auto bad = (labels >= num_classes).logical_or(labels < 0).nonzero();
  if (bad.size(0) > 0) {
    const int64_t y = bad[0][labels.dim() - 2].item<int64_t>();
    const int64_t x = bad[0][labels.dim() - 1].item<int64_t>();
    std::ostringstream msg;
    msg << where << "label " << labels.index({torch::indexing::Ellipsis, y, x}).flatten()[0].item<int64_t>()
        << " at pixel (row " << y << ", col " << x << ") is outside [0, " << num_classes << ")";
    throw DataError(msg.str());
  }
}

std::vector<LabeledSample> load_split_dir(const fs::path& dir, const std::vector<int64_t>& ids,
                                          int64_t resolution, int64_t num_classes) {
  std::vector<LabeledSample> out;
  out.reserve(ids.size());
  for (int64_t id : ids) {
    const auto img_path = dir / (stem(id) + "_img.png");
    const auto lab_path = dir / (stem(id) + "_lab.png");
    const Image8 img = read_png(img_path.string(), 3);
    const Image8 lab = read_png(lab_path.string(), 1);
    if (img.width != lab.width || img.height != lab.height) {
      throw DataError("image and label sizes differ for '" + img_path.string() + "'");
    }
    LabeledSample s{rgb8_to_tensor(img), gray8_to_labels(lab)};
    check_label_range(s.labels, num_classes, lab_path.string() + ": ");
    out.push_back(resize_sample(std::move(s), resolution));
  }
  return out;
}

std::vector<int64_t> scan_ids(const fs::path& dir) {
  std::vector<int64_t> ids;
  if (!fs::is_directory(dir)) return ids;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() > 8 && name.ends_with("_img.png")) {
      try {
        ids.push_back(std::stoll(name.substr(0, name.size() - 8)));
      } catch (const std::exception&) {
        throw DataError("unexpected file name '" + name + "' in " + dir.string());
      }
    }
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace

std::vector<Rgb> shapes_palette(int64_t num_classes) {
  if (num_classes < 1 || num_classes > static_cast<int64_t>(kPalette.size())) {
    throw ConfigError("shapes palette supports 1.." + std::to_string(kPalette.size()) + " classes");
  }
  return {kPalette.begin(), kPalette.begin() + num_classes};
}

std::vector<std::string> shapes_class_names(int64_t num_classes) {
  std::vector<std::string> names{"background"};
  constexpr std::array<const char*, 3> kKinds{"rectangle", "disk", "triangle"};
  for (int64_t k = 1; k < num_classes; ++k) {
    std::string name = kKinds[(k - 1) % 3];
    if (k > 3) name += "_" + std::to_string((k - 1) / 3 + 1);
    names.push_back(std::move(name));
  }
  return names;
}

LabeledSample generate_shapes_sample(uint64_t seed, const ShapesConfig& cfg) {
  cfg.validate();
  const int64_t res = cfg.resolution;
  const auto palette = shapes_palette(cfg.num_classes);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  std::vector<int64_t> labels(res * res, 0);
  // Per-pixel color before noise; each painted region gets one jittered class color.
  std::vector<Rgb> color(res * res);
  auto jittered = [&](int64_t cls) {
    Rgb c = palette[cls];
    for (auto& v : c) v += static_cast<float>(uniform(-cfg.color_jitter, cfg.color_jitter));
    return c;
  };
  std::fill(color.begin(), color.end(), jittered(0));

  const int64_t count =
      cfg.min_shapes + static_cast<int64_t>(unit(rng) * static_cast<double>(cfg.max_shapes - cfg.min_shapes + 1));
  for (int64_t s = 0; s < std::min(count, cfg.max_shapes); ++s) {
    const int64_t cls = 1 + static_cast<int64_t>(unit(rng) * static_cast<double>(cfg.num_classes - 1));
    const double cx = uniform(0.15, 0.85) * res;
    const double cy = uniform(0.15, 0.85) * res;
    const double a = uniform(0.12, 0.3) * res;
    const double b = uniform(0.12, 0.3) * res;
    const double theta = uniform(0.0, 2.0 * std::numbers::pi);
    const Rgb c = jittered(cls);
    const ShapeKind kind = kind_of_class(cls);
    std::array<double, 6> tri{};
    for (int v = 0; v < 3; ++v) {
      const double ang = theta + v * 2.0 * std::numbers::pi / 3.0;
      tri[2 * v] = cx + a * std::cos(ang);
      tri[2 * v + 1] = cy + a * std::sin(ang);
    }
    for (int64_t y = 0; y < res; ++y) {
      for (int64_t x = 0; x < res; ++x) {
        const double px = x + 0.5;
        const double py = y + 0.5;
        bool inside = false;
        switch (kind) {
          case ShapeKind::kRectangle:
            inside = std::abs(px - cx) <= a && std::abs(py - cy) <= b;
            break;
          case ShapeKind::kDisk:
            inside = (px - cx) * (px - cx) + (py - cy) * (py - cy) <= a * a;
            break;
          case ShapeKind::kTriangle: {
            const double e0 = edge(tri[0], tri[1], tri[2], tri[3], px, py);
            const double e1 = edge(tri[2], tri[3], tri[4], tri[5], px, py);
            const double e2 = edge(tri[4], tri[5], tri[0], tri[1], px, py);
            inside = (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
            break;
          }
        }
        if (inside) {
          labels[y * res + x] = cls;
          color[y * res + x] = c;
        }
      }
    }
  }

  Image8 img;
  img.width = res;
  img.height = res;
  img.channels = 3;
  img.pixels.resize(res * res * 3);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int64_t i = 0; i < res * res; ++i) {
    for (int ch = 0; ch < 3; ++ch) {
      const double v = std::clamp(color[i][ch] + cfg.noise_std * noise(rng), -1.0, 1.0);
      img.pixels[i * 3 + ch] = static_cast<uint8_t>(std::lround((v + 1.0) * 127.5));
    }
  }
  return {rgb8_to_tensor(img),
          torch::from_blob(labels.data(), {res, res}, torch::kInt64).clone()};
}

Dataset generate_shapes_dataset(const ShapesConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.resolution = cfg.resolution;
  ds.num_classes = cfg.num_classes;
  ds.class_names = shapes_class_names(cfg.num_classes);
  ds.train.reserve(cfg.train_count);
  for (int64_t i = 0; i < cfg.train_count; ++i) {
    ds.train.push_back(generate_shapes_sample(stream_seed(cfg.seed, 0, i), cfg));
  }
  for (int64_t i = 0; i < cfg.val_count; ++i) {
    ds.val.push_back(generate_shapes_sample(stream_seed(cfg.seed, 1, i), cfg));
  }
  return ds;
}

torch::Tensor one_hot_encode(const torch::Tensor& labels, int64_t num_classes) {
  if (labels.dim() != 2 && labels.dim() != 3) {
    throw DataError("one_hot_encode expects (H,W) or (N,H,W) labels");
  }
  if (num_classes < 1) throw ConfigError("one_hot_encode needs at least one class");
  auto lab = labels.to(torch::kInt64);
  if (lab.numel() > 0) check_label_range(lab, num_classes, "");
  auto onehot = torch::one_hot(lab, num_classes).to(torch::kFloat32);
  // (...,H,W,C) -> (...,C,H,W)
  return lab.dim() == 2 ? onehot.permute({2, 0, 1}).contiguous()
                        : onehot.permute({0, 3, 1, 2}).contiguous();
}

DatasetSplit make_split(const std::vector<LabeledSample>& samples, Regime regime,
                        int64_t labeled_count, uint64_t seed) {
  const auto n = static_cast<int64_t>(samples.size());
  DatasetSplit split;
  split.regime = regime;
  split.seed = seed;
  std::vector<int64_t> all(n);
  for (int64_t i = 0; i < n; ++i) all[i] = i;

  switch (regime) {
    case Regime::kFull:
      split.labeled_indices = all;
      break;
    case Regime::kLimited:
      split.labeled_indices = all;
      split.unlabeled_indices = all;
      break;
    case Regime::kPartial: {
      if (labeled_count < 0 || labeled_count > n) {
        throw ConfigError("labeled_count " + std::to_string(labeled_count) +
                          " exceeds the dataset size " + std::to_string(n));
      }
      std::mt19937_64 rng(seed);
      // Fisher-Yates on the index list; the first labeled_count become labeled.
      for (int64_t i = n - 1; i > 0; --i) {
        const auto j = static_cast<int64_t>(rng() % static_cast<uint64_t>(i + 1));
        std::swap(all[i], all[j]);
      }
      split.labeled_indices.assign(all.begin(), all.begin() + labeled_count);
      split.unlabeled_indices.assign(all.begin() + labeled_count, all.end());
      std::sort(split.labeled_indices.begin(), split.labeled_indices.end());
      std::sort(split.unlabeled_indices.begin(), split.unlabeled_indices.end());
      break;
    }
  }
  for (auto i : split.labeled_indices) split.labeled.push_back(samples[i]);
  for (auto i : split.unlabeled_indices) split.unlabeled.push_back(samples[i].image);
  return split;
}

LabeledSample horizontal_flip(const LabeledSample& sample, double p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (unit(rng) < p) {
    return {sample.image.flip({-1}).contiguous(), sample.labels.flip({-1}).contiguous()};
  }
  return sample;
}

torch::Tensor colorize_labels(const torch::Tensor& labels, int64_t num_classes) {
  const auto palette = shapes_palette(num_classes);
  auto table = torch::empty({num_classes, 3}, torch::kFloat32);
  for (int64_t k = 0; k < num_classes; ++k) {
    for (int64_t c = 0; c < 3; ++c) table[k][c] = palette[k][c];
  }
  return table.index_select(0, labels.flatten()).t().reshape({3, labels.size(0), labels.size(1)});
}

torch::Tensor stack_images(const std::vector<LabeledSample>& samples) {
  std::vector<torch::Tensor> v;
  v.reserve(samples.size());
  for (const auto& s : samples) v.push_back(s.image);
  return torch::stack(v);
}

torch::Tensor stack_labels(const std::vector<LabeledSample>& samples) {
  std::vector<torch::Tensor> v;
  v.reserve(samples.size());
  for (const auto& s : samples) v.push_back(s.labels);
  return torch::stack(v);
}

void write_dataset(const std::string& dir, const Dataset& dataset, const ShapesConfig& cfg) {
  const fs::path root(dir);
  std::error_code ec;
  fs::create_directories(root / "train", ec);
  fs::create_directories(root / "val", ec);
  if (ec) throw IoError("cannot create dataset directory '" + dir + "': " + ec.message());

  nlohmann::json manifest;
  manifest["num_classes"] = dataset.num_classes;
  manifest["resolution"] = dataset.resolution;
  manifest["class_names"] = dataset.class_names;
  auto write_split = [&](const std::string& name, const std::vector<LabeledSample>& samples) {
    std::vector<int64_t> ids;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto id = static_cast<int64_t>(i);
      write_png((root / name / (stem(id) + "_img.png")).string(), tensor_to_rgb8(samples[i].image));
      write_png((root / name / (stem(id) + "_lab.png")).string(), labels_to_gray8(samples[i].labels));
      ids.push_back(id);
    }
    manifest["splits"][name] = ids;
  };
  write_split("train", dataset.train);
  write_split("val", dataset.val);
  manifest["generator"] = {
      {"kind", "shapes"},
      {"seed", cfg.seed},
      {"min_shapes", cfg.min_shapes},
      {"max_shapes", cfg.max_shapes},
      {"noise_std", cfg.noise_std},
      {"color_jitter", cfg.color_jitter},
  };
  std::ofstream out(root / "dataset.json");
  out << manifest.dump(2) << "\n";
  if (!out) throw IoError("cannot write '" + (root / "dataset.json").string() + "'");
}

Dataset load_dataset(const std::string& dir, int64_t resolution, int64_t num_classes) {
  const fs::path root(dir);
  if (!fs::is_directory(root)) throw IoError("dataset directory '" + dir + "' does not exist");
  nlohmann::json manifest;
  const auto manifest_path = root / "dataset.json";
  if (fs::exists(manifest_path)) {
    std::ifstream in(manifest_path);
    try {
      manifest = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("malformed dataset.json: " + std::string(e.what()));
    }
  }
  Dataset ds;
  ds.num_classes = num_classes > 0 ? num_classes : manifest.value("num_classes", int64_t{0});
  if (ds.num_classes < 2) throw ConfigError("dataset needs num_classes >= 2");
  if (resolution <= 0) resolution = manifest.value("resolution", int64_t{0});
  if (resolution <= 0) throw ConfigError("dataset resolution is unknown");
  ds.resolution = resolution;
  ds.class_names = manifest.contains("class_names")
                       ? manifest["class_names"].get<std::vector<std::string>>()
                       : shapes_class_names(std::min<int64_t>(ds.num_classes, 8));

  auto ids_for = [&](const std::string& name) {
    if (manifest.contains("splits") && manifest["splits"].contains(name)) {
      return manifest["splits"][name].get<std::vector<int64_t>>();
    }
    return scan_ids(root / name);
  };
  ds.train = load_split_dir(root / "train", ids_for("train"), resolution, ds.num_classes);
  ds.val = load_split_dir(root / "val", ids_for("val"), resolution, ds.num_classes);
  return ds;
}

}  // namespace ocogan
