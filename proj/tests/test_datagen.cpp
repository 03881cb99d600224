#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include <unistd.h>

#include "ocogan/datagen.hpp"
#include "ocogan/errors.hpp"
#include "ocogan/image_io.hpp"

using namespace ocogan;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("ocogan_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<LabeledSample> samples(int64_t n) {
  ShapesConfig c;
  std::vector<LabeledSample> out;
  for (int64_t i = 0; i < n; ++i) out.push_back(generate_shapes_sample(i, c));
  return out;
}

}  // namespace

TEST(ShapesSample, SameSeedSameBytes) {
  ShapesConfig c;
  auto a = generate_shapes_sample(7, c);
  auto b = generate_shapes_sample(7, c);
  EXPECT_TRUE(torch::equal(a.image, b.image));
  EXPECT_TRUE(torch::equal(a.labels, b.labels));
  EXPECT_FALSE(torch::equal(a.labels, generate_shapes_sample(8, c).labels));
}

TEST(ShapesSample, ShapeRangeAndLabelInvariants) {
  for (int64_t res : {32, 64}) {
    ShapesConfig c;
    c.resolution = res;
    for (uint64_t s = 0; s < 20; ++s) {
      auto smp = generate_shapes_sample(s, c);
      EXPECT_EQ(smp.image.sizes(), (std::vector<int64_t>{3, res, res}));
      EXPECT_EQ(smp.labels.sizes(), (std::vector<int64_t>{res, res}));
      EXPECT_EQ(smp.labels.scalar_type(), torch::kLong);
      EXPECT_LE(smp.image.abs().max().item<double>(), 1.0);
      EXPECT_GE(smp.labels.min().item<int64_t>(), 0);
      EXPECT_LT(smp.labels.max().item<int64_t>(), c.num_classes);
    }
  }
}

TEST(ShapesSample, ZeroShapesGiveAllBackground) {
  ShapesConfig c;
  c.min_shapes = 0;
  c.max_shapes = 0;
  for (uint64_t s = 0; s < 5; ++s) {
    auto smp = generate_shapes_sample(s, c);
    EXPECT_TRUE((smp.labels == 0).all().item<bool>());
    EXPECT_EQ(one_hot_encode(smp.labels, c.num_classes)[0].sum().item<double>(), 32.0 * 32.0);
  }
}

TEST(ShapesSample, InvalidConfigIsConfigError) {
  ShapesConfig c;
  c.resolution = 48;
  EXPECT_THROW(generate_shapes_sample(0, c), ConfigError);
  c.resolution = 32;
  c.num_classes = 1;
  EXPECT_THROW(generate_shapes_sample(0, c), ConfigError);
}

TEST(ShapesSample, BackgroundFrequencyRegressionBand) {
  // Frozen from a run over seeds 0..999 at the default config: mean 0.77258.
  ShapesConfig c;
  double total = 0.0;
  for (uint64_t s = 0; s < 1000; ++s) {
    total += (generate_shapes_sample(s, c).labels == 0).to(torch::kFloat64).mean().item<double>();
  }
  const double mean = total / 1000.0;
  EXPECT_GT(mean, 0.7715);
  EXPECT_LT(mean, 0.7735);
}

TEST(ShapesDataset, PureFunctionOfSeedAndConfig) {
  ShapesConfig c;
  c.train_count = 10;
  c.val_count = 4;
  auto a = generate_shapes_dataset(c);
  auto b = generate_shapes_dataset(c);
  ASSERT_EQ(a.train.size(), 10u);
  ASSERT_EQ(a.val.size(), 4u);
  for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_TRUE(torch::equal(a.train[i].image, b.train[i].image));
  for (std::size_t i = 0; i < a.val.size(); ++i) {
    EXPECT_TRUE(torch::equal(a.val[i].labels, b.val[i].labels));
    for (const auto& t : a.train) EXPECT_FALSE(torch::equal(t.image, a.val[i].image));
  }
  c.seed = 1;
  EXPECT_FALSE(torch::equal(a.train[0].image, generate_shapes_dataset(c).train[0].image));
}

TEST(OneHot, TwoByTwo) {
  auto l = torch::tensor({0, 1, 1, 0}, torch::kLong).view({2, 2});
  auto oh = one_hot_encode(l, 2);
  EXPECT_TRUE(torch::equal(oh.sum(0), torch::ones({2, 2})));
  EXPECT_EQ(oh[1][0][1].item<float>(), 1.0f);
  EXPECT_EQ(oh[0][0][1].item<float>(), 0.0f);
}

TEST(OneHot, AllZeroLabels) {
  auto oh = one_hot_encode(torch::zeros({3, 3}, torch::kLong), 3);
  EXPECT_TRUE(torch::equal(oh[0], torch::ones({3, 3})));
  EXPECT_TRUE(torch::equal(oh.narrow(0, 1, 2), torch::zeros({2, 3, 3})));
}

TEST(OneHot, ArgmaxRoundTripAndSimplex) {
  torch::manual_seed(41);
  auto m = torch::randint(0, 5, {8, 8}, torch::kLong);
  auto oh = one_hot_encode(m, 5);
  EXPECT_TRUE(torch::equal(oh.argmax(0), m));
  EXPECT_TRUE(((oh == 0) | (oh == 1)).all().item<bool>());
  auto batch = one_hot_encode(torch::randint(0, 5, {3, 4, 4}, torch::kLong), 5);
  EXPECT_EQ(batch.sizes(), (std::vector<int64_t>{3, 5, 4, 4}));
  EXPECT_TRUE(torch::equal(batch.sum(1), torch::ones({3, 4, 4})));
}

TEST(OneHot, OutOfRangeLabelNamesPixel) {
  auto l = torch::zeros({4, 4}, torch::kLong);
  l[2][3] = 7;
  try {
    one_hot_encode(l, 4);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("row 2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("col 3"), std::string::npos) << msg;
  }
}

TEST(Split, PartialWithZeroLabeled) {
  auto s = make_split(samples(20), Regime::kPartial, 0, 3);
  EXPECT_TRUE(s.labeled.empty());
  EXPECT_EQ(s.unlabeled.size(), 20u);
}

TEST(Split, FullLabelsEverything) {
  auto s = make_split(samples(100), Regime::kFull, 0, 3);
  EXPECT_EQ(s.labeled.size(), 100u);
  EXPECT_TRUE(s.unlabeled.empty());
}

TEST(Split, LimitedLabeledAndUnlabeledIndexSameImages) {
  auto s = make_split(samples(30), Regime::kLimited, 0, 3);
  EXPECT_EQ(s.labeled_indices, s.unlabeled_indices);
  EXPECT_EQ(s.labeled.size(), 30u);
}

TEST(Split, PartialIndicesFrozenFixture) {
  auto s = make_split(samples(100), Regime::kPartial, 10, 42);
  EXPECT_EQ(s.labeled_indices, (std::vector<int64_t>{0, 21, 29, 43, 52, 55, 60, 70, 82, 88}));
  EXPECT_EQ(make_split(samples(100), Regime::kPartial, 10, 42).labeled_indices, s.labeled_indices);
}

TEST(Split, PartialPartitionsTheDataset) {
  auto s = make_split(samples(57), Regime::kPartial, 13, 9);
  EXPECT_EQ(s.labeled.size(), 13u);
  std::set<int64_t> all(s.labeled_indices.begin(), s.labeled_indices.end());
  for (auto i : s.unlabeled_indices) EXPECT_TRUE(all.insert(i).second) << i;
  EXPECT_EQ(all.size(), 57u);
  EXPECT_EQ(*all.rbegin(), 56);
}

TEST(Split, TooManyLabeledIsConfigError) {
  EXPECT_THROW(make_split(samples(5), Regime::kPartial, 6, 0), ConfigError);
}

TEST(Flip, ProbabilityZeroIsIdentity) {
  auto smp = generate_shapes_sample(3, ShapesConfig{});
  std::mt19937_64 rng(0);
  for (int i = 0; i < 10; ++i) {
    auto f = horizontal_flip(smp, 0.0, rng);
    EXPECT_TRUE(torch::equal(f.image, smp.image));
    EXPECT_TRUE(torch::equal(f.labels, smp.labels));
  }
}

TEST(Flip, TwiceIsIdentityAndColumnsMirror) {
  LabeledSample smp{torch::arange(3 * 2 * 4, torch::kFloat32).view({3, 2, 4}) / 24.0,
                    torch::tensor({0, 1, 2, 3, 3, 2, 1, 1}, torch::kLong).view({2, 4})};
  std::mt19937_64 rng(0);
  auto once = horizontal_flip(smp, 1.0, rng);
  for (int64_t j = 0; j < 4; ++j) {
    EXPECT_TRUE(torch::equal(once.image.select(2, j), smp.image.select(2, 3 - j)));
    EXPECT_TRUE(torch::equal(once.labels.select(1, j), smp.labels.select(1, 3 - j)));
  }
  auto twice = horizontal_flip(once, 1.0, rng);
  EXPECT_TRUE(torch::equal(twice.image, smp.image));
  EXPECT_TRUE(torch::equal(twice.labels, smp.labels));
}

TEST(Flip, PreservesPixelLabelPairing) {
  auto smp = generate_shapes_sample(11, ShapesConfig{});
  std::mt19937_64 rng(1);
  auto f = horizontal_flip(smp, 1.0, rng);
  const int64_t w = smp.labels.size(1);
  for (int64_t y = 0; y < smp.labels.size(0); ++y) {
    for (int64_t x = 0; x < w; ++x) {
      EXPECT_EQ(f.labels[y][x].item<int64_t>(), smp.labels[y][w - 1 - x].item<int64_t>());
      EXPECT_TRUE(torch::equal(f.image.select(2, x).select(1, y), smp.image.select(2, w - 1 - x).select(1, y)));
    }
  }
}

TEST(Palette, ColorizeUsesPaletteColors) {
  auto l = torch::tensor({0, 1, 2, 3}, torch::kLong).view({1, 4});
  auto img = colorize_labels(l, 4);
  const auto pal = shapes_palette(4);
  for (int64_t k = 0; k < 4; ++k)
    for (int64_t c = 0; c < 3; ++c) EXPECT_FLOAT_EQ(img[c][0][k].item<float>(), pal[k][c]);
}

TEST(ImageIo, PngRoundTripOfGeneratedSample) {
  auto dir = temp_dir("png");
  auto smp = generate_shapes_sample(5, ShapesConfig{});
  write_png((dir / "img.png").string(), tensor_to_rgb8(smp.image));
  write_png((dir / "lab.png").string(), labels_to_gray8(smp.labels));
  EXPECT_TRUE(torch::equal(rgb8_to_tensor(read_png((dir / "img.png").string(), 3)), smp.image));
  EXPECT_TRUE(torch::equal(gray8_to_labels(read_png((dir / "lab.png").string(), 1)), smp.labels));
  EXPECT_THROW(read_png((dir / "img.png").string(), 1), DataError);
  EXPECT_THROW(read_png((dir / "missing.png").string(), 3), IoError);
  fs::remove_all(dir);
}

TEST(ImageIo, GridHasTwoPixelSeparators) {
  auto g = make_grid(torch::zeros({4, 3, 5, 5}), 2);
  EXPECT_EQ(g.width, 2 * 5 + 2);
  EXPECT_EQ(g.height, 2 * 5 + 2);
  EXPECT_EQ(g.at(0, 0, 0), 128);
  EXPECT_EQ(g.at(0, 5, 0), 255);
  EXPECT_EQ(g.at(0, 6, 0), 255);
  EXPECT_EQ(g.at(6, 0, 0), 255);
  EXPECT_EQ(g.at(7, 7, 0), 128);
}

TEST(DatasetDir, WriteThenLoadRoundTrip) {
  auto dir = temp_dir("ds");
  ShapesConfig c;
  c.train_count = 6;
  c.val_count = 3;
  auto data = generate_shapes_dataset(c);
  write_dataset(dir.string(), data, c);
  EXPECT_TRUE(fs::exists(dir / "dataset.json"));
  EXPECT_TRUE(fs::exists(dir / "train" / "0000_img.png"));
  EXPECT_TRUE(fs::exists(dir / "val" / "0002_lab.png"));
  auto back = load_dataset(dir.string(), 32, 0);
  EXPECT_EQ(back.num_classes, 4);
  EXPECT_EQ(back.resolution, 32);
  ASSERT_EQ(back.train.size(), 6u);
  ASSERT_EQ(back.val.size(), 3u);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_TRUE(torch::equal(back.train[i].image, data.train[i].image));
    EXPECT_TRUE(torch::equal(back.train[i].labels, data.train[i].labels));
  }
  fs::remove_all(dir);
}

TEST(DatasetDir, DownscaledLoadUsesNearestLabels) {
  auto dir = temp_dir("ds64");
  ShapesConfig c;
  c.resolution = 64;
  c.train_count = 2;
  c.val_count = 1;
  auto data = generate_shapes_dataset(c);
  write_dataset(dir.string(), data, c);
  auto back = load_dataset(dir.string(), 32, 0);
  ASSERT_EQ(back.train.size(), 2u);
  EXPECT_EQ(back.train[0].labels.sizes(), (std::vector<int64_t>{32, 32}));
  EXPECT_EQ(back.train[0].image.sizes(), (std::vector<int64_t>{3, 32, 32}));
  std::set<int64_t> values;
  auto l = back.train[0].labels.flatten();
  for (int64_t i = 0; i < l.numel(); ++i) values.insert(l[i].item<int64_t>());
  for (auto v : values) EXPECT_TRUE(v >= 0 && v < 4);
  fs::remove_all(dir);
}

TEST(DatasetDir, OutOfRangeLabelFileIsDataError) {
  auto dir = temp_dir("badlab");
  ShapesConfig c;
  c.train_count = 1;
  c.val_count = 1;
  auto data = generate_shapes_dataset(c);
  write_dataset(dir.string(), data, c);
  auto lab = torch::zeros({32, 32}, torch::kLong);
  lab[5][6] = 9;
  write_png((dir / "train" / "0000_lab.png").string(), labels_to_gray8(lab));
  EXPECT_THROW(load_dataset(dir.string(), 32, 0), DataError);
  fs::remove_all(dir);
}
