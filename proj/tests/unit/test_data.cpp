#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "wfuse/data.hpp"
#include "wfuse/ops.hpp"

using namespace wfuse;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("wfuse_test_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Image8 gradient_image(std::int64_t h, std::int64_t w, std::int64_t c) {
  Image8 im{h, w, c, std::vector<std::uint8_t>(static_cast<std::size_t>(h * w * c))};
  for (std::size_t i = 0; i < im.pixels.size(); ++i) im.pixels[i] = static_cast<std::uint8_t>((i * 37) % 256);
  return im;
}

Sample coordinate_sample(std::int64_t n) {
  // channel 0 encodes x, channel 1 encodes y; mask marks the left half
  Tensor t = Tensor::zeros({3, n, n});
  auto d = t.mutable_data<float>();
  Mask m{n, n, std::vector<std::uint8_t>(static_cast<std::size_t>(n * n))};
  for (std::int64_t y = 0; y < n; ++y)
    for (std::int64_t x = 0; x < n; ++x) {
      d[static_cast<std::size_t>(y * n + x)] = static_cast<float>(x + 1) / static_cast<float>(n);
      d[static_cast<std::size_t>(n * n + y * n + x)] = static_cast<float>(y + 1) / static_cast<float>(n);
      m.values[static_cast<std::size_t>(y * n + x)] = x < n / 2;
    }
  return {t, m};
}

}  // namespace

TEST(Png, RoundTripWithinQuantization) {
  fs::path dir = scratch("png");
  Tensor t = create({3, 5, 7}, DType::f32, Init::normal(0.5, 0.2, 1));
  auto v = t.to_vector();
  for (auto& x : v) x = std::clamp(x, 0.0, 1.0);
  t = Tensor::from_values({3, 5, 7}, v);
  save_png(t, dir / "a.png");
  Tensor back = load_png(dir / "a.png");
  EXPECT_EQ(back.shape(), t.shape());
  EXPECT_LE(max_abs_diff(back, t), 0.5 / 255 + 1e-7);
  Image8 g = gradient_image(4, 6, 1);
  write_png(g, dir / "g.png");
  EXPECT_EQ(read_png(dir / "g.png"), g);
}

TEST(Png, MissingFileNamesPath) {
  try {
    read_png("/nonexistent/x.png");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/x.png"), std::string::npos);
  }
}

TEST(Png, MaskThreshold) {
  Image8 im{1, 4, 1, {0, 127, 128, 255}};
  EXPECT_EQ(mask_from_image(im).values, (std::vector<std::uint8_t>{0, 0, 1, 1}));
  Mask black{2, 2, {0, 0, 0, 0}}, white{2, 2, {1, 1, 1, 1}};
  EXPECT_EQ(mask_from_image(mask_to_image(black)), black);
  EXPECT_EQ(mask_from_image(mask_to_image(white)), white);
  fs::path dir = scratch("mask");
  save_mask_png(white, dir / "w.png");
  EXPECT_EQ(load_mask_png(dir / "w.png"), white);
}

TEST(Tiling, CountsAndReassembly) {
  Image8 big = gradient_image(1500, 1500, 3);
  auto tiles = tile(big, 250);
  EXPECT_EQ(tiles.size(), 36u);
  EXPECT_EQ(tiles[7].row, 1);
  EXPECT_EQ(tiles[7].col, 1);
  EXPECT_EQ(reassemble(tiles, 1500, 1500), big);
  EXPECT_EQ(tile(gradient_image(250, 250, 1), 250).size(), 1u);
  EXPECT_THROW(tile(gradient_image(1500, 1400, 1), 250), TilingError);
  EXPECT_THROW(tile(gradient_image(100, 100, 1), 250), TilingError);
}

TEST(Tiling, DirectoryLayoutAndManifest) {
  fs::path in = scratch("tile_in"), out = scratch("tile_out");
  fs::create_directories(in / "images");
  fs::create_directories(in / "labels");
  write_png(gradient_image(500, 500, 3), in / "images" / "city.png");
  write_png(gradient_image(500, 500, 1), in / "labels" / "city.png");
  auto s = tile_directory(in, out, 250);
  EXPECT_EQ(s.images, 1u);
  EXPECT_EQ(s.tiles, 4u);
  auto rows = read_manifest(out / "manifest.csv");
  ASSERT_EQ(rows.size(), 4u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.source_id, "city");
    EXPECT_TRUE(fs::exists(out / r.path)) << r.path;
  }
  EXPECT_EQ(load_split(out, "train").size(), 4u);
}

TEST(Tiling, DirectoryErrors) {
  fs::path in = scratch("tile_bad"), out = scratch("tile_bad_out");
  EXPECT_THROW(tile_directory(in, out, 250), DataError);
  fs::create_directories(in / "images");
  fs::create_directories(in / "labels");
  write_png(gradient_image(300, 250, 3), in / "images" / "a.png");
  write_png(gradient_image(300, 250, 1), in / "labels" / "a.png");
  EXPECT_THROW(tile_directory(in, out, 250), TilingError);
  EXPECT_FALSE(fs::exists(out / "manifest.csv"));
}

TEST(Manifest, RoundTrip) {
  fs::path dir = scratch("manifest");
  std::vector<ManifestRow> rows{{"train", "train/images/a_r0_c1.png", "a", 0, 1},
                                {"test", "test/images/b_r2_c3.png", "b", 2, 3}};
  write_manifest(rows, dir / "m.csv");
  auto back = read_manifest(dir / "m.csv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].path, rows[1].path);
  EXPECT_EQ(back[1].col, 3);
  rows[0].source_id = "a,b";
  EXPECT_THROW(write_manifest(rows, dir / "bad.csv"), DataError);
}

TEST(Augment, ExtentsOverManySeeds) {
  Sample s = coordinate_sample(64);
  AugmentConfig cfg{64, 32, 0.5, 2.0, true};
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Sample a = augment(s, seed, cfg);
    ASSERT_EQ(a.image.shape(), (Shape{3, 32, 32}));
    ASSERT_EQ(a.mask.h, 32);
    ASSERT_EQ(a.mask.values.size(), 32u * 32u);
  }
  cfg.input_size = 50;
  EXPECT_THROW(augment(s, 0, cfg), ShapeError);
}

TEST(Augment, Deterministic) {
  Sample s = coordinate_sample(32);
  AugmentConfig cfg{0, 16, 0.5, 2.0, true};
  Sample a = augment(s, 9, cfg), b = augment(s, 9, cfg);
  EXPECT_TRUE(bit_equal(a.image, b.image));
  EXPECT_EQ(a.mask, b.mask);
}

TEST(Augment, FlipIsInvolution) {
  Sample s = coordinate_sample(8);
  Sample f = hflip(s);
  EXPECT_FALSE(bit_equal(f.image, s.image));
  Sample ff = hflip(f);
  EXPECT_TRUE(bit_equal(ff.image, s.image));
  EXPECT_EQ(ff.mask, s.mask);
  EXPECT_EQ(f.mask.values[0], 0);
  EXPECT_EQ(f.mask.values[7], 1);
}

TEST(Augment, CenterCropAtUnitScale) {
  Sample s = coordinate_sample(16);
  AugmentOverride o;
  o.scale = 1.0;
  o.center_crop = true;
  o.flip = false;
  Sample a = augment(s, 0, {0, 8, 0.5, 2.0, true}, &o);
  Tensor expect = Tensor::zeros({3, 8, 8});
  auto src = s.image.data<float>();
  auto dst = expect.mutable_data<float>();
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) dst[c * 64 + y * 8 + x] = src[c * 256 + (y + 4) * 16 + x + 4];
  EXPECT_TRUE(bit_equal(a.image, expect));
}

TEST(Augment, ImageAndMaskShareGeometry) {
  // the mask marks x < n/2; the image's x channel must agree after any transform.
  Sample s = coordinate_sample(32);
  AugmentConfig cfg{0, 16, 1.0, 1.0, true};
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Sample a = augment(s, seed, cfg);
    auto d = a.image.data<float>();
    for (std::int64_t i = 0; i < 16 * 16; ++i) {
      const double x = std::round(d[static_cast<std::size_t>(i)] * 32.0) - 1;
      ASSERT_EQ(a.mask.values[static_cast<std::size_t>(i)], x < 16 ? 1 : 0) << seed;
    }
  }
}

TEST(Augment, PaddingWhenDownscaled) {
  Sample s = coordinate_sample(16);
  AugmentOverride o;
  o.scale = 0.5;
  o.center_crop = true;
  o.flip = false;
  Sample a = augment(s, 0, {0, 16, 0.5, 2.0, true}, &o);
  EXPECT_EQ(a.image.shape(), (Shape{3, 16, 16}));
  EXPECT_EQ(a.image.at(0), 0.0);
  EXPECT_EQ(a.mask.values[0], 0);
}

TEST(Augment, SeedIndependentOfOrder) {
  EXPECT_EQ(augment_seed(1, 2, 3), augment_seed(1, 2, 3));
  EXPECT_NE(augment_seed(1, 2, 3), augment_seed(2, 1, 3));
}

TEST(Synth, DeterministicAndPlausible) {
  auto a = synth_dataset(20, 5, 32), b = synth_dataset(20, 5, 32);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(bit_equal(a[i].image, b[i].image));
    EXPECT_EQ(a[i].mask, b[i].mask);
  }
  auto big = synth_dataset(1000, 7, 32);
  for (const auto& s : big) {
    std::size_t ones = 0;
    for (auto v : s.mask.values) ones += v;
    const double f = static_cast<double>(ones) / static_cast<double>(s.mask.values.size());
    ASSERT_GT(f, 0.0);
    ASSERT_LT(f, 0.6);
    for (double v : s.image.to_vector()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
  }
  EXPECT_THROW(synth_dataset(1, 0, 8), ContractError);
}

TEST(Synth, WriteAndLoad) {
  fs::path dir = scratch("synth");
  auto s = synth_dataset(4, 1, 16);
  write_dataset({s[0], s[1]}, {s[2]}, {s[3]}, dir);
  auto train = load_split(dir, "train");
  ASSERT_EQ(train.size(), 2u);
  EXPECT_EQ(train[0].mask, s[0].mask);
  EXPECT_LE(max_abs_diff(train[0].image, s[0].image), 1e-6);
  EXPECT_EQ(read_manifest(dir / "manifest.csv").size(), 4u);
  EXPECT_THROW(load_split(dir, "missing"), DataError);
}

TEST(Batcher, KeepsShortBatchAndCoversEpoch) {
  Batcher b(10, 4, 3);
  EXPECT_EQ(b.batches_per_epoch(), 3u);
  for (std::uint64_t epoch = 0; epoch < 3; ++epoch) {
    std::multiset<std::size_t> seen;
    std::vector<std::size_t> sizes;
    for (int i = 0; i < 3; ++i) {
      auto idx = b.next();
      EXPECT_EQ(idx.epoch, epoch);
      sizes.push_back(idx.indices.size());
      seen.insert(idx.indices.begin(), idx.indices.end());
    }
    EXPECT_EQ(sizes, (std::vector<std::size_t>{4, 4, 2}));
    ASSERT_EQ(seen.size(), 10u);
    for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(seen.count(i), 1u);
  }
  EXPECT_THROW(Batcher(0, 4, 1), DataError);
}

TEST(Batcher, CollateAndStream) {
  auto data = synth_dataset(5, 2, 16);
  BatchStream stream(data, 2, 1);
  Batch bt = stream.next();
  EXPECT_EQ(bt.images.shape(), (Shape{2, 3, 16, 16}));
  EXPECT_EQ(bt.labels.n, 2);
  Batch direct = collate({data[bt.indices[0]], data[bt.indices[1]]});
  EXPECT_TRUE(bit_equal(direct.images, bt.images));
  EXPECT_EQ(direct.labels.values, bt.labels.values);
}
