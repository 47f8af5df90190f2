#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "wfuse/nn.hpp"
#include "wfuse/tensor.hpp"

namespace wfuse {

// 8-bit raster, interleaved H x W x C.
struct Image8 {
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::int64_t channels = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(std::int64_t y, std::int64_t x, std::int64_t c) const {
    return pixels[static_cast<std::size_t>((y * w + x) * channels + c)];
  }
  bool operator==(const Image8&) const = default;
};

// Binary building mask (0 background, 1 building), H x W.
struct Mask {
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::vector<std::uint8_t> values;

  bool operator==(const Mask&) const = default;
};

struct Sample {
  Tensor image;  // 3 x H x W, f32, values in [0, 1]
  Mask mask;
};

// PNG I/O (8-bit gray, gray+alpha, RGB or RGBA). Throws IoError naming the path.
Image8 read_png(const std::filesystem::path& path);
void write_png(const Image8& image, const std::filesystem::path& path);

Tensor image_to_tensor(const Image8& image);  // first three channels (gray replicated)
Image8 tensor_to_image(const Tensor& image);  // 3 x H x W, rounded and clamped
Mask mask_from_image(const Image8& label);    // label channel >= 0.5 -> 1
Image8 mask_to_image(const Mask& mask);       // 0 / 255 gray

Tensor load_png(const std::filesystem::path& path);
Mask load_mask_png(const std::filesystem::path& path);
void save_png(const Tensor& image, const std::filesystem::path& path);
void save_mask_png(const Mask& mask, const std::filesystem::path& path);

struct Tile {
  Image8 image;
  std::int64_t row = 0;  // grid position
  std::int64_t col = 0;
};

// Non-overlapping row-major tiles. Throws TilingError naming the extents when
// they are not divisible by size.
std::vector<Tile> tile(const Image8& image, std::int64_t size);
Image8 reassemble(const std::vector<Tile>& tiles, std::int64_t h, std::int64_t w);

struct ManifestRow {
  std::string split;
  std::string path;  // image path relative to the dataset root
  std::string source_id;
  std::int64_t row = 0;
  std::int64_t col = 0;
};

void write_manifest(const std::vector<ManifestRow>& rows, const std::filesystem::path& path);
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);

struct TileSummary {
  std::size_t images = 0;
  std::size_t tiles = 0;
};

// Tiles <input>/{images,labels}/*.png, or each <input>/{train,val,test}
// split, into the same layout under output plus output/manifest.csv.
TileSummary tile_directory(const std::filesystem::path& input, const std::filesystem::path& output,
                           std::int64_t size);

struct AugmentConfig {
  std::int64_t input_size = 250;  // required input extent; 0 accepts any square input
  std::int64_t crop = 125;
  double scale_min = 0.5;
  double scale_max = 2.0;
  bool flip = true;
};

// Test hook pinning individual random choices.
struct AugmentOverride {
  std::optional<double> scale;
  bool center_crop = false;
  std::optional<bool> flip;
};

// Random scale (bilinear image, nearest mask) -> random crop (zero / background
// padded when the scaled extent is below the crop) -> horizontal flip with
// probability 0.5. Image and mask share every geometric choice.
Sample augment(const Sample& sample, std::uint64_t seed, const AugmentConfig& cfg = {},
               const AugmentOverride* override_choices = nullptr);
Sample hflip(const Sample& sample);
Sample rescale(const Sample& sample, std::int64_t new_size);

// Seed for sample `index` in `epoch`; independent of worker scheduling.
std::uint64_t augment_seed(std::uint64_t epoch, std::uint64_t index, std::uint64_t base_seed);

// Noise background with 1-5 brighter axis-aligned rectangles marked as class 1.
std::vector<Sample> synth_dataset(std::size_t n, std::uint64_t seed, std::int64_t canvas = 128);

// Writes <out>/{train,val,test}/{images,labels}/synth_NNNN.png and a manifest.
void write_dataset(const std::vector<Sample>& train, const std::vector<Sample>& val,
                   const std::vector<Sample>& test, const std::filesystem::path& out);

std::vector<Sample> load_split(const std::filesystem::path& root, const std::string& split);

struct Batch {
  Tensor images;  // N x 3 x H x W
  Labels labels;  // N x H x W
  std::vector<std::size_t> indices;
  std::uint64_t epoch = 0;
};

Batch collate(const std::vector<Sample>& samples);

// Epoch-wise seeded permutation of [0, size) cut into batches; the last short
// batch of an epoch is kept.
class Batcher {
 public:
  Batcher(std::size_t dataset_size, std::size_t batch_size, std::uint64_t shuffle_seed);

  struct Indices {
    std::uint64_t epoch = 0;
    std::vector<std::size_t> indices;
  };

  Indices next();
  std::size_t batches_per_epoch() const;

 private:
  void reshuffle();

  std::size_t size_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
};

// Pulls batches from a dataset through an optional per-sample transform that
// receives (sample, epoch, dataset index).
class BatchStream {
 public:
  using Transform = std::function<Sample(const Sample&, std::uint64_t, std::size_t)>;

  BatchStream(const std::vector<Sample>& dataset, std::size_t batch_size,
              std::uint64_t shuffle_seed, Transform transform = {});

  Batch next();

 private:
  const std::vector<Sample>& dataset_;
  Batcher batcher_;
  Transform transform_;
};

}  // namespace wfuse
