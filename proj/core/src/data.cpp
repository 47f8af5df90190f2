#include "wfuse/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "wfuse/error.hpp"
#include "wfuse/parallel.hpp"
#include "wfuse/rng.hpp"

namespace fs = std::filesystem;

namespace wfuse {

Image8 read_png(const fs::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    std::string msg = img.message;
    png_image_free(&img);
    throw IoError("cannot read PNG " + path.string() + ": " + msg);
  }
  // keep the channel layout, drop colormaps and 16-bit samples
  img.format &= PNG_FORMAT_FLAG_COLOR | PNG_FORMAT_FLAG_ALPHA;
  Image8 out;
  out.h = img.height;
  out.w = img.width;
  out.channels = PNG_IMAGE_SAMPLE_CHANNELS(img.format);
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw IoError("cannot decode PNG " + path.string() + ": " + msg);
  }
  return out;
}

void write_png(const Image8& image, const fs::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.w);
  img.height = static_cast<png_uint_32>(image.h);
  switch (image.channels) {
    case 1:
      img.format = PNG_FORMAT_GRAY;
      break;
    case 2:
      img.format = PNG_FORMAT_GA;
      break;
    case 3:
      img.format = PNG_FORMAT_RGB;
      break;
    case 4:
      img.format = PNG_FORMAT_RGBA;
      break;
    default:
      throw IoError("cannot write PNG " + path.string() + ": unsupported channel count " +
                    std::to_string(image.channels));
  }
  if (image.pixels.size() != static_cast<std::size_t>(image.h * image.w * image.channels))
    throw ShapeError("write_png: pixel buffer does not match " + std::to_string(image.h) + "x" +
                     std::to_string(image.w) + "x" + std::to_string(image.channels));
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, image.pixels.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw IoError("cannot write PNG " + path.string() + ": " + msg);
  }
}

Tensor image_to_tensor(const Image8& image) {
  if (image.channels < 1) throw ShapeError("image_to_tensor: image has no channels");
  const std::int64_t hw = image.h * image.w;
  Tensor t = Tensor::zeros({3, image.h, image.w});
  auto d = t.mutable_data<float>();
  const bool gray = image.channels < 3;
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t i = 0; i < hw; ++i) {
      const std::uint8_t v = image.pixels[static_cast<std::size_t>(i * image.channels + (gray ? 0 : c))];
      d[static_cast<std::size_t>(c * hw + i)] = static_cast<float>(v) / 255.0f;
    }
  return t;
}

Image8 tensor_to_image(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw ShapeError("tensor_to_image: expected 3 x H x W, got " + shape_str(image.shape()));
  Image8 out;
  out.h = image.dim(1);
  out.w = image.dim(2);
  out.channels = 3;
  const std::int64_t hw = out.h * out.w;
  out.pixels.resize(static_cast<std::size_t>(hw * 3));
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t i = 0; i < hw; ++i) {
      const double v = std::clamp(image.at(static_cast<std::size_t>(c * hw + i)), 0.0, 1.0);
      out.pixels[static_cast<std::size_t>(i * 3 + c)] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  return out;
}

Mask mask_from_image(const Image8& label) {
  Mask m{label.h, label.w, std::vector<std::uint8_t>(static_cast<std::size_t>(label.h * label.w))};
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    // v / 255 >= 0.5
    m.values[i] = 2 * static_cast<int>(label.pixels[i * static_cast<std::size_t>(label.channels)]) >= 255;
  }
  return m;
}

Image8 mask_to_image(const Mask& mask) {
  Image8 out{mask.h, mask.w, 1, std::vector<std::uint8_t>(mask.values.size())};
  for (std::size_t i = 0; i < mask.values.size(); ++i) out.pixels[i] = mask.values[i] ? 255 : 0;
  return out;
}

Tensor load_png(const fs::path& path) { return image_to_tensor(read_png(path)); }
Mask load_mask_png(const fs::path& path) { return mask_from_image(read_png(path)); }
void save_png(const Tensor& image, const fs::path& path) { write_png(tensor_to_image(image), path); }
void save_mask_png(const Mask& mask, const fs::path& path) { write_png(mask_to_image(mask), path); }

std::vector<Tile> tile(const Image8& image, std::int64_t size) {
  if (size < 1) throw TilingError("tile size must be positive, got " + std::to_string(size));
  if (image.h % size != 0 || image.w % size != 0 || image.h == 0 || image.w == 0)
    throw TilingError("image extents " + std::to_string(image.h) + "x" + std::to_string(image.w) +
                      " are not divisible by tile size " + std::to_string(size));
  const std::int64_t C = image.channels;
  std::vector<Tile> tiles;
  for (std::int64_t r = 0; r < image.h / size; ++r)
    for (std::int64_t c = 0; c < image.w / size; ++c) {
      Tile t{Image8{size, size, C, std::vector<std::uint8_t>(static_cast<std::size_t>(size * size * C))}, r, c};
      for (std::int64_t y = 0; y < size; ++y) {
        const auto src = image.pixels.begin() + ((r * size + y) * image.w + c * size) * C;
        std::copy(src, src + size * C, t.image.pixels.begin() + y * size * C);
      }
      tiles.push_back(std::move(t));
    }
  return tiles;
}

Image8 reassemble(const std::vector<Tile>& tiles, std::int64_t h, std::int64_t w) {
  if (tiles.empty()) throw TilingError("reassemble: no tiles");
  const std::int64_t th = tiles.front().image.h, tw = tiles.front().image.w, C = tiles.front().image.channels;
  if (th < 1 || tw < 1 || h % th != 0 || w % tw != 0 ||
      static_cast<std::int64_t>(tiles.size()) != (h / th) * (w / tw))
    throw TilingError("reassemble: " + std::to_string(tiles.size()) + " tiles of " + std::to_string(th) + "x" +
                      std::to_string(tw) + " do not cover " + std::to_string(h) + "x" + std::to_string(w));
  Image8 out{h, w, C, std::vector<std::uint8_t>(static_cast<std::size_t>(h * w * C))};
  std::vector<bool> seen(tiles.size(), false);
  for (const auto& t : tiles) {
    if (t.image.h != th || t.image.w != tw || t.image.channels != C)
      throw TilingError("reassemble: tiles differ in shape");
    if (t.row < 0 || t.col < 0 || t.row >= h / th || t.col >= w / tw)
      throw TilingError("reassemble: tile position out of range");
    const auto slot = static_cast<std::size_t>(t.row * (w / tw) + t.col);
    if (seen[slot]) throw TilingError("reassemble: duplicate tile position");
    seen[slot] = true;
    for (std::int64_t y = 0; y < th; ++y) {
      const auto src = t.image.pixels.begin() + y * tw * C;
      std::copy(src, src + tw * C, out.pixels.begin() + ((t.row * th + y) * w + t.col * tw) * C);
    }
  }
  return out;
}

namespace {

const char* kManifestHeader = "split,path,source_id,row,col";

void check_field(const std::string& s) {
  if (s.find_first_of(",\n\r\"") != std::string::npos)
    throw DataError("manifest field contains a separator: '" + s + "'");
}

std::vector<fs::path> png_files(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

void write_manifest(const std::vector<ManifestRow>& rows, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write manifest " + path.string());
  os << kManifestHeader << '\n';
  for (const auto& r : rows) {
    check_field(r.split);
    check_field(r.path);
    check_field(r.source_id);
    os << r.split << ',' << r.path << ',' << r.source_id << ',' << r.row << ',' << r.col << '\n';
  }
  if (!os) throw IoError("cannot write manifest " + path.string());
}

std::vector<ManifestRow> read_manifest(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read manifest " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != kManifestHeader)
    throw FormatError("manifest " + path.string() + ": bad header");
  std::vector<ManifestRow> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 5) throw FormatError("manifest " + path.string() + ":" + std::to_string(lineno) + ": expected 5 fields");
    try {
      rows.push_back(ManifestRow{f[0], f[1], f[2], std::stoll(f[3]), std::stoll(f[4])});
    } catch (const std::logic_error&) {
      throw FormatError("manifest " + path.string() + ":" + std::to_string(lineno) + ": bad row/col");
    }
  }
  return rows;
}

TileSummary tile_directory(const fs::path& input, const fs::path& output, std::int64_t size) {
  // (input subdirectory, split name, output subdirectory)
  std::vector<std::pair<fs::path, std::string>> splits;
  if (fs::is_directory(input / "images")) {
    splits.emplace_back(input, "train");
  } else {
    for (const char* s : {"train", "val", "test"})
      if (fs::is_directory(input / s / "images")) splits.emplace_back(input / s, s);
  }
  struct Job {
    fs::path image, label;
    std::string split;
  };
  std::vector<Job> jobs;
  for (const auto& [dir, split] : splits)
    for (const auto& img : png_files(dir / "images")) {
      const fs::path label = dir / "labels" / img.filename();
      if (!fs::exists(label)) throw DataError("missing label for " + img.string() + " (expected " + label.string() + ")");
      jobs.push_back({img, label, split});
    }
  if (jobs.empty()) throw DataError("no PNG images under " + input.string() + " (expected images/ and labels/)");

  // validate every extent before writing anything
  std::vector<ManifestRow> rows;
  TileSummary summary;
  for (const auto& job : jobs) {
    const Image8 image = read_png(job.image);
    const Image8 label = read_png(job.label);
    if (image.h != label.h || image.w != label.w)
      throw DataError("image and label extents differ for " + job.image.string());
    if (image.h % size != 0 || image.w % size != 0)
      throw TilingError(job.image.string() + ": image extents " + std::to_string(image.h) + "x" +
                        std::to_string(image.w) + " are not divisible by tile size " + std::to_string(size));
  }
  for (const auto& job : jobs) {
    const Image8 image = read_png(job.image);
    const Image8 label = read_png(job.label);
    const auto image_tiles = tile(image, size);
    const auto label_tiles = tile(label, size);
    const std::string stem = job.image.stem().string();
    for (std::size_t i = 0; i < image_tiles.size(); ++i) {
      const auto& t = image_tiles[i];
      const std::string name = stem + "_r" + std::to_string(t.row) + "_c" + std::to_string(t.col) + ".png";
      const fs::path rel = fs::path(job.split) / "images" / name;
      write_png(t.image, output / rel);
      write_png(label_tiles[i].image, output / job.split / "labels" / name);
      rows.push_back(ManifestRow{job.split, rel.generic_string(), stem, t.row, t.col});
    }
    ++summary.images;
    summary.tiles += image_tiles.size();
  }
  write_manifest(rows, output / "manifest.csv");
  return summary;
}

namespace {

Tensor as_batch(const Tensor& image) {
  Tensor t = Tensor::zeros({1, image.dim(0), image.dim(1), image.dim(2)});
  std::copy(image.data<float>().begin(), image.data<float>().end(), t.mutable_data<float>().begin());
  return t;
}

Tensor resize_image(const Tensor& image, std::int64_t nh, std::int64_t nw) {
  if (nh == image.dim(1) && nw == image.dim(2)) return image;
  Tensor r = bilinear_resize(as_batch(image), nh, nw);
  Tensor out = Tensor::zeros({image.dim(0), nh, nw});
  std::copy(r.data<float>().begin(), r.data<float>().end(), out.mutable_data<float>().begin());
  return out;
}

Mask resize_mask(const Mask& m, std::int64_t nh, std::int64_t nw) {
  if (nh == m.h && nw == m.w) return m;
  Mask out{nh, nw, std::vector<std::uint8_t>(static_cast<std::size_t>(nh * nw))};
  auto src_index = [](std::int64_t dst, std::int64_t in, std::int64_t outn) {
    const auto s = static_cast<std::int64_t>(std::floor((static_cast<double>(dst) + 0.5) * in / outn));
    return std::clamp<std::int64_t>(s, 0, in - 1);
  };
  for (std::int64_t y = 0; y < nh; ++y) {
    const std::int64_t sy = src_index(y, m.h, nh);
    for (std::int64_t x = 0; x < nw; ++x)
      out.values[static_cast<std::size_t>(y * nw + x)] = m.values[static_cast<std::size_t>(sy * m.w + src_index(x, m.w, nw))];
  }
  return out;
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

}  // namespace

Sample hflip(const Sample& s) {
  const std::int64_t C = s.image.dim(0), H = s.image.dim(1), W = s.image.dim(2);
  Sample out{Tensor::zeros({C, H, W}), s.mask};
  auto src = s.image.data<float>();
  auto dst = out.image.mutable_data<float>();
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x)
        dst[static_cast<std::size_t>((c * H + y) * W + x)] = src[static_cast<std::size_t>((c * H + y) * W + (W - 1 - x))];
  for (std::int64_t y = 0; y < H; ++y)
    std::reverse(out.mask.values.begin() + y * W, out.mask.values.begin() + (y + 1) * W);
  return out;
}

Sample rescale(const Sample& s, std::int64_t new_size) {
  if (new_size < 1) throw ShapeError("rescale: target extent must be positive");
  return Sample{resize_image(s.image, new_size, new_size), resize_mask(s.mask, new_size, new_size)};
}

Sample augment(const Sample& sample, std::uint64_t seed, const AugmentConfig& cfg,
               const AugmentOverride* ov) {
  const std::int64_t H = sample.image.dim(1), W = sample.image.dim(2);
  if (sample.image.rank() != 3 || sample.mask.h != H || sample.mask.w != W)
    throw ShapeError("augment: image " + shape_str(sample.image.shape()) + " and mask " +
                     std::to_string(sample.mask.h) + "x" + std::to_string(sample.mask.w) + " disagree");
  if (cfg.input_size != 0 && (H != cfg.input_size || W != cfg.input_size))
    throw ShapeError("augment: expected " + std::to_string(cfg.input_size) + "x" + std::to_string(cfg.input_size) +
                     " input, got " + std::to_string(H) + "x" + std::to_string(W));
  if (cfg.crop < 1 || !(cfg.scale_min > 0) || cfg.scale_max < cfg.scale_min)
    throw ContractError("augment: invalid configuration");

  Rng rng(seed);
  const double drawn_scale = rng.uniform(cfg.scale_min, cfg.scale_max);
  const double s = ov && ov->scale ? *ov->scale : drawn_scale;
  const std::int64_t sh = std::max<std::int64_t>(1, std::llround(H * s));
  const std::int64_t sw = std::max<std::int64_t>(1, std::llround(W * s));
  const Tensor scaled = resize_image(sample.image, sh, sw);
  const Mask scaled_mask = resize_mask(sample.mask, sh, sw);

  // window origin in scaled coordinates; negative when the scaled image is
  // smaller than the crop and gets padded
  auto origin = [&](std::int64_t extent) {
    const std::int64_t slack = extent - cfg.crop;
    const auto drawn = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(std::abs(slack)) + 1));
    if (ov && ov->center_crop) return floor_div(slack, 2);
    return slack >= 0 ? drawn : -drawn;
  };
  const std::int64_t y0 = origin(sh);
  const std::int64_t x0 = origin(sw);
  const bool drawn_flip = rng.bernoulli(0.5);
  const bool flip = ov && ov->flip ? *ov->flip : (cfg.flip && drawn_flip);

  const std::int64_t K = cfg.crop;
  Sample out{Tensor::zeros({3, K, K}), Mask{K, K, std::vector<std::uint8_t>(static_cast<std::size_t>(K * K), 0)}};
  auto src = scaled.data<float>();
  auto dst = out.image.mutable_data<float>();
  for (std::int64_t y = 0; y < K; ++y) {
    const std::int64_t sy = y + y0;
    if (sy < 0 || sy >= sh) continue;
    for (std::int64_t x = 0; x < K; ++x) {
      const std::int64_t sx = x + x0;
      if (sx < 0 || sx >= sw) continue;
      const std::int64_t ox = flip ? K - 1 - x : x;
      for (std::int64_t c = 0; c < 3; ++c)
        dst[static_cast<std::size_t>((c * K + y) * K + ox)] = src[static_cast<std::size_t>((c * sh + sy) * sw + sx)];
      out.mask.values[static_cast<std::size_t>(y * K + ox)] = scaled_mask.values[static_cast<std::size_t>(sy * sw + sx)];
    }
  }
  return out;
}

std::uint64_t augment_seed(std::uint64_t epoch, std::uint64_t index, std::uint64_t base_seed) {
  return mix_seed({epoch, index, base_seed});
}

std::vector<Sample> synth_dataset(std::size_t n, std::uint64_t seed, std::int64_t canvas) {
  if (n < 1) throw ContractError("synth_dataset: n must be >= 1");
  if (canvas < 16) throw ContractError("synth_dataset: canvas must be >= 16");
  std::vector<Sample> out(n);
  const std::int64_t hw = canvas * canvas;
  const std::int64_t min_side = std::max<std::int64_t>(2, canvas / 10);
  const std::int64_t max_side = canvas / 4;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(mix_seed({seed, i}));
    std::vector<double> px(static_cast<std::size_t>(3 * hw));
    double base[3];
    for (double& b : base) b = rng.uniform(0.15, 0.45);
    for (std::int64_t c = 0; c < 3; ++c)
      for (std::int64_t p = 0; p < hw; ++p) px[static_cast<std::size_t>(c * hw + p)] = base[c] + rng.normal(0.0, 0.08);
    Mask mask{canvas, canvas, std::vector<std::uint8_t>(static_cast<std::size_t>(hw), 0)};
    const auto rects = 1 + rng.below(5);
    for (std::uint64_t r = 0; r < rects; ++r) {
      const std::int64_t rh = min_side + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(max_side - min_side + 1)));
      const std::int64_t rw = min_side + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(max_side - min_side + 1)));
      const std::int64_t ry = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(canvas - rh + 1)));
      const std::int64_t rx = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(canvas - rw + 1)));
      double color[3];
      for (double& c : color) c = rng.uniform(0.65, 0.95);
      for (std::int64_t y = ry; y < ry + rh; ++y)
        for (std::int64_t x = rx; x < rx + rw; ++x) {
          const std::int64_t p = y * canvas + x;
          for (std::int64_t c = 0; c < 3; ++c)
            px[static_cast<std::size_t>(c * hw + p)] = color[c] + rng.normal(0.0, 0.03);
          mask.values[static_cast<std::size_t>(p)] = 1;
        }
    }
    // quantize to 8 bits so a written and reloaded set matches exactly
    Tensor image = Tensor::zeros({3, canvas, canvas});
    auto d = image.mutable_data<float>();
    for (std::size_t k = 0; k < px.size(); ++k)
      d[k] = static_cast<float>(std::lround(std::clamp(px[k], 0.0, 1.0) * 255.0)) / 255.0f;
    out[i] = Sample{image, std::move(mask)};
  }
  return out;
}

void write_dataset(const std::vector<Sample>& train, const std::vector<Sample>& val,
                   const std::vector<Sample>& test, const fs::path& out) {
  std::vector<ManifestRow> rows;
  std::size_t k = 0;
  for (const auto& [split, samples] : {std::pair<std::string, const std::vector<Sample>*>{"train", &train},
                                       {"val", &val},
                                       {"test", &test}}) {
    fs::create_directories(out / split / "images");
    fs::create_directories(out / split / "labels");
    for (const auto& s : *samples) {
      char name[32];
      std::snprintf(name, sizeof name, "synth_%04zu", k++);
      const fs::path rel = fs::path(split) / "images" / (std::string(name) + ".png");
      save_png(s.image, out / rel);
      save_mask_png(s.mask, out / split / "labels" / (std::string(name) + ".png"));
      rows.push_back(ManifestRow{split, rel.generic_string(), name, 0, 0});
    }
  }
  write_manifest(rows, out / "manifest.csv");
}

std::vector<Sample> load_split(const fs::path& root, const std::string& split) {
  const fs::path dir = root / split;
  std::vector<Sample> out;
  for (const auto& img : png_files(dir / "images")) {
    const fs::path label = dir / "labels" / img.filename();
    if (!fs::exists(label)) throw DataError("missing label for " + img.string());
    Sample s{load_png(img), load_mask_png(label)};
    if (s.mask.h != s.image.dim(1) || s.mask.w != s.image.dim(2))
      throw DataError("image and label extents differ for " + img.string());
    out.push_back(std::move(s));
  }
  if (out.empty()) throw DataError("no samples in " + (dir / "images").string());
  return out;
}

Batch collate(const std::vector<Sample>& samples) {
  if (samples.empty()) throw DataError("collate: empty batch");
  const std::int64_t H = samples.front().image.dim(1), W = samples.front().image.dim(2);
  const auto N = static_cast<std::int64_t>(samples.size());
  Batch b;
  b.images = Tensor::zeros({N, 3, H, W});
  b.labels = Labels{N, H, W, std::vector<std::int32_t>(static_cast<std::size_t>(N * H * W))};
  auto dst = b.images.mutable_data<float>();
  for (std::int64_t n = 0; n < N; ++n) {
    const auto& s = samples[static_cast<std::size_t>(n)];
    if (s.image.rank() != 3 || s.image.dim(0) != 3 || s.image.dim(1) != H || s.image.dim(2) != W || s.mask.h != H ||
        s.mask.w != W)
      throw ShapeError("collate: sample " + std::to_string(n) + " has extents " + shape_str(s.image.shape()));
    std::copy(s.image.data<float>().begin(), s.image.data<float>().end(), dst.begin() + n * 3 * H * W);
    std::copy(s.mask.values.begin(), s.mask.values.end(), b.labels.values.begin() + n * H * W);
  }
  return b;
}

Batcher::Batcher(std::size_t dataset_size, std::size_t batch_size, std::uint64_t shuffle_seed)
    : size_(dataset_size), batch_size_(batch_size), seed_(shuffle_seed) {
  if (size_ == 0) throw DataError("batcher: empty dataset");
  if (batch_size_ == 0) throw ContractError("batcher: batch_size must be >= 1");
  reshuffle();
}

void Batcher::reshuffle() {
  order_.resize(size_);
  for (std::size_t i = 0; i < size_; ++i) order_[i] = i;
  Rng rng(mix_seed({seed_, epoch_}));
  for (std::size_t i = size_ - 1; i > 0; --i) std::swap(order_[i], order_[rng.below(i + 1)]);
  cursor_ = 0;
}

Batcher::Indices Batcher::next() {
  if (cursor_ == size_) {
    ++epoch_;
    reshuffle();
  }
  const std::size_t end = std::min(size_, cursor_ + batch_size_);
  Indices out{epoch_, std::vector<std::size_t>(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                               order_.begin() + static_cast<std::ptrdiff_t>(end))};
  cursor_ = end;
  return out;
}

std::size_t Batcher::batches_per_epoch() const { return (size_ + batch_size_ - 1) / batch_size_; }

BatchStream::BatchStream(const std::vector<Sample>& dataset, std::size_t batch_size, std::uint64_t shuffle_seed,
                         Transform transform)
    : dataset_(dataset), batcher_(dataset.size(), batch_size, shuffle_seed), transform_(std::move(transform)) {}

Batch BatchStream::next() {
  const auto idx = batcher_.next();
  std::vector<Sample> samples(idx.indices.size());
  parallel_for(samples.size(), 1, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const Sample& s = dataset_[idx.indices[i]];
      samples[i] = transform_ ? transform_(s, idx.epoch, idx.indices[i]) : s;
    }
  });
  Batch batch = collate(samples);
  batch.indices = idx.indices;
  batch.epoch = idx.epoch;
  return batch;
}

}  // namespace wfuse
