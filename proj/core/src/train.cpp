#include "wfuse/train.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <ostream>

#include "wfuse/ops.hpp"
#include "wfuse/parallel.hpp"
#include "wfuse/rng.hpp"
#include "wfuse/tape.hpp"

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace wfuse {

void TrainConfig::validate() const {
  if (!(base_lr > 0) || !std::isfinite(base_lr)) throw ConfigError("train.base_lr must be > 0");
  if (max_iter < 1) throw ConfigError("train.max_iter must be >= 1");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("train.momentum must be in [0, 1)");
  if (!(weight_decay >= 0)) throw ConfigError("train.weight_decay must be >= 0");
  if (!(poly_power > 0)) throw ConfigError("train.poly_power must be > 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (stats_every < 1) throw ConfigError("train.stats_every must be >= 1");
  if (threads < 1) throw ConfigError("train.threads must be >= 1");
  if (augment.crop < 1) throw ConfigError("train.augment.crop must be >= 1");
  if (!(augment.scale_min > 0) || augment.scale_max < augment.scale_min)
    throw ConfigError("train.augment scale range is invalid");
}

double poly_lr(double base, std::int64_t iter, std::int64_t max_iter, double power) {
  if (max_iter < 1) throw ScheduleError("poly_lr: max_iter must be >= 1");
  if (iter < 0 || iter > max_iter)
    throw ScheduleError("poly_lr: iter " + std::to_string(iter) + " outside [0, " + std::to_string(max_iter) + "]");
  return base * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iter), power);
}

SgdMomentum::SgdMomentum(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

void SgdMomentum::step(const std::vector<Parameter>& params, double lr) {
  for (const auto& p : params)
    if (!p.tensor.has_grad()) throw TrainingError("parameter '" + p.name + "' has no gradient");
  for (const auto& p : params) {
    auto it = velocities_.find(p.name);
    if (it == velocities_.end()) it = velocities_.emplace(p.name, Tensor::zeros(p.tensor.shape(), p.tensor.dtype())).first;
    visit_dtype(p.tensor.dtype(), [&]<class T>(T) {
      auto w = p.tensor.mutable_data<T>();
      auto g = p.tensor.grad_data<T>();
      auto v = it->second.mutable_data<T>();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = static_cast<double>(g[i]) + weight_decay_ * static_cast<double>(w[i]);
        v[i] = static_cast<T>(momentum_ * static_cast<double>(v[i]) + gi);
        w[i] = static_cast<T>(static_cast<double>(w[i]) - lr * static_cast<double>(v[i]));
      }
    });
  }
}

void sgd_momentum_step(const std::vector<Parameter>& params, double lr, SgdMomentum& optimizer) {
  optimizer.step(params, lr);
}

Confusion::Confusion(int classes) : classes_(classes) {
  if (classes < 1) throw ContractError("confusion: need at least one class");
  counts_.assign(static_cast<std::size_t>(classes) * static_cast<std::size_t>(classes), 0);
}

void Confusion::add(const Labels& truth, const Labels& prediction) {
  if (truth.size() != prediction.size())
    throw ShapeError("confusion: " + std::to_string(truth.size()) + " labels vs " +
                     std::to_string(prediction.size()) + " predictions");
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth.values[i], p = prediction.values[i];
    if (t < 0 || t >= classes_ || p < 0 || p >= classes_)
      throw DataError("confusion: class index out of range at pixel " + std::to_string(i));
    ++counts_[static_cast<std::size_t>(t * classes_ + p)];
  }
}

void Confusion::merge(const Confusion& other) {
  if (other.classes_ != classes_) throw ShapeError("confusion: class counts differ");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::int64_t Confusion::at(int t, int p) const { return counts_.at(static_cast<std::size_t>(t * classes_ + p)); }
std::int64_t& Confusion::at(int t, int p) { return counts_.at(static_cast<std::size_t>(t * classes_ + p)); }

std::int64_t Confusion::total() const {
  std::int64_t n = 0;
  for (auto c : counts_) n += c;
  return n;
}

MetricsReport metrics_from_confusion(const Confusion& cm) {
  MetricsReport r;
  r.confusion = cm;
  const int K = cm.classes();
  std::int64_t trace = 0;
  double iou_sum = 0, acc_sum = 0;
  int iou_n = 0, acc_n = 0;
  for (int c = 0; c < K; ++c) {
    const std::int64_t tp = cm.at(c, c);
    std::int64_t fp = 0, fn = 0;
    for (int o = 0; o < K; ++o)
      if (o != c) {
        fp += cm.at(o, c);
        fn += cm.at(c, o);
      }
    trace += tp;
    if (tp + fp + fn > 0) {
      iou_sum += static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
      ++iou_n;
    }
    if (tp + fn > 0) {
      acc_sum += static_cast<double>(tp) / static_cast<double>(tp + fn);
      ++acc_n;
    }
  }
  const std::int64_t total = cm.total();
  r.pixel_acc = total > 0 ? static_cast<double>(trace) / static_cast<double>(total) : 0.0;
  r.miou = iou_n > 0 ? iou_sum / iou_n : 0.0;
  r.mean_acc = acc_n > 0 ? acc_sum / acc_n : 0.0;
  return r;
}

MetricsReport evaluate(Model& model, const std::vector<Sample>& dataset, std::size_t batch_size) {
  if (dataset.empty()) throw DataError("evaluate: empty dataset");
  if (batch_size < 1) throw ContractError("evaluate: batch_size must be >= 1");
  std::optional<Confusion> cm;
  for (std::size_t b = 0; b < dataset.size(); b += batch_size) {
    const std::vector<Sample> chunk(dataset.begin() + static_cast<std::ptrdiff_t>(b),
                                    dataset.begin() + static_cast<std::ptrdiff_t>(std::min(dataset.size(), b + batch_size)));
    Batch batch = collate(chunk);
    Tensor x = batch.images;
    const DType dt = model.parameters().empty() ? DType::f32 : model.parameters().front().tensor.dtype();
    if (dt != x.dtype()) x = x.to(dt);
    Tensor logits = model.forward(x, Mode::inference);
    if (!cm) cm.emplace(static_cast<int>(logits.dim(1)));
    cm->add(batch.labels, argmax_classes(logits));
  }
  return metrics_from_confusion(*cm);
}

namespace {

const char* stats_group(ParamKind k) {
  switch (k) {
    case ParamKind::conv_weight:
    case ParamKind::gate_weight:
      return "conv_weight";
    case ParamKind::bn_weight:
      return "bn_weight";
    case ParamKind::bn_bias:
    case ParamKind::conv_bias:
      return "bias";
    default:
      return nullptr;
  }
}

std::string layer_of(const std::string& name) {
  for (const char* suffix : {".weight", ".bias"}) {
    const std::size_t n = std::strlen(suffix);
    if (name.size() > n && name.compare(name.size() - n, n, suffix) == 0) return name.substr(0, name.size() - n);
  }
  return name;
}

}  // namespace

std::vector<LayerStats> record_layer_stats(const Model& model, std::int64_t iter, const std::string& run_id) {
  std::vector<LayerStats> rows;
  for (const auto& p : model.parameters()) {
    const char* group = stats_group(p.kind);
    if (!group) continue;
    const std::vector<double> v = p.tensor.to_vector();
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    LayerStats s{run_id, iter, layer_of(p.name), group, 0.0, 0.0};
    if (*lo == *hi) {
      s.mean = *lo;
    } else {
      double sum = 0;
      for (double x : v) sum += x;
      s.mean = sum / static_cast<double>(v.size());
      double sq = 0;
      for (double x : v) sq += (x - s.mean) * (x - s.mean);
      s.variance = sq / static_cast<double>(v.size());
    }
    rows.push_back(std::move(s));
  }
  return rows;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string layer_stats_csv_header() { return "run_id,iter,layer_name,group,mean,variance"; }

std::string layer_stats_csv_row(const LayerStats& r) {
  return r.run_id + "," + std::to_string(r.iter) + "," + r.layer_name + "," + r.group + "," + format_double(r.mean) +
         "," + format_double(r.variance);
}

// ---- checkpoints ----

namespace {

constexpr char kMagic[4] = {'F', 'W', 'L', 'B'};
constexpr std::uint16_t kVersion = 1;

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* b = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), b, b + sizeof(T));
}

CheckpointEntry tensor_entry(const std::string& name, const Tensor& t) {
  CheckpointEntry e;
  e.name = name;
  e.dtype_code = static_cast<std::uint8_t>(t.dtype());
  for (auto d : t.shape()) e.extents.push_back(static_cast<std::uint64_t>(d));
  visit_dtype(t.dtype(), [&]<class T>(T) {
    auto d = t.data<T>();
    e.payload.resize(d.size_bytes());
    std::memcpy(e.payload.data(), d.data(), d.size_bytes());
  });
  return e;
}

std::size_t element_size(std::uint8_t code) {
  switch (code) {
    case 0:
      return 4;
    case 1:
    case 2:
      return 8;
  }
  return 0;
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& buf, const fs::path& path) : buf_(buf), path_(path) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void bytes(std::size_t n, std::vector<std::uint8_t>& out) {
    need(n);
    out.assign(buf_.begin() + static_cast<std::ptrdiff_t>(pos_), buf_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
  }
  bool done() const { return pos_ == buf_.size(); }
  [[noreturn]] void fail(const std::string& why) const {
    throw FormatError("checkpoint " + path_.string() + ": " + why + " (offset " + std::to_string(pos_) + ")");
  }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) fail("truncated file");
  }
  const std::vector<std::uint8_t>& buf_;
  fs::path path_;
  std::size_t pos_ = 0;
};

void copy_into(const CheckpointEntry& e, const Tensor& t) {
  visit_dtype(t.dtype(), [&]<class T>(T) {
    auto d = t.mutable_data<T>();
    std::memcpy(d.data(), e.payload.data(), d.size_bytes());
  });
}

void validate_entry(const CheckpointEntry* e, const std::string& name, const Tensor& t) {
  if (!e) throw ShapeError("checkpoint has no entry for parameter '" + name + "'");
  Shape shape;
  for (auto x : e->extents) shape.push_back(static_cast<std::int64_t>(x));
  if (e->dtype_code != static_cast<std::uint8_t>(t.dtype()) || shape != t.shape())
    throw ShapeError("checkpoint entry '" + name + "' is " + shape_str(shape) + " " +
                     (e->dtype_code < 2 ? dtype_name(static_cast<DType>(e->dtype_code)) : "u64") + ", model expects " +
                     shape_str(t.shape()) + " " + dtype_name(t.dtype()));
}

const std::string kVelocityPrefix = "optim.velocity.";
const std::string kIterationEntry = "meta.iteration";

}  // namespace

const CheckpointEntry* CheckpointState::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

void save_checkpoint(const Model& model, const SgdMomentum* optimizer, std::uint64_t iteration, const fs::path& path) {
  std::vector<CheckpointEntry> entries;
  for (const auto& p : model.parameters()) entries.push_back(tensor_entry(p.name, p.tensor));
  for (const auto& b : model.buffers()) entries.push_back(tensor_entry(b.name, b.tensor));
  if (optimizer)
    for (const auto& p : model.parameters()) {
      auto it = optimizer->velocities().find(p.name);
      if (it != optimizer->velocities().end()) entries.push_back(tensor_entry(kVelocityPrefix + p.name, it->second));
    }
  CheckpointEntry it_entry{kIterationEntry, 2, {1}, {}};
  put(it_entry.payload, iteration);
  entries.push_back(std::move(it_entry));

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put(out, kVersion);
  put(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > 0xffff) throw FormatError("checkpoint entry name too long: " + e.name);
    put(out, static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    put(out, e.dtype_code);
    put(out, static_cast<std::uint8_t>(e.extents.size()));
    for (auto x : e.extents) put(out, x);
    out.insert(out.end(), e.payload.begin(), e.payload.end());
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    os.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!os) throw IoError("cannot write checkpoint " + tmp.string());
  }
  fs::rename(tmp, path);
}

CheckpointState load_checkpoint(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  Reader r(buf, path);
  char magic[4];
  for (char& c : magic) c = static_cast<char>(r.get<std::uint8_t>());
  if (std::memcmp(magic, kMagic, 4) != 0) r.fail("bad magic");
  const auto version = r.get<std::uint16_t>();
  if (version != kVersion) r.fail("unsupported version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  CheckpointState state;
  bool have_iteration = false;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const auto name_len = r.get<std::uint16_t>();
    std::vector<std::uint8_t> name;
    r.bytes(name_len, name);
    e.name.assign(name.begin(), name.end());
    e.dtype_code = r.get<std::uint8_t>();
    const std::size_t esize = element_size(e.dtype_code);
    if (esize == 0) r.fail("entry '" + e.name + "' has unknown dtype code " + std::to_string(e.dtype_code));
    const auto rank = r.get<std::uint8_t>();
    std::uint64_t numel = 1;
    for (int k = 0; k < rank; ++k) {
      e.extents.push_back(r.get<std::uint64_t>());
      if (e.extents.back() == 0 || numel > (1ull << 40) / e.extents.back()) r.fail("entry '" + e.name + "' has bad extents");
      numel *= e.extents.back();
    }
    r.bytes(static_cast<std::size_t>(numel * esize), e.payload);
    if (e.name == kIterationEntry) {
      if (e.dtype_code != 2 || numel != 1) r.fail("bad iteration entry");
      std::memcpy(&state.iteration, e.payload.data(), 8);
      have_iteration = true;
    }
    if (state.find(e.name)) r.fail("duplicate entry '" + e.name + "'");
    state.entries.push_back(std::move(e));
  }
  if (!r.done()) r.fail("trailing bytes");
  if (!have_iteration) r.fail("missing " + kIterationEntry);
  return state;
}

void apply_checkpoint(Model& model, SgdMomentum* optimizer, const CheckpointState& state) {
  for (const auto& p : model.parameters()) validate_entry(state.find(p.name), p.name, p.tensor);
  for (const auto& b : model.buffers()) validate_entry(state.find(b.name), b.name, b.tensor);
  std::size_t known = model.parameters().size() + model.buffers().size() + 1;
  for (const auto& p : model.parameters())
    if (const auto* v = state.find(kVelocityPrefix + p.name)) {
      validate_entry(v, kVelocityPrefix + p.name, p.tensor);
      ++known;
    }
  if (known != state.entries.size()) {
    for (const auto& e : state.entries) {
      bool found = e.name == kIterationEntry;
      for (const auto& p : model.parameters())
        found = found || e.name == p.name || e.name == kVelocityPrefix + p.name;
      for (const auto& b : model.buffers()) found = found || e.name == b.name;
      if (!found) throw ShapeError("checkpoint entry '" + e.name + "' does not exist in the model");
    }
  }
  for (const auto& p : model.parameters()) copy_into(*state.find(p.name), p.tensor);
  for (const auto& b : model.buffers()) copy_into(*state.find(b.name), b.tensor);
  if (optimizer) {
    optimizer->velocities().clear();
    for (const auto& p : model.parameters())
      if (const auto* v = state.find(kVelocityPrefix + p.name)) {
        Tensor t = Tensor::zeros(p.tensor.shape(), p.tensor.dtype());
        copy_into(*v, t);
        optimizer->velocities().emplace(p.name, t);
      }
  }
}

std::string checkpoint_name(std::int64_t iter) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt_%07lld.fwlb", static_cast<long long>(iter));
  return buf;
}

TrainResult train(Model& model, const std::vector<Sample>& dataset, const TrainConfig& cfg, const fs::path& run_dir,
                  const std::string& run_id, std::ostream* progress) {
  cfg.validate();
  if (dataset.empty()) throw DataError("train: empty dataset");
  set_num_threads(cfg.threads);
  fs::create_directories(run_dir);

  const DType dt = model.parameters().empty() ? DType::f32 : model.parameters().front().tensor.dtype();
  SgdMomentum opt(cfg.momentum, cfg.weight_decay);
  const AugmentConfig aug = cfg.augment;
  const std::uint64_t seed = cfg.seed;
  BatchStream stream(dataset, cfg.batch_size, mix_seed({seed, 0x5348554646ull}),
                     [aug, seed](const Sample& s, std::uint64_t epoch, std::size_t index) {
                       return augment(s, augment_seed(epoch, index, seed), aug);
                     });

  TrainResult result;
  std::ofstream loss_csv(run_dir / "loss.csv", std::ios::binary | std::ios::trunc);
  std::ofstream stats_csv(run_dir / "layer_stats.csv", std::ios::binary | std::ios::trunc);
  if (!loss_csv || !stats_csv) throw IoError("cannot write logs in " + run_dir.string());
  loss_csv << "iter,lr,loss\n";
  stats_csv << layer_stats_csv_header() << '\n';

  auto snapshot = [&](std::int64_t iter) {
    for (auto& row : record_layer_stats(model, iter, run_id)) {
      stats_csv << layer_stats_csv_row(row) << '\n';
      result.stats.push_back(std::move(row));
    }
    stats_csv.flush();
    save_checkpoint(model, &opt, static_cast<std::uint64_t>(iter), run_dir / checkpoint_name(iter));
  };

  const auto t0 = std::chrono::steady_clock::now();
  for (std::int64_t iter = 0; iter < cfg.max_iter; ++iter) {
    if (iter % cfg.stats_every == 0) snapshot(iter);
    const double lr = poly_lr(cfg.base_lr, iter, cfg.max_iter, cfg.poly_power);
    Batch batch = stream.next();
    Tensor x = dt == DType::f32 ? batch.images : batch.images.to(dt);
    model.zero_grad();
    double loss_value;
    {
      Tape tape;
      TapeScope scope(tape);
      Tensor logits = model.forward(x, Mode::training);
      Tensor loss = cross_entropy(logits, batch.labels);
      loss_value = loss.item();
      if (!std::isfinite(loss_value))
        throw TrainingError("non-finite loss at iter " + std::to_string(iter) + " (lr " + format_double(lr) +
                            "): " + format_double(loss_value));
      tape.backward(loss);
    }
    opt.step(model.parameters(), lr);
    loss_csv << iter << ',' << format_double(lr) << ',' << format_double(loss_value) << '\n';
    result.losses.push_back(LossRow{iter, lr, loss_value});
    if (progress && ((iter + 1) % 50 == 0 || iter + 1 == cfg.max_iter)) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      *progress << run_id << ": iter " << iter + 1 << "/" << cfg.max_iter << " loss " << loss_value << " lr " << lr
                << " (" << secs << " s)\n";
    }
  }
  snapshot(cfg.max_iter);
  loss_csv.flush();
  if (!loss_csv) throw IoError("cannot write " + (run_dir / "loss.csv").string());
  result.final_checkpoint = run_dir / "final.fwlb";
  fs::copy_file(run_dir / checkpoint_name(cfg.max_iter), result.final_checkpoint, fs::copy_options::overwrite_existing);
  return result;
}

}  // namespace wfuse
