#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wfuse/data.hpp"
#include "wfuse/models.hpp"

namespace wfuse {

struct TrainConfig {
  double base_lr = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double poly_power = 0.9;
  std::int64_t max_iter = 500;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  std::int64_t stats_every = 100;
  int threads = 1;
  AugmentConfig augment{0, 64, 0.5, 2.0, true};

  void validate() const;
};

// base * (1 - iter / max_iter)^power. Throws ScheduleError outside [0, max_iter].
double poly_lr(double base, std::int64_t iter, std::int64_t max_iter, double power);

// Plain SGD with heavy-ball momentum and L2 weight decay folded into the
// gradient:  g = grad + wd * p;  v = momentum * v + g;  p -= lr * v.
// Only Parameters are updated; fusion constants and running statistics are not
// Parameters and are never touched.
class SgdMomentum {
 public:
  SgdMomentum(double momentum, double weight_decay);

  // Throws TrainingError naming the first parameter without a gradient.
  void step(const std::vector<Parameter>& params, double lr);

  std::map<std::string, Tensor>& velocities() { return velocities_; }
  const std::map<std::string, Tensor>& velocities() const { return velocities_; }
  double momentum() const { return momentum_; }
  double weight_decay() const { return weight_decay_; }

 private:
  double momentum_;
  double weight_decay_;
  std::map<std::string, Tensor> velocities_;
};

void sgd_momentum_step(const std::vector<Parameter>& params, double lr, SgdMomentum& optimizer);

// Confusion matrix with rows = ground truth, columns = prediction.
class Confusion {
 public:
  explicit Confusion(int classes);

  void add(const Labels& truth, const Labels& prediction);
  void merge(const Confusion& other);
  std::int64_t at(int truth, int prediction) const;
  std::int64_t& at(int truth, int prediction);
  int classes() const { return classes_; }
  std::int64_t total() const;
  const std::vector<std::int64_t>& counts() const { return counts_; }

 private:
  int classes_;
  std::vector<std::int64_t> counts_;
};

struct MetricsReport {
  Confusion confusion{2};
  double miou = 0.0;
  double pixel_acc = 0.0;
  double mean_acc = 0.0;
};

// miou is the mean over classes of TP / (TP + FP + FN); mean_acc the mean of
// TP / (TP + FN). Classes whose denominator is zero are left out of the mean.
MetricsReport metrics_from_confusion(const Confusion& confusion);

// Inference-mode evaluation. Throws DataError on an empty dataset.
MetricsReport evaluate(Model& model, const std::vector<Sample>& dataset, std::size_t batch_size = 4);

struct LayerStats {
  std::string run_id;
  std::int64_t iter = 0;
  std::string layer_name;
  std::string group;  // conv_weight | bn_weight | bias
  double mean = 0.0;
  double variance = 0.0;  // population variance
};

// One row per (layer, group); layer names are parameter names without the
// trailing ".weight" / ".bias".
std::vector<LayerStats> record_layer_stats(const Model& model, std::int64_t iter,
                                           const std::string& run_id);
std::string layer_stats_csv_header();
std::string layer_stats_csv_row(const LayerStats& row);

// Checkpoint file ("FWLB" v1, little-endian). Entries are model parameters,
// BN buffers, optimizer velocities ("optim.velocity.<param>") and the
// iteration counter ("meta.iteration").
struct CheckpointEntry {
  std::string name;
  std::uint8_t dtype_code = 0;  // 0 real-32, 1 real-64, 2 unsigned 64-bit integer
  std::vector<std::uint64_t> extents;
  std::vector<std::uint8_t> payload;
};

struct CheckpointState {
  std::vector<CheckpointEntry> entries;
  std::uint64_t iteration = 0;

  const CheckpointEntry* find(const std::string& name) const;
};

void save_checkpoint(const Model& model, const SgdMomentum* optimizer, std::uint64_t iteration,
                     const std::filesystem::path& path);
// Parses the whole file; throws FormatError without returning partial state.
CheckpointState load_checkpoint(const std::filesystem::path& path);
// Validates every entry against the model first, then copies. Throws
// ShapeError naming the first mismatching parameter.
void apply_checkpoint(Model& model, SgdMomentum* optimizer, const CheckpointState& state);

struct LossRow {
  std::int64_t iter = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainResult {
  std::vector<LossRow> losses;
  std::vector<LayerStats> stats;
  std::filesystem::path final_checkpoint;
};

std::string checkpoint_name(std::int64_t iter);

// Runs cfg.max_iter steps of augment -> forward -> cross entropy -> backward ->
// SGD step. Writes loss.csv, layer_stats.csv, a checkpoint at every stats
// recording (ckpt_NNNNNNN.fwlb) and final.fwlb into run_dir. Throws
// TrainingError on a non-finite loss. Progress lines go to `progress` when set.
TrainResult train(Model& model, const std::vector<Sample>& dataset, const TrainConfig& cfg,
                  const std::filesystem::path& run_dir, const std::string& run_id,
                  std::ostream* progress = nullptr);

std::string format_double(double v);

}  // namespace wfuse
