#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "wfuse/data.hpp"
#include "wfuse/models.hpp"
#include "wfuse/train.hpp"

namespace wfuse {

struct SynthSpec {
  std::size_t n = 200;
  std::uint64_t seed = 1;
  std::int64_t canvas = 128;
};

// Either a dataset directory (root/<split>/{images,labels}) or an in-memory
// synthetic set.
struct DataSpec {
  std::optional<std::filesystem::path> root;
  std::string split = "train";
  std::optional<SynthSpec> synth;
};

enum class Architecture { res_unet, fused_unet };

// Parsed experiment file. The JSON schema is documented in README.md.
struct RunConfig {
  std::string id = "default";
  Architecture architecture = Architecture::res_unet;
  FusedUNetConfig model;
  TrainConfig train;
  DataSpec data;
  std::optional<DataSpec> eval_data;
};

// Throws ConfigError with the offending field (or line/column for JSON
// syntax errors). Unknown keys are rejected.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_to_json(const RunConfig& cfg);

// Model seeded from cfg.train.seed.
std::unique_ptr<Model> build_model(const RunConfig& cfg);
std::vector<Sample> load_data(const DataSpec& spec);
// Held-out data: eval_data when given, else the test split of a dataset root,
// else a synthetic set with seed synth.seed + 1 and max(20, n / 10) samples.
DataSpec resolve_eval_data(const RunConfig& cfg);

// Trains into out_dir (config.json, loss.csv, layer_stats.csv, checkpoints).
TrainResult run_training(const RunConfig& cfg, const std::filesystem::path& out_dir,
                         std::ostream* progress = nullptr);

MetricsReport evaluate_checkpoint(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                                  const std::vector<Sample>& dataset);
void print_metrics(std::ostream& os, const MetricsReport& m);

// Recomputes LayerStats rows for every checkpoint in a run directory.
std::vector<LayerStats> recompute_run_stats(const std::filesystem::path& run_dir);

struct EnsembleRow {
  std::string config_id;
  int run = 0;
  std::uint64_t seed = 0;
  double miou = 0.0;
  double pixel_acc = 0.0;
  double mean_acc = 0.0;
};

struct EnsembleSummary {
  std::string config_id;
  std::size_t runs = 0;
  double mean_miou = 0.0;
  double min_miou = 0.0;
  double max_miou = 0.0;
  double spread = 0.0;  // max - min
};

std::vector<EnsembleSummary> summarize(const std::vector<EnsembleRow>& rows);

// Trains n_runs copies with seeds train.seed + run into out_dir/<id>/run_NN.
std::vector<EnsembleRow> run_ensemble(const RunConfig& cfg, int n_runs,
                                      const std::filesystem::path& out_dir,
                                      std::ostream* progress = nullptr);

// Evaluates the final checkpoint of every run directory under runs_dir and
// writes summary.csv, aggregate.csv and box-plot SVGs into out_dir.
std::vector<EnsembleRow> write_report(const std::filesystem::path& runs_dir,
                                      const std::filesystem::path& out_dir);

std::string boxplot_svg(const std::vector<EnsembleRow>& rows);

}  // namespace wfuse
