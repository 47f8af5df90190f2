#include "cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <fstream>
#include <iostream>

#include "wfuse/data.hpp"
#include "wfuse/experiment.hpp"
#include "wfuse/models.hpp"
#include "wfuse/parallel.hpp"
#include "wfuse/train.hpp"
#include "wfuse/verify.hpp"

namespace fs = std::filesystem;

namespace wfuse::cli {

namespace {

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kUsage = 2;

struct Options {
  // tile
  std::string tile_input, tile_output;
  std::int64_t tile_size = 250;
  // synth
  std::size_t synth_n = 200;
  std::uint64_t synth_seed = 1;
  std::int64_t synth_canvas = 128;
  std::string synth_out;
  // train / ensemble / eval / info
  std::string config, out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  int runs = 10;
  std::string ckpt, data, split = "test";
  std::int64_t info_size = 128;
  // verify
  std::string suite = "all";
  int seeds = 10;
  std::string verify_out;
  // stats / report
  std::string run_dir, runs_dir;
};

RunConfig config_with_overrides(const Options& o) {
  RunConfig cfg = load_run_config(o.config);
  if (o.seed) cfg.train.seed = *o.seed;
  if (o.threads) {
    if (*o.threads < 1) throw ConfigError("--threads must be >= 1");
    cfg.train.threads = *o.threads;
  }
  return cfg;
}

int cmd_tile(const Options& o, std::ostream& out) {
  const TileSummary s = tile_directory(o.tile_input, o.tile_output, o.tile_size);
  out << "tiled " << s.images << " images into " << s.tiles << " tiles of " << o.tile_size << "x" << o.tile_size
      << " under " << o.tile_output << "\n";
  return kOk;
}

int cmd_synth(const Options& o, std::ostream& out) {
  if (o.synth_n < 3) throw ConfigError("--n must be >= 3 (train, val and test each need a sample)");
  const auto all = synth_dataset(o.synth_n, o.synth_seed, o.synth_canvas);
  const std::size_t n_test = std::max<std::size_t>(1, o.synth_n / 10);
  const std::size_t n_val = std::max<std::size_t>(1, o.synth_n / 20);
  const std::size_t n_train = o.synth_n - n_test - n_val;
  const std::vector<Sample> train(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
  const std::vector<Sample> val(all.begin() + static_cast<std::ptrdiff_t>(n_train),
                                all.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  const std::vector<Sample> test(all.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), all.end());
  write_dataset(train, val, test, o.synth_out);
  out << "wrote " << n_train << " train, " << n_val << " val, " << n_test << " test samples to " << o.synth_out << "\n";
  return kOk;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = config_with_overrides(o);
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult r = run_training(cfg, o.out, &err);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out << "trained " << cfg.id << " for " << cfg.train.max_iter << " iterations in " << secs << " s; final loss "
      << r.losses.back().loss << "\ncheckpoint " << r.final_checkpoint.string() << "\n";
  return kOk;
}

int cmd_ensemble(const Options& o, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = config_with_overrides(o);
  const auto rows = run_ensemble(cfg, o.runs, o.out, &err);
  for (const auto& s : summarize(rows))
    out << s.config_id << ": " << s.runs << " runs, mean miou " << s.mean_miou << ", min " << s.min_miou << ", max "
        << s.max_miou << ", spread " << s.spread << "\n";
  return kOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const RunConfig cfg = config_with_overrides(o);
  DataSpec spec = resolve_eval_data(cfg);
  if (!o.data.empty()) spec = DataSpec{fs::path(o.data), o.split, std::nullopt};
  const MetricsReport m = evaluate_checkpoint(cfg, o.ckpt, load_data(spec));
  print_metrics(out, m);
  return kOk;
}

int cmd_info(const Options& o, std::ostream& out) {
  const RunConfig cfg = config_with_overrides(o);
  auto model = build_model(cfg);
  classify_fusion_sites(*model, {1, cfg.model.in_channels, o.info_size, o.info_size});
  out << model->summary();
  out << "multiply-accumulates at " << o.info_size << "x" << o.info_size << ": "
      << flops_count(*model, {1, cfg.model.in_channels, o.info_size, o.info_size}) << "\n";
  return kOk;
}

int cmd_verify(const Options& o, std::ostream& out) {
  const Suite suite = parse_suite(o.suite);
  if (o.seeds < 1) throw ConfigError("--seeds must be >= 1");
  const auto reports = run_suite(suite, o.seeds);
  std::size_t failed = 0;
  std::ofstream csv;
  if (!o.verify_out.empty()) {
    if (fs::path(o.verify_out).has_parent_path()) fs::create_directories(fs::path(o.verify_out).parent_path());
    csv.open(o.verify_out, std::ios::binary | std::ios::trunc);
    if (!csv) throw IoError("cannot write " + o.verify_out);
    csv << check_csv_header() << "\n";
  }
  out << check_csv_header() << "\n";
  for (const auto& r : reports) {
    out << check_csv_row(r) << "\n";
    if (csv.is_open()) csv << check_csv_row(r) << "\n";
    failed += !r.passed;
  }
  out << "# " << reports.size() - failed << "/" << reports.size() << " checks passed\n";
  return failed == 0 ? kOk : kFailed;
}

int cmd_stats(const Options& o, std::ostream& out) {
  const auto rows = recompute_run_stats(o.run_dir);
  if (fs::path(o.out).has_parent_path()) fs::create_directories(fs::path(o.out).parent_path());
  std::ofstream os(o.out, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + o.out);
  os << layer_stats_csv_header() << "\n";
  for (const auto& r : rows) os << layer_stats_csv_row(r) << "\n";
  out << "wrote " << rows.size() << " rows to " << o.out << "\n";
  // compare with the log written during training
  std::ifstream logged(fs::path(o.run_dir) / "layer_stats.csv", std::ios::binary);
  if (logged) {
    std::string line;
    std::getline(logged, line);
    std::size_t i = 0, mismatches = 0;
    while (std::getline(logged, line)) {
      if (i >= rows.size() || line != layer_stats_csv_row(rows[i])) ++mismatches;
      ++i;
    }
    if (i != rows.size()) mismatches += rows.size() > i ? rows.size() - i : 0;
    out << (mismatches == 0 ? "matches" : "DIFFERS FROM") << " the recorded layer_stats.csv";
    if (mismatches) out << " (" << mismatches << " rows)";
    out << "\n";
    if (mismatches) return kFailed;
  }
  return kOk;
}

int cmd_report(const Options& o, std::ostream& out) {
  const auto rows = write_report(o.runs_dir, o.out);
  for (const auto& s : summarize(rows))
    out << s.config_id << ": " << s.runs << " runs, mean miou " << s.mean_miou << ", min " << s.min_miou << ", max "
        << s.max_miou << ", spread " << s.spread << "\n";
  out << "wrote summary.csv, aggregate.csv and box plots to " << o.out << "\n";
  return kOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"wfuse: weighted skip fusion for residual U-Nets", "wfuse"};
  app.require_subcommand(1);
  Options o;

  auto* tile_cmd = app.add_subcommand("tile", "Cut images/ and labels/ into square tiles plus a manifest");
  tile_cmd->add_option("--input", o.tile_input, "Input directory (images/, labels/ or train|val|test splits)")->required();
  tile_cmd->add_option("--output", o.tile_output, "Output directory")->required();
  tile_cmd->add_option("--size", o.tile_size, "Tile edge in pixels")->capture_default_str();

  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic rectangle-building dataset");
  synth_cmd->add_option("--n", o.synth_n, "Number of samples")->capture_default_str();
  synth_cmd->add_option("--seed", o.synth_seed, "Generator seed")->capture_default_str();
  synth_cmd->add_option("--canvas", o.synth_canvas, "Image edge in pixels")->capture_default_str();
  synth_cmd->add_option("--out", o.synth_out, "Output dataset root")->required();

  auto* train_cmd = app.add_subcommand("train", "Train one model from a JSON run config");
  train_cmd->add_option("--config", o.config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", o.out, "Run directory")->required();
  train_cmd->add_option("--seed", o.seed, "Override train.seed");
  train_cmd->add_option("--threads", o.threads, "Override train.threads");

  auto* ens_cmd = app.add_subcommand("ensemble", "Train --runs copies with seeds seed+0 .. seed+runs-1");
  ens_cmd->add_option("--config", o.config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  ens_cmd->add_option("--runs", o.runs, "Number of runs")->capture_default_str();
  ens_cmd->add_option("--out", o.out, "Output directory; runs land in <out>/<id>/run_NN")->required();
  ens_cmd->add_option("--seed", o.seed, "Override train.seed");
  ens_cmd->add_option("--threads", o.threads, "Override train.threads");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--ckpt", o.ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--config", o.config, "Run config the checkpoint was trained with")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", o.data, "Dataset root (default: the config's held-out data)");
  eval_cmd->add_option("--split", o.split, "Split under --data")->capture_default_str();
  eval_cmd->add_option("--threads", o.threads, "Worker threads");

  auto* info_cmd = app.add_subcommand("info", "Print parameter count, fusion sites and multiply-accumulates");
  info_cmd->add_option("--config", o.config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  info_cmd->add_option("--size", o.info_size, "Square input extent")->capture_default_str();

  auto* verify_cmd = app.add_subcommand("verify", "Run the verification suite");
  verify_cmd->add_option("--suite", o.suite, "all|grad|absorption|series|bn|baseline")
      ->capture_default_str()
      ->check(CLI::IsMember({"all", "grad", "absorption", "series", "bn", "baseline"}));
  verify_cmd->add_option("--seeds", o.seeds, "Seeds per check")->capture_default_str();
  verify_cmd->add_option("--out", o.verify_out, "Also write the CSV report here");

  auto* stats_cmd = app.add_subcommand("stats", "Recompute LayerStats from a run's checkpoints");
  stats_cmd->add_option("--run", o.run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
  stats_cmd->add_option("--out", o.out, "Output CSV")->required();

  auto* report_cmd = app.add_subcommand("report", "Evaluate every finished run and write summary CSVs and box plots");
  report_cmd->add_option("--runs", o.runs_dir, "Directory containing run directories")->required()->check(CLI::ExistingDirectory);
  report_cmd->add_option("--out", o.out, "Output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    // subcommand help requests surface here too
    if (e.get_exit_code() == 0) {
      for (auto* sub : app.get_subcommands()) out << sub->help();
      if (app.get_subcommands().empty()) out << app.help();
      return kOk;
    }
    err << "error: " << e.what() << "\n";
    if (!app.get_subcommands().empty())
      err << "run 'wfuse " << app.get_subcommands().front()->get_name() << " --help' for usage\n";
    else
      err << "run 'wfuse --help' for usage\n";
    return kUsage;
  }

  const int saved_threads = num_threads();
  const bool is_tile = tile_cmd->parsed();
  try {
    if (o.threads && !train_cmd->parsed() && !ens_cmd->parsed()) set_num_threads(*o.threads);
    int rc = kOk;
    if (is_tile) rc = cmd_tile(o, out);
    else if (synth_cmd->parsed()) rc = cmd_synth(o, out);
    else if (train_cmd->parsed()) rc = cmd_train(o, out, err);
    else if (ens_cmd->parsed()) rc = cmd_ensemble(o, out, err);
    else if (eval_cmd->parsed()) rc = cmd_eval(o, out);
    else if (info_cmd->parsed()) rc = cmd_info(o, out);
    else if (verify_cmd->parsed()) rc = cmd_verify(o, out);
    else if (stats_cmd->parsed()) rc = cmd_stats(o, out);
    else if (report_cmd->parsed()) rc = cmd_report(o, out);
    set_num_threads(saved_threads);
    return rc;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    set_num_threads(saved_threads);
    return kUsage;
  } catch (const TilingError& e) {
    err << "tiling error: " << e.what() << "\n";
    set_num_threads(saved_threads);
    return kUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    set_num_threads(saved_threads);
    // a tile input without usable images is a usage problem
    return is_tile ? kUsage : kFailed;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    set_num_threads(saved_threads);
    return kFailed;
  }
}

}  // namespace wfuse::cli
