// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits
// non-zero if any gating criterion fails.
//
//   acceptance --work DIR [--cli PATH_TO_WFUSE] [--only N]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "wfuse/data.hpp"
#include "wfuse/experiment.hpp"
#include "wfuse/models.hpp"
#include "wfuse/parallel.hpp"
#include "wfuse/rng.hpp"
#include "wfuse/train.hpp"
#include "wfuse/verify.hpp"

namespace fs = std::filesystem;
using namespace wfuse;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream is(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(is, line);) out.push_back(line);
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string f; std::getline(ss, f, ',');) out.push_back(f);
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

RunConfig desk_config(const std::string& id, std::int64_t max_iter, std::int64_t stats_every) {
  RunConfig c;
  c.id = id;
  c.model.levels = 2;
  c.model.widths = {16, 32};
  c.model.alphas = {1, 1};
  c.model.betas = {1, 1};
  c.train.max_iter = max_iter;
  c.train.batch_size = 8;
  c.train.seed = 0;
  c.train.stats_every = stats_every;
  c.train.threads = 1;
  c.train.augment = {0, 64, 0.5, 2.0, true};
  c.data.synth = SynthSpec{200, 1, 128};
  return c;
}

void write_config(const RunConfig& c, const fs::path& p) {
  std::ofstream os(p);
  os << run_config_to_json(c) << "\n";
}

// ---------------------------------------------------------------------------

Outcome verification_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  auto reports = run_suite(Suite::all, 10);
  const double secs = seconds_since(t0);
  std::size_t failed = 0;
  std::set<std::string> seen;
  std::string first_failure;
  for (const auto& r : reports) {
    seen.insert(r.check);
    if (!r.passed) {
      ++failed;
      if (first_failure.empty()) first_failure = r.check + " err " + fmt(r.max_error);
    }
  }
  const char* required[] = {"grad[conv2d]",        "grad[batch_norm2d]",       "grad[bilinear_upsample]",
                            "grad[cross_entropy]", "grad[weighted_concat]",    "grad[dynamic_channel_weight]",
                            "grad[gated_concat]",  "grad[gff_fuse]",           "absorption[beta=0.1]",
                            "absorption[beta=0.5]", "absorption[beta=2]",      "series[alpha=0.5]",
                            "bn_scale_invariance[c=0.1]", "bn_scale_invariance[c=10]", "baseline_reduction"};
  std::string missing;
  for (const char* name : required)
    if (!seen.count(name)) missing += std::string(" ") + name;
  std::ostringstream d;
  d << reports.size() - failed << "/" << reports.size() << " checks passed in " << fmt(secs) << " s";
  if (!first_failure.empty()) d << "; first failure " << first_failure;
  if (!missing.empty()) d << "; missing" << missing;
  return {failed == 0 && missing.empty() && secs < 120.0, d.str()};
}

Outcome parameter_deltas() {
  ResUNetConfig base;
  base.fusion = FusionKind::naive_concat;
  ResUNetConfig weighted;
  weighted.alphas = {0.5, 0.5, 0.5, 0.5};
  ResUNetConfig dynamic;
  dynamic.fusion = FusionKind::dynamic;
  auto mb = build_res_unet(base);
  auto mw = build_res_unet(weighted);
  auto md = build_res_unet(dynamic);
  const auto constants = static_cast<long long>(mw->fusion_constant_count()) -
                         static_cast<long long>(mb->fusion_constant_count());
  const auto learnable_w = static_cast<long long>(param_count(*mw)) - static_cast<long long>(param_count(*mb));
  const auto learnable_d = static_cast<long long>(param_count(*md)) - static_cast<long long>(param_count(*mb));
  std::ostringstream d;
  d << "weighted +" << constants << " constants (+" << learnable_w << " learnable), dynamic +" << learnable_d
    << " learnable";
  return {constants == 4 && learnable_w == 0 && learnable_d == 480, d.str()};
}

Outcome metrics_oracle() {
  Rng rng(8);
  bool exact = true;
  for (int trial = 0; trial < 100 && exact; ++trial) {
    Labels t{1, 8, 8, std::vector<std::int32_t>(64)}, p{1, 8, 8, std::vector<std::int32_t>(64)};
    for (int i = 0; i < 64; ++i) {
      t.values[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(rng.below(2));
      p.values[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(rng.below(2));
    }
    Confusion cm(2);
    cm.add(t, p);
    auto m = metrics_from_confusion(cm);
    double iou_sum = 0, acc_sum = 0;
    int n_iou = 0, n_acc = 0, correct = 0;
    for (int c = 0; c < 2; ++c) {
      long tp = 0, fp = 0, fn = 0;
      for (int i = 0; i < 64; ++i) {
        const bool truth = t.values[static_cast<std::size_t>(i)] == c;
        const bool pred = p.values[static_cast<std::size_t>(i)] == c;
        tp += truth && pred;
        fp += !truth && pred;
        fn += truth && !pred;
      }
      correct += static_cast<int>(tp);
      if (tp + fp + fn > 0) iou_sum += static_cast<double>(tp) / static_cast<double>(tp + fp + fn), ++n_iou;
      if (tp + fn > 0) acc_sum += static_cast<double>(tp) / static_cast<double>(tp + fn), ++n_acc;
    }
    exact = m.miou == iou_sum / n_iou && m.mean_acc == acc_sum / n_acc && m.pixel_acc == correct / 64.0;
  }
  Confusion hand(2);
  hand.at(0, 0) = 3;
  hand.at(0, 1) = 1;
  hand.at(1, 0) = 1;
  hand.at(1, 1) = 3;
  auto h = metrics_from_confusion(hand);
  const bool hand_ok = h.miou == 0.6 && h.pixel_acc == 0.75 && h.mean_acc == 0.75;
  std::ostringstream d;
  d << "100 random maps " << (exact ? "exact" : "MISMATCH") << "; [[3,1],[1,3]] -> (" << fmt(h.miou) << ", "
    << fmt(h.pixel_acc) << ", " << fmt(h.mean_acc) << ")";
  return {exact && hand_ok, d.str()};
}

Outcome schedule_and_optimizer() {
  const double mid = poly_lr(0.001, 90000, 180000, 0.9);
  const bool mid_ok = std::abs(mid - 0.001 * std::pow(0.5, 0.9)) <= 1e-9;
  const bool ends_ok = poly_lr(0.001, 0, 180000, 0.9) == 0.001 && poly_lr(0.001, 180000, 180000, 0.9) == 0.0;

  // two steps with constant gradient g: v1 = g', p1 = p0 - lr v1, v2 = m v1 + g'', p2 = p1 - lr v2
  const double p0 = 0.7, g = 0.3, lr = 0.01, mom = 0.9, wd = 0.0005;
  Tensor w = Tensor::from_values({1}, {p0}, DType::f64);
  w.set_requires_grad(true);
  std::vector<Parameter> params{{"w", w, ParamKind::conv_weight}};
  SgdMomentum opt(mom, wd);
  for (int i = 0; i < 2; ++i) {
    w.zero_grad();
    w.grad_data<double>()[0] = g;
    opt.step(params, lr);
  }
  const double v1 = g + wd * p0;
  const double p1 = p0 - lr * v1;
  const double v2 = mom * v1 + g + wd * p1;
  const double p2 = p1 - lr * v2;
  const bool sgd_ok = std::abs(w.at(0) - p2) <= 1e-9;
  std::ostringstream d;
  d << "poly mid " << fmt(mid) << ", endpoints " << (ends_ok ? "exact" : "WRONG") << ", momentum unroll |dp| "
    << fmt(std::abs(w.at(0) - p2));
  return {mid_ok && ends_ok && sgd_ok, d.str()};
}

Outcome desk_training(const fs::path& run_dir, const RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult r = run_training(cfg, run_dir, &std::cout);
  const double secs = seconds_since(t0);
  if (r.losses.size() < 100) return {false, "too few loss rows"};
  double head = 0, tail = 0;
  for (std::size_t i = 0; i < 50; ++i) {
    head += r.losses[i].loss;
    tail += r.losses[r.losses.size() - 50 + i].loss;
  }
  head /= 50;
  tail /= 50;
  auto eval = load_data(resolve_eval_data(cfg));
  auto m = evaluate_checkpoint(cfg, r.final_checkpoint, eval);
  std::ostringstream d;
  d << "loss " << fmt(head) << " -> " << fmt(tail) << " (ratio " << fmt(tail / head) << "), held-out miou "
    << fmt(m.miou) << " on " << eval.size() << " samples, " << fmt(secs) << " s on " << num_threads()
    << " thread(s)";
  return {tail <= 0.5 * head && m.miou >= 0.7 && secs < 600.0, d.str()};
}

bool run_cli(const std::string& cli, const std::string& args) {
  const std::string cmd = "\"" + cli + "\" " + args + " > /dev/null";
  return std::system(cmd.c_str()) == 0;
}

Outcome determinism(const fs::path& dir, const std::string& cli) {
  RunConfig cfg = desk_config("determinism", 60, 20);
  fs::create_directories(dir);
  write_config(cfg, dir / "config.json");
  const fs::path a = dir / "a", b = dir / "b";
  fs::remove_all(a);
  fs::remove_all(b);
  if (!cli.empty()) {
    const std::string common = "train --threads 1 --config \"" + (dir / "config.json").string() + "\" --out ";
    if (!run_cli(cli, common + "\"" + a.string() + "\"") || !run_cli(cli, common + "\"" + b.string() + "\""))
      return {false, "wfuse train failed"};
  } else {
    run_training(cfg, a);
    run_training(cfg, b);
  }
  std::size_t compared = 0;
  std::string diff;
  for (const auto& entry : fs::directory_iterator(a)) {
    const auto name = entry.path().filename();
    if (name == "config.json") continue;
    ++compared;
    if (!fs::exists(b / name) || read_file(a / name) != read_file(b / name)) diff += " " + name.string();
  }
  std::ostringstream d;
  d << compared << " files compared (loss.csv, layer_stats.csv, checkpoints) via "
    << (cli.empty() ? "in-process training" : "two wfuse train processes");
  if (!diff.empty()) d << "; differ:" << diff;
  return {diff.empty() && compared >= 5, d.str()};
}

Outcome tiling() {
  Image8 im{1500, 1500, 3, std::vector<std::uint8_t>(1500u * 1500u * 3u)};
  Rng rng(3);
  for (auto& p : im.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  auto tiles = tile(im, 250);
  const bool same = reassemble(tiles, 1500, 1500) == im;
  std::ostringstream d;
  d << tiles.size() << " tiles, reassembly " << (same ? "bit-exact" : "DIFFERS");
  return {tiles.size() == 36 && same, d.str()};
}

Outcome ensemble_report(const fs::path& dir, const std::string& cli) {
  fs::remove_all(dir);
  RunConfig base = desk_config("alpha_1", 500, 100);
  RunConfig weighted = desk_config("alpha_0.5", 500, 100);
  weighted.model.alphas = {0.5, 0.5};
  run_ensemble(base, 3, dir / "runs", &std::cout);
  run_ensemble(weighted, 3, dir / "runs", &std::cout);
  auto rows = write_report(dir / "runs", dir / "report");

  auto summary = lines_of(dir / "report" / "summary.csv");
  auto aggregate = lines_of(dir / "report" / "aggregate.csv");
  const bool svg = fs::exists(dir / "report" / "boxplot.svg") &&
                   read_file(dir / "report" / "boxplot.svg").find("</svg>") != std::string::npos;
  if (summary.size() != 7 || aggregate.size() != 3) return {false, "unexpected report row counts"};

  // recompute every stored checkpoint independently and compare with the CSV text
  std::size_t matched = 0;
  std::string mismatch;
  for (std::size_t i = 1; i < summary.size(); ++i) {
    auto f = split_csv(summary[i]);
    char run_name[16];
    std::snprintf(run_name, sizeof run_name, "run_%02d", std::stoi(f[1]));
    const fs::path run = dir / "runs" / f[0] / run_name;
    RunConfig cfg = load_run_config(run / "config.json");
    std::string miou;
    if (!cli.empty()) {
      const fs::path out = run / "eval.txt";
      const std::string cmd = "\"" + cli + "\" eval --ckpt \"" + (run / "final.fwlb").string() + "\" --config \"" +
                              (run / "config.json").string() + "\" > \"" + out.string() + "\"";
      if (std::system(cmd.c_str()) != 0) return {false, "wfuse eval failed for " + run.string()};
      for (const auto& line : lines_of(out))
        if (line.rfind("miou ", 0) == 0) miou = line.substr(5);
    } else {
      auto m = evaluate_checkpoint(cfg, run / "final.fwlb", load_data(resolve_eval_data(cfg)));
      miou = format_double(m.miou);
    }
    if (miou == f[3])
      ++matched;
    else
      mismatch += " " + f[0] + "/" + run_name + " (" + f[3] + " vs " + miou + ")";
  }
  std::ostringstream d;
  d << rows.size() << " runs; ";
  for (std::size_t i = 1; i < aggregate.size(); ++i) {
    auto f = split_csv(aggregate[i]);
    d << f[0] << " mean " << f[2] << " spread " << f[5] << "; ";
  }
  d << matched << "/6 re-evaluations match summary.csv exactly" << (svg ? "" : "; SVG missing");
  if (!mismatch.empty()) d << "; mismatch" << mismatch;
  return {matched == 6 && svg, d.str()};
}

Outcome layer_stats_integrity(const fs::path& desk_run, const fs::path& dir) {
  auto recorded = lines_of(desk_run / "layer_stats.csv");
  auto recomputed = recompute_run_stats(desk_run);
  std::size_t matched = 0;
  for (std::size_t i = 1; i < recorded.size() && i - 1 < recomputed.size(); ++i)
    matched += layer_stats_csv_row(recomputed[i - 1]) == recorded[i];
  const bool all_match = recorded.size() > 1 && matched == recorded.size() - 1 && recomputed.size() == matched;

  RunConfig cfg = desk_config("bn_constant", 1, 1);
  cfg.model.bn_weight_init = BnWeightInit::constant;
  fs::remove_all(dir);
  auto r = run_training(cfg, dir);
  std::size_t bn_rows = 0, bn_ok = 0;
  for (const auto& s : r.stats)
    if (s.iter == 0 && s.group == "bn_weight") {
      ++bn_rows;
      bn_ok += s.mean == 1.0 && s.variance == 0.0;
    }
  std::ostringstream d;
  d << matched << "/" << (recorded.empty() ? 0 : recorded.size() - 1) << " recorded rows reproduced; constant init: "
    << bn_ok << "/" << bn_rows << " bn_weight rows at iter 0 read (1, 0)";
  return {all_match && bn_rows > 0 && bn_ok == bn_rows, d.str()};
}

Outcome soft_report() {
  ResUNetConfig base;
  base.fusion = FusionKind::naive_concat;
  auto m = build_res_unet(base);
  const double params = static_cast<double>(param_count(*m));
  const double macs = static_cast<double>(flops_count(*m, {1, 3, 128, 128}));
  std::ostringstream d;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "baseline %.2fM params (reference 5.11M), %.2f G multiply-accumulates at 128x128 = %.2f GFLOPs "
                "(reference 5.62 GFLOPs at 125x125); non-gating",
                params / 1e6, macs / 1e9, 2 * macs / 1e9);
  return {true, buf};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "wfuse_acceptance";
  std::string cli;
  int only = 0;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string key = argv[i];
    if (key == "--work") work = argv[i + 1];
    else if (key == "--cli") cli = argv[i + 1];
    else if (key == "--only") only = std::atoi(argv[i + 1]);
    else {
      std::cerr << "usage: acceptance [--work DIR] [--cli WFUSE] [--only N]\n";
      return 2;
    }
  }
  fs::create_directories(work);
  set_num_threads(1);

  const RunConfig desk = desk_config("desk", 500, 100);
  const fs::path desk_run = work / "desk";
  bool desk_trained = false;
  auto ensure_desk = [&]() -> Outcome {
    fs::remove_all(desk_run);
    desk_trained = true;
    return desk_training(desk_run, desk);
  };

  struct Step {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  std::vector<Step> steps{
      {1, "verification suite", verification_suite},
      {2, "parameter deltas", parameter_deltas},
      {3, "metrics oracle", metrics_oracle},
      {4, "schedule and optimizer", schedule_and_optimizer},
      {5, "desk-scale training", ensure_desk},
      {6, "determinism", [&] { return determinism(work / "determinism", cli); }},
      {7, "tiling", tiling},
      {8, "ensemble report", [&] { return ensemble_report(work / "ensemble", cli); }},
      {9, "layer stats integrity",
       [&]() -> Outcome {
         if (!desk_trained) ensure_desk();
         return layer_stats_integrity(desk_run, work / "bn_constant");
       }},
      {10, "soft reporting", soft_report},
  };

  std::vector<std::string> lines;
  bool all = true;
  for (const auto& s : steps) {
    if (only && s.id != only) continue;
    Outcome o;
    try {
      o = s.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.passed;
    std::ostringstream line;
    line << (o.passed ? "PASS" : "FAIL") << " [" << s.id << "] " << s.name << ": " << o.detail;
    lines.push_back(line.str());
    std::cout << lines.back() << std::endl;
  }
  std::cout << "\n";
  for (const auto& l : lines) std::cout << l << "\n";
  return all ? 0 : 1;
}
