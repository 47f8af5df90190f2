#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "wfuse/experiment.hpp"

using namespace wfuse;
namespace fs = std::filesystem;

namespace {

const char* kConfig = R"({
  "id": "w05",
  "model": {"levels": 2, "widths": [8, 16], "fusion": "weighted", "alphas": [0.5, 1], "betas": [1, 1]},
  "train": {"max_iter": 2, "batch_size": 2, "seed": 4, "stats_every": 1,
            "augment": {"input_size": 0, "crop": 16, "scale_min": 0.5, "scale_max": 2.0, "flip": true}},
  "data": {"synth": {"n": 4, "seed": 2, "canvas": 16}}
})";

std::string error_of(const std::string& text) {
  try {
    parse_run_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, ParsesFields) {
  RunConfig c = parse_run_config(kConfig);
  EXPECT_EQ(c.id, "w05");
  EXPECT_EQ(c.model.levels, 2);
  EXPECT_EQ(c.model.alphas, (std::vector<double>{0.5, 1}));
  EXPECT_EQ(c.model.widths, (std::vector<std::int64_t>{8, 16}));
  EXPECT_EQ(c.train.max_iter, 2);
  EXPECT_EQ(c.train.seed, 4u);
  EXPECT_EQ(c.train.augment.crop, 16);
  ASSERT_TRUE(c.data.synth.has_value());
  EXPECT_EQ(c.data.synth->n, 4u);
  auto model = build_model(c);
  EXPECT_EQ(model->fusion_constant_count(), 1u);
}

TEST(Config, DefaultsAreTheReferenceSetup) {
  RunConfig c = parse_run_config(R"({"data": {"synth": {}}})");
  EXPECT_EQ(c.model.levels, 4);
  EXPECT_EQ(c.model.widths, (std::vector<std::int64_t>{32, 64, 128, 256}));
  EXPECT_EQ(c.train.base_lr, 0.001);
  EXPECT_EQ(c.train.momentum, 0.9);
  EXPECT_EQ(c.train.weight_decay, 0.0005);
}

TEST(Config, Errors) {
  EXPECT_NE(error_of(R"({"data": {"synth": {}}, "modle": {}})").find("modle"), std::string::npos);
  EXPECT_NE(error_of(R"({"data": {"synth": {}}, "model": {"widths": [1,2,3]}})").find("model.widths"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"data": {"synth": {}}, "model": {"fusion": "magic"}})").find("fusion"), std::string::npos);
  EXPECT_NE(error_of(R"({"data": {}})").find("data"), std::string::npos);
  EXPECT_NE(error_of(R"({"data": {"synth": {}}, "train": {"augment": {"crop": 20}}})").find("crop"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"data": {"synth": {}}, "model": {"fusion": "naive_concat", "alphas": [0.5,1,1,1]}})"), "");
  std::string syntax = error_of("{\n  \"id\": \"x\",\n  oops\n}");
  EXPECT_NE(syntax.find("line 3"), std::string::npos) << syntax;
  EXPECT_NE(error_of(R"({"id": "a/b", "data": {"synth": {}}})"), "");
}

TEST(Config, JsonRoundTrip) {
  RunConfig a = parse_run_config(kConfig);
  RunConfig b = parse_run_config(run_config_to_json(a));
  EXPECT_EQ(run_config_to_json(a), run_config_to_json(b));
  EXPECT_EQ(b.model.alphas, a.model.alphas);
}

TEST(Config, EvalDataDefaults) {
  RunConfig c = parse_run_config(kConfig);
  DataSpec e = resolve_eval_data(c);
  ASSERT_TRUE(e.synth.has_value());
  EXPECT_EQ(e.synth->seed, 3u);
  EXPECT_EQ(e.synth->n, 20u);
  c.data = DataSpec{fs::path("/data"), "train", std::nullopt};
  e = resolve_eval_data(c);
  EXPECT_EQ(e.split, "test");
}

TEST(Summary, AggregatesPerConfig) {
  std::vector<EnsembleRow> rows{{"a", 0, 0, 0.5, 0, 0}, {"a", 1, 1, 0.7, 0, 0}, {"b", 0, 0, 0.6, 0, 0}};
  auto s = summarize(rows);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].config_id, "a");
  EXPECT_EQ(s[0].runs, 2u);
  EXPECT_DOUBLE_EQ(s[0].mean_miou, 0.6);
  EXPECT_DOUBLE_EQ(s[0].spread, 0.2);
  EXPECT_EQ(s[1].runs, 1u);
  EXPECT_EQ(s[1].spread, 0.0);
  std::string svg = boxplot_svg(rows);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find(">a<"), std::string::npos);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
}

TEST(Experiment, TrainEvalStatsReport) {
  fs::path root = fs::temp_directory_path() / "wfuse_test_experiment";
  fs::remove_all(root);
  RunConfig c = parse_run_config(kConfig);
  auto rows = run_ensemble(c, 2, root / "runs");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1].seed, 5u);
  const fs::path run0 = root / "runs" / "w05" / "run_00";
  EXPECT_TRUE(fs::exists(run0 / "config.json"));
  EXPECT_EQ(load_run_config(run0 / "config.json").train.seed, 4u);

  auto recomputed = recompute_run_stats(run0);
  std::ifstream is(run0 / "layer_stats.csv");
  std::string line;
  std::getline(is, line);
  std::size_t i = 0;
  while (std::getline(is, line)) {
    ASSERT_LT(i, recomputed.size());
    EXPECT_EQ(layer_stats_csv_row(recomputed[i++]), line);
  }
  EXPECT_EQ(i, recomputed.size());

  auto report = write_report(root / "runs", root / "report");
  ASSERT_EQ(report.size(), 2u);
  for (std::size_t r = 0; r < 2; ++r) EXPECT_DOUBLE_EQ(report[r].miou, rows[r].miou);
  EXPECT_TRUE(fs::exists(root / "report" / "summary.csv"));
  EXPECT_TRUE(fs::exists(root / "report" / "aggregate.csv"));
  EXPECT_TRUE(fs::exists(root / "report" / "boxplot.svg"));

  std::ostringstream os;
  auto data = load_data(resolve_eval_data(c));
  print_metrics(os, evaluate_checkpoint(c, run0 / "final.fwlb", data));
  EXPECT_NE(os.str().find("miou "), std::string::npos);
}
