#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "wfuse/data.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  int code = wfuse::cli::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("wfuse_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream os(p);
  os << text;
}

const char* kConfig = R"({
  "id": "tiny",
  "model": {"levels": 2, "widths": [8, 16], "alphas": [1, 1], "betas": [1, 1]},
  "train": {"max_iter": 2, "batch_size": 2, "stats_every": 1,
            "augment": {"input_size": 0, "crop": 16}},
  "data": {"synth": {"n": 4, "seed": 1, "canvas": 16}}
})";

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
  auto help = run({"--help"});
  EXPECT_EQ(help.code, 0);
  EXPECT_NE(help.out.find("verify"), std::string::npos);
  EXPECT_EQ(run({"train", "--help"}).code, 0);
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  auto bad = run({"verify", "--bogus"});
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.err.find("--bogus"), std::string::npos);
  EXPECT_EQ(run({"train", "--config", "/nonexistent.json", "--out", "x"}).code, 2);
}

TEST(Cli, VerifyPasses) {
  auto r = run({"verify", "--suite", "absorption", "--seeds", "2"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("check,seed,max_error,tolerance,passed", 0), 0u);
  EXPECT_NE(r.out.find("# 6/6 checks passed"), std::string::npos) << r.out;
  EXPECT_EQ(run({"verify", "--suite", "nope"}).code, 2);
}

TEST(Cli, TileErrors) {
  fs::path in = scratch("tile_empty");
  EXPECT_EQ(run({"tile", "--input", in.string(), "--output", (in / "out").string()}).code, 2);
  fs::create_directories(in / "images");
  fs::create_directories(in / "labels");
  wfuse::Image8 im{300, 250, 1, std::vector<std::uint8_t>(300 * 250)};
  wfuse::write_png(im, in / "images" / "a.png");
  wfuse::write_png(im, in / "labels" / "a.png");
  auto r = run({"tile", "--input", in.string(), "--output", (in / "out").string(), "--size", "250"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("300"), std::string::npos) << r.err;
  auto ok = run({"tile", "--input", in.string(), "--output", (in / "out").string(), "--size", "50"});
  EXPECT_EQ(ok.code, 0) << ok.err;
}

TEST(Cli, BadConfigIsUsageError) {
  fs::path dir = scratch("badcfg");
  write(dir / "c.json", R"({"model": {"levels": 2, "widths": [8]}, "data": {"synth": {}}})");
  auto r = run({"info", "--config", (dir / "c.json").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("model.widths"), std::string::npos) << r.err;
}

TEST(Cli, SynthTrainEvalStatsReport) {
  fs::path dir = scratch("flow");
  write(dir / "c.json", kConfig);
  const std::string cfg = (dir / "c.json").string();

  auto info = run({"info", "--config", cfg, "--size", "16"});
  EXPECT_EQ(info.code, 0);
  EXPECT_NE(info.out.find("series"), std::string::npos);

  auto synth = run({"synth", "--n", "6", "--canvas", "16", "--out", (dir / "data").string()});
  ASSERT_EQ(synth.code, 0) << synth.err;
  EXPECT_TRUE(fs::exists(dir / "data" / "test" / "images"));

  auto tr = run({"train", "--config", cfg, "--out", (dir / "run").string()});
  ASSERT_EQ(tr.code, 0) << tr.err;
  ASSERT_TRUE(fs::exists(dir / "run" / "final.fwlb"));

  auto ev = run({"eval", "--ckpt", (dir / "run" / "final.fwlb").string(), "--config", cfg, "--data",
                 (dir / "data").string()});
  ASSERT_EQ(ev.code, 0) << ev.err;
  std::istringstream is(ev.out);
  std::string key;
  double value = -1;
  bool seen = false;
  while (is >> key >> value)
    if (key == "miou") {
      seen = true;
      EXPECT_GE(value, 0.0);
      EXPECT_LE(value, 1.0);
    }
  EXPECT_TRUE(seen) << ev.out;

  auto st = run({"stats", "--run", (dir / "run").string(), "--out", (dir / "stats.csv").string()});
  EXPECT_EQ(st.code, 0) << st.err << st.out;

  auto rep = run({"report", "--runs", dir.string(), "--out", (dir / "report").string()});
  EXPECT_EQ(rep.code, 0) << rep.err;
  EXPECT_TRUE(fs::exists(dir / "report" / "summary.csv"));

  auto missing = run({"eval", "--ckpt", cfg, "--config", cfg});
  EXPECT_EQ(missing.code, 1);
}
