#include "wfuse/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <ostream>
#include <set>
#include <sstream>

#include "wfuse/parallel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace wfuse {

namespace {

[[noreturn]] void bad(const std::string& field, const std::string& why) { throw ConfigError(field + ": " + why); }

void reject_unknown(const json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) bad(path.empty() ? "<root>" : path, "expected an object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) bad(path.empty() ? key : path + "." + key, "unknown key");
  }
}

std::string join(const std::string& path, const char* key) { return path.empty() ? key : path + "." + key; }

double get_number(const json& obj, const std::string& path, const char* key, double fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number()) bad(join(path, key), "expected a number");
  return v.get<double>();
}

std::int64_t get_int(const json& obj, const std::string& path, const char* key, std::int64_t fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (v.is_number_integer() || v.is_number_unsigned()) return v.get<std::int64_t>();
  if (v.is_number_float() && std::floor(v.get<double>()) == v.get<double>()) return static_cast<std::int64_t>(v.get<double>());
  bad(join(path, key), "expected an integer");
}

bool get_bool(const json& obj, const std::string& path, const char* key, bool fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj.at(key).is_boolean()) bad(join(path, key), "expected true or false");
  return obj.at(key).get<bool>();
}

std::string get_string(const json& obj, const std::string& path, const char* key, const std::string& fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj.at(key).is_string()) bad(join(path, key), "expected a string");
  return obj.at(key).get<std::string>();
}

template <class T>
std::vector<T> get_array(const json& obj, const std::string& path, const char* key, std::vector<T> fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_array()) bad(join(path, key), "expected an array");
  std::vector<T> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number() || (std::is_integral_v<T> && !v[i].is_number_integer()))
      bad(join(path, key) + "[" + std::to_string(i) + "]", std::is_integral_v<T> ? "expected an integer" : "expected a number");
    out.push_back(v[i].get<T>());
  }
  return out;
}

std::pair<std::size_t, std::size_t> line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

DataSpec parse_data(const json& j, const std::string& path) {
  reject_unknown(j, path, {"root", "split", "synth"});
  DataSpec d;
  if (j.contains("root")) d.root = fs::path(get_string(j, path, "root", ""));
  d.split = get_string(j, path, "split", "train");
  if (j.contains("synth")) {
    const std::string sp = path + ".synth";
    const json& s = j.at("synth");
    reject_unknown(s, sp, {"n", "seed", "canvas"});
    SynthSpec syn;
    const auto n = get_int(s, sp, "n", 200);
    if (n < 1) bad(sp + ".n", "must be >= 1");
    syn.n = static_cast<std::size_t>(n);
    const auto seed = get_int(s, sp, "seed", 1);
    if (seed < 0) bad(sp + ".seed", "must be >= 0");
    syn.seed = static_cast<std::uint64_t>(seed);
    syn.canvas = get_int(s, sp, "canvas", 128);
    if (syn.canvas < 16) bad(sp + ".canvas", "must be >= 16");
    d.synth = syn;
  }
  if (d.root.has_value() == d.synth.has_value()) bad(path, "give exactly one of \"root\" or \"synth\"");
  if (d.split != "train" && d.split != "val" && d.split != "test") bad(path + ".split", "must be train, val or test");
  return d;
}

json data_to_json(const DataSpec& d) {
  json j;
  if (d.root) {
    j["root"] = d.root->generic_string();
    j["split"] = d.split;
  }
  if (d.synth) j["synth"] = {{"n", d.synth->n}, {"seed", d.synth->seed}, {"canvas", d.synth->canvas}};
  return j;
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = line_col(text, e.byte);
    throw ConfigError("JSON syntax error at line " + std::to_string(line) + ", column " + std::to_string(col) + ": " +
                      e.what());
  }
  reject_unknown(root, "", {"id", "model", "train", "data", "eval_data"});
  RunConfig cfg;
  cfg.id = get_string(root, "", "id", cfg.id);
  if (cfg.id.empty() || cfg.id.find_first_of(",/\\\n\r\" ") != std::string::npos)
    bad("id", "must be non-empty without separators or spaces");

  if (root.contains("model")) {
    const json& m = root.at("model");
    reject_unknown(m, "model",
                   {"architecture", "levels", "widths", "bottom_width", "blocks_per_level", "in_channels", "classes",
                    "fusion", "alphas", "betas", "bn_weight_init", "fused_weight", "dtype"});
    const std::string arch = get_string(m, "model", "architecture", "res_unet");
    if (arch == "res_unet")
      cfg.architecture = Architecture::res_unet;
    else if (arch == "fused_unet")
      cfg.architecture = Architecture::fused_unet;
    else
      bad("model.architecture", "expected res_unet or fused_unet, got '" + arch + "'");
    auto& mc = cfg.model;
    const auto levels = get_int(m, "model", "levels", 4);
    if (levels < 1 || levels > 6) bad("model.levels", "must be in [1, 6]");
    mc.levels = static_cast<int>(levels);
    if (levels != 4 && !m.contains("widths")) bad("model.widths", "required when levels != 4");
    mc.widths = get_array<std::int64_t>(m, "model", "widths", mc.widths);
    if (mc.widths.size() != static_cast<std::size_t>(levels))
      bad("model.widths", "expected " + std::to_string(levels) + " entries, got " + std::to_string(mc.widths.size()));
    for (auto w : mc.widths)
      if (w < 1) bad("model.widths", "entries must be >= 1");
    const std::vector<double> ones(static_cast<std::size_t>(levels), 1.0);
    mc.alphas = get_array<double>(m, "model", "alphas", ones);
    mc.betas = get_array<double>(m, "model", "betas", ones);
    for (const char* key : {"alphas", "betas"}) {
      const auto& v = std::string(key) == "alphas" ? mc.alphas : mc.betas;
      if (v.size() != static_cast<std::size_t>(levels))
        bad(std::string("model.") + key, "expected " + std::to_string(levels) + " entries, got " + std::to_string(v.size()));
    }
    mc.bottom_width = get_int(m, "model", "bottom_width", 0);
    mc.blocks_per_level = static_cast<int>(get_int(m, "model", "blocks_per_level", 1));
    mc.in_channels = get_int(m, "model", "in_channels", 3);
    mc.classes = get_int(m, "model", "classes", 2);
    try {
      mc.fusion = parse_fusion_kind(get_string(m, "model", "fusion", "weighted"));
    } catch (const ConfigError& e) {
      bad("model.fusion", e.what());
    }
    const std::string bn = get_string(m, "model", "bn_weight_init", "normal");
    if (bn == "normal")
      mc.bn_weight_init = BnWeightInit::normal;
    else if (bn == "constant")
      mc.bn_weight_init = BnWeightInit::constant;
    else
      bad("model.bn_weight_init", "expected normal or constant, got '" + bn + "'");
    const std::string dt = get_string(m, "model", "dtype", "f32");
    if (dt == "f32")
      mc.dtype = DType::f32;
    else if (dt == "f64")
      mc.dtype = DType::f64;
    else
      bad("model.dtype", "expected f32 or f64");
    mc.fused_weight = get_number(m, "model", "fused_weight", 1.0);
    if (cfg.architecture == Architecture::res_unet && mc.fused_weight != 1.0)
      bad("model.fused_weight", "only applies to fused_unet");
    try {
      if (cfg.architecture == Architecture::fused_unet)
        mc.validate();
      else
        static_cast<const ResUNetConfig&>(mc).validate();
    } catch (const Error& e) {
      bad("model", e.what());
    }
  }

  if (root.contains("train")) {
    const json& t = root.at("train");
    reject_unknown(t, "train",
                   {"base_lr", "momentum", "weight_decay", "poly_power", "max_iter", "batch_size", "seed", "stats_every",
                    "threads", "augment"});
    auto& tc = cfg.train;
    tc.base_lr = get_number(t, "train", "base_lr", tc.base_lr);
    tc.momentum = get_number(t, "train", "momentum", tc.momentum);
    tc.weight_decay = get_number(t, "train", "weight_decay", tc.weight_decay);
    tc.poly_power = get_number(t, "train", "poly_power", tc.poly_power);
    tc.max_iter = get_int(t, "train", "max_iter", tc.max_iter);
    const auto bs = get_int(t, "train", "batch_size", static_cast<std::int64_t>(tc.batch_size));
    if (bs < 1) bad("train.batch_size", "must be >= 1");
    tc.batch_size = static_cast<std::size_t>(bs);
    const auto seed = get_int(t, "train", "seed", 0);
    if (seed < 0) bad("train.seed", "must be >= 0");
    tc.seed = static_cast<std::uint64_t>(seed);
    tc.stats_every = get_int(t, "train", "stats_every", tc.stats_every);
    tc.threads = static_cast<int>(get_int(t, "train", "threads", tc.threads));
    if (t.contains("augment")) {
      const json& a = t.at("augment");
      reject_unknown(a, "train.augment", {"input_size", "crop", "scale_min", "scale_max", "flip"});
      auto& ac = tc.augment;
      ac.input_size = get_int(a, "train.augment", "input_size", ac.input_size);
      ac.crop = get_int(a, "train.augment", "crop", ac.crop);
      ac.scale_min = get_number(a, "train.augment", "scale_min", ac.scale_min);
      ac.scale_max = get_number(a, "train.augment", "scale_max", ac.scale_max);
      ac.flip = get_bool(a, "train.augment", "flip", ac.flip);
      if (ac.input_size < 0) bad("train.augment.input_size", "must be >= 0");
    }
    tc.validate();
  }
  if (cfg.train.augment.crop % (std::int64_t{1} << cfg.model.levels) != 0)
    bad("train.augment.crop", "must be divisible by 2^levels = " + std::to_string(1 << cfg.model.levels));

  if (!root.contains("data")) bad("data", "required");
  cfg.data = parse_data(root.at("data"), "data");
  if (root.contains("eval_data")) cfg.eval_data = parse_data(root.at("eval_data"), "eval_data");
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  try {
    return parse_run_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string run_config_to_json(const RunConfig& cfg) {
  const auto& m = cfg.model;
  const auto& t = cfg.train;
  json j;
  j["id"] = cfg.id;
  j["model"] = {{"architecture", cfg.architecture == Architecture::res_unet ? "res_unet" : "fused_unet"},
                {"levels", m.levels},
                {"widths", m.widths},
                {"bottom_width", m.bottom_width},
                {"blocks_per_level", m.blocks_per_level},
                {"in_channels", m.in_channels},
                {"classes", m.classes},
                {"fusion", fusion_kind_name(m.fusion)},
                {"alphas", m.alphas},
                {"betas", m.betas},
                {"bn_weight_init", m.bn_weight_init == BnWeightInit::normal ? "normal" : "constant"},
                {"fused_weight", m.fused_weight},
                {"dtype", m.dtype == DType::f64 ? "f64" : "f32"}};
  j["train"] = {{"base_lr", t.base_lr},
                {"momentum", t.momentum},
                {"weight_decay", t.weight_decay},
                {"poly_power", t.poly_power},
                {"max_iter", t.max_iter},
                {"batch_size", t.batch_size},
                {"seed", t.seed},
                {"stats_every", t.stats_every},
                {"threads", t.threads},
                {"augment",
                 {{"input_size", t.augment.input_size},
                  {"crop", t.augment.crop},
                  {"scale_min", t.augment.scale_min},
                  {"scale_max", t.augment.scale_max},
                  {"flip", t.augment.flip}}}};
  j["data"] = data_to_json(cfg.data);
  if (cfg.eval_data) j["eval_data"] = data_to_json(*cfg.eval_data);
  return j.dump(2) + "\n";
}

std::unique_ptr<Model> build_model(const RunConfig& cfg) {
  FusedUNetConfig mc = cfg.model;
  mc.seed = cfg.train.seed;
  if (cfg.architecture == Architecture::fused_unet) return build_fused_unet(mc);
  return build_res_unet(mc);
}

std::vector<Sample> load_data(const DataSpec& spec) {
  if (spec.synth) return synth_dataset(spec.synth->n, spec.synth->seed, spec.synth->canvas);
  if (!spec.root) throw ConfigError("data: no root or synth given");
  return load_split(*spec.root, spec.split);
}

DataSpec resolve_eval_data(const RunConfig& cfg) {
  if (cfg.eval_data) return *cfg.eval_data;
  DataSpec d = cfg.data;
  if (d.root) {
    d.split = "test";
  } else {
    d.synth->seed += 1;
    d.synth->n = std::max<std::size_t>(20, d.synth->n / 10);
  }
  return d;
}

TrainResult run_training(const RunConfig& cfg, const fs::path& out_dir, std::ostream* progress) {
  fs::create_directories(out_dir);
  {
    std::ofstream os(out_dir / "config.json", std::ios::binary | std::ios::trunc);
    os << run_config_to_json(cfg);
    if (!os) throw IoError("cannot write " + (out_dir / "config.json").string());
  }
  auto model = build_model(cfg);
  const auto data = load_data(cfg.data);
  return train(*model, data, cfg.train, out_dir, cfg.id, progress);
}

MetricsReport evaluate_checkpoint(const RunConfig& cfg, const fs::path& checkpoint, const std::vector<Sample>& dataset) {
  auto model = build_model(cfg);
  apply_checkpoint(*model, nullptr, load_checkpoint(checkpoint));
  return evaluate(*model, dataset, 4);
}

void print_metrics(std::ostream& os, const MetricsReport& m) {
  os << "miou " << format_double(m.miou) << "\n"
     << "pixel_acc " << format_double(m.pixel_acc) << "\n"
     << "mean_acc " << format_double(m.mean_acc) << "\n"
     << "confusion (rows = truth)\n";
  for (int t = 0; t < m.confusion.classes(); ++t) {
    os << " ";
    for (int p = 0; p < m.confusion.classes(); ++p) os << " " << m.confusion.at(t, p);
    os << "\n";
  }
}

std::vector<LayerStats> recompute_run_stats(const fs::path& run_dir) {
  const RunConfig cfg = load_run_config(run_dir / "config.json");
  auto model = build_model(cfg);
  std::vector<fs::path> ckpts;
  for (const auto& e : fs::directory_iterator(run_dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("ckpt_", 0) == 0 && e.path().extension() == ".fwlb") ckpts.push_back(e.path());
  }
  if (ckpts.empty()) throw DataError("no checkpoints in " + run_dir.string());
  std::sort(ckpts.begin(), ckpts.end());
  std::vector<LayerStats> rows;
  for (const auto& p : ckpts) {
    const CheckpointState st = load_checkpoint(p);
    apply_checkpoint(*model, nullptr, st);
    for (auto& r : record_layer_stats(*model, static_cast<std::int64_t>(st.iteration), cfg.id)) rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<EnsembleSummary> summarize(const std::vector<EnsembleRow>& rows) {
  std::vector<EnsembleSummary> out;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& s) { return s.config_id == r.config_id; });
    if (it == out.end()) {
      out.push_back(EnsembleSummary{r.config_id, 0, 0.0, r.miou, r.miou, 0.0});
      it = out.end() - 1;
    }
    ++it->runs;
    it->mean_miou += r.miou;
    it->min_miou = std::min(it->min_miou, r.miou);
    it->max_miou = std::max(it->max_miou, r.miou);
  }
  for (auto& s : out) {
    s.mean_miou /= static_cast<double>(s.runs);
    s.spread = s.max_miou - s.min_miou;
  }
  return out;
}

std::vector<EnsembleRow> run_ensemble(const RunConfig& cfg, int n_runs, const fs::path& out_dir, std::ostream* progress) {
  if (n_runs < 1) throw ContractError("run_ensemble: n_runs must be >= 1");
  const auto eval_set = load_data(resolve_eval_data(cfg));
  std::vector<EnsembleRow> rows;
  for (int run = 0; run < n_runs; ++run) {
    RunConfig c = cfg;
    c.train.seed = cfg.train.seed + static_cast<std::uint64_t>(run);
    char name[16];
    std::snprintf(name, sizeof name, "run_%02d", run);
    const fs::path dir = out_dir / cfg.id / name;
    const TrainResult tr = run_training(c, dir, progress);
    const MetricsReport m = evaluate_checkpoint(c, tr.final_checkpoint, eval_set);
    rows.push_back(EnsembleRow{cfg.id, run, c.train.seed, m.miou, m.pixel_acc, m.mean_acc});
    if (progress) *progress << cfg.id << " " << name << ": miou " << m.miou << "\n";
  }
  return rows;
}

namespace {

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(v.size() - 1, lo + 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::string boxplot_svg(const std::vector<EnsembleRow>& rows) {
  std::vector<std::string> groups;
  std::map<std::string, std::vector<double>> values;
  for (const auto& r : rows) {
    if (!values.count(r.config_id)) groups.push_back(r.config_id);
    values[r.config_id].push_back(r.miou);
  }
  double lo = 1.0, hi = 0.0;
  for (const auto& r : rows) {
    lo = std::min(lo, r.miou);
    hi = std::max(hi, r.miou);
  }
  if (rows.empty()) lo = 0, hi = 1;
  const double pad = std::max(0.01, (hi - lo) * 0.1);
  lo -= pad;
  hi += pad;
  const double W = 120.0 + 120.0 * static_cast<double>(std::max<std::size_t>(1, groups.size())), H = 360, top = 30,
               bottom = 300, left = 70;
  auto y = [&](double v) { return bottom - (v - lo) / (hi - lo) * (bottom - top); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(W) << "\" height=\"" << num(H)
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << num(W / 2) << "\" y=\"18\" text-anchor=\"middle\">mIoU per run</text>\n";
  os << "<line x1=\"" << num(left) << "\" y1=\"" << num(top) << "\" x2=\"" << num(left) << "\" y2=\"" << num(bottom)
     << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    os << "<text x=\"" << num(left - 6) << "\" y=\"" << num(y(v) + 4) << "\" text-anchor=\"end\">";
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    os << buf << "</text><line x1=\"" << num(left - 3) << "\" y1=\"" << num(y(v)) << "\" x2=\"" << num(left)
       << "\" y2=\"" << num(y(v)) << "\" stroke=\"black\"/>\n";
  }
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& v = values[groups[g]];
    const double cx = left + 60.0 + 120.0 * static_cast<double>(g);
    const double q0 = quantile(v, 0), q1 = quantile(v, 0.25), q2 = quantile(v, 0.5), q3 = quantile(v, 0.75),
                 q4 = quantile(v, 1);
    os << "<g>\n";
    os << "<line x1=\"" << num(cx) << "\" y1=\"" << num(y(q4)) << "\" x2=\"" << num(cx) << "\" y2=\"" << num(y(q0))
       << "\" stroke=\"black\"/>\n";
    for (double q : {q0, q4})
      os << "<line x1=\"" << num(cx - 15) << "\" y1=\"" << num(y(q)) << "\" x2=\"" << num(cx + 15) << "\" y2=\""
         << num(y(q)) << "\" stroke=\"black\"/>\n";
    os << "<rect x=\"" << num(cx - 30) << "\" y=\"" << num(y(q3)) << "\" width=\"60\" height=\""
       << num(std::max(1.0, y(q1) - y(q3))) << "\" fill=\"#9ecae1\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << num(cx - 30) << "\" y1=\"" << num(y(q2)) << "\" x2=\"" << num(cx + 30) << "\" y2=\""
       << num(y(q2)) << "\" stroke=\"#d62728\" stroke-width=\"2\"/>\n";
    for (double p : v)
      os << "<circle cx=\"" << num(cx) << "\" cy=\"" << num(y(p)) << "\" r=\"2.5\" fill=\"black\"/>\n";
    os << "<text x=\"" << num(cx) << "\" y=\"" << num(bottom + 20) << "\" text-anchor=\"middle\">" << groups[g]
       << "</text>\n";
    os << "<text x=\"" << num(cx) << "\" y=\"" << num(bottom + 36) << "\" text-anchor=\"middle\">n=" << v.size()
       << "</text>\n";
    os << "</g>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::vector<EnsembleRow> write_report(const fs::path& runs_dir, const fs::path& out_dir) {
  if (!fs::is_directory(runs_dir)) throw DataError("runs directory " + runs_dir.string() + " does not exist");
  std::vector<fs::path> run_dirs;
  for (const auto& e : fs::recursive_directory_iterator(runs_dir))
    if (e.is_directory() && fs::exists(e.path() / "config.json") && fs::exists(e.path() / "final.fwlb"))
      run_dirs.push_back(e.path());
  if (run_dirs.empty()) throw DataError("no finished runs (config.json + final.fwlb) under " + runs_dir.string());
  std::sort(run_dirs.begin(), run_dirs.end());

  std::vector<RunConfig> cfgs;
  for (const auto& d : run_dirs) cfgs.push_back(load_run_config(d / "config.json"));
  std::vector<EnsembleRow> rows(run_dirs.size());
  std::map<std::string, int> run_index;
  for (std::size_t i = 0; i < cfgs.size(); ++i)
    rows[i] = EnsembleRow{cfgs[i].id, run_index[cfgs[i].id]++, cfgs[i].train.seed, 0, 0, 0};

  // member evaluations are independent; each result is exact regardless of scheduling
  parallel_for(run_dirs.size(), 1, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const auto data = load_data(resolve_eval_data(cfgs[i]));
      const MetricsReport m = evaluate_checkpoint(cfgs[i], run_dirs[i] / "final.fwlb", data);
      rows[i].miou = m.miou;
      rows[i].pixel_acc = m.pixel_acc;
      rows[i].mean_acc = m.mean_acc;
    }
  });
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.config_id < b.config_id; });

  fs::create_directories(out_dir);
  auto open = [&](const std::string& name) {
    std::ofstream os(out_dir / name, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + (out_dir / name).string());
    return os;
  };
  {
    auto os = open("summary.csv");
    os << "config_id,run,seed,miou,pixel_acc,mean_acc\n";
    for (const auto& r : rows)
      os << r.config_id << ',' << r.run << ',' << r.seed << ',' << format_double(r.miou) << ','
         << format_double(r.pixel_acc) << ',' << format_double(r.mean_acc) << '\n';
  }
  const auto summaries = summarize(rows);
  {
    auto os = open("aggregate.csv");
    os << "config_id,runs,mean_miou,min_miou,max_miou,spread\n";
    for (const auto& s : summaries)
      os << s.config_id << ',' << s.runs << ',' << format_double(s.mean_miou) << ',' << format_double(s.min_miou) << ','
         << format_double(s.max_miou) << ',' << format_double(s.spread) << '\n';
  }
  open("boxplot.svg") << boxplot_svg(rows);
  for (const auto& s : summaries) {
    std::vector<EnsembleRow> group;
    for (const auto& r : rows)
      if (r.config_id == s.config_id) group.push_back(r);
    open("boxplot_" + s.config_id + ".svg") << boxplot_svg(group);
  }
  return rows;
}

}  // namespace wfuse
