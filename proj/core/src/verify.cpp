#include "wfuse/verify.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "wfuse/fusion.hpp"
#include "wfuse/models.hpp"
#include "wfuse/nn.hpp"
#include "wfuse/ops.hpp"
#include "wfuse/rng.hpp"
#include "wfuse/tape.hpp"
#include "wfuse/train.hpp"

namespace wfuse {

void CheckReport::finalize() {
  passed = std::isfinite(max_error) && max_error <= tolerance;
  if (separation_bound) passed = passed && min_separation && *min_separation > *separation_bound;
}

namespace {

Tensor randn(const Shape& s, std::uint64_t seed, double sd = 1.0) { return create(s, DType::f64, Init::normal(0, sd, seed)); }

double dot(const Tensor& y, const Tensor& r) {
  auto a = y.data<double>();
  auto b = r.data<double>();
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double max_abs(const Tensor& t) {
  double m = 0;
  for (double v : t.to_vector()) m = std::max(m, std::abs(v));
  return m;
}

// max |a - b| / max(|b|_inf, floor)
double rel_err(const Tensor& a, const Tensor& b, double floor = 1e-12) {
  return max_abs_diff(a, b) / std::max(max_abs(b), floor);
}

// keeps relu / max style inputs at least 1e-3 away from their kink
Tensor away_from_zero(Tensor t) {
  for (double& v : t.mutable_data<double>()) v = v < 0 ? v - 1e-3 : v + 1e-3;
  return t;
}

Labels random_labels(std::int64_t n, std::int64_t h, std::int64_t w, int classes, std::uint64_t seed) {
  Rng rng(seed);
  Labels l{n, h, w, std::vector<std::int32_t>(static_cast<std::size_t>(n * h * w))};
  for (auto& v : l.values) v = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(classes)));
  return l;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

CheckReport grad_check(const std::string& name, const GradFn& f, const std::vector<Tensor>& inputs, double tolerance,
                       std::uint64_t seed) {
  constexpr double h = 1e-5;
  std::vector<Tensor> xs;
  for (const auto& in : inputs) {
    Tensor x = in.to(DType::f64).clone();
    x.set_requires_grad(true);
    xs.push_back(x);
  }
  Tensor r;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor y = f(xs);
    r = randn(y.shape(), mix_seed({seed, 0x52ull}));
    backward(sum(mul_elementwise(y, r)));
  }
  CheckReport rep{"grad[" + name + "]", seed, 0.0, tolerance, {}, {}, false, {}};
  for (std::size_t i = 0; i < xs.size(); ++i) {
    auto data = xs[i].mutable_data<double>();
    const std::vector<double> analytic = xs[i].has_grad() ? xs[i].grad().to_vector() : std::vector<double>(data.size(), 0.0);
    double worst = 0, scale = 1;
    for (double a : analytic) scale = std::max(scale, std::abs(a));
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double orig = data[k];
      data[k] = orig + h;
      const double lp = dot(f(xs), r);
      data[k] = orig - h;
      const double lm = dot(f(xs), r);
      data[k] = orig;
      worst = std::max(worst, std::abs((lp - lm) / (2 * h) - analytic[k]));
    }
    rep.max_error = std::max(rep.max_error, worst / scale);
  }
  rep.finalize();
  return rep;
}

std::vector<CheckReport> grad_check_suite(std::uint64_t seed) {
  std::vector<CheckReport> out;
  auto s = [&](std::uint64_t k) { return mix_seed({seed, k}); };
  auto run = [&](const std::string& name, const GradFn& f, const std::vector<Tensor>& in, double tol = 1e-6) {
    out.push_back(grad_check(name, f, in, tol, seed));
  };

  run("mul_scalar", [](const auto& x) { return mul_scalar(x[0], 0.7); }, {randn({2, 3, 4}, s(1))}, 1e-9);
  run("add", [](const auto& x) { return add(x[0], x[1]); }, {randn({2, 5}, s(2)), randn({2, 5}, s(3))});
  run("mul_elementwise", [](const auto& x) { return mul_elementwise(x[0], x[1]); },
      {randn({2, 5}, s(4)), randn({2, 5}, s(5))});
  run("relu", [](const auto& x) { return relu(x[0]); }, {away_from_zero(randn({3, 7}, s(6)))});
  run("sigmoid", [](const auto& x) { return sigmoid(x[0]); }, {randn({3, 7}, s(7), 3.0)});
  run("conv2d", [](const auto& x) { return conv2d(x[0], Conv2dParams{x[1], x[2], 1, 1}); },
      {randn({2, 3, 5, 5}, s(8)), randn({4, 3, 3, 3}, s(9)), randn({4}, s(10))});
  run("conv2d_stride2", [](const auto& x) { return conv2d(x[0], Conv2dParams{x[1], std::nullopt, 2, 1}); },
      {randn({1, 2, 6, 6}, s(11)), randn({3, 2, 3, 3}, s(12))});
  run("batch_norm2d",
      [](const auto& x) {
        BatchNormParams p{x[1], x[2], Tensor::zeros({3}, DType::f64), create({3}, DType::f64, Init::ones())};
        return batch_norm2d(x[0], p, Mode::training);
      },
      {randn({2, 3, 3, 4}, s(13), 2.0), randn({3}, s(14)), randn({3}, s(15))});
  run("batch_norm2d_inference",
      [](const auto& x) {
        BatchNormParams p{x[1], x[2], Tensor::from_values({2}, {0.3, -0.2}, DType::f64),
                          Tensor::from_values({2}, {1.5, 0.4}, DType::f64)};
        return batch_norm2d(x[0], p, Mode::inference);
      },
      {randn({2, 2, 3, 3}, s(16)), randn({2}, s(17)), randn({2}, s(18))});
  run("bilinear_upsample", [](const auto& x) { return bilinear_upsample(x[0], 2); }, {randn({1, 2, 3, 4}, s(19))});
  run("bilinear_resize", [](const auto& x) { return bilinear_resize(x[0], 7, 3); }, {randn({2, 1, 4, 5}, s(20))});
  {
    const Labels labels = random_labels(2, 3, 4, 3, s(21));
    run("cross_entropy", [labels](const auto& x) { return cross_entropy(x[0], labels); },
        {randn({2, 3, 3, 4}, s(22), 2.0)});
  }
  run("concat_channels", [](const auto& x) { return concat_channels({x[0], x[1]}); },
      {randn({2, 2, 3, 3}, s(23)), randn({2, 3, 3, 3}, s(24))});
  run("fuse_add", [](const auto& x) { return fuse_add({x[0], x[1], x[2]}); },
      {randn({1, 2, 3, 3}, s(25)), randn({1, 2, 3, 3}, s(26)), randn({1, 2, 3, 3}, s(27))});
  run("weighted_concat", [](const auto& x) { return weighted_concat(x[0], x[1], 0.5, 2.0); },
      {randn({2, 2, 3, 3}, s(28)), randn({2, 3, 3, 3}, s(29))});
  run("dynamic_channel_weight", [](const auto& x) { return dynamic_channel_weight(x[0], x[1]); },
      {randn({2, 3, 3, 3}, s(30)), randn({3}, s(31))});
  run("gate", [](const auto& x) { return gate(x[0], x[1]); }, {randn({2, 3, 3, 3}, s(32)), randn({3, 3, 1, 1}, s(33))});
  run("gff_fuse", [](const auto& x) { return gff_fuse(x[0], {x[1], x[2]}, sigmoid(x[3]), {sigmoid(x[4]), sigmoid(x[5])}); },
      {randn({1, 2, 3, 3}, s(34)), randn({1, 2, 3, 3}, s(35)), randn({1, 2, 3, 3}, s(36)), randn({1, 2, 3, 3}, s(37)),
       randn({1, 2, 3, 3}, s(38)), randn({1, 2, 3, 3}, s(39))});
  run("gated_concat", [](const auto& x) { return gated_concat(x[0], x[1], GateParams{x[2], x[3]}); },
      {randn({2, 3, 3, 3}, s(40)), randn({2, 3, 3, 3}, s(41)), randn({3, 3, 1, 1}, s(42)), randn({3, 3, 1, 1}, s(43))});
  run("absorb_weight", [](const auto& x) { return absorb_weight(x[0], 0.3); }, {randn({4, 3, 3, 3}, s(44))}, 1e-9);

  // d/dx1 of weighted_concat is alpha times the naive gradient, exactly
  {
    const double alpha = 0.5;
    Tensor x1 = randn({2, 2, 3, 3}, s(45)), x2 = randn({2, 3, 3, 3}, s(46));
    Tensor r = randn({2, 5, 3, 3}, s(47));
    auto grad_x1 = [&](bool weighted) {
      Tensor a = x1.clone(), b = x2.clone();
      a.set_requires_grad(true);
      b.set_requires_grad(true);
      Tape tape;
      TapeScope scope(tape);
      Tensor y = weighted ? weighted_concat(a, b, alpha, 1.0) : fuse_concat({a, b});
      backward(sum(mul_elementwise(y, r)));
      return a.grad().clone();
    };
    Tensor naive = grad_x1(false), weighted = grad_x1(true);
    Tensor expected = mul_scalar(naive, alpha);
    CheckReport rep{"grad[weighted_concat_alpha_scaling]", seed, max_abs_diff(weighted, expected), 0.0, {}, {}, false, {}};
    if (!bit_equal(weighted, expected)) rep.max_error = std::max(rep.max_error, 1e-300);
    rep.finalize();
    out.push_back(rep);
  }
  return out;
}

namespace {

struct TwoBranch {
  Tensor x0, w1, w2, w3, r;
};

TwoBranch make_two_branch(std::uint64_t seed) {
  auto s = [&](std::uint64_t k) { return mix_seed({seed, k}); };
  return TwoBranch{randn({2, 3, 6, 6}, s(1)), randn({4, 3, 3, 3}, s(2), 0.3), randn({4, 3, 3, 3}, s(3), 0.3),
                   randn({2, 8, 1, 1}, s(4), 0.3), randn({2, 2, 6, 6}, s(5))};
}

Tensor branch(const Tensor& x, const Tensor& w) { return relu(conv2d(x, Conv2dParams{w, std::nullopt, 1, 1})); }

}  // namespace

CheckReport absorption_check(double beta, std::uint64_t seed) {
  if (!(beta > 0)) throw ContractError("absorption_check: beta must be > 0 (got " + fmt(beta) + ")");
  const TwoBranch net = make_two_branch(seed);
  // A: beta on the branch; B: beta folded into W1
  auto run = [&](double branch_weight, const Tensor& w1_value, Tensor& out, Tensor& g1, Tensor& g2) {
    Tensor w1 = w1_value.clone(), w2 = net.w2.clone(), w3 = net.w3.clone();
    for (Tensor* t : {&w1, &w2, &w3}) t->set_requires_grad(true);
    Tape tape;
    TapeScope scope(tape);
    Tensor fused = concat_channels({mul_scalar(branch(net.x0, w1), branch_weight), branch(net.x0, w2)});
    out = conv2d(fused, Conv2dParams{w3, std::nullopt, 1, 0});
    backward(sum(mul_elementwise(out, net.r)));
    g1 = w1.grad().clone();
    g2 = w2.grad().clone();
  };
  Tensor ya, g1a, g2a, yb, g1b, g2b;
  run(beta, net.w1, ya, g1a, g2a);
  run(1.0, absorb_weight(net.w1, beta), yb, g1b, g2b);
  const double forward = rel_err(yb, ya);
  const double grad1 = rel_err(g1a, mul_scalar(g1b, beta));
  const double grad2 = rel_err(g2a, g2b);
  CheckReport rep{"absorption[beta=" + fmt(beta) + "]", seed, std::max({forward, grad1, grad2}), 1e-6, {}, {}, false, {}};
  rep.detail = "forward " + fmt(forward) + ", dW1 " + fmt(grad1) + ", dW2 " + fmt(grad2);
  rep.finalize();
  return rep;
}

CheckReport series_nonabsorption_check(double alpha, std::uint64_t seed) {
  if (!(alpha > 0)) throw ContractError("series_nonabsorption_check: alpha must be > 0 (got " + fmt(alpha) + ")");
  const TwoBranch net = make_two_branch(seed);
  const Tensor w2s = randn({4, 4, 3, 3}, mix_seed({seed, 6}), 0.3);
  const Tensor r = randn({2, 8, 6, 6}, mix_seed({seed, 7}));
  // X1 = H1(X0), X2 = H2(X1), fused = concat(a X1, X2)
  struct Out {
    Tensor fused, deep, g1;
  };
  auto run = [&](double a, const Tensor& w1_value) {
    Tensor w1 = w1_value.clone();
    w1.set_requires_grad(true);
    Tape tape;
    TapeScope scope(tape);
    Tensor x1 = branch(net.x0, w1);
    Tensor x2 = branch(x1, w2s);
    Tensor fused = weighted_concat(x1, x2, a, 1.0);
    backward(sum(mul_elementwise(fused, r)));
    return Out{fused, slice_channels(fused, 4, 4), w1.grad().clone()};
  };
  const Out weighted = run(alpha, net.w1);
  const Out plain = run(1.0, net.w1);
  const Out rescaled = run(1.0, absorb_weight(net.w1, alpha));

  CheckReport rep{"series[alpha=" + fmt(alpha) + "]", seed, 0.0, 0.0, {}, {}, false, {}};
  // (i) alpha leaves the deep branch untouched, bit for bit
  rep.max_error = bit_equal(weighted.deep, plain.deep) ? 0.0 : std::max(max_abs_diff(weighted.deep, plain.deep), 1e-300);
  // (ii) folding alpha into W1 changes the deep branch; (iii) the W1 gradient is not a rescaled copy
  const double deep_shift = max_abs_diff(rescaled.deep, plain.deep);
  const double grad_dev = rel_err(weighted.g1, mul_scalar(plain.g1, alpha));
  rep.detail = "deep-branch shift " + fmt(deep_shift) + ", dW1 deviation " + fmt(grad_dev);
  if (alpha == 1.0) {
    rep.max_error = std::max({rep.max_error, deep_shift, grad_dev});
  } else {
    rep.min_separation = std::min(deep_shift, grad_dev);
    rep.separation_bound = 1e-3;
  }
  rep.finalize();
  return rep;
}

CheckReport bn_scale_invariance_check(double c, std::uint64_t seed) {
  if (!(c > 0)) throw ContractError("bn_scale_invariance_check: c must be > 0 (got " + fmt(c) + ")");
  auto s = [&](std::uint64_t k) { return mix_seed({seed, k}); };
  // wide pre-activation spread keeps eps / var far below the tolerance for c = 0.1
  const Tensor x = randn({4, 16, 8, 8}, s(1), 3.0);
  const Tensor w = randn({8, 16, 3, 3}, s(2));
  const Tensor gamma = randn({8}, s(3)), beta = randn({8}, s(4));
  auto run = [&](const Tensor& weight) {
    BatchNormParams p{gamma, beta, Tensor::zeros({8}, DType::f64), create({8}, DType::f64, Init::ones())};
    return batch_norm2d(conv2d(x, Conv2dParams{weight, std::nullopt, 1, 1}), p, Mode::training);
  };
  const Tensor base = run(w);
  const Tensor scaled = run(mul_scalar(w, c));
  CheckReport rep{"bn_scale_invariance[c=" + fmt(c) + "]", seed, max_abs_diff(scaled, base), 1e-5, {}, {}, false, {}};
  rep.finalize();
  return rep;
}

CheckReport baseline_reduction_check(std::uint64_t seed) {
  ResUNetConfig cfg;
  cfg.levels = 2;
  cfg.widths = {8, 16};
  cfg.alphas = {1, 1};
  cfg.betas = {1, 1};
  cfg.seed = seed;
  ResUNetConfig base_cfg = cfg;
  base_cfg.fusion = FusionKind::naive_concat;
  cfg.fusion = FusionKind::weighted;
  auto weighted = build_res_unet(cfg);
  auto baseline = build_res_unet(base_cfg);

  const Tensor x = create({2, 3, 16, 16}, DType::f32, Init::normal(0.5, 0.25, mix_seed({seed, 1})));
  Rng rng(mix_seed({seed, 2}));
  Labels labels{2, 16, 16, std::vector<std::int32_t>(512)};
  for (auto& v : labels.values) v = static_cast<std::int32_t>(rng.below(2));

  CheckReport rep{"baseline_reduction", seed, 0.0, 0.0, {}, {}, false, {}};
  std::size_t mismatches = 0;
  auto compare = [&](const Tensor& a, const Tensor& b) {
    if (!bit_equal(a, b)) {
      ++mismatches;
      rep.max_error = std::max({rep.max_error, a.shape() == b.shape() ? max_abs_diff(a, b) : 1.0, 1e-300});
    }
  };
  compare(weighted->forward(x, Mode::inference), baseline->forward(x, Mode::inference));

  SgdMomentum opt_w(0.9, 0.0005), opt_b(0.9, 0.0005);
  for (auto* pair : {&weighted, &baseline}) {
    Model& m = **pair;
    m.zero_grad();
    Tape tape;
    TapeScope scope(tape);
    backward(cross_entropy(m.forward(x, Mode::training), labels));
  }
  const auto& pw = weighted->parameters();
  const auto& pb = baseline->parameters();
  if (pw.size() != pb.size()) throw ContractError("baseline_reduction_check: parameter lists differ");
  for (std::size_t i = 0; i < pw.size(); ++i) compare(pw[i].tensor.grad(), pb[i].tensor.grad());
  opt_w.step(pw, 0.01);
  opt_b.step(pb, 0.01);
  for (std::size_t i = 0; i < pw.size(); ++i) compare(pw[i].tensor, pb[i].tensor);
  compare(weighted->forward(x, Mode::inference), baseline->forward(x, Mode::inference));
  rep.detail = std::to_string(mismatches) + " mismatching tensors";
  rep.finalize();
  return rep;
}

Suite parse_suite(const std::string& name) {
  static const std::pair<const char*, Suite> names[] = {{"all", Suite::all},       {"grad", Suite::grad},
                                                        {"absorption", Suite::absorption}, {"series", Suite::series},
                                                        {"bn", Suite::bn},         {"baseline", Suite::baseline}};
  for (const auto& [n, s] : names)
    if (name == n) return s;
  throw ConfigError("unknown suite '" + name + "' (all|grad|absorption|series|bn|baseline)");
}

std::vector<CheckReport> run_suite(Suite suite, int seeds) {
  if (seeds < 1) throw ContractError("run_suite: need at least one seed");
  std::vector<CheckReport> out;
  auto want = [&](Suite s) { return suite == Suite::all || suite == s; };
  for (int i = 0; i < seeds; ++i) {
    const std::uint64_t seed = 1000 + static_cast<std::uint64_t>(i);
    if (want(Suite::grad))
      for (auto& r : grad_check_suite(seed)) out.push_back(std::move(r));
    if (want(Suite::absorption))
      for (double beta : {0.1, 0.5, 2.0}) out.push_back(absorption_check(beta, seed));
    if (want(Suite::series)) out.push_back(series_nonabsorption_check(0.5, seed));
    if (want(Suite::bn))
      for (double c : {0.1, 10.0}) out.push_back(bn_scale_invariance_check(c, seed));
    if (want(Suite::baseline)) out.push_back(baseline_reduction_check(seed));
  }
  return out;
}

std::string check_csv_header() { return "check,seed,max_error,tolerance,passed"; }

std::string check_csv_row(const CheckReport& r) {
  return r.check + "," + std::to_string(r.seed) + "," + format_double(r.max_error) + "," + format_double(r.tolerance) +
         "," + (r.passed ? "true" : "false");
}

}  // namespace wfuse
