#include "wfuse/models.hpp"

#include <cmath>
#include <sstream>

#include "wfuse/ops.hpp"
#include "wfuse/rng.hpp"
#include "wfuse/tape.hpp"

namespace wfuse {

const char* param_kind_name(ParamKind k) {
  switch (k) {
    case ParamKind::conv_weight:
      return "conv_weight";
    case ParamKind::bn_weight:
      return "bn_weight";
    case ParamKind::bn_bias:
      return "bn_bias";
    case ParamKind::conv_bias:
      return "conv_bias";
    case ParamKind::fusion_scalar:
      return "fusion_scalar";
    case ParamKind::fusion_channel:
      return "fusion_channel";
    case ParamKind::gate_weight:
      return "gate_weight";
  }
  return "?";
}

const char* topology_name(Topology t) {
  switch (t) {
    case Topology::unknown:
      return "unknown";
    case Topology::series:
      return "series";
    case Topology::parallel:
      return "parallel";
  }
  return "?";
}

void Model::zero_grad() const {
  for (const auto& p : params_) p.tensor.zero_grad();
}

std::size_t Model::fusion_constant_count() const {
  std::size_t n = 0;
  for (const auto& s : sites_) {
    if (s.spec.kind != FusionKind::weighted) continue;
    const std::size_t skip_branches = static_cast<std::size_t>(architecture() == "fused_unet" ? s.level : 1);
    if (s.spec.alpha != 1.0) n += skip_branches;
    if (s.spec.beta != 1.0) ++n;
  }
  return n;
}

std::string Model::summary() const {
  std::ostringstream os;
  os << architecture() << ": " << param_count(*this) << " learnable parameters in " << params_.size()
     << " tensors, +" << fusion_constant_count() << " fusion constants\n";
  for (const auto& s : sites_) {
    os << "  site " << s.name << " (level " << s.level << "): " << fusion_kind_name(s.spec.kind);
    if (s.spec.kind == FusionKind::weighted) os << " alpha=" << s.spec.alpha << " beta=" << s.spec.beta;
    os << " [" << topology_name(s.topology) << "]\n";
  }
  return os.str();
}

void Model::check_input(const Tensor& x) const {
  if (x.rank() != 4)
    throw ShapeError(architecture() + ": expected N x C x H x W input, got " + shape_str(x.shape()));
  const std::int64_t m = size_multiple();
  if (x.dim(2) % m != 0 || x.dim(3) % m != 0)
    throw ShapeError(architecture() + ": input extent " + std::to_string(x.dim(2)) + "x" +
                     std::to_string(x.dim(3)) + " is not divisible by " + std::to_string(m));
}

std::size_t param_count(const Model& model) {
  std::size_t n = 0;
  for (const auto& p : model.parameters()) n += p.tensor.numel();
  return n;
}

const std::vector<Parameter>& named_parameters(const Model& model) { return model.parameters(); }

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

class Builder {
 public:
  Builder(const BuildOptions& opts, std::vector<Parameter>& params, std::vector<Buffer>& buffers)
      : opts_(opts), params_(params), buffers_(buffers) {}

  Tensor param(const std::string& name, const Shape& shape, ParamKind kind, const Init& init) {
    Tensor t = create(shape, opts_.dtype, init);
    t.set_requires_grad(true);
    params_.push_back(Parameter{name, t, kind});
    return t;
  }

  std::uint64_t seed_for(const std::string& name) const { return mix_seed({opts_.seed, fnv1a(name)}); }

  // He-normal init, std = sqrt(2 / fan_in).
  Tensor conv_weight(const std::string& layer, std::int64_t out, std::int64_t in, std::int64_t k) {
    const std::string name = layer + ".weight";
    const double stddev = std::sqrt(2.0 / static_cast<double>(in * k * k));
    const Init init = opts_.zero_conv_weights ? Init::zeros() : Init::normal(0.0, stddev, seed_for(name));
    return param(name, {out, in, k, k}, ParamKind::conv_weight, init);
  }

  BatchNormParams batch_norm(const std::string& layer, std::int64_t channels) {
    BatchNormParams bn;
    const std::string wname = layer + ".weight";
    const Init winit = opts_.bn_weight_init == BnWeightInit::constant ? Init::constant(1.0)
                                                                      : Init::normal(0.0, 1.0, seed_for(wname));
    bn.weight = param(wname, {channels}, ParamKind::bn_weight, winit);
    bn.bias = param(layer + ".bias", {channels}, ParamKind::bn_bias, Init::zeros());
    bn.running_mean = create({channels}, opts_.dtype, Init::zeros());
    bn.running_var = create({channels}, opts_.dtype, Init::ones());
    buffers_.push_back(Buffer{layer + ".running_mean", bn.running_mean});
    buffers_.push_back(Buffer{layer + ".running_var", bn.running_var});
    return bn;
  }

  const BuildOptions& options() const { return opts_; }

 private:
  BuildOptions opts_;
  std::vector<Parameter>& params_;
  std::vector<Buffer>& buffers_;
};

// Bias-free convolution followed by batch normalization.
struct ConvBn {
  Conv2dParams conv;
  BatchNormParams bn;

  ConvBn() = default;
  ConvBn(Builder& b, const std::string& conv_name, const std::string& bn_name, std::int64_t in,
         std::int64_t out, std::int64_t k, int stride) {
    conv.weight = b.conv_weight(conv_name, out, in, k);
    conv.stride = stride;
    conv.padding = static_cast<int>(k / 2);
    bn = b.batch_norm(bn_name, out);
  }

  Tensor forward(const Tensor& x, Mode mode, bool with_relu) {
    Tensor y = batch_norm2d(conv2d(x, conv), bn, mode);
    return with_relu ? relu(y) : y;
  }
};

// 1x1 reduce -> 3x3 (strided) -> 1x1 expand, each conv -> BN (-> ReLU), plus an
// identity or 1x1 projection shortcut; ReLU after the residual addition.
struct BottleneckBlock {
  ConvBn reduce, spatial, expand;
  std::optional<ConvBn> projection;

  BottleneckBlock(Builder& b, const std::string& prefix, const BottleneckConfig& cfg)
      : reduce(b, prefix + ".conv1", prefix + ".bn1", cfg.in_channels, cfg.mid_channels, 1, 1),
        spatial(b, prefix + ".conv2", prefix + ".bn2", cfg.mid_channels, cfg.mid_channels, 3, cfg.stride),
        expand(b, prefix + ".conv3", prefix + ".bn3", cfg.mid_channels, cfg.out_channels, 1, 1) {
    if (cfg.stride != 1 || cfg.in_channels != cfg.out_channels)
      projection.emplace(b, prefix + ".proj", prefix + ".proj_bn", cfg.in_channels, cfg.out_channels, 1,
                         cfg.stride);
  }

  Tensor forward(const Tensor& x, Mode mode) {
    Tensor main = reduce.forward(x, mode, true);
    main = spatial.forward(main, mode, true);
    main = expand.forward(main, mode, false);
    Tensor shortcut = projection ? projection->forward(x, mode, false) : x;
    return relu(fuse_add({main, shortcut}));
  }
};

void validate_bottleneck(const BottleneckConfig& cfg) {
  if (cfg.in_channels < 1 || cfg.mid_channels < 1 || cfg.out_channels < 1)
    throw ContractError("bottleneck: channel counts must be positive");
  if (cfg.stride != 1 && cfg.stride != 2) throw ContractError("bottleneck: stride must be 1 or 2");
}

std::int64_t mid_width(std::int64_t out) { return std::max<std::int64_t>(1, out / 4); }

class BottleneckModel final : public Model {
 public:
  BottleneckModel(const BottleneckConfig& cfg, const BuildOptions& opts) {
    validate_bottleneck(cfg);
    Builder b(opts, params_, buffers_);
    block_.emplace(b, "block", cfg);
  }

  Tensor forward(const Tensor& x, Mode mode, ForwardTrace*) override { return block_->forward(x, mode); }
  std::string architecture() const override { return "bottleneck"; }

 private:
  std::optional<BottleneckBlock> block_;
};

std::vector<BottleneckBlock> make_stage(Builder& b, const std::string& prefix, std::int64_t in,
                                        std::int64_t out, int stride, int blocks) {
  std::vector<BottleneckBlock> stage;
  stage.emplace_back(b, prefix + ".block0", BottleneckConfig{in, mid_width(out), out, stride});
  for (int i = 1; i < blocks; ++i)
    stage.emplace_back(b, prefix + ".block" + std::to_string(i), BottleneckConfig{out, mid_width(out), out, 1});
  return stage;
}

Tensor run_stage(std::vector<BottleneckBlock>& stage, Tensor x, Mode mode) {
  for (auto& block : stage) x = block.forward(x, mode);
  return x;
}

BuildOptions options_from(const ResUNetConfig& cfg) {
  BuildOptions o;
  o.dtype = cfg.dtype;
  o.seed = cfg.seed;
  o.bn_weight_init = cfg.bn_weight_init;
  return o;
}

// Encoder shared by both U-Nets. Stage 0 runs at full resolution; stage s
// (1..levels) downsamples with a stride-2 bottleneck. Outputs of stages
// 0..levels-1 are the skips of fusion levels 1..levels.
struct Encoder {
  ConvBn stem;
  std::vector<std::vector<BottleneckBlock>> stages;

  Encoder(Builder& b, const ResUNetConfig& cfg)
      : stem(b, "stem.conv", "stem.bn", cfg.in_channels, cfg.widths[0], 3, 1) {
    stages.push_back(make_stage(b, "enc.0", cfg.widths[0], cfg.widths[0], 1, cfg.blocks_per_level));
    for (int s = 1; s <= cfg.levels; ++s) {
      const std::int64_t in = cfg.widths[static_cast<std::size_t>(s - 1)];
      const std::int64_t out = s < cfg.levels ? cfg.widths[static_cast<std::size_t>(s)] : cfg.resolved_bottom_width();
      stages.push_back(make_stage(b, "enc." + std::to_string(s), in, out, 2, cfg.blocks_per_level));
    }
  }

  // Returns {skip_1, ..., skip_levels, bottom}.
  std::vector<Tensor> forward(const Tensor& x, Mode mode) {
    std::vector<Tensor> outs;
    Tensor h = stem.forward(x, mode, true);
    for (auto& stage : stages) {
      h = run_stage(stage, h, mode);
      outs.push_back(h);
    }
    return outs;
  }
};

class ResUNet final : public Model {
 public:
  explicit ResUNet(const ResUNetConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    Builder b(options_from(cfg), params_, buffers_);
    encoder_.emplace(b, cfg);
    std::int64_t deep_channels = cfg.resolved_bottom_width();
    for (int level = cfg.levels; level >= 1; --level) {
      const std::string prefix = "dec." + std::to_string(level);
      const std::int64_t w = cfg.widths[static_cast<std::size_t>(level - 1)];
      DecoderStage stage;
      stage.up = ConvBn(b, prefix + ".up_conv", prefix + ".up_bn", deep_channels, w, 3, 1);
      FusionSpec spec;
      spec.kind = cfg.fusion;
      if (cfg.fusion == FusionKind::weighted) {
        spec.alpha = cfg.alphas[static_cast<std::size_t>(level - 1)];
        spec.beta = cfg.betas[static_cast<std::size_t>(level - 1)];
      } else if (cfg.fusion == FusionKind::dynamic) {
        spec.channel_weights = b.param(prefix + ".fuse.channel_weight", {w}, ParamKind::fusion_channel, Init::ones());
      } else if (cfg.fusion == FusionKind::gated) {
        GateParams g;
        for (auto [name, slot] : {std::pair{"skip_gate", &g.skip_gate}, std::pair{"deep_gate", &g.deep_gate}}) {
          const std::string pname = prefix + ".fuse." + name + ".weight";
          *slot = b.param(pname, {w, w, 1, 1}, ParamKind::gate_weight, Init::normal(0.0, 0.01, b.seed_for(pname)));
        }
        spec.gates = g;
      }
      spec.validate();
      const std::int64_t fused = spec.output_channels(w, w);
      stage.blocks = make_stage(b, prefix, fused, w, 1, cfg.blocks_per_level);
      sites_.push_back(FusionSiteInfo{prefix + ".fuse", level, spec, Topology::unknown});
      decoder_.push_back(std::move(stage));
      deep_channels = w;
    }
    head_.weight = b.conv_weight("head", cfg.classes, cfg.widths[0], 1);
    head_.bias = b.param("head.bias", {cfg.classes}, ParamKind::conv_bias, Init::zeros());
  }

  Tensor forward(const Tensor& x, Mode mode, ForwardTrace* trace) override {
    check_input(x);
    if (x.dim(1) != cfg_.in_channels)
      throw ShapeError("res_unet: expected " + std::to_string(cfg_.in_channels) + " input channels, got " +
                       std::to_string(x.dim(1)));
    std::vector<Tensor> enc = encoder_->forward(x, mode);
    Tensor d = enc.back();
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
      const int level = cfg_.levels - static_cast<int>(i);
      auto& stage = decoder_[i];
      Tensor deep = stage.up.forward(bilinear_upsample(d, 2), mode, true);
      const Tensor& skip = enc[static_cast<std::size_t>(level - 1)];
      Tensor fused = fuse(sites_[i].spec, skip, deep);
      if (trace) trace->sites.push_back(SiteTrace{skip, deep, fused});
      d = run_stage(stage.blocks, fused, mode);
    }
    return conv2d(d, head_);
  }

  std::string architecture() const override { return "res_unet"; }
  std::int64_t size_multiple() const override { return std::int64_t{1} << cfg_.levels; }

 private:
  struct DecoderStage {
    ConvBn up;
    std::vector<BottleneckBlock> blocks;
  };

  ResUNetConfig cfg_;
  std::optional<Encoder> encoder_;
  std::vector<DecoderStage> decoder_;
  Conv2dParams head_;
};

// Dense shallow-to-deep skips: decoder level i concatenates every encoder skip
// j <= i, bilinearly resized to level i, each scaled by fused_weight, with the
// decoder stream.
class FusedUNet final : public Model {
 public:
  explicit FusedUNet(const FusedUNetConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    Builder b(options_from(cfg), params_, buffers_);
    encoder_.emplace(b, cfg);
    std::int64_t deep_channels = cfg.resolved_bottom_width();
    for (int level = cfg.levels; level >= 1; --level) {
      const std::string prefix = "dec." + std::to_string(level);
      const std::int64_t w = cfg.widths[static_cast<std::size_t>(level - 1)];
      DecoderStage stage;
      stage.up = ConvBn(b, prefix + ".up_conv", prefix + ".up_bn", deep_channels, w, 3, 1);
      std::int64_t fused = w;
      for (int j = 1; j <= level; ++j) fused += cfg.widths[static_cast<std::size_t>(j - 1)];
      stage.blocks = make_stage(b, prefix, fused, w, 1, cfg.blocks_per_level);
      FusionSpec spec;
      spec.kind = FusionKind::weighted;
      spec.alpha = cfg.fused_weight;
      sites_.push_back(FusionSiteInfo{prefix + ".fuse", level, spec, Topology::unknown});
      decoder_.push_back(std::move(stage));
      deep_channels = w;
    }
    head_.weight = b.conv_weight("head", cfg.classes, cfg.widths[0], 1);
    head_.bias = b.param("head.bias", {cfg.classes}, ParamKind::conv_bias, Init::zeros());
  }

  Tensor forward(const Tensor& x, Mode mode, ForwardTrace* trace) override {
    check_input(x);
    if (x.dim(1) != cfg_.in_channels)
      throw ShapeError("fused_unet: expected " + std::to_string(cfg_.in_channels) + " input channels, got " +
                       std::to_string(x.dim(1)));
    std::vector<Tensor> enc = encoder_->forward(x, mode);
    Tensor d = enc.back();
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
      const int level = cfg_.levels - static_cast<int>(i);
      auto& stage = decoder_[i];
      Tensor deep = stage.up.forward(bilinear_upsample(d, 2), mode, true);
      const Tensor& same_level = enc[static_cast<std::size_t>(level - 1)];
      std::vector<Tensor> branches;
      for (int j = 1; j <= level; ++j) {
        Tensor e = bilinear_resize(enc[static_cast<std::size_t>(j - 1)], same_level.dim(2), same_level.dim(3));
        branches.push_back(mul_scalar(e, cfg_.fused_weight));
      }
      branches.push_back(deep);
      Tensor fused = concat_channels(branches);
      if (trace) trace->sites.push_back(SiteTrace{same_level, deep, fused});
      d = run_stage(stage.blocks, fused, mode);
    }
    return conv2d(d, head_);
  }

  std::string architecture() const override { return "fused_unet"; }
  std::int64_t size_multiple() const override { return std::int64_t{1} << cfg_.levels; }

 private:
  struct DecoderStage {
    ConvBn up;
    std::vector<BottleneckBlock> blocks;
  };

  FusedUNetConfig cfg_;
  std::optional<Encoder> encoder_;
  std::vector<DecoderStage> decoder_;
  Conv2dParams head_;
};

}  // namespace

void ResUNetConfig::validate() const {
  if (levels < 1 || levels > 6) throw ContractError("levels must be in [1, 6], got " + std::to_string(levels));
  const auto L = static_cast<std::size_t>(levels);
  if (widths.size() != L || alphas.size() != L || betas.size() != L)
    throw ContractError("widths, alphas and betas need one entry per level (" + std::to_string(levels) + ")");
  for (auto w : widths)
    if (w < 1) throw ContractError("channel widths must be positive");
  if (bottom_width < 0) throw ContractError("bottom_width must be >= 0");
  if (blocks_per_level < 1) throw ContractError("blocks_per_level must be >= 1");
  if (in_channels < 1 || classes < 2) throw ContractError("need in_channels >= 1 and classes >= 2");
  for (std::size_t i = 0; i < L; ++i)
    if (!std::isfinite(alphas[i]) || !std::isfinite(betas[i]))
      throw ContractError("alphas and betas must be finite");
  if (fusion != FusionKind::weighted)
    for (std::size_t i = 0; i < L; ++i)
      if (alphas[i] != 1.0 || betas[i] != 1.0)
        throw ContractError(std::string("alphas/betas other than 1 require weighted fusion, got ") +
                            fusion_kind_name(fusion));
  if (input_size) {
    const std::int64_t m = std::int64_t{1} << levels;
    if (*input_size < 1 || *input_size % m != 0)
      throw ShapeError("input extent " + std::to_string(*input_size) + " is not divisible by " + std::to_string(m));
  }
}

std::int64_t ResUNetConfig::resolved_bottom_width() const {
  return bottom_width > 0 ? bottom_width : 2 * widths.back();
}

void FusedUNetConfig::validate() const {
  ResUNetConfig::validate();
  if (fusion != FusionKind::weighted && fusion != FusionKind::naive_concat)
    throw ContractError("fused_unet supports weighted or naive_concat fusion only");
  if (!std::isfinite(fused_weight)) throw ContractError("fused_weight must be finite");
}

std::unique_ptr<Model> build_bottleneck(const BottleneckConfig& cfg, const BuildOptions& opts) {
  return std::make_unique<BottleneckModel>(cfg, opts);
}

std::unique_ptr<Model> build_res_unet(const ResUNetConfig& cfg) { return std::make_unique<ResUNet>(cfg); }

std::unique_ptr<Model> build_fused_unet(const FusedUNetConfig& cfg) { return std::make_unique<FusedUNet>(cfg); }

std::uint64_t flops_count(Model& model, const Shape& input_shape) {
  const DType dtype = model.parameters().empty() ? DType::f32 : model.parameters().front().tensor.dtype();
  Tensor x = Tensor::zeros(input_shape, dtype);
  MacCounter counter;
  model.forward(x, Mode::inference);
  return counter.total();
}

void classify_fusion_sites(Model& model, const Shape& input_shape) {
  const DType dtype = model.parameters().empty() ? DType::f32 : model.parameters().front().tensor.dtype();
  Tensor x = Tensor::zeros(input_shape, dtype);
  Tape tape;
  ForwardTrace trace;
  {
    TapeScope scope(tape);
    model.forward(x, Mode::inference, &trace);
  }
  auto& sites = model.fusion_sites();
  for (std::size_t i = 0; i < sites.size() && i < trace.sites.size(); ++i)
    sites[i].topology =
        tape.depends_on(trace.sites[i].deep, trace.sites[i].skip) ? Topology::series : Topology::parallel;
}

}  // namespace wfuse
