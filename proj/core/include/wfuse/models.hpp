#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "wfuse/fusion.hpp"
#include "wfuse/nn.hpp"
#include "wfuse/tensor.hpp"

namespace wfuse {

enum class ParamKind {
  conv_weight,
  bn_weight,
  bn_bias,
  conv_bias,
  fusion_scalar,
  fusion_channel,
  gate_weight,
};

const char* param_kind_name(ParamKind k);

struct Parameter {
  std::string name;
  Tensor tensor;
  ParamKind kind;
};

// Non-learnable state saved with a model (BN running statistics).
struct Buffer {
  std::string name;
  Tensor tensor;
};

enum class BnWeightInit { normal, constant };

enum class Topology { unknown, series, parallel };

const char* topology_name(Topology t);

struct FusionSiteInfo {
  std::string name;
  int level = 0;  // 1 = shallowest
  FusionSpec spec;
  Topology topology = Topology::unknown;
};

// Tensors seen at each fusion site during one forward pass.
struct SiteTrace {
  Tensor skip;
  Tensor deep;
  Tensor fused;
};

struct ForwardTrace {
  std::vector<SiteTrace> sites;
};

class Model {
 public:
  virtual ~Model() = default;

  virtual Tensor forward(const Tensor& x, Mode mode, ForwardTrace* trace = nullptr) = 0;
  virtual std::string architecture() const = 0;
  // Input height and width must be multiples of this.
  virtual std::int64_t size_multiple() const { return 1; }

  const std::vector<Parameter>& parameters() const { return params_; }
  const std::vector<Buffer>& buffers() const { return buffers_; }
  const std::vector<FusionSiteInfo>& fusion_sites() const { return sites_; }
  std::vector<FusionSiteInfo>& fusion_sites() { return sites_; }

  // Allocates zero gradients for every parameter.
  void zero_grad() const;
  // Number of fixed fusion constants that differ from the baseline value 1.
  std::size_t fusion_constant_count() const;
  std::string summary() const;

  void check_input(const Tensor& x) const;

 protected:
  std::vector<Parameter> params_;
  std::vector<Buffer> buffers_;
  std::vector<FusionSiteInfo> sites_;
};

struct BottleneckConfig {
  std::int64_t in_channels = 0;
  std::int64_t mid_channels = 0;
  std::int64_t out_channels = 0;
  int stride = 1;
};

struct BuildOptions {
  DType dtype = DType::f32;
  std::uint64_t seed = 0;
  BnWeightInit bn_weight_init = BnWeightInit::normal;
  // Initialize every convolution weight to zero (test hook).
  bool zero_conv_weights = false;
};

struct ResUNetConfig {
  int levels = 4;
  std::vector<std::int64_t> widths{32, 64, 128, 256};  // skip width per level
  std::int64_t bottom_width = 0;  // 0 means 2 * widths.back()
  int blocks_per_level = 1;
  std::int64_t in_channels = 3;
  std::int64_t classes = 2;
  FusionKind fusion = FusionKind::weighted;
  std::vector<double> alphas{1, 1, 1, 1};
  std::vector<double> betas{1, 1, 1, 1};
  BnWeightInit bn_weight_init = BnWeightInit::normal;
  DType dtype = DType::f32;
  std::uint64_t seed = 0;
  std::optional<std::int64_t> input_size;  // validated at build time if set

  void validate() const;
  std::int64_t resolved_bottom_width() const;
};

struct FusedUNetConfig : ResUNetConfig {
  // Constant weight on every series-connected encoder branch of each decoder
  // concatenation.
  double fused_weight = 1.0;

  void validate() const;
};

std::unique_ptr<Model> build_bottleneck(const BottleneckConfig& cfg, const BuildOptions& opts = {});
std::unique_ptr<Model> build_res_unet(const ResUNetConfig& cfg);
std::unique_ptr<Model> build_fused_unet(const FusedUNetConfig& cfg);

std::size_t param_count(const Model& model);
const std::vector<Parameter>& named_parameters(const Model& model);

// Forward pass (inference mode, zero input of the given NCHW shape) under a
// MacCounter. See MacCounter for the cost model.
std::uint64_t flops_count(Model& model, const Shape& input_shape);

// Runs a forward pass on a tape and decides for each fusion site whether the
// deep branch is computed downstream of the skip branch (series) or not
// (parallel). Results are stored in model.fusion_sites().
void classify_fusion_sites(Model& model, const Shape& input_shape);

}  // namespace wfuse
