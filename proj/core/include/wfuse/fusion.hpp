#pragma once

#include <optional>
#include <string>
#include <vector>

#include "wfuse/tensor.hpp"

namespace wfuse {

enum class FusionKind { naive_concat, naive_add, weighted, dynamic, gated };

const char* fusion_kind_name(FusionKind k);
FusionKind parse_fusion_kind(const std::string& name);

// 1x1 convolution weights (C x C x 1 x 1, no bias) producing one gate per
// branch of a two-way fusion.
struct GateParams {
  Tensor skip_gate;
  Tensor deep_gate;
};

// How a fusion site combines the shallow skip branch (x1) with the deep
// decoder branch (x2). alpha and beta are plain hyperparameters: they are
// never Parameters and never touched by the optimizer.
struct FusionSpec {
  FusionKind kind = FusionKind::naive_concat;
  double alpha = 1.0;  // skip branch (series placement)
  double beta = 1.0;   // decoder branch (parallel placement)
  std::optional<Tensor> channel_weights;  // dynamic: C1 learnable scales
  std::optional<GateParams> gates;        // gated

  // Throws ContractError unless exactly the members required by kind are set.
  void validate() const;
  // Output channel extent for inputs with c1 and c2 channels.
  std::int64_t output_channels(std::int64_t c1, std::int64_t c2) const;
};

Tensor fuse_concat(const std::vector<Tensor>& xs);
Tensor fuse_add(const std::vector<Tensor>& xs);

// concat(alpha * x1, beta * x2).
Tensor weighted_concat(const Tensor& x1, const Tensor& x2, double alpha, double beta);

// Learnable per-channel scale; w has one entry per channel of x.
Tensor dynamic_channel_weight(const Tensor& x, const Tensor& w);

// sigmoid(w_gate * x) with w_gate a bias-free 1x1 convolution.
Tensor gate(const Tensor& x, const Tensor& w_gate);

// (1 + G_l) * x_l + (1 - G_l) * sum_i G_i * x_i, all elementwise.
Tensor gff_fuse(const Tensor& x_l, const std::vector<Tensor>& others, const Tensor& g_l,
                const std::vector<Tensor>& g_others);

// Two-level gated fusion: each branch is modulated by its own gate and the
// other branch's gated features, then the two results are concatenated:
//   x1' = (1 + G1) x1 + (1 - G1) G2 x2
//   x2' = (1 + G2) x2 + (1 - G2) G1 x1
Tensor gated_concat(const Tensor& x1, const Tensor& x2, const GateParams& gates);

// beta * W. A constant on a parallel branch is equivalent to this rescaling.
Tensor absorb_weight(const Tensor& weight, double beta);

// Applies spec to (skip, deep).
Tensor fuse(const FusionSpec& spec, const Tensor& skip, const Tensor& deep);

}  // namespace wfuse
