#include "wfuse/fusion.hpp"

#include <cmath>

#include "wfuse/nn.hpp"
#include "wfuse/ops.hpp"

namespace wfuse {

const char* fusion_kind_name(FusionKind k) {
  switch (k) {
    case FusionKind::naive_concat:
      return "naive_concat";
    case FusionKind::naive_add:
      return "naive_add";
    case FusionKind::weighted:
      return "weighted";
    case FusionKind::dynamic:
      return "dynamic";
    case FusionKind::gated:
      return "gated";
  }
  return "?";
}

FusionKind parse_fusion_kind(const std::string& name) {
  for (auto k : {FusionKind::naive_concat, FusionKind::naive_add, FusionKind::weighted,
                 FusionKind::dynamic, FusionKind::gated})
    if (name == fusion_kind_name(k)) return k;
  throw ConfigError("unknown fusion kind '" + name + "'");
}

void FusionSpec::validate() const {
  if (!std::isfinite(alpha) || !std::isfinite(beta))
    throw ContractError("fusion constants must be finite");
  const bool constants_default = alpha == 1.0 && beta == 1.0;
  switch (kind) {
    case FusionKind::naive_concat:
    case FusionKind::naive_add:
      if (!constants_default || channel_weights || gates)
        throw ContractError(std::string(fusion_kind_name(kind)) + " fusion takes no weights");
      break;
    case FusionKind::weighted:
      if (channel_weights || gates) throw ContractError("weighted fusion only takes alpha and beta");
      break;
    case FusionKind::dynamic:
      if (!channel_weights || gates) throw ContractError("dynamic fusion requires channel weights only");
      break;
    case FusionKind::gated:
      if (!gates || channel_weights) throw ContractError("gated fusion requires gate parameters only");
      break;
  }
}

std::int64_t FusionSpec::output_channels(std::int64_t c1, std::int64_t c2) const {
  return kind == FusionKind::naive_add ? c1 : c1 + c2;
}

Tensor fuse_concat(const std::vector<Tensor>& xs) { return concat_channels(xs); }

Tensor fuse_add(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ArityError("fuse_add: empty input list");
  Tensor acc = xs.front();
  for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return acc;
}

Tensor weighted_concat(const Tensor& x1, const Tensor& x2, double alpha, double beta) {
  return concat_channels({mul_scalar(x1, alpha), mul_scalar(x2, beta)});
}

Tensor dynamic_channel_weight(const Tensor& x, const Tensor& w) { return channel_scale(x, w); }

Tensor gate(const Tensor& x, const Tensor& w_gate) {
  if (w_gate.rank() != 4 || w_gate.dim(2) != 1 || w_gate.dim(3) != 1)
    throw ShapeError("gate: expected a 1x1 convolution weight, got " + shape_str(w_gate.shape()));
  return sigmoid(conv2d(x, Conv2dParams{w_gate, std::nullopt, 1, 0}));
}

Tensor gff_fuse(const Tensor& x_l, const std::vector<Tensor>& others, const Tensor& g_l,
                const std::vector<Tensor>& g_others) {
  if (others.size() != g_others.size())
    throw ArityError("gff_fuse: " + std::to_string(others.size()) + " feature maps but " +
                     std::to_string(g_others.size()) + " gates");
  auto check = [&](const Tensor& t) {
    if (t.shape() != x_l.shape())
      throw ShapeError("gff_fuse: shape " + shape_str(t.shape()) + " differs from " + shape_str(x_l.shape()));
  };
  check(g_l);
  for (std::size_t i = 0; i < others.size(); ++i) {
    check(others[i]);
    check(g_others[i]);
  }
  Tensor self = mul_elementwise(add_scalar(g_l, 1.0), x_l);
  if (others.empty()) return self;
  Tensor gathered = mul_elementwise(g_others[0], others[0]);
  for (std::size_t i = 1; i < others.size(); ++i)
    gathered = add(gathered, mul_elementwise(g_others[i], others[i]));
  Tensor one_minus = add_scalar(mul_scalar(g_l, -1.0), 1.0);
  return add(self, mul_elementwise(one_minus, gathered));
}

Tensor gated_concat(const Tensor& x1, const Tensor& x2, const GateParams& gates) {
  if (x1.shape() != x2.shape())
    throw ShapeError("gated_concat: branches must share a shape, got " + shape_str(x1.shape()) + " and " +
                     shape_str(x2.shape()));
  const Tensor g1 = gate(x1, gates.skip_gate);
  const Tensor g2 = gate(x2, gates.deep_gate);
  const Tensor y1 = gff_fuse(x1, {x2}, g1, {g2});
  const Tensor y2 = gff_fuse(x2, {x1}, g2, {g1});
  return concat_channels({y1, y2});
}

Tensor absorb_weight(const Tensor& weight, double beta) {
  if (!std::isfinite(beta)) throw ContractError("absorb_weight: beta must be finite");
  return mul_scalar(weight, beta);
}

Tensor fuse(const FusionSpec& spec, const Tensor& skip, const Tensor& deep) {
  switch (spec.kind) {
    case FusionKind::naive_concat:
      return fuse_concat({skip, deep});
    case FusionKind::naive_add:
      return fuse_add({skip, deep});
    case FusionKind::weighted:
      return weighted_concat(skip, deep, spec.alpha, spec.beta);
    case FusionKind::dynamic:
      return concat_channels({dynamic_channel_weight(skip, *spec.channel_weights), deep});
    case FusionKind::gated:
      return gated_concat(skip, deep, *spec.gates);
  }
  throw ContractError("unknown fusion kind");
}

}  // namespace wfuse
