#include <gtest/gtest.h>

#include "wfuse/models.hpp"
#include "wfuse/ops.hpp"
#include "wfuse/tape.hpp"

using namespace wfuse;

namespace {

ResUNetConfig small_config(FusionKind kind = FusionKind::weighted) {
  ResUNetConfig c;
  c.levels = 2;
  c.widths = {8, 16};
  c.alphas = {1, 1};
  c.betas = {1, 1};
  c.fusion = kind;
  c.seed = 3;
  return c;
}

}  // namespace

TEST(Bottleneck, ParameterCount) {
  auto m = build_bottleneck({8, 4, 8, 1});
  EXPECT_EQ(param_count(*m), 32u + 144 + 32 + 32);
  auto p = build_bottleneck({8, 4, 16, 2});
  // 32 + 144 + 64 + BN 2 * (4 + 4 + 16) + projection 128 + 32
  EXPECT_EQ(param_count(*p), 32u + 144 + 64 + 48 + 128 + 32);
}

TEST(Bottleneck, ZeroConvsGiveReluOfInput) {
  BuildOptions o;
  o.zero_conv_weights = true;
  auto m = build_bottleneck({4, 2, 4, 1}, o);
  Tensor x = create({2, 4, 5, 5}, DType::f32, Init::normal(0, 1, 1));
  EXPECT_TRUE(bit_equal(m->forward(x, Mode::training), relu(x)));
  EXPECT_TRUE(bit_equal(m->forward(x, Mode::inference), relu(x)));
}

TEST(Bottleneck, StrideHalvesExtent) {
  auto m = build_bottleneck({4, 2, 8, 2});
  EXPECT_EQ(m->forward(Tensor::zeros({1, 4, 6, 6}), Mode::inference).shape(), (Shape{1, 8, 3, 3}));
  EXPECT_THROW(build_bottleneck({4, 2, 8, 3}), ContractError);
}

TEST(ResUNet, OutputShapeAndDivisibility) {
  auto m = build_res_unet(small_config());
  EXPECT_EQ(m->forward(Tensor::zeros({2, 3, 16, 12}), Mode::inference).shape(), (Shape{2, 2, 16, 12}));
  EXPECT_THROW(m->forward(Tensor::zeros({1, 3, 10, 16}), Mode::inference), ShapeError);
  EXPECT_THROW(m->forward(Tensor::zeros({1, 4, 16, 16}), Mode::inference), ShapeError);
  ResUNetConfig c = small_config();
  c.input_size = 125;
  EXPECT_THROW(build_res_unet(c), ShapeError);
}

TEST(ResUNet, ConfigValidation) {
  ResUNetConfig c = small_config();
  c.alphas = {0.5};
  EXPECT_THROW(build_res_unet(c), ContractError);
  c = small_config(FusionKind::naive_concat);
  c.alphas = {0.5, 1};
  EXPECT_THROW(build_res_unet(c), ContractError);
}

TEST(ResUNet, ParameterDeltasAtDefaultWidths) {
  ResUNetConfig base;
  base.fusion = FusionKind::naive_concat;
  ResUNetConfig weighted;
  weighted.alphas = {0.5, 0.5, 0.5, 0.5};
  weighted.betas = {1, 1, 1, 1};
  ResUNetConfig weighted_beta;
  weighted_beta.betas = {0.1, 0.1, 0.1, 0.1};
  ResUNetConfig dynamic;
  dynamic.fusion = FusionKind::dynamic;
  ResUNetConfig gated;
  gated.fusion = FusionKind::gated;
  auto mb = build_res_unet(base), mw = build_res_unet(weighted), mwb = build_res_unet(weighted_beta),
       md = build_res_unet(dynamic), mg = build_res_unet(gated);
  EXPECT_EQ(param_count(*mw), param_count(*mb));
  EXPECT_EQ(mw->fusion_constant_count(), 4u);
  EXPECT_EQ(mwb->fusion_constant_count(), 4u);
  EXPECT_EQ(mb->fusion_constant_count(), 0u);
  EXPECT_EQ(param_count(*md) - param_count(*mb), 480u);
  EXPECT_EQ(param_count(*mg) - param_count(*mb), 2u * (32 * 32 + 64 * 64 + 128 * 128 + 256 * 256));
}

TEST(ResUNet, ParameterNamesUniqueAndKinds) {
  auto m = build_res_unet(small_config(FusionKind::dynamic));
  std::set<std::string> names;
  std::size_t fusion_channel = 0;
  for (const auto& p : m->parameters()) {
    EXPECT_TRUE(names.insert(p.name).second) << p.name;
    EXPECT_TRUE(p.tensor.requires_grad());
    fusion_channel += p.kind == ParamKind::fusion_channel;
  }
  EXPECT_EQ(fusion_channel, 2u);
}

TEST(ResUNet, SameSeedSameWeights) {
  auto a = build_res_unet(small_config()), b = build_res_unet(small_config());
  ResUNetConfig other = small_config();
  other.seed = 4;
  auto c = build_res_unet(other);
  for (std::size_t i = 0; i < a->parameters().size(); ++i)
    ASSERT_TRUE(bit_equal(a->parameters()[i].tensor, b->parameters()[i].tensor));
  EXPECT_FALSE(bit_equal(a->parameters()[0].tensor, c->parameters()[0].tensor));
}

TEST(ResUNet, ConstantBnInit) {
  ResUNetConfig c = small_config();
  c.bn_weight_init = BnWeightInit::constant;
  auto m = build_res_unet(c);
  for (const auto& p : m->parameters())
    if (p.kind == ParamKind::bn_weight)
      for (double v : p.tensor.to_vector()) ASSERT_EQ(v, 1.0);
}

TEST(ResUNet, SkipsAreSeriesConnected) {
  auto m = build_res_unet(small_config());
  classify_fusion_sites(*m, {1, 3, 16, 16});
  ASSERT_EQ(m->fusion_sites().size(), 2u);
  for (const auto& s : m->fusion_sites()) EXPECT_EQ(s.topology, Topology::series);
}

TEST(ResUNet, AlphaChangesOnlySkipChannelsAtDeepestSite) {
  ResUNetConfig c = small_config();
  auto base = build_res_unet(c);
  c.alphas = {0.5, 0.5};
  auto weighted = build_res_unet(c);
  Tensor x = create({1, 3, 16, 16}, DType::f32, Init::normal(0, 1, 2));
  ForwardTrace tb, tw;
  base->forward(x, Mode::inference, &tb);
  weighted->forward(x, Mode::inference, &tw);
  // first decoder site is the deepest one; its inputs are identical
  const auto& fb = tb.sites[0].fused;
  const auto& fw = tw.sites[0].fused;
  const std::int64_t skip = tb.sites[0].skip.dim(1);
  EXPECT_TRUE(bit_equal(slice_channels(fb, skip, fb.dim(1) - skip), slice_channels(fw, skip, fw.dim(1) - skip)));
  EXPECT_FALSE(bit_equal(slice_channels(fb, 0, skip), slice_channels(fw, 0, skip)));
  EXPECT_TRUE(bit_equal(slice_channels(fw, 0, skip), mul_scalar(tb.sites[0].skip, 0.5)));
}

TEST(ResUNet, AllFusionKindsTrainStep) {
  for (auto kind : {FusionKind::naive_concat, FusionKind::naive_add, FusionKind::weighted, FusionKind::dynamic,
                    FusionKind::gated}) {
    auto m = build_res_unet(small_config(kind));
    Tensor x = create({2, 3, 8, 8}, DType::f32, Init::normal(0, 1, 5));
    m->zero_grad();
    Tape tape;
    TapeScope scope(tape);
    Tensor y = m->forward(x, Mode::training);
    backward(mean(mul_elementwise(y, y)));
    for (const auto& p : m->parameters()) ASSERT_TRUE(p.tensor.has_grad()) << fusion_kind_name(kind) << " " << p.name;
  }
}

TEST(FusedUNet, ShapesWeightsAndConstants) {
  FusedUNetConfig c;
  c.levels = 3;
  c.widths = {8, 16, 32};
  c.alphas = {1, 1, 1};
  c.betas = {1, 1, 1};
  c.fused_weight = 0.5;
  auto m = build_fused_unet(c);
  EXPECT_EQ(m->forward(Tensor::zeros({1, 3, 16, 16}), Mode::inference).shape(), (Shape{1, 2, 16, 16}));
  EXPECT_EQ(m->fusion_constant_count(), 1u + 2 + 3);
  c.fused_weight = 1.0;
  EXPECT_EQ(build_fused_unet(c)->fusion_constant_count(), 0u);
  c.fusion = FusionKind::gated;
  EXPECT_THROW(build_fused_unet(c), ContractError);
}

TEST(Flops, CountsForwardMacs) {
  auto m = build_bottleneck({4, 2, 4, 1});
  // convs 4->2 1x1, 2->2 3x3 pad 1, 2->4 1x1 on 4x4; three BNs over 2, 2, 4 channels
  const std::uint64_t hw = 16;
  EXPECT_EQ(flops_count(*m, {1, 4, 4, 4}), hw * (8 + 36 + 8) + hw * (2 + 2 + 4));
}
