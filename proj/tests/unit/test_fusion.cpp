#include <gtest/gtest.h>

#include "wfuse/fusion.hpp"
#include "wfuse/nn.hpp"
#include "wfuse/ops.hpp"
#include "wfuse/tape.hpp"

using namespace wfuse;

namespace {
Tensor randn(const Shape& s, std::uint64_t seed, DType dt = DType::f32) { return create(s, dt, Init::normal(0, 1, seed)); }
}  // namespace

TEST(Fusion, KindNamesRoundTrip) {
  for (auto k : {FusionKind::naive_concat, FusionKind::naive_add, FusionKind::weighted, FusionKind::dynamic,
                 FusionKind::gated})
    EXPECT_EQ(parse_fusion_kind(fusion_kind_name(k)), k);
  EXPECT_THROW(parse_fusion_kind("attention"), ConfigError);
}

TEST(Fusion, WeightedWithUnitConstantsIsBitIdenticalToConcat) {
  Tensor a = randn({2, 3, 4, 4}, 1), b = randn({2, 5, 4, 4}, 2);
  EXPECT_TRUE(bit_equal(weighted_concat(a, b, 1.0, 1.0), fuse_concat({a, b})));
}

TEST(Fusion, WeightedScalesEachBranch) {
  Tensor a = Tensor::from_values({1, 1, 1, 2}, {1, 2});
  Tensor b = Tensor::from_values({1, 1, 1, 2}, {3, 4});
  EXPECT_EQ(weighted_concat(a, b, 0.5, 2.0).to_vector(), (std::vector<double>{0.5, 1, 6, 8}));
}

TEST(Fusion, FuseAdd) {
  Tensor a = Tensor::from_values({1, 1, 1, 2}, {1, 2});
  Tensor b = Tensor::from_values({1, 1, 1, 2}, {3, 4});
  EXPECT_EQ(fuse_add({a, b}).to_vector(), (std::vector<double>{4, 6}));
  EXPECT_TRUE(fuse_add({a}).same(a));
  EXPECT_THROW(fuse_add({}), ArityError);
  EXPECT_THROW(fuse_add({a, Tensor::zeros({1, 2, 1, 2})}), ShapeError);
}

TEST(Fusion, DynamicWithUnitWeightsEqualsConcat) {
  Tensor a = randn({1, 3, 2, 2}, 3), b = randn({1, 3, 2, 2}, 4);
  FusionSpec spec;
  spec.kind = FusionKind::dynamic;
  spec.channel_weights = create({3}, DType::f32, Init::ones());
  spec.validate();
  EXPECT_TRUE(bit_equal(fuse(spec, a, b), fuse_concat({a, b})));
}

TEST(Fusion, GateIsSigmoidOfOneByOneConv) {
  Tensor x = randn({1, 2, 2, 2}, 5);
  Tensor w = Tensor::zeros({2, 2, 1, 1});
  for (double v : gate(x, w).to_vector()) EXPECT_EQ(v, 0.5);
  EXPECT_THROW(gate(x, Tensor::zeros({2, 2, 3, 3})), ShapeError);
}

TEST(Fusion, GatedConcatZeroDeepBranchExample) {
  // zero gate convs give G = 0.5 on both branches: y1 = 1.5 x1, y2 = 0.5 * 0.5 x1
  Tensor x1 = randn({1, 2, 3, 3}, 6, DType::f64);
  Tensor x2 = Tensor::zeros({1, 2, 3, 3}, DType::f64);
  GateParams g{Tensor::zeros({2, 2, 1, 1}, DType::f64), Tensor::zeros({2, 2, 1, 1}, DType::f64)};
  Tensor y = gated_concat(x1, x2, g);
  EXPECT_EQ(y.shape(), (Shape{1, 4, 3, 3}));
  EXPECT_TRUE(bit_equal(slice_channels(y, 0, 2), mul_scalar(x1, 1.5)));
  EXPECT_TRUE(bit_equal(slice_channels(y, 2, 2), mul_scalar(x1, 0.25)));
}

TEST(Fusion, GffWithoutOthersIsSelfTerm) {
  Tensor x = randn({1, 1, 2, 2}, 7, DType::f64);
  Tensor g = create({1, 1, 2, 2}, DType::f64, Init::constant(0.25));
  EXPECT_TRUE(bit_equal(gff_fuse(x, {}, g, {}), mul_scalar(x, 1.25)));
  EXPECT_THROW(gff_fuse(x, {x}, g, {}), ArityError);
}

TEST(Fusion, SpecValidation) {
  FusionSpec s;
  s.kind = FusionKind::naive_concat;
  s.alpha = 0.5;
  EXPECT_THROW(s.validate(), ContractError);
  s.kind = FusionKind::weighted;
  EXPECT_NO_THROW(s.validate());
  s.kind = FusionKind::dynamic;
  EXPECT_THROW(s.validate(), ContractError);
  s = FusionSpec{};
  s.kind = FusionKind::gated;
  EXPECT_THROW(s.validate(), ContractError);
  EXPECT_EQ(FusionSpec{}.output_channels(3, 4), 7);
  FusionSpec add;
  add.kind = FusionKind::naive_add;
  EXPECT_EQ(add.output_channels(3, 3), 3);
}

TEST(Fusion, WeightedGradientIsAlphaTimesNaive) {
  Tensor a = randn({1, 2, 2, 2}, 8, DType::f64), b = randn({1, 2, 2, 2}, 9, DType::f64);
  Tensor r = randn({1, 4, 2, 2}, 10, DType::f64);
  auto grad = [&](double alpha) {
    Tensor x = a.clone(), y = b.clone();
    x.set_requires_grad(true);
    y.set_requires_grad(true);
    Tape tape;
    TapeScope scope(tape);
    backward(sum(mul_elementwise(weighted_concat(x, y, alpha, 1.0), r)));
    return std::pair{x.grad().clone(), y.grad().clone()};
  };
  auto [g1, d1] = grad(1.0);
  auto [g2, d2] = grad(0.3);
  EXPECT_TRUE(bit_equal(g2, mul_scalar(g1, 0.3)));
  EXPECT_TRUE(bit_equal(d1, d2));
}

TEST(Fusion, AbsorbWeight) {
  Tensor w = Tensor::from_values({2}, {1, -2});
  EXPECT_EQ(absorb_weight(w, 0.5).to_vector(), (std::vector<double>{0.5, -1}));
}
