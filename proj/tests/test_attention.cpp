#include <gtest/gtest.h>

#include <cmath>

#include "s2tx/attention/local_model.hpp"
#include "s2tx/attention/multi_head.hpp"
#include "test_util.hpp"

namespace s2tx {
namespace {

using testing::random_matrix;
using M = Matrix<double>;

void zero_linear(Linear<double>& l) {
  l.weight.value.setZero();
  if (l.has_bias) l.bias.value.setZero();
}

TEST(CrossAttention, SingletonSourceBroadcastsValueRow) {
  Rng rng(1);
  MultiHeadAttention<double> attn(8, 2, rng);
  M s = random_matrix(1, 8, rng);
  M t = random_matrix(5, 8, rng);
  M out = cross_attention(s, t, attn);
  M expected = attn.wo.forward(attn.wv.forward(s));
  for (Index r = 0; r < 5; ++r)
    for (Index k = 0; k < 8; ++k) EXPECT_NEAR(out(r, k), expected(0, k), 1e-14);
}

TEST(CrossAttention, SelfSubstitutionIsBitIdentical) {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    MultiHeadAttention<double> attn(12, 3, rng);
    M t = random_matrix(1 + trial, 12, rng);
    EXPECT_EQ(cross_attention(t, t, attn), self_attention(t, attn));
  }
}

TEST(CrossAttention, HandComputedTwoByTwo) {
  Rng rng(3);
  MultiHeadAttention<double> attn(2, 1, rng);
  for (auto* l : {&attn.wq, &attn.wk, &attn.wv, &attn.wo}) {
    l->weight.value = M::Identity(2, 2);
    l->bias.value.setZero();
  }
  M t(2, 2), s(2, 2);
  t << 1, 0, 0, 1;
  s << 1, 0, 0, 2;
  // Row 1 scores (1, 0)/sqrt2, row 2 scores (0, 2)/sqrt2.
  const double r = 1.0 / std::sqrt(2.0);
  const double p1 = std::exp(r) / (std::exp(r) + 1.0);
  const double p2 = 1.0 / (1.0 + std::exp(2 * r));
  M out = cross_attention(s, t, attn);
  EXPECT_NEAR(out(0, 0), p1 * 1.0, 1e-15);
  EXPECT_NEAR(out(0, 1), (1 - p1) * 2.0, 1e-15);
  EXPECT_NEAR(out(1, 0), p2 * 1.0, 1e-15);
  EXPECT_NEAR(out(1, 1), (1 - p2) * 2.0, 1e-15);
}

TEST(SelfAttention, SingleRowIsValueProjection) {
  Rng rng(4);
  MultiHeadAttention<double> attn(8, 4, rng);
  M t = random_matrix(1, 8, rng);
  M expected = attn.wo.forward(attn.wv.forward(t));
  EXPECT_TRUE(self_attention(t, attn).isApprox(expected, 1e-14));
}

TEST(SelfAttention, RowPermutationEquivariant) {
  Rng rng(5);
  MultiHeadAttention<double> attn(8, 2, rng);
  M t = random_matrix(6, 8, rng);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(6);
  perm.indices() << 3, 0, 5, 1, 4, 2;
  M a = perm * self_attention(t, attn);
  M b = self_attention(M(perm * t), attn);
  EXPECT_TRUE(a.isApprox(b, 1e-13));
}

TEST(Attention, WeightsAreConvexCombinations) {
  Rng rng(6);
  MultiHeadAttention<double> attn(8, 2, rng);
  M s = random_matrix(7, 8, rng, 3.0);
  M t = random_matrix(4, 8, rng, 3.0);
  typename MultiHeadAttention<double>::Cache c;
  attn.forward(s, t, &c);
  const Index dh = attn.head_dim();
  for (Index h = 0; h < 2; ++h) {
    const M& p = c.weights[static_cast<std::size_t>(h)];
    EXPECT_EQ(p.rows(), 4);
    EXPECT_EQ(p.cols(), 7);
    for (Index r = 0; r < p.rows(); ++r) EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-6);
    EXPECT_TRUE((p.array() >= 0).all());
    M vh = c.v.middleCols(h * dh, dh);
    M oh = c.heads.middleCols(h * dh, dh);
    for (Index k = 0; k < dh; ++k) {
      EXPECT_GE(oh.col(k).minCoeff(), vh.col(k).minCoeff() - 1e-12);
      EXPECT_LE(oh.col(k).maxCoeff(), vh.col(k).maxCoeff() + 1e-12);
    }
  }
}

TEST(Attention, RejectsIndivisibleHeads) {
  Rng rng(7);
  EXPECT_THROW(MultiHeadAttention<double>(10, 3, rng), InvalidSpecError);
}

TEST(Attention, GradientsMatchFiniteDifferences) {
  Rng rng(8);
  MultiHeadAttention<double> attn(8, 2, rng);
  M s = random_matrix(5, 8, rng);
  M t = random_matrix(6, 8, rng);
  M w = random_matrix(6, 8, rng);
  auto loss = [&]() { return (attn.forward(s, t).array() * w.array()).sum(); };
  M ds, dt;
  auto backward = [&]() {
    typename MultiHeadAttention<double>::Cache c;
    attn.forward(s, t, &c);
    std::tie(ds, dt) = attn.backward(c, w);
  };
  auto rep = testing::check_param_grads(attn, loss, backward);
  EXPECT_LE(rep.worst, 1e-4) << rep.worst_name;
  EXPECT_LE(testing::check_input_grad(s, ds, loss).worst, 1e-4);
  EXPECT_LE(testing::check_input_grad(t, dt, loss).worst, 1e-4);
}

AttentionSpec small_spec() { return AttentionSpec{8, 2, 16}; }

TEST(LocalLayer, ZeroOutputProjectionsGiveIdentity) {
  Rng rng(9);
  LocalLayer<double> layer(small_spec(), true, rng);
  zero_linear(layer.self_attn.wo);
  zero_linear(layer.cross_attn.wo);
  zero_linear(layer.ffn.down);
  M x = random_matrix(6, 8, rng);
  M ctx = random_matrix(4, 8, rng);
  EXPECT_EQ(layer.forward(x, ctx).values, x);
}

TEST(LocalLayer, DefaultShapes) {
  Rng rng(10);
  LocalLayer<double> layer(AttentionSpec{64, 4, 128}, true, rng);
  M out = layer.forward(random_matrix(19, 64, rng), random_matrix(18, 64, rng)).values;
  EXPECT_EQ(out.rows(), 19);
  EXPECT_EQ(out.cols(), 64);
}

TEST(LocalLayer, OutputDependsOnContext) {
  Rng rng(11);
  LocalLayer<double> layer(small_spec(), true, rng);
  M x = random_matrix(6, 8, rng);
  M ctx = random_matrix(5, 8, rng);
  M w = random_matrix(6, 8, rng);
  auto loss = [&]() { return (layer.forward(x, ctx).values.array() * w.array()).sum(); };
  typename LocalLayer<double>::Cache c;
  layer.forward(x, ctx, &c);
  auto [dx, dctx] = layer.backward(c, w);
  EXPECT_GT(dctx.norm(), 1e-3);
  EXPECT_LE(testing::check_input_grad(ctx, dctx, loss).worst, 1e-4);
  EXPECT_LE(testing::check_input_grad(x, dx, loss).worst, 1e-4);
}

TEST(LocalLayer, WithoutCrossSublayerIgnoresContext) {
  Rng rng(12);
  LocalLayer<double> layer(small_spec(), false, rng);
  M x = random_matrix(6, 8, rng);
  EXPECT_EQ(layer.forward(x, random_matrix(5, 8, rng)).values, layer.forward(x, random_matrix(3, 8, rng)).values);
}

class LocalLayerGradients : public ::testing::TestWithParam<bool> {};

TEST_P(LocalLayerGradients, MatchFiniteDifferences) {
  Rng rng(13);
  LocalLayer<double> layer(small_spec(), GetParam(), rng);
  M x = random_matrix(6, 8, rng);
  M ctx = random_matrix(4, 8, rng);
  M w = random_matrix(6, 8, rng);
  auto loss = [&]() { return (layer.forward(x, ctx).values.array() * w.array()).sum(); };
  auto backward = [&]() {
    typename LocalLayer<double>::Cache c;
    layer.forward(x, ctx, &c);
    layer.backward(c, w);
  };
  auto rep = testing::check_param_grads(layer, loss, backward);
  EXPECT_LE(rep.worst, 1e-4) << rep.worst_name;
}

INSTANTIATE_TEST_SUITE_P(Cross, LocalLayerGradients, ::testing::Values(true, false));

TEST(LocalModel, GradientsMatchFiniteDifferences) {
  Rng rng(14);
  LocalModel<double> model(3, 5, small_spec(), 2, true, rng);
  M patches = random_matrix(5, 3, rng);
  M ctx = random_matrix(4, 8, rng);
  M w = random_matrix(5, 8, rng);
  auto loss = [&]() { return (model.forward(patches, ctx).array() * w.array()).sum(); };
  M dctx;
  auto backward = [&]() {
    typename LocalModel<double>::Cache c;
    model.forward(patches, ctx, &c);
    dctx = model.backward(c, w, 4);
  };
  auto rep = testing::check_param_grads(model, loss, backward, 50);
  EXPECT_LE(rep.worst, 1e-4) << rep.worst_name;
  EXPECT_LE(testing::check_input_grad(ctx, dctx, loss).worst, 1e-4);
}

TEST(ForecastHead, ZeroWeightsGiveZeroForecast) {
  Rng rng(15);
  ForecastHead<double> head(12, 5, rng);
  zero_linear(head.proj);
  EXPECT_TRUE(head.forward(random_matrix(3, 12, rng)).isZero(0.0));
}

TEST(ForecastHead, ScalarAffine) {
  Rng rng(16);
  ForecastHead<double> head(1, 1, rng);
  head.proj.weight.value(0, 0) = 2.5;
  head.proj.bias.value(0, 0) = -0.75;
  Tensor3<double> y(1, 1, 1);
  y(0, 0, 0) = 1.2;
  EXPECT_DOUBLE_EQ(head.forward(y)(0, 0), 2.5 * 1.2 - 0.75);
}

TEST(ForecastHead, DefaultShapeAndSharedAcrossVariates) {
  Rng rng(17);
  ForecastHead<double> head(19 * 64, 96, rng);
  Tensor3<double> y(7, 19, 64);
  std::normal_distribution<double> dist;
  for (auto& v : y.data()) v = dist(rng);
  y.slice(4) = y.slice(1);
  M out = head.forward(y);
  EXPECT_EQ(out.rows(), 7);
  EXPECT_EQ(out.cols(), 96);
  EXPECT_EQ(out.row(4), out.row(1));
}

TEST(ForecastHead, GradientsMatchFiniteDifferences) {
  Rng rng(18);
  ForecastHead<double> head(10, 4, rng);
  M x = random_matrix(3, 10, rng);
  M w = random_matrix(3, 4, rng);
  auto loss = [&]() { return (head.forward(x).array() * w.array()).sum(); };
  M dx;
  auto backward = [&]() { dx = head.backward(x, w); };
  auto rep = testing::check_param_grads(head, loss, backward);
  EXPECT_LE(rep.worst, 1e-4) << rep.worst_name;
  EXPECT_LE(testing::check_input_grad(x, dx, loss).worst, 1e-4);
}

}  // namespace
}  // namespace s2tx
