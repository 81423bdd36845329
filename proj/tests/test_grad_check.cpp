#include <gtest/gtest.h>

#include "cgmlp/grad_check.hpp"
#include "cgmlp/layers.hpp"
#include "cgmlp/ops.hpp"
#include "fixtures.hpp"

using namespace cgmlp;

TEST(GradCheck, RelativeErrorDenominator) {
  EXPECT_DOUBLE_EQ(relative_error(1.0, 1.25), 0.25 / 1.25);
  EXPECT_DOUBLE_EQ(relative_error(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(1e-10, 0.0), 1e-10 / 1e-8);
}

TEST(GradCheck, SumOfSquaresIsExactToRounding) {
  Rng rng(1);
  auto x = fixtures::random_tensor<double>({4, 5}, rng);
  std::vector<NamedTensor> params{{"x", x}};
  auto r = grad_check(
      [&](Tape<double>* tape) {
        auto v = tape ? tape->watch(x) : x;
        return ops::sum(ops::mul(v, v));
      },
      params, 1e-4, 1e-3);
  EXPECT_TRUE(r.pass);
  EXPECT_LT(r.max_rel_err, 1e-9);
  EXPECT_EQ(r.coordinates, 20u);
  EXPECT_TRUE(r.flagged.empty());
}

TEST(GradCheck, DetectsAWrongGradient) {
  auto x = Tensor<double>({3}, {0.5, -1.0, 2.0});
  std::vector<NamedTensor> params{{"x", x}};
  // Records y = x with a backward rule that reports 2 instead of 1.
  auto r = grad_check(
      [&](Tape<double>* tape) {
        if (!tape) return ops::sum(x);
        auto v = tape->watch(x);
        auto y = tape->record(v.clone(), {v.id()}, "bad",
                              [id = v.id()](const Tensor<double>& g, Gradients<double>& sink) {
                                auto d = g.clone();
                                for (double& e : d.mutable_data()) e *= 2.0;
                                sink.accumulate(id, d);
                              });
        return ops::sum(y);
      },
      params, 1e-4, 1e-3);
  EXPECT_FALSE(r.pass);
  EXPECT_NEAR(r.max_rel_err, 0.5, 1e-6);
  EXPECT_EQ(r.worst_param, "x");
}

TEST(GradCheck, MaxpoolTieIsFlaggedAsKink) {
  auto x = Tensor<double>({1, 1, 2, 2}, {1.0, 1.0, 0.0, -1.0});
  std::vector<NamedTensor> params{{"x", x}};
  auto r = grad_check(
      [&](Tape<double>* tape) { return ops::sum(ops::maxpool2d(tape ? tape->watch(x) : x)); },
      params, 1e-4, 1e-3);
  EXPECT_TRUE(r.pass);
  ASSERT_EQ(r.flagged.size(), 2u);
  EXPECT_EQ(r.flagged[0].index, 0u);
  EXPECT_NEAR(r.flagged[0].central, 0.5, 1e-9);
  EXPECT_NEAR(r.flagged[0].forward, 1.0, 1e-9);
}

TEST(GradCheck, RestoresParameterValues) {
  Rng rng(3);
  auto x = fixtures::random_tensor<double>({6}, rng);
  const auto before = std::vector<double>(x.data().begin(), x.data().end());
  std::vector<NamedTensor> params{{"x", x}};
  grad_check([&](Tape<double>* tape) { return ops::sum(ops::gelu(tape ? tape->watch(x) : x)); },
             params, 1e-4, 1e-3);
  EXPECT_EQ(std::vector<double>(x.data().begin(), x.data().end()), before);
}

class BlockGradient : public ::testing::TestWithParam<nn::Gating> {};

TEST_P(BlockGradient, WholeBlockMatchesFiniteDifferences) {
  Rng rng(4);
  auto blk = nn::make_gmlp_block<double>(8, 16, 32, GetParam(), rng);
  // Unit-scale gate weights so the gating path contributes visibly.
  std::visit([&](auto& g) { g.weight = fixtures::random_tensor<double>(g.weight.shape(), rng, 0.3); },
             blk.gate);
  auto x = fixtures::random_tensor<double>({2, 8, 16}, rng);
  auto w = fixtures::random_tensor<double>({2, 8, 16}, rng);
  std::vector<NamedTensor> params{{"x", x}};
  nn::visit_params("blk", blk, [&](const std::string& n, Tensor<double>& t) { params.push_back({n, t}); });
  auto r = grad_check(
      [&](Tape<double>* tape) {
        auto b = blk;
        auto in = x;
        if (tape) {
          nn::visit_params("blk", b, [&](const std::string&, Tensor<double>& t) { t = tape->watch(t); });
          in = tape->watch(x);
        }
        return ops::sum(ops::mul(nn::gmlp_block(in, b), w));
      },
      params, 1e-5, 1e-4);
  EXPECT_TRUE(r.pass) << r.worst_param << "[" << r.worst_index << "] " << r.max_rel_err;
}

INSTANTIATE_TEST_SUITE_P(Gatings, BlockGradient,
                         ::testing::Values(nn::Gating::kSpatial, nn::Gating::kChannel));
