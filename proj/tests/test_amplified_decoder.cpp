#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "nightformer/amplified_decoder.hpp"
#include "nightformer/grad_check.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace nf {
namespace {

using testing::max_abs_diff;
using testing::random_tensor;

// Sets every parameter in ps to a fresh draw so biases and norms are not trivial.
void randomize(ParameterSet<double>& ps, std::mt19937_64& rng, double spread = 0.5) {
  for (auto& e : ps.entries()) {
    for (double& v : e.value.mutable_data()) v = std::uniform_real_distribution<double>(-spread, spread)(rng);
  }
}

Tensor oracle_linear(const Tensor& x, const Linear<double>& l) {
  Tensor y = oracle::matmul(x, l.weight);
  for (std::size_t r = 0; r < y.dim(0); ++r)
    for (std::size_t c = 0; c < y.dim(1); ++c) y.mutable_data()[r * y.dim(1) + c] += l.bias[c];
  return y;
}

TEST(ProjectCommon, IdentityZeroAndPerPixelOracle) {
  std::mt19937_64 rng(41);
  ParameterSet<double> ps;
  Rng init(1);
  Linear<double> fp(ps, "f", 3, 3, init), pp(ps, "p", 2, 3, init);
  const Tensor f = random_tensor({2, 3, 3}, rng), phi = random_tensor({2, 3, 2}, rng);

  for (double& v : fp.weight.mutable_data()) v = 0;
  for (std::size_t i = 0; i < 3; ++i) fp.weight.mutable_data()[i * 3 + i] = 1;
  for (double& v : pp.weight.mutable_data()) v = 0;
  auto [fbar, pbar] = project_common(f, phi, fp, pp);
  EXPECT_EQ(max_abs_diff(fbar, f), 0.0);
  for (double v : pbar.data()) EXPECT_EQ(v, 0.0);

  randomize(ps, rng);
  std::tie(fbar, pbar) = project_common(f, phi, fp, pp);
  EXPECT_LT(max_abs_diff(fbar, reshape(oracle_linear(reshape(f, {6, 3}), fp), {2, 3, 3})), 1e-10);
  EXPECT_LT(max_abs_diff(pbar, reshape(oracle_linear(reshape(phi, {6, 2}), pp), {2, 3, 3})), 1e-10);

  EXPECT_THROW(project_common(f, random_tensor({3, 3, 2}, rng), fp, pp), ShapeError);
}

TEST(AmplifiedMap, HandValuesAndLoopOracle) {
  for (double v : testing::values(amplified_map(Tensor({2, 2, 3}), Tensor({2, 2, 3})))) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(amplified_map(Tensor({1, 1, 1}, 1.0), Tensor({1, 1, 1}, 2.0))[0], 9.0);

  std::mt19937_64 rng(42);
  const Tensor f = random_tensor({3, 4, 5}, rng), p = random_tensor({3, 4, 5}, rng);
  const Tensor a = amplified_map(f, p);
  ASSERT_EQ(a.shape(), (Shape{3, 4}));
  for (std::size_t px = 0; px < 12; ++px) {
    double expect = 0;
    for (std::size_t c = 0; c < 5; ++c) expect += std::pow(f[px * 5 + c] + p[px * 5 + c], 2);
    EXPECT_NEAR(a[px], expect, 1e-10);
    EXPECT_GE(a[px], 0.0);
  }
  EXPECT_THROW(amplified_map(f, random_tensor({3, 4, 4}, rng)), ShapeError);
}

TEST(Amplify, OnesIsIdentityAndScalesPerPixel) {
  std::mt19937_64 rng(43);
  const Tensor f = random_tensor({2, 3, 4}, rng);
  EXPECT_EQ(max_abs_diff(amplify(f, Tensor({2, 3}, 1.0)), f), 0.0);
  const Tensor y = amplify(Tensor({1, 1, 2}, {1, 2}), Tensor({1, 1}, 3.0));
  EXPECT_EQ(y[0], 3);
  EXPECT_EQ(y[1], 6);
  const Tensor a = random_tensor({2, 3}, rng, 0, 2);
  const Tensor z = amplify(f, a);
  for (std::size_t px = 0; px < 6; ++px)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(z[px * 4 + c], f[px * 4 + c] * a[px], 1e-12);
  EXPECT_THROW(amplify(f, Tensor({3, 2}, 1.0)), ShapeError);
}

class SelfAttentionBlockTest : public ::testing::Test {
 protected:
  void SetUp() override {
    Rng init(5);
    attn = SelfAttention<double>(ps, "sa", 4, init);
    randomize(ps, rng);
  }
  // Step-by-step reference built from the matmul oracle and direct formulas.
  Tensor reference(const Tensor& tokens) const {
    const std::size_t n = tokens.dim(0), c = tokens.dim(1);
    const Tensor q = oracle_linear(tokens, attn.query), k = oracle_linear(tokens, attn.key),
                 v = oracle_linear(tokens, attn.value);
    Tensor w({n, n});
    for (std::size_t i = 0; i < n; ++i) {
      double mx = -1e300;
      std::vector<double> logit(n);
      for (std::size_t j = 0; j < n; ++j) {
        double d = 0;
        for (std::size_t t = 0; t < c; ++t) d += q[i * c + t] * k[j * c + t];
        logit[j] = d / std::sqrt(static_cast<double>(c));
        mx = std::max(mx, logit[j]);
      }
      double z = 0;
      for (double l : logit) z += std::exp(l - mx);
      for (std::size_t j = 0; j < n; ++j) w.mutable_data()[i * n + j] = std::exp(logit[j] - mx) / z;
    }
    const Tensor o = oracle_linear(oracle::matmul(w, v), attn.out);
    Tensor y({n, c});
    for (std::size_t i = 0; i < n; ++i) {
      double mu = 0, var = 0;
      std::vector<double> r(c);
      for (std::size_t t = 0; t < c; ++t) mu += (r[t] = tokens[i * c + t] + o[i * c + t]);
      mu /= c;
      for (double x : r) var += (x - mu) * (x - mu);
      var /= c;
      for (std::size_t t = 0; t < c; ++t)
        y.mutable_data()[i * c + t] = (r[t] - mu) / std::sqrt(var + 1e-5) * attn.norm.gamma[t] + attn.norm.beta[t];
    }
    return y;
  }

  std::mt19937_64 rng{44};
  ParameterSet<double> ps;
  SelfAttention<double> attn;
};

TEST_F(SelfAttentionBlockTest, SinglePixelHasUnitWeight) {
  const Tensor x = random_tensor({1, 1, 4}, rng);
  EXPECT_EQ(attn.weights(reshape(x, {1, 4}))[0], 1.0);
  EXPECT_LT(max_abs_diff(self_attention_block(x, attn), reshape(reference(reshape(x, {1, 4})), {1, 1, 4})), 1e-12);
}

TEST_F(SelfAttentionBlockTest, IdenticalTokensGiveIdenticalOutputs) {
  const Tensor tok = random_tensor({1, 4}, rng);
  Tensor x({1, 2, 4});
  for (std::size_t t = 0; t < 4; ++t) x.mutable_data()[t] = x.mutable_data()[4 + t] = tok[t];
  const Tensor y = self_attention_block(x, attn);
  for (std::size_t t = 0; t < 4; ++t) EXPECT_EQ(y[t], y[4 + t]);
}

TEST_F(SelfAttentionBlockTest, MatchesComposedOracle) {
  const Tensor x = random_tensor({2, 2, 4}, rng);
  EXPECT_LT(max_abs_diff(self_attention_block(x, attn), reshape(reference(reshape(x, {4, 4})), {2, 2, 4})), 1e-8);
}

TEST_F(SelfAttentionBlockTest, PermutationEquivariant) {
  const Tensor x = random_tensor({6, 4}, rng);
  const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  const Tensor y = attn(x);
  const Tensor yp = attn(gather_rows(x, std::span<const std::size_t>(perm)));
  EXPECT_LT(max_abs_diff(yp, gather_rows(y, std::span<const std::size_t>(perm))), 1e-12);
}

TEST_F(SelfAttentionBlockTest, RejectsTokenBudgetOverflow) {
  try {
    self_attention_block(Tensor({65, 64, 4}), attn);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("4160"), std::string::npos) << e.what();
  }
}

FeaturePyramid<double> pyramid(std::mt19937_64& rng, std::array<std::size_t, 4> widths, bool zero = false) {
  FeaturePyramid<double> p;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t h = 8 >> s, w = 16 >> s;
    p.stages.push_back(zero ? Tensor({h, w, widths[s]}) : random_tensor({h, w, widths[s]}, rng));
  }
  return p;
}

TEST(HierarchicalDecoder, OutputAtF2ResolutionForEveryDepth) {
  std::mt19937_64 rng(45);
  const auto fp = pyramid(rng, {3, 4, 5, 6});
  const auto pp = pyramid(rng, {2, 2, 3, 3});
  for (std::size_t depth = 1; depth <= 4; ++depth) {
    ParameterSet<double> ps;
    Rng init(depth);
    HierarchicalDecoder<double> dec(ps, "dec", {depth, 6, true}, {3, 4, 5, 6}, {2, 2, 3, 3}, init);
    EXPECT_EQ(dec(fp, pp).shape(), (Shape{8, 16, 6})) << "depth " << depth;
    EXPECT_EQ(dec(fp, {}).shape(), (Shape{8, 16, 6})) << "depth " << depth;
  }
}

TEST(HierarchicalDecoder, ZeroPyramidsGiveZeroOutput) {
  std::mt19937_64 rng(46);
  ParameterSet<double> ps;
  Rng init(2);
  HierarchicalDecoder<double> dec(ps, "dec", {4, 6, true}, {3, 4, 5, 6}, {2, 2, 3, 3}, init);
  const Tensor e = dec(pyramid(rng, {3, 4, 5, 6}, true), pyramid(rng, {2, 2, 3, 3}, true));
  for (double v : e.data()) EXPECT_EQ(v, 0.0);
}

TEST(HierarchicalDecoder, RejectsMisalignedPhase) {
  std::mt19937_64 rng(47);
  ParameterSet<double> ps;
  Rng init(3);
  HierarchicalDecoder<double> dec(ps, "dec", {4, 6, true}, {3, 4, 5, 6}, {2, 2, 3, 3}, init);
  auto pp = pyramid(rng, {2, 2, 3, 3});
  pp.stages[3] = random_tensor({2, 2, 3}, rng);
  EXPECT_THROW(dec(pyramid(rng, {3, 4, 5, 6}), pp), ShapeError);
  EXPECT_THROW(HierarchicalDecoder<double>(ps, "bad", {5, 6, true}, {3, 4, 5, 6}, {2, 2, 3, 3}, init),
               std::invalid_argument);
}

TEST(HierarchicalDecoder, GradientReachesF5AndEveryPhaseStage) {
  std::mt19937_64 rng(48);
  ParameterSet<double> ps;
  Rng init(4);
  HierarchicalDecoder<double> dec(ps, "dec", {4, 3, true}, {2, 2, 2, 2}, {2, 2, 2, 2}, init);
  FeaturePyramid<double> fp = pyramid(rng, {2, 2, 2, 2});
  FeaturePyramid<double> pp = pyramid(rng, {2, 2, 2, 2});
  const Tensor probe = random_tensor({8, 16, 3}, rng);
  auto loss = [&] { return sum(mul(dec(fp, pp), probe)); };
  EXPECT_LT(grad_check_param(loss, fp.stages[3]).max_rel_error, 1e-4);
  for (std::size_t s = 0; s < 4; ++s) EXPECT_LT(grad_check_param(loss, pp.stages[s]).max_rel_error, 1e-4) << s;
}

}  // namespace
}  // namespace nf
