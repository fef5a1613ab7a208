#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "nightformer/fft.hpp"
#include "nightformer/grad_check.hpp"
#include "nightformer/ops.hpp"
#include "nightformer/tensor_io.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace nf {
namespace {

using testing::max_abs_diff;
using testing::random_tensor;

TEST(Tensor, ShapeAndDataMustAgree) {
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  Tensor t({2, 3}, 5.0);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.at({1, 2}), 5.0);
}

TEST(Tensor, CopiesAliasButCloneDoesNot) {
  Tensor a({2}, 1.0);
  Tensor b = a;
  Tensor c = a.clone();
  a.mutable_data()[0] = 9;
  EXPECT_EQ(b[0], 9);
  EXPECT_EQ(c[0], 1);
}

TEST(Matmul, IdentityAndDotProduct) {
  const Tensor id({2, 2}, {1, 0, 0, 1});
  const Tensor m({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(max_abs_diff(matmul(id, m), m), 0.0);
  const Tensor r = matmul(Tensor({1, 2}, {1, 2}), Tensor({2, 1}, {3, 4}));
  EXPECT_EQ(r.shape(), (Shape{1, 1}));
  EXPECT_EQ(r[0], 11);
}

TEST(Matmul, MatchesTripleLoopOracle) {
  std::mt19937_64 rng(11);
  const Tensor a = random_tensor({5, 4}, rng);
  const Tensor b = random_tensor({4, 3}, rng);
  EXPECT_LT(max_abs_diff(matmul(a, b), oracle::matmul(a, b)), 1e-12);
  EXPECT_LT(max_abs_diff(matmul_nt(a, transpose(b)), oracle::matmul(a, b)), 1e-12);
}

TEST(Matmul, RejectsInnerMismatchNamingBothShapes) {
  try {
    matmul(Tensor({2, 3}), Tensor({4, 2}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4,2]"), std::string::npos) << msg;
  }
}

TEST(Softmax, UniformAndLargeInputs) {
  const Tensor u = softmax(Tensor({3}, 0.0), 0);
  for (double v : u.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  const Tensor big = softmax(Tensor({3}, {1000, 0, 0}), 0);
  EXPECT_NEAR(big[0], 1.0, 1e-15);
  EXPECT_NEAR(big[1], 0.0, 1e-15);
  EXPECT_TRUE(std::isfinite(big[2]));
}

TEST(Softmax, MatchesDirectFormulaAndRowsSumToOne) {
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor({4, 7}, rng, -5, 5);
  const Tensor s = softmax(x, 1);
  for (std::size_t r = 0; r < 4; ++r) {
    double denom = 0, total = 0;
    for (std::size_t c = 0; c < 7; ++c) denom += std::exp(x.at({r, c}));
    for (std::size_t c = 0; c < 7; ++c) {
      EXPECT_NEAR(s.at({r, c}), std::exp(x.at({r, c})) / denom, 1e-12);
      total += s.at({r, c});
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
  // axis 0 normalizes columns
  const Tensor s0 = softmax(x, 0);
  for (std::size_t c = 0; c < 7; ++c) {
    double total = 0;
    for (std::size_t r = 0; r < 4; ++r) total += s0.at({r, c});
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
  EXPECT_THROW(softmax(x, 2), ShapeError);
}

TEST(Conv2d, IdentityKernelAndBoxSum) {
  std::mt19937_64 rng(5);
  const Tensor x = random_tensor({3, 4, 1}, rng);
  EXPECT_EQ(max_abs_diff(conv2d(x, Tensor({1, 1, 1, 1}, 1.0), 1, 0), x), 0.0);
  const Tensor box = conv2d(Tensor({3, 3, 1}, 1.0), Tensor({3, 3, 1, 1}, 1.0), 1, 1);
  EXPECT_EQ(box.at({1, 1, 0}), 9);
  EXPECT_EQ(box.at({0, 0, 0}), 4);
}

TEST(Conv2d, MatchesNestedLoopOracle) {
  std::mt19937_64 rng(6);
  for (std::size_t stride : {1u, 2u}) {
    for (std::size_t pad : {0u, 1u}) {
      const Tensor x = random_tensor({6, 5, 3}, rng);
      const Tensor w = random_tensor({3, 3, 3, 2}, rng);
      EXPECT_LT(max_abs_diff(conv2d(x, w, stride, pad), oracle::conv2d(x, w, stride, pad)), 1e-10);
    }
  }
}

TEST(Conv2d, RejectsKernelLargerThanPaddedInput) {
  EXPECT_THROW(conv2d(Tensor({2, 2, 1}), Tensor({5, 5, 1, 1}), 1, 1), ShapeError);
  EXPECT_THROW(conv2d(Tensor({4, 4, 2}), Tensor({3, 3, 1, 1}), 1, 1), ShapeError);
}

TEST(Upsample, ConstantAndSinglePixel) {
  const Tensor c = upsample_bilinear2x(Tensor({3, 2, 2}, 7.0));
  EXPECT_EQ(c.shape(), (Shape{6, 4, 2}));
  for (double v : c.data()) EXPECT_DOUBLE_EQ(v, 7.0);
  const Tensor one = upsample_bilinear2x(Tensor({1, 1, 1}, {3.5}));
  EXPECT_EQ(one.shape(), (Shape{2, 2, 1}));
  for (double v : one.data()) EXPECT_EQ(v, 3.5);
}

TEST(Upsample, MatchesClosedFormInterpolation) {
  std::mt19937_64 rng(8);
  const Tensor x = random_tensor({4, 4, 1}, rng);
  const Tensor y = upsample_bilinear2x(x);
  auto src = [](std::size_t o, std::size_t n, std::size_t& i0, std::size_t& i1, double& f) {
    double s = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    s = std::max(s, 0.0);
    i0 = std::min(static_cast<std::size_t>(std::floor(s)), n - 1);
    i1 = std::min(i0 + 1, n - 1);
    f = s - static_cast<double>(i0);
  };
  for (std::size_t oy = 0; oy < 8; ++oy) {
    for (std::size_t ox = 0; ox < 8; ++ox) {
      std::size_t y0, y1, x0, x1;
      double fy, fx;
      src(oy, 4, y0, y1, fy);
      src(ox, 4, x0, x1, fx);
      const double expect = (1 - fy) * ((1 - fx) * x.at({y0, x0, 0}) + fx * x.at({y0, x1, 0})) +
                            fy * ((1 - fx) * x.at({y1, x0, 0}) + fx * x.at({y1, x1, 0}));
      EXPECT_NEAR(y.at({oy, ox, 0}), expect, 1e-12);
    }
  }
}

TEST(Fft, ImpulseAndConstant) {
  const ComplexPlane imp = fft2d(Tensor({2, 2}, {1, 0, 0, 0}));
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(imp.real[i], 1.0, 1e-15);
    EXPECT_NEAR(imp.imag[i], 0.0, 1e-15);
  }
  const ComplexPlane dc = fft2d(Tensor({2, 2}, 4.0));
  EXPECT_NEAR(dc.real[0], 16.0, 1e-15);
  for (std::size_t i = 1; i < 4; ++i) EXPECT_NEAR(std::hypot(dc.real[i], dc.imag[i]), 0.0, 1e-15);
}

TEST(Fft, BruteForceHandExamples) {
  const ComplexPlane one = dft2d_bruteforce(Tensor({1, 1}, {2.5}));
  EXPECT_EQ(one.real[0], 2.5);
  EXPECT_EQ(one.imag[0], 0.0);
  const ComplexPlane s = dft2d_bruteforce(Tensor({2, 2}, {1, 2, 3, 4}));
  const double expect[4] = {10, -2, -4, 0};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(s.real[i], expect[i], 1e-12);
    EXPECT_NEAR(s.imag[i], 0.0, 1e-12);
  }
  // non-power-of-two extents are fine on the brute-force path
  EXPECT_NO_THROW(dft2d_bruteforce(Tensor({3, 5}, 1.0)));
}

TEST(Fft, FastPathRejectsNonPowerOfTwo) {
  try {
    fft2d(Tensor({3, 4}, 1.0));
    FAIL() << "expected rejection";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("dft2d_bruteforce"), std::string::npos) << e.what();
  }
}

TEST(Fft, MatchesBruteForceAndRoundTrips) {
  std::mt19937_64 rng(21);
  for (const auto& [h, w] : {std::pair<std::size_t, std::size_t>{16, 16}, {4, 32}, {1, 8}, {8, 1}}) {
    const Tensor x = random_tensor({h, w}, rng);
    const ComplexPlane f = fft2d(x);
    const ComplexPlane b = dft2d_bruteforce(x);
    EXPECT_LT(max_abs_diff(f.real, b.real), 1e-9);
    EXPECT_LT(max_abs_diff(f.imag, b.imag), 1e-9);
    const ComplexPlane back = ifft2d(f);
    EXPECT_LT(max_abs_diff(back.real, x), 1e-12);
    EXPECT_LT(max_abs_diff(back.imag, Tensor({h, w})), 1e-12);
  }
}

TEST(Backward, SumAndSquare) {
  Tensor x({3}, {1, 2, 3});
  x.set_requires_grad();
  {
    Tape<double> tape;
    tape.backward(sum(x));
  }
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);

  Tensor y({2}, {1, 2});
  y.set_requires_grad();
  {
    Tape<double> tape;
    tape.backward(sum(mul(y, y)));
  }
  EXPECT_EQ(y.grad()[0], 2.0);
  EXPECT_EQ(y.grad()[1], 4.0);
}

TEST(Backward, RejectsNonScalarLoss) {
  Tensor x({2}, 1.0);
  x.set_requires_grad();
  Tape<double> tape;
  const Tensor y = mul(x, x);
  EXPECT_THROW(tape.backward(y), std::invalid_argument);
}

TEST(Backward, NoTapeGuardStopsRecording) {
  Tensor x({2}, 1.0);
  x.set_requires_grad();
  Tape<double> tape;
  {
    NoTapeGuard<double> guard;
    (void)mul(x, x);
  }
  EXPECT_EQ(tape.size(), 0u);
  (void)mul(x, x);
  EXPECT_EQ(tape.size(), 1u);
}

TEST(GradCheck, QuadraticAndSoftmaxConservation) {
  const auto sq = grad_check([](const Tensor& x) { return sum(mul(x, x)); }, Tensor({3}, {1, 2, 3}));
  EXPECT_LT(sq.max_rel_error, 1e-9);

  std::mt19937_64 rng(4);
  const Tensor x = random_tensor({5}, rng);
  Tensor p = x.clone();
  p.set_requires_grad();
  {
    Tape<double> tape;
    tape.backward(sum(softmax(p, 0)));
  }
  for (double g : p.grad()) EXPECT_NEAR(g, 0.0, 1e-12);
  const auto sm = grad_check([](const Tensor& v) { return sum(softmax(v, 0)); }, x);
  EXPECT_LT(sm.max_abs_error, 1e-9);
}

TEST(GradCheck, CompositeConvSoftmaxSum) {
  std::mt19937_64 rng(12);
  const Tensor w = random_tensor({3, 3, 2, 3}, rng);
  const Tensor probe = random_tensor({4 * 4, 3}, rng);
  const auto r = grad_check(
      [&](const Tensor& x) {
        const Tensor y = reshape(conv2d(x, w, 1, 1), {16, 3});
        return sum(mul(softmax(y, 1), probe));
      },
      random_tensor({4, 4, 2}, rng));
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(GradCheck, DiceOnFourByFour) {
  std::mt19937_64 rng(13);
  Tensor target({4, 4});
  for (double& v : target.mutable_data()) v = rng() % 2;
  const auto r = grad_check([&](const Tensor& x) { return dice_loss(sigmoid(x), target); },
                            random_tensor({4, 4}, rng, -2, 2));
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(GradCheck, ReportsNonFiniteEvaluation) {
  Tensor x({2}, {1.0, std::numeric_limits<double>::infinity()});
  EXPECT_THROW(grad_check([](const Tensor& v) { return sum(mul(v, v)); }, x), NonFiniteError);
}

TEST(TensorIo, RoundTripAndHeaderLayout) {
  const TensorF t({2, 3}, std::vector<float>{1, -2, 3.5f, 0, 1e-3f, 7});
  std::stringstream ss;
  write_tensor(ss, t);
  const std::string bytes = ss.str();
  ASSERT_EQ(bytes.size(), 4u + 4 + 2 * 4 + 6 * 4);
  EXPECT_EQ(bytes.substr(0, 4), "NFT1");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 2);
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 3);
  const TensorF back = read_tensor<float>(ss);
  EXPECT_EQ(back.shape(), t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(back[i], t[i]);
}

TEST(TensorIo, RejectsBadMagicAndTruncation) {
  std::stringstream bad("NFT2\x01\x00\x00\x00");
  EXPECT_THROW(read_tensor<float>(bad), std::runtime_error);
  std::stringstream ss;
  write_tensor(ss, TensorF({4}, 1.0f));
  std::string s = ss.str();
  std::stringstream cut(s.substr(0, s.size() - 2));
  EXPECT_THROW(read_tensor<float>(cut), std::runtime_error);
}

}  // namespace
}  // namespace nf
