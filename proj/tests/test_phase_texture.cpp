#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "nightformer/fft.hpp"
#include "nightformer/grad_check.hpp"
#include "nightformer/phase_texture.hpp"
#include "test_util.hpp"

namespace nf {
namespace {

using testing::max_abs_diff;
using testing::random_tensor;

TEST(FourierDecompose, ConstantImage) {
  const Spectrum s = fourier_decompose(Tensor({2, 2}, 4.0));
  EXPECT_NEAR(s.amplitude[0], 16.0, 1e-12);
  for (std::size_t i = 1; i < 4; ++i) EXPECT_NEAR(s.amplitude[i], 0.0, 1e-12);
  for (double p : s.phase.data()) EXPECT_EQ(p, 0.0);
}

TEST(FourierDecompose, Impulse) {
  Tensor x({4, 4});
  x.mutable_data()[0] = 1;
  const Spectrum s = fourier_decompose(x);
  for (double a : s.amplitude.data()) EXPECT_NEAR(a, 1.0, 1e-12);
  for (double p : s.phase.data()) EXPECT_NEAR(p, 0.0, 1e-12);
}

TEST(FourierDecompose, AmplitudeMatchesBruteForceAndReassembles) {
  std::mt19937_64 rng(31);
  const Tensor x = random_tensor({8, 8}, rng);
  const Spectrum s = fourier_decompose(x);
  const ComplexPlane b = dft2d_bruteforce(x);
  for (std::size_t i = 0; i < 64; ++i) {
    EXPECT_NEAR(s.amplitude[i] * s.amplitude[i], b.real[i] * b.real[i] + b.imag[i] * b.imag[i], 1e-10);
    EXPECT_GE(s.amplitude[i], 0.0);
    EXPECT_GT(s.phase[i], -std::numbers::pi);
    EXPECT_LE(s.phase[i], std::numbers::pi);
  }
  const ComplexPlane r = reassemble(s);
  EXPECT_LT(max_abs_diff(r.real, b.real), 1e-9);
  EXPECT_LT(max_abs_diff(r.imag, b.imag), 1e-9);
}

TEST(FourierDecompose, CircularShiftKeepsAmplitude) {
  std::mt19937_64 rng(32);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor x = random_tensor({8, 8}, rng);
    const std::size_t dy = rng() % 8, dx = rng() % 8;
    Tensor shifted({8, 8});
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j) shifted.mutable_data()[((i + dy) % 8) * 8 + (j + dx) % 8] = x.at({i, j});
    EXPECT_LT(max_abs_diff(fourier_decompose(x).amplitude, fourier_decompose(shifted).amplitude), 1e-9);
  }
}

TEST(FourierDecompose, RejectsNonFinite) {
  Tensor x({2, 2}, 1.0);
  x.mutable_data()[3] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(fourier_decompose(x), std::invalid_argument);
}

TEST(PhaseReconstruct, ZeroPhaseGivesImpulse) {
  const Spectrum s{Tensor({2, 2}, 5.0), Tensor({2, 2}, 0.0)};
  const PhaseTextureMap m = phase_reconstruct(s, 1.0);
  EXPECT_NEAR(m.plane[0], 1.0, 1e-15);
  for (std::size_t i = 1; i < 4; ++i) EXPECT_NEAR(m.plane[i], 0.0, 1e-15);
  EXPECT_EQ(m.c_a, 1.0);
}

TEST(PhaseReconstruct, ConstantModulusAndBruteForceOracle) {
  std::mt19937_64 rng(33);
  const Tensor x = random_tensor({8, 8}, rng, 0, 1);
  const Spectrum s = fourier_decompose(x);
  const double c_a = choose_c_a(s);
  const ComplexPlane spec = constant_amplitude_spectrum(s, c_a);
  for (std::size_t i = 0; i < 64; ++i) EXPECT_NEAR(std::hypot(spec.real[i], spec.imag[i]), c_a, 1e-6 * c_a);

  // oracle: c_a e^{j phase} composed by hand, inverted by the literal sum
  ComplexPlane manual(8, 8);
  for (std::size_t i = 0; i < 64; ++i) {
    manual.real.mutable_data()[i] = c_a * std::cos(s.phase[i]);
    manual.imag.mutable_data()[i] = c_a * std::sin(s.phase[i]);
  }
  const ComplexPlane inv = idft2d_bruteforce(manual);
  const PhaseTextureMap m = phase_reconstruct(s, c_a);
  EXPECT_LT(max_abs_diff(m.plane, inv.real), 1e-8);
  EXPECT_LT(m.imag_residue, 1e-8);
}

TEST(PhaseReconstruct, RejectsNonPositiveAmplitude) {
  const Spectrum s{Tensor({2, 2}, 1.0), Tensor({2, 2}, 0.0)};
  EXPECT_THROW(phase_reconstruct(s, 0.0), std::invalid_argument);
  EXPECT_THROW(phase_reconstruct(s, -1.0), std::invalid_argument);
}

TEST(ChooseCa, MeanAmplitude) {
  EXPECT_EQ(choose_c_a({Tensor({2, 2}, 2.0), Tensor({2, 2})}), 2.0);
  EXPECT_EQ(choose_c_a({Tensor({2, 2}, {16, 0, 0, 0}), Tensor({2, 2})}), 4.0);
  std::mt19937_64 rng(34);
  const Tensor a = random_tensor({4, 8}, rng, 0, 3);
  double total = 0;
  for (double v : a.data()) total += v;
  EXPECT_NEAR(choose_c_a({a, Tensor({4, 8})}), total / 32, 1e-12);
}

TEST(Sobel, ConstantImageIsExactlyZero) {
  for (double v : testing::values(sobel_texture_map(Tensor({5, 7}, 0.37)))) EXPECT_EQ(v, 0.0);
}

TEST(Sobel, VerticalStepEdge) {
  Tensor x({6, 6});
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 3; j < 6; ++j) x.mutable_data()[i * 6 + j] = 1.0;
  const Tensor g = sobel_texture_map(x);
  for (std::size_t i = 1; i < 5; ++i) {
    EXPECT_NEAR(g.at({i, 2}), 4.0, 1e-12);
    EXPECT_NEAR(g.at({i, 3}), 4.0, 1e-12);
    EXPECT_EQ(g.at({i, 0}), 0.0);
  }
}

TEST(Sobel, MatchesDirectConvolutionInInterior) {
  std::mt19937_64 rng(35);
  const Tensor x = random_tensor({7, 9}, rng);
  const Tensor g = sobel_texture_map(x);
  const int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  for (std::size_t i = 1; i + 1 < 7; ++i) {
    for (std::size_t j = 1; j + 1 < 9; ++j) {
      double gx = 0, gy = 0;
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) {
          const double v = x.at({i + a - 1, j + b - 1});
          gx += kx[a][b] * v;
          gy += kx[b][a] * v;
        }
      EXPECT_NEAR(g.at({i, j}), std::hypot(gx, gy), 1e-10);
    }
  }
}

TEST(TextureImage, ModesAndRange) {
  std::mt19937_64 rng(36);
  const Tensor img = random_tensor({8, 16, 3}, rng, 0, 1);
  for (TextureMode mode : {TextureMode::Phase, TextureMode::Sobel}) {
    const Tensor t = texture_image(img, mode);
    EXPECT_EQ(t.shape(), img.shape());
    for (double v : t.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  for (double v : testing::values(texture_image(img, TextureMode::None))) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(parse_texture_mode("sobel"), TextureMode::Sobel);
  EXPECT_THROW(parse_texture_mode("canny"), std::invalid_argument);
}

TEST(PhaseEncoder, StageExtentsAndZeroInput) {
  ParameterSet<double> ps;
  Rng rng(1);
  PhaseEncoder<double> enc(ps, "pe", 3, {4, 6, 8, 10}, {4, 2, 2, 2}, rng);
  const auto stages = enc(Tensor({32, 64, 3}, 0.0));
  ASSERT_EQ(stages.size(), 4u);
  const std::size_t expect[4][3] = {{8, 16, 4}, {4, 8, 6}, {2, 4, 8}, {1, 2, 10}};
  for (std::size_t s = 0; s < 4; ++s) {
    EXPECT_EQ(stages[s].shape(), (Shape{expect[s][0], expect[s][1], expect[s][2]}));
    for (double v : stages[s].data()) EXPECT_EQ(v, 0.0);
  }
  EXPECT_THROW(enc(Tensor({30, 64, 3})), ShapeError);
}

TEST(PhaseEncoder, StrideTwoScheduleHalvesEachStage) {
  ParameterSet<double> ps;
  Rng rng(1);
  PhaseEncoder<double> enc(ps, "pe", 3, {2, 2, 2, 2}, {2, 2, 2, 2}, rng);
  const auto stages = enc(Tensor({32, 64, 3}, 0.5));
  EXPECT_EQ(stages[0].shape(), (Shape{16, 32, 2}));
  EXPECT_EQ(stages[3].shape(), (Shape{2, 4, 2}));
}

TEST(PhaseEncoder, GradientReachesWeights) {
  ParameterSet<double> ps;
  Rng rng(2);
  PhaseEncoder<double> enc(ps, "pe", 1, {2, 2, 2, 2}, {2, 2, 2, 2}, rng);
  std::mt19937_64 r(3);
  const Tensor input = random_tensor({16, 16, 1}, r, 0, 1);
  Tensor probe = random_tensor({1, 1, 2}, r);
  for (auto& e : ps.entries()) {
    if (e.name.find(".weight") == std::string::npos) continue;
    const auto rep = grad_check_param([&] { return sum(mul(enc(input)[3], probe)); }, e.value);
    EXPECT_LT(rep.max_rel_error, 1e-4) << e.name;
  }
}

}  // namespace
}  // namespace nf
