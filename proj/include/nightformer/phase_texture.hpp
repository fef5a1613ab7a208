#pragma once

// Fourier amplitude/phase decomposition and constant-amplitude phase
// reconstruction of image planes, the Sobel baseline, and the light-weight
// encoder that turns texture maps into a phase feature pyramid.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "nightformer/fft.hpp"
#include "nightformer/nn.hpp"
#include "nightformer/tensor.hpp"

namespace nf {

struct Spectrum {
  Tensor amplitude;  // [H, W], >= 0
  Tensor phase;      // [H, W], in (-pi, pi]
};

struct PhaseTextureMap {
  Tensor plane;               // real part of the inverse transform, [H, W]
  double c_a = 1.0;           // amplitude every bin was fixed to
  double imag_residue = 0.0;  // max |imag| discarded when taking the real part
};

enum class TextureMode { Phase, Sobel, None };

TextureMode parse_texture_mode(const std::string& name);
std::string to_string(TextureMode mode);

/// Amplitude |F(x)| and phase atan2(Im, Re); zero bins get phase 0.
Spectrum fourier_decompose(const Tensor& plane);

/// amplitude * exp(j phase) as a complex plane.
ComplexPlane reassemble(const Spectrum& s);

/// c_a * exp(j phase): the spectrum that phase_reconstruct inverts.
ComplexPlane constant_amplitude_spectrum(const Spectrum& s, double c_a);

PhaseTextureMap phase_reconstruct(const Spectrum& s, double c_a);

/// Mean of the amplitude plane.
double choose_c_a(const Spectrum& s);

/// sqrt(Gx^2 + Gy^2) with the 3x3 Sobel pair. Borders replicate the edge
/// pixel so constant planes map to exactly zero.
Tensor sobel_texture_map(const Tensor& plane);

/// Rescales a plane to [0, 1]; a flat plane maps to zeros.
Tensor minmax_normalize(const Tensor& plane);

/// Per-channel texture of an [H, W, C] image, each channel min-max
/// normalized. `c_a` overrides the per-channel mean amplitude. Mode None
/// returns zeros.
Tensor texture_image(const Tensor& image, TextureMode mode, std::optional<double> c_a = std::nullopt);

/// Strided convolutional encoder producing one feature map per pyramid stage.
///
/// Each stage is a conv followed by ReLU. A stride-2 stage uses a 3x3 kernel
/// with padding 1; any other stride s uses an s x s kernel without padding.
template <typename T>
class PhaseEncoder {
 public:
  PhaseEncoder() = default;
  PhaseEncoder(ParameterSet<T>& ps, const std::string& name, std::size_t in_channels,
               const std::array<std::size_t, 4>& widths, const std::array<std::size_t, 4>& strides, Rng& rng);

  /// Stages ordered fine to coarse (aligned with F2, F3, F4, F5).
  std::vector<BasicTensor<T>> operator()(const BasicTensor<T>& texture) const;

  const std::array<std::size_t, 4>& strides() const { return strides_; }

 private:
  std::array<Conv2d<T>, 4> stages_;
  std::array<std::size_t, 4> strides_{};
};

}  // namespace nf
