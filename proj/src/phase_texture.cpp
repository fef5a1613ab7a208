#include "nightformer/phase_texture.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace nf {

TextureMode parse_texture_mode(const std::string& name) {
  if (name == "phase") return TextureMode::Phase;
  if (name == "sobel") return TextureMode::Sobel;
  if (name == "none") return TextureMode::None;
  throw std::invalid_argument("unknown texture mode '" + name + "' (expected phase, sobel or none)");
}

std::string to_string(TextureMode mode) {
  switch (mode) {
    case TextureMode::Phase: return "phase";
    case TextureMode::Sobel: return "sobel";
    case TextureMode::None: return "none";
  }
  return "?";
}

namespace {

ComplexPlane forward_any(const Tensor& plane) {
  if (is_power_of_two(plane.dim(0)) && is_power_of_two(plane.dim(1))) return fft2d(plane);
  return dft2d_bruteforce(plane);
}

ComplexPlane inverse_any(const ComplexPlane& s) {
  if (is_power_of_two(s.height()) && is_power_of_two(s.width())) return ifft2d(s);
  return idft2d_bruteforce(s);
}

}  // namespace

Spectrum fourier_decompose(const Tensor& plane) {
  if (plane.rank() != 2) throw ShapeError("fourier_decompose expects one [H, W] plane, got " + shape_str(plane.shape()));
  for (std::size_t i = 0; i < plane.size(); ++i) {
    if (!std::isfinite(plane[i])) throw std::invalid_argument("fourier_decompose: non-finite input at " + std::to_string(i));
  }
  const ComplexPlane f = forward_any(plane);
  Spectrum s{Tensor(plane.shape()), Tensor(plane.shape())};
  double* amp = s.amplitude.mutable_ptr();
  double* ph = s.phase.mutable_ptr();
  for (std::size_t i = 0; i < plane.size(); ++i) {
    const double re = f.real[i], im = f.imag[i];
    amp[i] = std::hypot(re, im);
    // atan2 returns -pi for (negative, -0.0); fold onto +pi to stay in (-pi, pi].
    double angle = amp[i] == 0.0 ? 0.0 : std::atan2(im, re);
    if (angle <= -std::numbers::pi) angle = std::numbers::pi;
    ph[i] = angle;
  }
  return s;
}

ComplexPlane reassemble(const Spectrum& s) {
  ComplexPlane out(s.amplitude.dim(0), s.amplitude.dim(1));
  double* re = out.real.mutable_ptr();
  double* im = out.imag.mutable_ptr();
  for (std::size_t i = 0; i < s.amplitude.size(); ++i) {
    re[i] = s.amplitude[i] * std::cos(s.phase[i]);
    im[i] = s.amplitude[i] * std::sin(s.phase[i]);
  }
  return out;
}

ComplexPlane constant_amplitude_spectrum(const Spectrum& s, double c_a) {
  if (!(c_a > 0.0)) throw std::invalid_argument("phase_reconstruct: c_a must be positive, got " + std::to_string(c_a));
  ComplexPlane out(s.phase.dim(0), s.phase.dim(1));
  double* re = out.real.mutable_ptr();
  double* im = out.imag.mutable_ptr();
  for (std::size_t i = 0; i < s.phase.size(); ++i) {
    re[i] = c_a * std::cos(s.phase[i]);
    im[i] = c_a * std::sin(s.phase[i]);
  }
  return out;
}

PhaseTextureMap phase_reconstruct(const Spectrum& s, double c_a) {
  const ComplexPlane spatial = inverse_any(constant_amplitude_spectrum(s, c_a));
  PhaseTextureMap map{spatial.real, c_a, 0.0};
  for (std::size_t i = 0; i < spatial.imag.size(); ++i) {
    map.imag_residue = std::max(map.imag_residue, std::abs(spatial.imag[i]));
  }
  return map;
}

double choose_c_a(const Spectrum& s) {
  double total = 0;
  for (double a : s.amplitude.data()) total += a;
  return total / static_cast<double>(s.amplitude.size());
}

Tensor sobel_texture_map(const Tensor& plane) {
  if (plane.rank() != 2) throw ShapeError("sobel_texture_map expects one [H, W] plane, got " + shape_str(plane.shape()));
  const long h = static_cast<long>(plane.dim(0)), w = static_cast<long>(plane.dim(1));
  auto px = [&](long y, long x) {
    y = std::clamp(y, 0L, h - 1);
    x = std::clamp(x, 0L, w - 1);
    return plane[static_cast<std::size_t>(y * w + x)];
  };
  Tensor out(plane.shape());
  double* o = out.mutable_ptr();
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      const double gx = (px(y - 1, x + 1) + 2 * px(y, x + 1) + px(y + 1, x + 1)) -
                        (px(y - 1, x - 1) + 2 * px(y, x - 1) + px(y + 1, x - 1));
      const double gy = (px(y + 1, x - 1) + 2 * px(y + 1, x) + px(y + 1, x + 1)) -
                        (px(y - 1, x - 1) + 2 * px(y - 1, x) + px(y - 1, x + 1));
      o[y * w + x] = std::sqrt(gx * gx + gy * gy);
    }
  }
  return out;
}

Tensor minmax_normalize(const Tensor& plane) {
  const auto [lo, hi] = std::minmax_element(plane.data().begin(), plane.data().end());
  Tensor out(plane.shape());
  const double range = *hi - *lo;
  if (range <= 0) return out;
  double* o = out.mutable_ptr();
  for (std::size_t i = 0; i < plane.size(); ++i) o[i] = (plane[i] - *lo) / range;
  return out;
}

Tensor texture_image(const Tensor& image, TextureMode mode, std::optional<double> c_a) {
  if (image.rank() != 3) throw ShapeError("texture_image expects [H, W, C], got " + shape_str(image.shape()));
  const std::size_t h = image.dim(0), w = image.dim(1), channels = image.dim(2);
  Tensor out(image.shape());
  if (mode == TextureMode::None) return out;
  double* o = out.mutable_ptr();
  for (std::size_t c = 0; c < channels; ++c) {
    Tensor plane({h, w});
    double* p = plane.mutable_ptr();
    for (std::size_t i = 0; i < h * w; ++i) p[i] = image[i * channels + c];
    Tensor texture;
    if (mode == TextureMode::Phase) {
      const Spectrum s = fourier_decompose(plane);
      texture = phase_reconstruct(s, c_a.value_or(choose_c_a(s))).plane;
    } else {
      texture = sobel_texture_map(plane);
    }
    const Tensor normalized = minmax_normalize(texture);
    for (std::size_t i = 0; i < h * w; ++i) o[i * channels + c] = normalized[i];
  }
  return out;
}

template <typename T>
PhaseEncoder<T>::PhaseEncoder(ParameterSet<T>& ps, const std::string& name, std::size_t in_channels,
                              const std::array<std::size_t, 4>& widths, const std::array<std::size_t, 4>& strides,
                              Rng& rng)
    : strides_(strides) {
  std::size_t cin = in_channels;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t stride = strides[s];
    const std::size_t kernel = stride == 2 ? 3 : stride;
    const std::size_t pad = stride == 2 ? 1 : 0;
    stages_[s] = Conv2d<T>(ps, name + ".stage" + std::to_string(s), kernel, cin, widths[s], stride, pad, rng);
    cin = widths[s];
  }
}

template <typename T>
std::vector<BasicTensor<T>> PhaseEncoder<T>::operator()(const BasicTensor<T>& texture) const {
  if (texture.rank() != 3) throw ShapeError("phase encoder expects [H, W, C], got " + shape_str(texture.shape()));
  std::size_t total = 1;
  for (std::size_t s : strides_) total *= s;
  if (texture.dim(0) % total != 0 || texture.dim(1) % total != 0) {
    throw ShapeError("phase encoder: extents " + shape_str(texture.shape()) + " not divisible by total stride " +
                     std::to_string(total));
  }
  std::vector<BasicTensor<T>> stages;
  BasicTensor<T> x = texture;
  for (const auto& conv : stages_) {
    x = relu(conv(x));
    stages.push_back(x);
  }
  return stages;
}

template class PhaseEncoder<float>;
template class PhaseEncoder<double>;

}  // namespace nf
