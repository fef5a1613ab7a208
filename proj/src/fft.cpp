#include "nightformer/fft.hpp"

#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace nf {

ComplexPlane::ComplexPlane(std::size_t height, std::size_t width)
    : real(Shape{height, width}), imag(Shape{height, width}) {}

ComplexPlane::ComplexPlane(Tensor re, Tensor im) : real(std::move(re)), imag(std::move(im)) {
  if (real.rank() != 2 || real.shape() != imag.shape()) {
    throw ShapeError("complex plane needs matching 2-D real/imag parts, got " + shape_str(real.shape()) + " and " +
                     shape_str(imag.shape()));
  }
}

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

namespace {

using cd = std::complex<double>;

// In-place iterative radix-2 transform of `n` values spaced `stride` apart.
void fft1d(cd* data, std::size_t n, std::size_t stride, bool inverse, std::vector<cd>& scratch) {
  scratch.resize(n);
  for (std::size_t i = 0; i < n; ++i) scratch[i] = data[i * stride];
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(scratch[i], scratch[j]);
  }
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    for (std::size_t k = 0; k < half; ++k) {
      const double angle = sign * 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(len);
      const cd w(std::cos(angle), std::sin(angle));
      for (std::size_t start = 0; start < n; start += len) {
        const cd even = scratch[start + k];
        const cd odd = scratch[start + k + half] * w;
        scratch[start + k] = even + odd;
        scratch[start + k + half] = even - odd;
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) data[i * stride] = scratch[i];
}

std::vector<cd> to_complex(const ComplexPlane& p) {
  std::vector<cd> out(p.real.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {p.real[i], p.imag[i]};
  return out;
}

ComplexPlane from_complex(const std::vector<cd>& v, std::size_t h, std::size_t w) {
  ComplexPlane out(h, w);
  double* re = out.real.mutable_ptr();
  double* im = out.imag.mutable_ptr();
  for (std::size_t i = 0; i < v.size(); ++i) {
    re[i] = v[i].real();
    im[i] = v[i].imag();
  }
  return out;
}

ComplexPlane transform_fast(const ComplexPlane& in, bool inverse) {
  const std::size_t h = in.height(), w = in.width();
  if (!is_power_of_two(h) || !is_power_of_two(w)) {
    throw std::invalid_argument("fft2d: extents " + std::to_string(h) + "x" + std::to_string(w) +
                                " are not powers of two; use dft2d_bruteforce for arbitrary sizes");
  }
  std::vector<cd> buf = to_complex(in);
  std::vector<cd> scratch;
  for (std::size_t r = 0; r < h; ++r) fft1d(buf.data() + r * w, w, 1, inverse, scratch);
  for (std::size_t c = 0; c < w; ++c) fft1d(buf.data() + c, h, w, inverse, scratch);
  if (inverse) {
    const double norm = 1.0 / static_cast<double>(h * w);
    for (cd& v : buf) v *= norm;
  }
  return from_complex(buf, h, w);
}

ComplexPlane transform_direct(const ComplexPlane& in, bool inverse) {
  const std::size_t h = in.height(), w = in.width();
  const double sign = inverse ? 1.0 : -1.0;
  ComplexPlane out(h, w);
  double* re = out.real.mutable_ptr();
  double* im = out.imag.mutable_ptr();
  for (std::size_t u = 0; u < h; ++u) {
    for (std::size_t v = 0; v < w; ++v) {
      double sr = 0, si = 0;
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          // Reduce the phase index exactly before converting to an angle.
          const double frac = static_cast<double>((u * i) % h) / static_cast<double>(h) +
                              static_cast<double>((v * j) % w) / static_cast<double>(w);
          const double angle = sign * 2.0 * std::numbers::pi * frac;
          const double c = std::cos(angle), s = std::sin(angle);
          const double xr = in.real[i * w + j], xi = in.imag[i * w + j];
          sr += xr * c - xi * s;
          si += xr * s + xi * c;
        }
      }
      re[u * w + v] = sr;
      im[u * w + v] = si;
    }
  }
  if (inverse) {
    const double norm = 1.0 / static_cast<double>(h * w);
    for (std::size_t i = 0; i < h * w; ++i) {
      re[i] *= norm;
      im[i] *= norm;
    }
  }
  return out;
}

ComplexPlane real_plane(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("expected a 2-D plane, got " + shape_str(x.shape()));
  return ComplexPlane(x.clone(), Tensor(x.shape()));
}

}  // namespace

ComplexPlane fft2d(const Tensor& x) { return transform_fast(real_plane(x), false); }
ComplexPlane fft2d(const ComplexPlane& x) { return transform_fast(x, false); }
ComplexPlane ifft2d(const ComplexPlane& s) { return transform_fast(s, true); }

ComplexPlane dft2d_bruteforce(const Tensor& x) { return transform_direct(real_plane(x), false); }
ComplexPlane dft2d_bruteforce(const ComplexPlane& x) { return transform_direct(x, false); }
ComplexPlane idft2d_bruteforce(const ComplexPlane& s) { return transform_direct(s, true); }

}  // namespace nf
