#pragma once

// Two-dimensional discrete Fourier transforms on real/complex planes.
//
// The forward transform is unnormalized,
//   X[u,v] = sum_{i,j} x[i,j] exp(-2 pi J (u i / H + v j / W)),
// and the inverse carries the 1/(H W) factor so ifft2d(fft2d(x)) == x.

#include <cstddef>

#include "nightformer/tensor.hpp"

namespace nf {

struct ComplexPlane {
  Tensor real;  // [H, W]
  Tensor imag;  // [H, W]

  ComplexPlane(std::size_t height, std::size_t width);
  ComplexPlane(Tensor re, Tensor im);

  std::size_t height() const { return real.dim(0); }
  std::size_t width() const { return real.dim(1); }
};

bool is_power_of_two(std::size_t n);

/// Radix-2 Cooley-Tukey path. Both extents must be powers of two.
ComplexPlane fft2d(const Tensor& x);
ComplexPlane fft2d(const ComplexPlane& x);
ComplexPlane ifft2d(const ComplexPlane& s);

/// Literal O(H^2 W^2) double sum; any extents.
ComplexPlane dft2d_bruteforce(const Tensor& x);
ComplexPlane dft2d_bruteforce(const ComplexPlane& x);
ComplexPlane idft2d_bruteforce(const ComplexPlane& s);

}  // namespace nf
