#pragma once

// Binary netpbm codecs: P6 (RGB, maxval 255) for images and P5 (gray,
// maxval 255) for masks, with the class index stored as the pixel value.

#include <cstddef>
#include <stdexcept>
#include <string>

#include "nightformer/label_mask.hpp"
#include "nightformer/tensor.hpp"

namespace nf {

class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at byte " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// Rounds each value of an image in [0, 1] to the nearest k/255.
Tensor quantize(const Tensor& image);

std::string encode_ppm(const Tensor& image);  // [H, W, 3]
Tensor decode_ppm(const std::string& bytes);
std::string encode_pgm(const LabelMask& mask);
LabelMask decode_pgm(const std::string& bytes);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

}  // namespace nf
