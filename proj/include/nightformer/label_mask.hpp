#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace nf {

/// Dense class-index grid, row-major.
struct LabelMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> labels;

  LabelMask() = default;
  LabelMask(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), labels(h * w, fill) {}

  std::uint8_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
  std::uint8_t& at(std::size_t y, std::size_t x) { return labels[y * width + x]; }
  std::size_t size() const { return labels.size(); }

  bool operator==(const LabelMask&) const = default;
};

}  // namespace nf
