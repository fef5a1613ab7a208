#pragma once

// Binary tensor files: "NFT1", u32 LE rank, rank x u32 LE extents, then
// row-major f32 LE payload. Values are always stored as 32-bit floats.

#include <iosfwd>
#include <string>

#include "nightformer/tensor.hpp"

namespace nf {

template <typename T>
void write_tensor(std::ostream& out, const BasicTensor<T>& t);

/// Reads one record; throws std::runtime_error on a bad magic or truncation.
template <typename T>
BasicTensor<T> read_tensor(std::istream& in);

template <typename T>
void save_tensor(const std::string& path, const BasicTensor<T>& t);

template <typename T>
BasicTensor<T> load_tensor(const std::string& path);

}  // namespace nf
