#include "nightformer/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace nf {

namespace {

constexpr std::array<char, 4> kMagic = {'N', 'F', 'T', '1'};
constexpr std::uint32_t kMaxRank = 16;

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char bytes[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                  static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(bytes), 4);
}

std::uint32_t get_u32(std::istream& in, const char* what) {
  unsigned char bytes[4];
  if (!in.read(reinterpret_cast<char*>(bytes), 4)) throw std::runtime_error(std::string("tensor file truncated in ") + what);
  return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
         (static_cast<std::uint32_t>(bytes[2]) << 16) | (static_cast<std::uint32_t>(bytes[3]) << 24);
}

}  // namespace

template <typename T>
void write_tensor(std::ostream& out, const BasicTensor<T>& t) {
  out.write(kMagic.data(), kMagic.size());
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape()) put_u32(out, static_cast<std::uint32_t>(e));
  for (T v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  if (!out) throw std::runtime_error("tensor write failed");
}

template <typename T>
BasicTensor<T> read_tensor(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size())) throw std::runtime_error("tensor file truncated in magic");
  if (magic != kMagic) throw std::runtime_error("not an NFT1 tensor record");
  const std::uint32_t rank = get_u32(in, "rank");
  if (rank == 0 || rank > kMaxRank) throw std::runtime_error("tensor rank " + std::to_string(rank) + " unsupported");
  Shape shape(rank);
  for (auto& e : shape) {
    e = get_u32(in, "extents");
    if (e == 0) throw std::runtime_error("tensor extent of zero");
  }
  std::vector<T> data(numel(shape));
  for (auto& v : data) v = static_cast<T>(std::bit_cast<float>(get_u32(in, "payload")));
  return BasicTensor<T>(std::move(shape), std::move(data));
}

template <typename T>
void save_tensor(const std::string& path, const BasicTensor<T>& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_tensor(out, t);
}

template <typename T>
BasicTensor<T> load_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_tensor<T>(in);
}

template void write_tensor(std::ostream&, const BasicTensor<float>&);
template void write_tensor(std::ostream&, const BasicTensor<double>&);
template BasicTensor<float> read_tensor(std::istream&);
template BasicTensor<double> read_tensor(std::istream&);
template void save_tensor(const std::string&, const BasicTensor<float>&);
template void save_tensor(const std::string&, const BasicTensor<double>&);
template BasicTensor<float> load_tensor(const std::string&);
template BasicTensor<double> load_tensor(const std::string&);

}  // namespace nf
