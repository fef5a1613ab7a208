#include "nightformer/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace nf {

namespace {

constexpr std::size_t kMaxExtent = 1u << 15;

std::uint8_t to_byte(double v) {
  if (!std::isfinite(v)) throw std::invalid_argument("cannot encode a non-finite pixel value");
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

struct Header {
  std::size_t width = 0, height = 0, payload_offset = 0;
};

// Netpbm header: magic, then width, height, maxval separated by whitespace
// (with '#' comments), then exactly one whitespace byte before the payload.
Header parse_header(const std::string& b, const char* magic) {
  if (b.size() < 2 || b[0] != magic[0] || b[1] != magic[1]) {
    throw FormatError(std::string("expected magic ") + magic, 0);
  }
  std::size_t pos = 2;
  auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; };
  auto read_number = [&](const char* field) {
    bool saw_space = false;
    while (pos < b.size()) {
      if (is_space(b[pos])) {
        saw_space = true;
        ++pos;
      } else if (b[pos] == '#') {
        saw_space = true;
        while (pos < b.size() && b[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    if (pos >= b.size()) throw FormatError(std::string("header truncated before ") + field, pos);
    if (!saw_space) throw FormatError(std::string("missing whitespace before ") + field, pos);
    if (b[pos] < '0' || b[pos] > '9') throw FormatError(std::string("expected digits for ") + field, pos);
    std::size_t v = 0;
    const std::size_t start = pos;
    while (pos < b.size() && b[pos] >= '0' && b[pos] <= '9') {
      v = v * 10 + static_cast<std::size_t>(b[pos] - '0');
      if (v > kMaxExtent * 2) throw FormatError(std::string(field) + " too large", start);
      ++pos;
    }
    return std::pair{v, start};
  };
  Header h;
  const auto [w, wpos] = read_number("width");
  const auto [hh, hpos] = read_number("height");
  const auto [maxval, mpos] = read_number("maxval");
  if (w == 0 || w > kMaxExtent) throw FormatError("width out of range", wpos);
  if (hh == 0 || hh > kMaxExtent) throw FormatError("height out of range", hpos);
  if (maxval != 255) throw FormatError("maxval must be 255, got " + std::to_string(maxval), mpos);
  if (pos >= b.size() || !is_space(b[pos])) throw FormatError("expected a single whitespace after maxval", pos);
  h.width = w;
  h.height = hh;
  h.payload_offset = pos + 1;
  return h;
}

void check_payload(const std::string& b, const Header& h, std::size_t channels) {
  const std::size_t need = h.width * h.height * channels;
  const std::size_t have = b.size() - h.payload_offset;
  if (have < need) throw FormatError("payload truncated: need " + std::to_string(need) + " bytes", b.size());
  if (have > need) throw FormatError("unexpected trailing data", h.payload_offset + need);
}

}  // namespace

Tensor quantize(const Tensor& image) {
  Tensor out(image.shape());
  std::transform(image.data().begin(), image.data().end(), out.mutable_data().begin(),
                 [](double v) { return static_cast<double>(to_byte(v)) / 255.0; });
  return out;
}

std::string encode_ppm(const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != 3) throw ShapeError("encode_ppm expects [H, W, 3], got " + shape_str(image.shape()));
  std::string out = "P6\n" + std::to_string(image.dim(1)) + " " + std::to_string(image.dim(0)) + "\n255\n";
  out.reserve(out.size() + image.size());
  for (double v : image.data()) out.push_back(static_cast<char>(to_byte(v)));
  return out;
}

Tensor decode_ppm(const std::string& bytes) {
  const Header h = parse_header(bytes, "P6");
  check_payload(bytes, h, 3);
  Tensor out({h.height, h.width, 3});
  double* o = out.mutable_ptr();
  for (std::size_t i = 0; i < out.size(); ++i) {
    o[i] = static_cast<double>(static_cast<unsigned char>(bytes[h.payload_offset + i])) / 255.0;
  }
  return out;
}

std::string encode_pgm(const LabelMask& mask) {
  if (mask.size() != mask.height * mask.width) throw ShapeError("encode_pgm: mask storage does not match its extents");
  std::string out = "P5\n" + std::to_string(mask.width) + " " + std::to_string(mask.height) + "\n255\n";
  out.append(mask.labels.begin(), mask.labels.end());
  return out;
}

LabelMask decode_pgm(const std::string& bytes) {
  const Header h = parse_header(bytes, "P5");
  check_payload(bytes, h, 1);
  LabelMask m(h.height, h.width);
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(h.payload_offset), m.size(), m.labels.begin());
  return m;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed for " + path);
}

}  // namespace nf
