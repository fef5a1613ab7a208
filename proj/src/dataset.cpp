#include "nightformer/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "nightformer/image_io.hpp"

namespace nf {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSplitSalt = 0x9e3779b97f4a7c15ULL;

std::string numbered(const char* prefix, std::size_t i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%05zu.%s", prefix, i, ext);
  return buf;
}

}  // namespace

std::vector<Split> split_assignment(std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed ^ kSplitSalt);
  // Explicit Fisher-Yates: std::shuffle's draw pattern is library-specific.
  for (std::size_t i = count; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  const std::size_t n_train = count * 8 / 10;
  std::vector<Split> out(count, Split::Val);
  for (std::size_t k = 0; k < n_train; ++k) out[order[k]] = Split::Train;
  return out;
}

std::string serialize_manifest(const Manifest& m) {
  std::ostringstream os;
  os << "# synthetic night-scene dataset\n"
     << "seed = " << m.seed << "\n"
     << "count = " << m.count << "\n"
     << serialize_scene_config(m.scene);
  for (const auto& e : m.entries) os << (e.split == Split::Train ? "train " : "val ") << e.image << ' ' << e.mask << "\n";
  return os.str();
}

Manifest parse_manifest(const std::string& text) {
  Manifest m;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& why) {
    throw std::runtime_error("manifest line " + std::to_string(line_no) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) {
      const std::string key = line.substr(0, eq), value = line.substr(eq + 3);
      try {
        if (key == "seed") m.seed = std::stoull(value);
        else if (key == "count") m.count = std::stoull(value);
        else set_scene_key(m.scene, key, value);
      } catch (const std::exception& e) {
        fail(e.what());
      }
      continue;
    }
    std::istringstream ls(line);
    std::string split, img, msk, extra;
    if (!(ls >> split >> img >> msk) || (ls >> extra)) fail("expected '<train|val> <image> <mask>'");
    if (split != "train" && split != "val") fail("unknown split '" + split + "'");
    m.entries.push_back({split == "train" ? Split::Train : Split::Val, img, msk});
  }
  if (m.entries.size() != m.count) {
    throw std::runtime_error("manifest lists " + std::to_string(m.entries.size()) + " samples but count = " +
                             std::to_string(m.count));
  }
  m.scene.validate();
  return m;
}

Manifest gen_dataset(const SceneConfig& cfg, std::size_t count, std::uint64_t seed, const std::string& out_dir) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create " + out_dir + ": " + ec.message());

  Manifest m;
  m.scene = cfg;
  m.seed = seed;
  m.count = count;
  const std::vector<Split> splits = split_assignment(count, seed);
  for (std::size_t i = 0; i < count; ++i) {
    const SceneSample s = generate_scene(cfg, seed ^ static_cast<std::uint64_t>(i));
    ManifestEntry e{splits[i], numbered("img", i, "ppm"), numbered("msk", i, "pgm")};
    write_file((fs::path(out_dir) / e.image).string(), encode_ppm(s.image));
    write_file((fs::path(out_dir) / e.mask).string(), encode_pgm(s.mask));
    m.entries.push_back(std::move(e));
  }
  write_file((fs::path(out_dir) / "manifest.txt").string(), serialize_manifest(m));
  return m;
}

Dataset load_dataset(const std::string& dir, Split split) {
  Dataset d;
  d.manifest = parse_manifest(read_file((fs::path(dir) / "manifest.txt").string()));
  for (std::size_t i = 0; i < d.manifest.entries.size(); ++i) {
    const ManifestEntry& e = d.manifest.entries[i];
    if (e.split != split) continue;
    const std::string img_path = (fs::path(dir) / e.image).string();
    const std::string msk_path = (fs::path(dir) / e.mask).string();
    SceneSample s;
    try {
      s.image = decode_ppm(read_file(img_path));
    } catch (const FormatError& err) {
      throw std::runtime_error(img_path + ": " + err.what());
    }
    try {
      s.mask = decode_pgm(read_file(msk_path));
    } catch (const FormatError& err) {
      throw std::runtime_error(msk_path + ": " + err.what());
    }
    if (s.mask.height != s.image.dim(0) || s.mask.width != s.image.dim(1)) {
      throw std::runtime_error(msk_path + ": mask extents differ from " + img_path);
    }
    for (std::uint8_t v : s.mask.labels) {
      if (v >= d.manifest.scene.num_classes) {
        throw std::runtime_error(msk_path + ": class " + std::to_string(v) + " outside the manifest's " +
                                 std::to_string(d.manifest.scene.num_classes) + " classes");
      }
    }
    s.seed = d.manifest.seed ^ static_cast<std::uint64_t>(i);
    d.samples.push_back(std::move(s));
  }
  return d;
}

}  // namespace nf
