#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "nightformer/scene.hpp"

namespace nf {

enum class Split { Train, Val };

struct ManifestEntry {
  Split split = Split::Train;
  std::string image;  // relative to the dataset directory
  std::string mask;
};

struct Manifest {
  SceneConfig scene;
  std::uint64_t seed = 0;
  std::size_t count = 0;
  std::vector<ManifestEntry> entries;  // in sample-index order
};

/// 80/20 train/val assignment from a seeded shuffle; independent of file order.
std::vector<Split> split_assignment(std::size_t count, std::uint64_t seed);

std::string serialize_manifest(const Manifest& m);
Manifest parse_manifest(const std::string& text);

/// Writes img_%05d.ppm, msk_%05d.pgm and manifest.txt under out_dir (created
/// if missing). Sample i uses seed ^ i.
Manifest gen_dataset(const SceneConfig& cfg, std::size_t count, std::uint64_t seed, const std::string& out_dir);

struct Dataset {
  Manifest manifest;
  std::vector<SceneSample> samples;  // images decoded from disk, so 8-bit quantized
};

Dataset load_dataset(const std::string& dir, Split split);

}  // namespace nf
