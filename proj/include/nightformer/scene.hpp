#pragma once

// Procedural night scenes: a dim background with a smooth illumination ramp,
// textured foreground objects offset from it by a small contrast gap, and
// flat "deceiver" patches that copy a foreground class's brightness and tint
// but stay labeled as background.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "nightformer/label_mask.hpp"
#include "nightformer/tensor.hpp"

namespace nf {

struct SceneConfig {
  std::size_t height = 32;
  std::size_t width = 64;
  std::size_t num_classes = 4;
  std::size_t objects_min = 3;
  std::size_t objects_max = 4;
  double ambient_lo = 0.05;
  double ambient_hi = 0.20;
  double contrast_gap = 0.06;
  std::size_t deceivers = 2;
  double noise_std = 0.01;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct SceneSample {
  Tensor image;  // [H, W, 3] in [0, 1]
  LabelMask mask;
  std::uint64_t seed = 0;
};

/// Deterministic in (cfg, seed). Objects that do not fit after 100 placement
/// attempts are skipped with a warning on stderr.
SceneSample generate_scene(const SceneConfig& cfg, std::uint64_t seed);

/// Left-right mirror of image and mask.
SceneSample mirror_sample(const SceneSample& s);

std::string serialize_scene_config(const SceneConfig& cfg);
/// Applies one `scene.*` key; throws std::invalid_argument on unknown keys.
void set_scene_key(SceneConfig& cfg, const std::string& key, const std::string& value);

}  // namespace nf
