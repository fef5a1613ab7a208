#pragma once

#include <string>
#include <vector>

#include "nightformer/config.hpp"

namespace nf {

/// phase: texture branch off/on. matcher: vanilla/reliable attention.
/// depth: decoder fusing {F5} .. {F5..F2}. enhance-op: none/Sobel/Fourier phase.
enum class AblationAxis { Phase, Matcher, Depth, EnhanceOp };

AblationAxis parse_ablation_axis(const std::string& name);
std::string to_string(AblationAxis axis);

struct AblationVariant {
  std::string label;
  TrainConfig config;
};

/// Variants along `axis`, each derived from `base` with only that axis changed.
std::vector<AblationVariant> ablation_variants(AblationAxis axis, const TrainConfig& base);

struct AblationRow {
  std::string label;
  double miou = 0;
};

/// Two-column table: setting and validation mIoU.
std::string format_ablation_table(AblationAxis axis, const std::vector<AblationRow>& rows);

}  // namespace nf
