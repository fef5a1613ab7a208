#include "nightformer/ablation.hpp"

#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace nf {

AblationAxis parse_ablation_axis(const std::string& name) {
  if (name == "phase") return AblationAxis::Phase;
  if (name == "matcher") return AblationAxis::Matcher;
  if (name == "depth") return AblationAxis::Depth;
  if (name == "enhance-op") return AblationAxis::EnhanceOp;
  throw std::invalid_argument("unknown ablation axis '" + name + "' (expected phase, matcher, depth or enhance-op)");
}

std::string to_string(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::Phase: return "phase";
    case AblationAxis::Matcher: return "matcher";
    case AblationAxis::Depth: return "depth";
    case AblationAxis::EnhanceOp: return "enhance-op";
  }
  return "?";
}

std::vector<AblationVariant> ablation_variants(AblationAxis axis, const TrainConfig& base) {
  std::vector<AblationVariant> out;
  auto with = [&](const std::string& label, auto edit) {
    TrainConfig c = base;
    edit(c);
    out.push_back({label, c});
  };
  switch (axis) {
    case AblationAxis::Phase:
      with("without-phase", [](TrainConfig& c) { c.model.texture = TextureMode::None; });
      with("with-phase", [](TrainConfig& c) { c.model.texture = TextureMode::Phase; });
      break;
    case AblationAxis::Matcher:
      with("vanilla", [](TrainConfig& c) { c.model.matcher.mode = MatcherMode::Vanilla; });
      with("reliable", [](TrainConfig& c) { c.model.matcher.mode = MatcherMode::Reliable; });
      break;
    case AblationAxis::Depth: {
      static const char* labels[] = {"{F5}", "{F5,F4}", "{F5,F4,F3}", "{F5,F4,F3,F2}"};
      for (std::size_t d = 1; d <= 4; ++d) with(labels[d - 1], [d](TrainConfig& c) { c.model.decoder.depth = d; });
      break;
    }
    case AblationAxis::EnhanceOp:
      with("none", [](TrainConfig& c) { c.model.texture = TextureMode::None; });
      with("sobel", [](TrainConfig& c) { c.model.texture = TextureMode::Sobel; });
      with("fourier-phase", [](TrainConfig& c) { c.model.texture = TextureMode::Phase; });
      break;
  }
  return out;
}

std::string format_ablation_table(AblationAxis axis, const std::vector<AblationRow>& rows) {
  static const char* headers[] = {"phase_enhancement", "matching", "fusion_strategy", "enhancing_operation"};
  std::ostringstream os;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-20s %s\n", headers[static_cast<int>(axis)], "miou");
  os << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-20s %.6f\n", r.label.c_str(), r.miou);
    os << buf;
  }
  return os.str();
}

}  // namespace nf
