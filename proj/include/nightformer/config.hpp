#pragma once

// Training configuration and its text form: one `key = value` per line,
// `#` starts a comment, blank lines ignored. Unknown keys are errors so a
// typo cannot silently fall back to a default.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

#include "nightformer/losses.hpp"
#include "nightformer/model.hpp"

namespace nf {

struct TrainConfig {
  ModelConfig model;
  LossWeights loss;

  // Two constant learning-rate phases: lr until phase2_start, then lr_final.
  double lr = 1e-3;
  double lr_final = 1e-4;
  std::size_t iterations = 2500;
  std::size_t phase2_start = 2000;
  std::size_t batch = 4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;  // global L2 norm; 0 disables
  bool hflip = true;       // random horizontal mirroring of training samples
  std::uint64_t seed = 1;

  std::optional<double> c_a;  // phase texture amplitude; mean amplitude when unset

  /// Throws std::invalid_argument naming the offending key.
  void validate() const;
};

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, std::size_t line)
      : std::runtime_error("config line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Applies the keys in `text` on top of `base`.
TrainConfig parse_config(const std::string& text, TrainConfig base = {});
TrainConfig load_config(const std::string& path);

/// Every key with its current value; parse_config(serialize_config(c)) == c.
std::string serialize_config(const TrainConfig& cfg);

/// Sets one key; used by the parser and by ablation overrides.
void set_config_key(TrainConfig& cfg, const std::string& key, const std::string& value);

}  // namespace nf
