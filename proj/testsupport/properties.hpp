#pragma once

// Randomized property and oracle-equivalence suites. Each returns a named
// pass/fail result with a short detail string; the CLI `selftest`, the
// `grad-check` subcommand and the acceptance binary all print these.

#include <cstdint>
#include <string>
#include <vector>

namespace nf::check {

struct PropertyResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

PropertyResult fft_matches_bruteforce(std::uint64_t seed, int instances = 50);
PropertyResult fft_round_trip(std::uint64_t seed);
PropertyResult phase_amplitude_invariant(std::uint64_t seed, int images = 20);

/// One result per operation family, each max relative error < 1e-4 at h = 1e-5.
std::vector<PropertyResult> gradient_suite(std::uint64_t seed);

PropertyResult attention_invariants(std::uint64_t seed, int instances = 1000);
PropertyResult hungarian_matches_exhaustive(std::uint64_t seed, int instances = 1000);
PropertyResult miou_examples(std::uint64_t seed);

// Additional invariants covered by `selftest`.
PropertyResult matmul_conv_oracles(std::uint64_t seed);
PropertyResult loss_oracles(std::uint64_t seed);
PropertyResult predict_oracle(std::uint64_t seed);
PropertyResult total_loss_permutation_invariance(std::uint64_t seed);
PropertyResult codec_round_trip(std::uint64_t seed);
PropertyResult codec_rejects_malformed();
PropertyResult scene_determinism_and_coverage(std::uint64_t seed);

/// Every suite above, in a fixed order.
std::vector<PropertyResult> selftest_suites(std::uint64_t seed);

}  // namespace nf::check
