#pragma once

#include <cstddef>
#include <cstdint>

namespace driftcomp {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t entries = 0;
  int redraws = 0;  // instances rejected for a pre-activation near the ReLU kink
};

// Random two-layer compensated MLP with a drifted backbone and random
// scaling vectors. Compares backward_scaling_vectors against central
// differences of the mean batch loss, activation quantization off.
// Relative error is |g - fd| / max(|g|, |fd|, floor).
GradCheckResult gradient_check_instance(std::uint64_t seed, double h = 1e-4, double floor = 1e-8);

// Worst case over `instances` seeds derived from `seed`.
GradCheckResult gradient_check(std::uint64_t seed, int instances, double h = 1e-4, double floor = 1e-8);

}  // namespace driftcomp
