#pragma once

// Finite-difference verification sweep over every loss and the full model.
// Detached quantities (advantage weights, separation weights, compactness
// advantages) are frozen at the base point, so the central difference probes
// exactly the function the backward pass differentiates. Sample points that
// land within 1e-2 of a relu/abs kink are rejected and redrawn.

#include <cstdint>
#include <string>
#include <vector>

namespace grcf {

struct GradCheckResult {
  std::string target;
  double max_rel_error = 0.0;
  int configs_checked = 0;
};

// size_scale 1 keeps every tensor tiny (seconds); larger scales grow the
// batches and model dims
std::vector<GradCheckResult> run_gradient_checks(std::uint64_t seed, int configs_per_target,
                                                 int size_scale = 1);

}  // namespace grcf
