#pragma once

#include <string>
#include <vector>

#include "bicr/rng.hpp"

namespace bicr {

struct GradCheckResult {
  // component name -> max relative error across seeds
  std::vector<std::pair<std::string, double>> components;

  double worst() const;
  bool pass(double tol = 1e-4) const;
};

// Finite-difference verification of every hand-derived backward pass.
// `component` selects a group: all | kernels | bict | losses | bcd | bad |
// total, or one component by name. `inject_bug` corrupts one analytic
// gradient in the full-stack check so the checker's sensitivity can be
// demonstrated.
GradCheckResult run_gradient_checks(const std::string& component, int seeds,
                                    std::uint64_t base_seed, bool inject_bug = false);

}  // namespace bicr
