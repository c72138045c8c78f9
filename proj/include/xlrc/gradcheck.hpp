#pragma once

// Finite-difference verification of analytic gradients.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "xlrc/tensor.hpp"

namespace xlrc {

struct GradCheckResult {
  std::string name;
  std::size_t checked = 0;   // entries with |gradient| above the floor
  std::size_t failures = 0;
  double max_relative_error = 0.0;
  std::string worst_entry;   // "<param>[<index>]"

  bool ok() const { return failures == 0; }
};

// Compares the gradient of loss_fn() with central differences for every entry
// of every parameter. Relative error is |a - n| / max(|a|, |n|); entries where
// both are below min_abs are skipped.
GradCheckResult check_gradients(const std::string& name, const std::function<Tensor()>& loss_fn,
                                const std::vector<std::pair<std::string, Tensor>>& params, double step = 1e-4,
                                double tolerance = 1e-4, double min_abs = 1e-6);

struct GradSuiteReport {
  std::vector<GradCheckResult> results;
  bool ok() const;
};

// Random small configurations (L <= 6, h <= 8) through the encoder, fusion and
// span head, each op checked on its own and end to end.
GradSuiteReport run_gradient_suite(std::uint64_t seed, std::size_t configurations = 20, double step = 1e-4);

}  // namespace xlrc
