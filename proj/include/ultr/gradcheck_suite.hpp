#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ultr {

/// Worst-case outcome of one gradient-check case over many random trials.
struct GradCheckCase {
  std::string name;
  double tolerance = 1e-4;
  bool expect_failure = false;  // negative controls must exceed the tolerance
  std::size_t trials = 0;
  double max_rel_error = 0.0;
  std::string worst;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;

  bool passed() const noexcept {
    return expect_failure ? max_rel_error > tolerance : (checked > 0 && max_rel_error < tolerance);
  }
};

/// Finite-difference checks of every layer kind, both losses and every model
/// variant over `trials` random shapes and seeds, plus a corrupted-gradient
/// negative control.
std::vector<GradCheckCase> run_gradcheck_suite(std::size_t trials, std::uint64_t seed = 0);

}  // namespace ultr
