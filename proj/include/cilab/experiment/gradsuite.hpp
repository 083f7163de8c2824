#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cil::experiment {

/// Finite-difference results for one differentiable operation.
struct GradSuiteEntry {
  std::string op;
  std::size_t instances = 0;
  double max_relative_error = 0.0;
};

/// Checks affine, relu, cross-entropy, cosine, distillation, L_on, L_off and
/// the fused training loss (CE + λ·distill + η·CLAD through a small model) on
/// `instances` random cases each.
std::vector<GradSuiteEntry> gradient_suite(std::size_t instances, std::uint64_t seed);

}  // namespace cil::experiment
