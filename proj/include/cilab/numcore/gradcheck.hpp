#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cilab/numcore/matrix.hpp"

namespace cil {

/// One tensor under test: `value` is perturbed in place (and restored),
/// `analytic` holds the gradient the caller claims.
struct GradCheckTensor {
  std::string name;
  Matrix* value = nullptr;
  const Matrix* analytic = nullptr;
};

struct TensorCheck {
  std::string name;
  std::size_t coordinates_checked = 0;
  double max_relative_error = 0.0;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::vector<TensorCheck> per_tensor;

  bool passed(double tolerance) const noexcept { return max_relative_error <= tolerance; }
};

inline constexpr std::size_t kGradCheckMaxCoords = 200;

/// Central differences per coordinate, compared with the analytic gradient as
/// |a − n| / max(1, |a|, |n|). Tensors larger than `max_coords` are checked
/// on a seeded random subsample of that many coordinates.
GradCheckReport grad_check(const std::function<double()>& loss_fn,
                           std::span<const GradCheckTensor> tensors, double h = 1e-6,
                           std::size_t max_coords = kGradCheckMaxCoords, std::uint64_t seed = 0);

double relative_error(double analytic, double numeric) noexcept;

}  // namespace cil
