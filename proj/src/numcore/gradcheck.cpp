#include "cilab/numcore/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cilab/errors.hpp"
#include "cilab/numcore/rng.hpp"

namespace cil {

double relative_error(double analytic, double numeric) noexcept {
  const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const std::function<double()>& loss_fn,
                           std::span<const GradCheckTensor> tensors, double h,
                           std::size_t max_coords, std::uint64_t seed) {
  GradCheckReport report;
  Rng rng = Rng::stream(seed, "gradcheck");
  for (const auto& t : tensors) {
    if (t.value == nullptr || t.analytic == nullptr) {
      throw ConfigError("grad_check: tensor '" + t.name + "' has no value or gradient");
    }
    if (t.value->rows() != t.analytic->rows() || t.value->cols() != t.analytic->cols()) {
      throw DimensionError("grad_check: '" + t.name + "' value " + t.value->shape() +
                           " vs gradient " + t.analytic->shape());
    }
    std::vector<std::size_t> coords(t.value->size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > max_coords) {
      rng.shuffle(coords);
      coords.resize(max_coords);
      std::sort(coords.begin(), coords.end());
    }
    TensorCheck tc{t.name, coords.size(), 0.0};
    auto vals = t.value->values();
    auto grad = t.analytic->values();
    for (std::size_t c : coords) {
      const double orig = vals[c];
      vals[c] = orig + h;
      const double fp = loss_fn();
      vals[c] = orig - h;
      const double fm = loss_fn();
      vals[c] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      tc.max_relative_error = std::max(tc.max_relative_error, relative_error(grad[c], numeric));
    }
    report.max_relative_error = std::max(report.max_relative_error, tc.max_relative_error);
    report.per_tensor.push_back(std::move(tc));
  }
  return report;
}

}  // namespace cil
