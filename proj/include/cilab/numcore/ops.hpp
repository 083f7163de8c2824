#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "cilab/numcore/matrix.hpp"

namespace cil {

/// out = x·W + b, with b a 1×out row broadcast over the batch.
Matrix affine_forward(const Matrix& x, const Matrix& weight, const Matrix& bias);

struct AffineGrads {
  Matrix dx;
  Matrix dweight;
  Matrix dbias;
};

AffineGrads affine_backward(const Matrix& upstream, const Matrix& x, const Matrix& weight);

Matrix relu_forward(const Matrix& x);
/// Passes upstream through where x > 0; the subgradient at exactly 0 is 0.
Matrix relu_backward(const Matrix& upstream, const Matrix& x);

struct LossGrad {
  double loss = 0.0;
  Matrix grad;
};

/// Mean negative log-likelihood of the labelled class under a row-wise
/// softmax. Rows are shifted by their max before exponentiation.
LossGrad softmax_cross_entropy(const Matrix& logits, std::span<const int> labels);

/// Row-wise softmax / log-softmax, max-shifted.
Matrix softmax_rows(const Matrix& logits);
Matrix log_softmax_rows(const Matrix& logits);

inline constexpr double kDegenerateNorm = 1e-12;

struct CosineResult {
  double value = 0.0;
  std::vector<double> du;
  std::vector<double> dv;
};

/// Cosine similarity with analytic gradients for both arguments.
/// Throws NumericalError when either norm is ≤ 1e-12.
CosineResult cosine_sim(std::span<const double> u, std::span<const double> v);

double dot(std::span<const double> a, std::span<const double> b) noexcept;
double l2_norm(std::span<const double> a) noexcept;

struct SgdOptions {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// v ← momentum·v + (g + wd·p);  p ← p − lr·v.
/// Throws NumericalError if the gradient holds a non-finite value; `what`
/// names the tensor in the message.
void sgd_step(Matrix& param, const Matrix& grad, Matrix& velocity, const SgdOptions& options,
              std::string_view what = "parameter");

/// Throws NumericalError naming `what` if any entry is NaN or infinite.
void require_finite(const Matrix& m, std::string_view what);

}  // namespace cil
