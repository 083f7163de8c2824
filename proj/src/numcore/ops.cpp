#include "cilab/numcore/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cilab/errors.hpp"

namespace cil {

namespace {

[[noreturn]] void shape_error(std::string_view op, const Matrix& a, const Matrix& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + a.shape() + " and " +
                       b.shape());
}

}  // namespace

Matrix affine_forward(const Matrix& x, const Matrix& weight, const Matrix& bias) {
  if (x.cols() != weight.rows()) shape_error("affine_forward", x, weight);
  if (bias.rows() != 1 || bias.cols() != weight.cols()) shape_error("affine_forward", weight, bias);
  const std::size_t n = x.rows(), in = x.cols(), out = weight.cols();
  Matrix y(n, out);
  for (std::size_t i = 0; i < n; ++i) {
    double* yi = y.row(i).data();
    const double* xi = x.row(i).data();
    // Per output entry the sum runs over k in ascending order, then adds the bias.
    for (std::size_t k = 0; k < in; ++k) {
      const double xik = xi[k];
      if (xik == 0.0) continue;
      const double* wk = weight.row(k).data();
      for (std::size_t j = 0; j < out; ++j) yi[j] += xik * wk[j];
    }
    const double* b = bias.row(0).data();
    for (std::size_t j = 0; j < out; ++j) yi[j] += b[j];
  }
  return y;
}

AffineGrads affine_backward(const Matrix& upstream, const Matrix& x, const Matrix& weight) {
  if (x.cols() != weight.rows()) shape_error("affine_backward", x, weight);
  if (upstream.rows() != x.rows() || upstream.cols() != weight.cols()) {
    shape_error("affine_backward", upstream, weight);
  }
  const std::size_t n = x.rows(), in = x.cols(), out = weight.cols();
  AffineGrads g{Matrix(n, in), Matrix(in, out), Matrix(1, out)};

  for (std::size_t i = 0; i < n; ++i) {
    const double* ui = upstream.row(i).data();
    double* dxi = g.dx.row(i).data();
    for (std::size_t k = 0; k < in; ++k) {
      const double* wk = weight.row(k).data();
      double s = 0.0;
      for (std::size_t j = 0; j < out; ++j) s += ui[j] * wk[j];
      dxi[k] = s;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double* ui = upstream.row(i).data();
    const double* xi = x.row(i).data();
    for (std::size_t k = 0; k < in; ++k) {
      const double xik = xi[k];
      if (xik == 0.0) continue;
      double* dwk = g.dweight.row(k).data();
      for (std::size_t j = 0; j < out; ++j) dwk[j] += xik * ui[j];
    }
  }
  double* db = g.dbias.row(0).data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* ui = upstream.row(i).data();
    for (std::size_t j = 0; j < out; ++j) db[j] += ui[j];
  }
  return g;
}

Matrix relu_forward(const Matrix& x) {
  Matrix y = x;
  for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
  return y;
}

Matrix relu_backward(const Matrix& upstream, const Matrix& x) {
  if (upstream.rows() != x.rows() || upstream.cols() != x.cols()) {
    shape_error("relu_backward", upstream, x);
  }
  Matrix d = upstream;
  auto dv = d.values();
  auto xv = x.values();
  for (std::size_t i = 0; i < dv.size(); ++i) {
    if (!(xv[i] > 0.0)) dv[i] = 0.0;
  }
  return d;
}

Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto z = logits.row(i);
    if (z.empty()) continue;
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    const double lse = std::log(s);
    auto o = out.row(i);
    for (std::size_t j = 0; j < z.size(); ++j) o[j] = z[j] - m - lse;
  }
  return out;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto z = logits.row(i);
    if (z.empty()) continue;
    const double m = *std::max_element(z.begin(), z.end());
    auto o = out.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) {
      o[j] = std::exp(z[j] - m);
      s += o[j];
    }
    for (double& v : o) v /= s;
  }
  return out;
}

LossGrad softmax_cross_entropy(const Matrix& logits, std::span<const int> labels) {
  if (labels.size() != logits.rows()) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for logits " + logits.shape());
  }
  const std::size_t n = logits.rows(), k = logits.cols();
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw ConfigError("softmax_cross_entropy: label " + std::to_string(y) +
                        " out of range [0, " + std::to_string(k) + ")");
    }
  }
  LossGrad out{0.0, softmax_rows(logits)};
  if (n == 0) return out;
  const Matrix logp = log_softmax_rows(logits);
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total -= logp(i, static_cast<std::size_t>(labels[i]));
    out.grad(i, static_cast<std::size_t>(labels[i])) -= 1.0;
  }
  for (double& v : out.grad.values()) v *= inv_n;
  out.loss = total * inv_n;
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> a) noexcept { return std::sqrt(dot(a, a)); }

CosineResult cosine_sim(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw DimensionError("cosine_sim: vectors of length " + std::to_string(u.size()) + " and " +
                         std::to_string(v.size()));
  }
  const double nu = l2_norm(u), nv = l2_norm(v);
  if (!(nu > kDegenerateNorm) || !(nv > kDegenerateNorm)) {
    throw NumericalError("cosine_sim: degenerate vector (norm " +
                         std::to_string(std::min(nu, nv)) + ")");
  }
  const double uv = dot(u, v);
  const double inv = 1.0 / (nu * nv);
  CosineResult r;
  r.value = std::clamp(uv * inv, -1.0, 1.0);
  // d/du = v/(|u||v|) - cos·u/|u|², symmetrically for v.
  const double raw = uv * inv;
  const double cu = raw / (nu * nu), cv = raw / (nv * nv);
  r.du.resize(u.size());
  r.dv.resize(v.size());
  for (std::size_t i = 0; i < u.size(); ++i) {
    r.du[i] = v[i] * inv - cu * u[i];
    r.dv[i] = u[i] * inv - cv * v[i];
  }
  return r;
}

void require_finite(const Matrix& m, std::string_view what) {
  auto vals = m.values();
  for (std::size_t i = 0; i < vals.size(); ++i) {
    if (!std::isfinite(vals[i])) {
      throw NumericalError("non-finite value " + std::to_string(vals[i]) + " in " +
                           std::string(what) + " (" + m.shape() + ") at flat index " +
                           std::to_string(i));
    }
  }
}

void sgd_step(Matrix& param, const Matrix& grad, Matrix& velocity, const SgdOptions& options,
              std::string_view what) {
  if (param.rows() != grad.rows() || param.cols() != grad.cols()) shape_error("sgd_step", param, grad);
  if (velocity.rows() != param.rows() || velocity.cols() != param.cols()) {
    shape_error("sgd_step", param, velocity);
  }
  require_finite(grad, std::string("gradient of ") + std::string(what));
  auto p = param.values();
  auto g = grad.values();
  auto v = velocity.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    v[i] = options.momentum * v[i] + (g[i] + options.weight_decay * p[i]);
    p[i] -= options.lr * v[i];
  }
}

}  // namespace cil
