#pragma once

#include <cstdint>

#include "cilab/numcore/matrix.hpp"
#include "cilab/numcore/rng.hpp"

namespace cil::test {

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (double& v : m.values()) v = rng.uniform(-scale, scale);
  return m;
}

// Textbook triple loop, used as an oracle for the blocked kernels.
inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

}  // namespace cil::test

#include "cilab/experiment/config.hpp"

namespace cil::test {

// Six classes in three tasks of two, small enough for a run in milliseconds.
inline experiment::ExperimentConfig tiny_config() {
  experiment::ExperimentConfig c = experiment::default_config();
  auto& s = c.data.synthetic;
  s.n_classes = 6;
  s.dim = 8;
  s.n_train_per_class = 20;
  s.n_test_per_class = 10;
  s.auto_collisions = experiment::AutoCollisions{1, 0.9};
  c.split = {2, 2, 7};
  c.model.input_dim = 8;
  c.model.hidden_dims = {16};
  c.model.feature_dim = 8;
  c.train.epochs_per_task = 4;
  c.train.batch_size = 16;
  c.train.exemplars_per_class = 5;
  c.train.eta = 1.0;
  c.train.conflict.proportion = 0.5;
  c.metrics.permutations = 200;
  c.seeds = {1, 2};
  return c;
}

}  // namespace cil::test
