#include <cmath>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"

#include "cilab/errors.hpp"
#include "cilab/model/model.hpp"
#include "cilab/numcore/gradcheck.hpp"
#include "cilab/numcore/ops.hpp"

using namespace cil;
using cil::test::random_matrix;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.input_dim = 6;
  c.hidden_dims = {8, 7};
  c.feature_dim = 5;
  return c;
}

}  // namespace

TEST_CASE("init_model") {
  const ModelConfig c = small_config();
  CHECK(init_model(c, 3) == init_model(c, 3));
  CHECK_FALSE(init_model(c, 3) == init_model(c, 4));

  ModelConfig empty_head;
  empty_head.input_dim = 16;
  empty_head.hidden_dims = {64};
  empty_head.feature_dim = 32;
  const ModelParams p = init_model(empty_head, 1);
  CHECK(p.num_classes() == 0);
  CHECK(p.head.weight.rows() == 32);
  CHECK(p.head.weight.cols() == 0);
  CHECK_THROWS_AS(logits(p, Matrix(1, 16)), ConfigError);

  ModelConfig bad = c;
  bad.feature_dim = 0;
  CHECK_THROWS_AS(init_model(bad, 1), ConfigError);
}

TEST_CASE("init weight spread follows fan-in scaling") {
  ModelConfig c;
  c.input_dim = 100;
  c.hidden_dims = {};
  c.feature_dim = 100;
  const ModelParams p = init_model(c, 9);
  const auto w = p.extractor[0].weight.values();
  REQUIRE(w.size() == 10000);
  double s = 0.0, ss = 0.0;
  for (double v : w) {
    s += v;
    ss += v * v;
    CHECK(std::abs(v) <= std::sqrt(6.0 / 100.0));
  }
  const double mean = s / 1e4, sd = std::sqrt(ss / 1e4 - mean * mean);
  const double theory = std::sqrt(2.0 / 100.0);
  CHECK(std::abs(sd - theory) <= 0.2 * theory);
  for (double b : p.extractor[0].bias.values()) CHECK(b == 0.0);
}

TEST_CASE("features") {
  const ModelConfig c = small_config();
  ModelParams p = init_model(c, 2);
  SUBCASE("zero weights give zero features") {
    for (Matrix* m : p.tensors()) for (double& v : m->values()) v = 0.0;
    const Matrix f = features(p, Matrix(3, 6));
    for (double v : f.values()) CHECK(v == 0.0);
  }
  SUBCASE("batch consistency") {
    Rng rng(1);
    const Matrix x = random_matrix(2, 6, rng);
    const Matrix both = features(p, x);
    CHECK(features(p, x.slice_rows(0, 1)) == both.slice_rows(0, 1));
    CHECK(features(p, x.slice_rows(1, 1)) == both.slice_rows(1, 1));
  }
  SUBCASE("matches manual composition") {
    Rng rng(4);
    const Matrix x = random_matrix(3, 6, rng);
    Matrix h = x;
    for (const Layer& l : p.extractor) h = relu_forward(affine_forward(h, l.weight, l.bias));
    CHECK(features(p, x) == h);
    CHECK(features(p, x) == features(p, x));
  }
  SUBCASE("input width is checked") { CHECK_THROWS_AS(features(p, Matrix(1, 5)), DimensionError); }
}

TEST_CASE("logits") {
  ModelConfig c = small_config();
  ModelParams p = expand_head(init_model(c, 2), 5, 2);
  Rng rng(6);
  const Matrix x = random_matrix(4, 6, rng);
  SUBCASE("identity head reproduces features") {
    for (std::size_t r = 0; r < 5; ++r)
      for (std::size_t k = 0; k < 5; ++k) p.head.weight(r, k) = r == k ? 1.0 : 0.0;
    CHECK(logits(p, x) == features(p, x));
  }
  SUBCASE("head is features times W plus b") {
    for (double& b : p.head.bias.values()) b = rng.uniform(-1, 1);
    Matrix expected = cil::test::naive_matmul(features(p, x), p.head.weight);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 5; ++j) expected(i, j) += p.head.bias(0, j);
    CHECK(logits(p, x) == expected);
  }
  SUBCASE("snapshot agrees with live params") { CHECK(snapshot(p, 0).logits(x) == logits(p, x)); }
}

TEST_CASE("expand_head") {
  const ModelConfig c = small_config();
  const ModelParams base = expand_head(init_model(c, 5), 4, 5);
  CHECK_THROWS_AS(expand_head(base, 0, 5), ConfigError);

  Rng rng(8);
  const Matrix x = random_matrix(10, 6, rng, 3.0);
  const Matrix before = logits(base, x);
  const ModelParams five = expand_head(base, 5, 5);
  CHECK(five.num_classes() == 9);
  const Matrix after = logits(five, x);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(after(i, j) == before(i, j));
  for (std::size_t j = 4; j < 9; ++j) CHECK(five.head.bias(0, j) == 0.0);

  const ModelParams twice = expand_head(expand_head(base, 3, 5), 2, 5);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t j = 0; j < 4; ++j) CHECK(twice.head.weight(r, j) == five.head.weight(r, j));
  CHECK(expand_head(base, 5, 5) == five);
}

TEST_CASE("snapshot is a frozen copy") {
  const ModelConfig c = small_config();
  ModelParams live = expand_head(init_model(c, 1), 3, 1);
  const ModelSnapshot frozen = snapshot(live, 0);
  Rng rng(2);
  const Matrix x = random_matrix(5, 6, rng);
  const Matrix ref = frozen.logits(x);
  const std::vector<int> labels{0, 1, 2, 0, 1};
  std::vector<Matrix> velocity;
  for (const Matrix* m : live.tensors()) velocity.emplace_back(m->rows(), m->cols());
  for (int step = 0; step < 100; ++step) {
    const ForwardTrace t = forward(live, x);
    const LossGrad ce = softmax_cross_entropy(t.logits, labels);
    ModelGrads g = backward(live, t, &ce.grad, nullptr);
    auto params = live.tensors();
    auto grads = g.tensors();
    for (std::size_t i = 0; i < params.size(); ++i) sgd_step(*params[i], *grads[i], velocity[i], {});
  }
  CHECK_FALSE(logits(live, x) == ref);
  CHECK(frozen.logits(x) == ref);
  CHECK(snapshot(frozen) == frozen);
}

TEST_CASE("backward through the whole model matches finite differences") {
  const ModelConfig c = small_config();
  ModelParams p = expand_head(init_model(c, 12), 4, 12);
  Rng rng(13);
  const Matrix x = random_matrix(6, 6, rng);
  const std::vector<int> labels{0, 1, 2, 3, 1, 2};
  const Matrix dfeat = random_matrix(6, 5, rng, 0.1);
  auto loss = [&] {
    const ForwardTrace t = forward(p, x);
    double extra = 0.0;
    for (std::size_t i = 0; i < dfeat.size(); ++i) extra += dfeat.values()[i] * t.features.values()[i];
    return softmax_cross_entropy(t.logits, labels).loss + extra;
  };
  const ForwardTrace t = forward(p, x);
  for (const Matrix& z : t.pre_activations)
    for (double v : z.values()) REQUIRE(std::abs(v) > 1e-4);
  const LossGrad ce = softmax_cross_entropy(t.logits, labels);
  const ModelGrads g = backward(p, t, &ce.grad, &dfeat);
  std::vector<GradCheckTensor> tensors;
  const auto values = p.tensors();
  const auto grads = g.tensors();
  for (std::size_t i = 0; i < values.size(); ++i) tensors.push_back({std::to_string(i), values[i], grads[i]});
  CHECK(grad_check(loss, tensors).max_relative_error <= 1e-6);
}
