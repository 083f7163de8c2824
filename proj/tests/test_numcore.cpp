#include <cmath>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"

#include "cilab/errors.hpp"
#include "cilab/numcore/gradcheck.hpp"
#include "cilab/numcore/ops.hpp"
#include "cilab/numcore/rng.hpp"

using namespace cil;
using cil::test::random_matrix;

TEST_CASE("affine_forward on hand cases") {
  CHECK(affine_forward(Matrix::from_rows({{1, 2}}), Matrix::from_rows({{1, 0}, {0, 1}}),
                       Matrix::from_rows({{0, 0}})) == Matrix::from_rows({{1, 2}}));
  CHECK(affine_forward(Matrix::from_rows({{1, 1}}), Matrix::from_rows({{2}, {3}}),
                       Matrix::from_rows({{1}})) == Matrix::from_rows({{6}}));
}

TEST_CASE("affine_forward matches the triple loop exactly") {
  Rng rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    const Matrix x = random_matrix(3, 4, rng), w = random_matrix(4, 2, rng), b = random_matrix(1, 2, rng);
    Matrix expected = cil::test::naive_matmul(x, w);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j) expected(i, j) += b(0, j);
    CHECK(affine_forward(x, w, b) == expected);
  }
}

TEST_CASE("affine shape mismatch names both shapes") {
  try {
    affine_forward(Matrix(2, 3), Matrix(4, 2), Matrix(1, 2));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string what = e.what();
    CHECK(what.find("2x3") != std::string::npos);
    CHECK(what.find("4x2") != std::string::npos);
  }
}

TEST_CASE("affine_backward") {
  SUBCASE("zero upstream") {
    Rng rng(1);
    const AffineGrads g = affine_backward(Matrix(3, 2), random_matrix(3, 4, rng), random_matrix(4, 2, rng));
    for (const Matrix* m : {&g.dx, &g.dweight, &g.dbias})
      for (double v : m->values()) CHECK(v == 0.0);
  }
  SUBCASE("scalar chain rule") {
    const AffineGrads g = affine_backward(Matrix::from_rows({{1}}), Matrix::from_rows({{2}}), Matrix::from_rows({{3}}));
    CHECK(g.dx(0, 0) == 3.0);
    CHECK(g.dweight(0, 0) == 2.0);
    CHECK(g.dbias(0, 0) == 1.0);
  }
}

TEST_CASE("relu forward and backward") {
  const Matrix x = Matrix::from_rows({{-1, 0, 2}});
  CHECK(relu_forward(x) == Matrix::from_rows({{0, 0, 2}}));
  CHECK(relu_backward(Matrix::from_rows({{5, 5, 5}}), x) == Matrix::from_rows({{0, 0, 5}}));
}

TEST_CASE("softmax cross-entropy values") {
  const std::vector<int> zero{0};
  CHECK(softmax_cross_entropy(Matrix::from_rows({{3, 3, 3, 3}}), zero).loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  const double l = softmax_cross_entropy(Matrix::from_rows({{10, -10}}), zero).loss;
  CHECK(l == doctest::Approx(std::log1p(std::exp(-20.0))).epsilon(1e-6));
  CHECK(l < 3e-9);
  const std::vector<int> bad{2};
  CHECK_THROWS(softmax_cross_entropy(Matrix::from_rows({{1, 2}}), bad));
}

TEST_CASE("softmax cross-entropy is translation invariant per row") {
  Rng rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    const Matrix z = random_matrix(4, 5, rng, 3.0);
    std::vector<int> labels(4);
    for (int& y : labels) y = static_cast<int>(rng.below(5));
    Matrix shifted = z;
    for (std::size_t r = 0; r < 4; ++r) {
      const double c = rng.uniform(-50.0, 50.0);
      for (double& v : shifted.row(r)) v += c;
    }
    const LossGrad a = softmax_cross_entropy(z, labels), b = softmax_cross_entropy(shifted, labels);
    CHECK(std::abs(a.loss - b.loss) <= 1e-12);
    for (std::size_t i = 0; i < a.grad.size(); ++i) CHECK(std::abs(a.grad.values()[i] - b.grad.values()[i]) <= 1e-12);
  }
}

TEST_CASE("cosine similarity") {
  const std::vector<double> u{0.3, -1.2, 2.0}, neg{-0.3, 1.2, -2.0};
  CHECK(cosine_sim(u, u).value == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine_sim(u, neg).value == doctest::Approx(-1.0).epsilon(1e-15));
  const std::vector<double> e0{1, 0}, e1{0, 1}, zero{0, 0};
  CHECK(cosine_sim(e0, e1).value == 0.0);
  CHECK_THROWS_AS(cosine_sim(e0, zero), NumericalError);

  Rng rng(3);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> a(6), b(6), sa(6), sb(6);
    const double alpha = rng.uniform(0.01, 100.0), beta = rng.uniform(0.01, 100.0);
    for (std::size_t i = 0; i < 6; ++i) {
      a[i] = rng.uniform(-1, 1);
      b[i] = rng.uniform(-1, 1);
      sa[i] = alpha * a[i];
      sb[i] = beta * b[i];
    }
    const double c = cosine_sim(a, b).value;
    CHECK(c >= -1.0);
    CHECK(c <= 1.0);
    CHECK(std::abs(c - cosine_sim(sa, sb).value) <= 1e-12);
  }
}

TEST_CASE("sgd_step") {
  SUBCASE("plain step") {
    Matrix p(1, 1, 1.0), v(1, 1);
    sgd_step(p, Matrix(1, 1, 0.5), v, {0.1, 0.0, 0.0});
    CHECK(p(0, 0) == doctest::Approx(0.95).epsilon(1e-15));
  }
  SUBCASE("zero gradient without decay") {
    Matrix p = Matrix::from_rows({{1.5, -2}}), v(1, 2);
    sgd_step(p, Matrix(1, 2), v, {0.1, 0.9, 0.0});
    CHECK(p == Matrix::from_rows({{1.5, -2}}));
  }
  SUBCASE("two momentum steps match the unrolled recurrence") {
    const double lr = 0.1, mu = 0.9, wd = 0.01, g1 = 0.5, g2 = -0.25;
    Matrix p(1, 1, 1.0), v(1, 1);
    sgd_step(p, Matrix(1, 1, g1), v, {lr, mu, wd});
    sgd_step(p, Matrix(1, 1, g2), v, {lr, mu, wd});
    const double v1 = g1 + wd * 1.0;
    const double p1 = 1.0 - lr * v1;
    const double v2 = mu * v1 + (g2 + wd * p1);
    const double p2 = p1 - lr * v2;
    CHECK(p(0, 0) == doctest::Approx(p2).epsilon(1e-14));
  }
  SUBCASE("non-finite gradient aborts") {
    Matrix p(1, 1, 1.0), v(1, 1);
    CHECK_THROWS_AS(sgd_step(p, Matrix(1, 1, std::nan("")), v, {}), NumericalError);
  }
}

TEST_CASE("grad_check") {
  Rng rng(5);
  Matrix p = random_matrix(3, 4, rng);
  auto half_sq = [&] {
    double s = 0.0;
    for (double v : p.values()) s += 0.5 * v * v;
    return s;
  };
  SUBCASE("quadratic") {
    const Matrix g = p;
    const GradCheckTensor t[] = {{"p", &p, &g}};
    CHECK(grad_check(half_sq, t).max_relative_error <= 1e-9);
  }
  SUBCASE("wrong gradient is flagged") {
    Matrix g = p;
    for (double& v : g.values()) v *= 1.5;
    const GradCheckTensor t[] = {{"p", &p, &g}};
    CHECK(grad_check(half_sq, t).max_relative_error > 1e-2);
  }
  SUBCASE("affine + relu + CE composition") {
    Matrix x = random_matrix(4, 3, rng), w = random_matrix(3, 5, rng), b = random_matrix(1, 5, rng);
    const std::vector<int> labels{0, 4, 2, 1};
    auto loss = [&] { return softmax_cross_entropy(relu_forward(affine_forward(x, w, b)), labels).loss; };
    const Matrix pre = affine_forward(x, w, b);
    for (double v : pre.values()) REQUIRE(std::abs(v) > 1e-3);
    const Matrix up = relu_backward(softmax_cross_entropy(relu_forward(pre), labels).grad, pre);
    const AffineGrads g = affine_backward(up, x, w);
    const GradCheckTensor t[] = {{"x", &x, &g.dx}, {"W", &w, &g.dweight}, {"b", &b, &g.dbias}};
    CHECK(grad_check(loss, t).max_relative_error <= 1e-6);
  }
  SUBCASE("inputs are restored") {
    const Matrix before = p, g = p;
    const GradCheckTensor t[] = {{"p", &p, &g}};
    grad_check(half_sq, t);
    CHECK(p == before);
  }
}

TEST_CASE("rng streams are reproducible and distinct") {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 1000; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    differs |= x != c.next_u64();
  }
  CHECK(differs);
  CHECK(Rng::stream(1, "batch", 0) == Rng::stream(1, "batch", 0));
  CHECK_FALSE(Rng::stream(1, "batch", 0) == Rng::stream(1, "batch", 1));
  CHECK_FALSE(Rng::stream(1, "batch", 0) == Rng::stream(1, "init", 0));
  Rng r(9);
  r.next_u64();
  Rng copy = Rng::from_state(r.state());
  CHECK(copy.next_u64() == r.next_u64());
}

TEST_CASE("rng draws stay in range") {
  Rng r(2);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(r.below(7) < 7u);
  }
}
