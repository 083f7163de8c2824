#include "cilab/experiment/gradsuite.hpp"

#include <algorithm>

#include "cilab/clad/clad.hpp"
#include "cilab/numcore/gradcheck.hpp"
#include "cilab/numcore/ops.hpp"
#include "cilab/numcore/rng.hpp"
#include "cilab/train/trainer.hpp"

namespace cil::experiment {

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (double& v : m.values()) v = rng.uniform(-scale, scale);
  return m;
}

std::size_t dim_between(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

double sum_product(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) s += a.values()[i] * b.values()[i];
  return s;
}

Matrix as_row(const std::vector<double>& v) { return Matrix(1, v.size(), v); }

double check_affine(Rng& rng, std::uint64_t seed) {
  const std::size_t n = dim_between(rng, 1, 5), in = dim_between(rng, 1, 6), out = dim_between(rng, 1, 6);
  Matrix x = random_matrix(n, in, rng), w = random_matrix(in, out, rng), b = random_matrix(1, out, rng);
  const Matrix up = random_matrix(n, out, rng);
  const AffineGrads g = affine_backward(up, x, w);
  auto loss = [&] { return sum_product(up, affine_forward(x, w, b)); };
  const GradCheckTensor t[] = {{"x", &x, &g.dx}, {"W", &w, &g.dweight}, {"b", &b, &g.dbias}};
  return grad_check(loss, t, 1e-6, kGradCheckMaxCoords, seed).max_relative_error;
}

double check_relu(Rng& rng, std::uint64_t seed) {
  const std::size_t n = dim_between(rng, 1, 5), d = dim_between(rng, 1, 8);
  // Keep every coordinate away from the kink so central differences are exact.
  Matrix x(n, d);
  for (double& v : x.values()) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 1.0);
  const Matrix up = random_matrix(n, d, rng);
  const Matrix dx = relu_backward(up, x);
  auto loss = [&] { return sum_product(up, relu_forward(x)); };
  const GradCheckTensor t[] = {{"x", &x, &dx}};
  return grad_check(loss, t, 1e-6, kGradCheckMaxCoords, seed).max_relative_error;
}

double check_ce(Rng& rng, std::uint64_t seed) {
  const std::size_t n = dim_between(rng, 1, 6), k = dim_between(rng, 2, 7);
  Matrix z = random_matrix(n, k, rng, 3.0);
  std::vector<int> labels(n);
  for (int& y : labels) y = static_cast<int>(rng.below(k));
  const Matrix g = softmax_cross_entropy(z, labels).grad;
  auto loss = [&] { return softmax_cross_entropy(z, labels).loss; };
  const GradCheckTensor t[] = {{"logits", &z, &g}};
  return grad_check(loss, t, 1e-6, kGradCheckMaxCoords, seed).max_relative_error;
}

double check_cosine(Rng& rng, std::uint64_t seed) {
  const std::size_t d = dim_between(rng, 2, 9);
  Matrix u = random_matrix(1, d, rng), v = random_matrix(1, d, rng);
  const CosineResult c = cosine_sim(u.row(0), v.row(0));
  const Matrix du = as_row(c.du), dv = as_row(c.dv);
  auto loss = [&] { return cosine_sim(u.row(0), v.row(0)).value; };
  const GradCheckTensor t[] = {{"u", &u, &du}, {"v", &v, &dv}};
  return grad_check(loss, t, 1e-6, kGradCheckMaxCoords, seed).max_relative_error;
}

double check_distill(Rng& rng, std::uint64_t seed) {
  const std::size_t n = dim_between(rng, 1, 5), k_old = dim_between(rng, 1, 5), k_new = dim_between(rng, 0, 3);
  Matrix student = random_matrix(n, k_old + k_new, rng, 3.0);
  const Matrix teacher = random_matrix(n, k_old, rng, 3.0);
  const double temperature = rng.uniform(0.5, 4.0);
  const Matrix g = train::distill_from_logits(student, teacher, temperature).grad;
  auto loss = [&] { return train::distill_from_logits(student, teacher, temperature).loss; };
  const GradCheckTensor t[] = {{"student", &student, &g}};
  return grad_check(loss, t, 1e-6, kGradCheckMaxCoords, seed).max_relative_error;
}

std::vector<std::span<const double>> rows_of(const Matrix& m) {
  std::vector<std::span<const double>> out;
  for (std::size_t r = 0; r < m.rows(); ++r) out.push_back(m.row(r));
  return out;
}

double check_online(Rng& rng, std::uint64_t seed) {
  const std::size_t d = dim_between(rng, 2, 8), m = dim_between(rng, 1, 5);
  Matrix x = random_matrix(1, d, rng), partners = random_matrix(m, d, rng);
  const clad::RdTermLoss r = clad::loss_online(x.row(0), rows_of(partners));
  const Matrix dx = as_row(r.d_x);
  Matrix dp(m, d);
  for (std::size_t i = 0; i < m; ++i) std::copy(r.d_partners[i].begin(), r.d_partners[i].end(), dp.row(i).begin());
  auto loss = [&] { return clad::loss_online(x.row(0), rows_of(partners)).loss; };
  const GradCheckTensor t[] = {{"x", &x, &dx}, {"partners", &partners, &dp}};
  return grad_check(loss, t, 1e-6, kGradCheckMaxCoords, seed).max_relative_error;
}

double check_offline(Rng& rng, std::uint64_t seed) {
  const std::size_t d = dim_between(rng, 2, 8), m = dim_between(rng, 1, 5);
  Matrix x = random_matrix(1, d, rng);
  const Matrix frozen = random_matrix(m, d, rng);
  const Matrix dx = as_row(clad::loss_offline(x.row(0), rows_of(frozen)).d_x);
  auto loss = [&] { return clad::loss_offline(x.row(0), rows_of(frozen)).loss; };
  const GradCheckTensor t[] = {{"x", &x, &dx}};
  return grad_check(loss, t, 1e-6, kGradCheckMaxCoords, seed).max_relative_error;
}

/// CE + λ·distill + η·CLAD through a small model with three old classes in
/// the buffer and two new classes in the batch.
double check_composite(Rng& rng, std::uint64_t seed, std::size_t instance) {
  ModelConfig mc;
  mc.input_dim = dim_between(rng, 3, 6);
  mc.hidden_dims = {dim_between(rng, 4, 8)};
  mc.feature_dim = dim_between(rng, 3, 6);
  ModelParams old = expand_head(init_model(mc, seed), 3, seed);
  const ModelSnapshot teacher = snapshot(old, 0);
  ModelParams live = expand_head(old, 2, seed);
  for (Matrix* m : live.tensors()) {
    for (double& v : m->values()) v += rng.uniform(-0.3, 0.3);
  }

  replay::ReplayBuffer buffer(3);
  for (int cls = 0; cls < 3; ++cls) {
    std::vector<replay::Exemplar> list;
    for (std::size_t s = 0; s < 3; ++s) {
      std::vector<double> f(mc.input_dim);
      for (double& v : f) v = rng.uniform(-1.0, 1.0);
      list.push_back({f, cls, s});
    }
    buffer.insert(cls, std::move(list));
  }

  replay::Batch batch;
  const std::size_t n_new = dim_between(rng, 2, 6), n_ex = dim_between(rng, 1, 4);
  batch.x = Matrix(n_new + n_ex, mc.input_dim);
  for (std::size_t i = 0; i < n_new; ++i) {
    for (double& v : batch.x.row(i)) v = rng.uniform(-1.0, 1.0);
    batch.labels.push_back(3 + static_cast<int>(rng.below(2)));
    batch.exemplar.push_back(std::nullopt);
  }
  for (std::size_t i = 0; i < n_ex; ++i) {
    const replay::ExemplarRef ref{static_cast<int>(rng.below(3)), static_cast<std::size_t>(rng.below(3))};
    const auto& f = buffer.exemplars(ref.cls)[ref.slot].features;
    std::copy(f.begin(), f.end(), batch.x.row(n_new + i).begin());
    batch.labels.push_back(ref.cls);
    batch.exemplar.push_back(ref);
  }

  clad::ConflictMap map;
  map.conflicts[3] = {0};
  map.conflicts[4] = {1, 2};
  const clad::FrozenFeatureCache cache = clad::FrozenFeatureCache::build(teacher, buffer);

  train::TrainConfig cfg;
  cfg.constraint = train::AdditionalConstraint::distill;
  cfg.lambda = rng.uniform(0.2, 2.0);
  cfg.temperature = rng.uniform(1.0, 3.0);
  cfg.eta = rng.uniform(0.5, 4.0);
  cfg.rd.pairing = instance % 2 == 0 ? clad::RdPairing::text : clad::RdPairing::literal;
  // The stop-gradient variant is not the derivative of the loss, so it is
  // left out here.
  cfg.rd.online_exemplar_grad = true;

  const train::StepContext ctx{&teacher, &map, &cache, &buffer};
  const train::StepResult step = train::fused_step(live, batch, ctx, cfg);
  auto loss = [&] { return train::fused_step(live, batch, ctx, cfg).loss.total; };
  const auto values = live.tensors();
  const auto grads = step.grads.tensors();
  std::vector<GradCheckTensor> t;
  for (std::size_t i = 0; i < values.size(); ++i) t.push_back({"param" + std::to_string(i), values[i], grads[i]});
  return grad_check(loss, t, 1e-6, kGradCheckMaxCoords, seed).max_relative_error;
}

}  // namespace

std::vector<GradSuiteEntry> gradient_suite(std::size_t instances, std::uint64_t seed) {
  std::vector<GradSuiteEntry> out;
  auto run = [&](const std::string& name, auto&& one) {
    GradSuiteEntry e{name, instances, 0.0};
    for (std::size_t i = 0; i < instances; ++i) {
      Rng rng = Rng::stream(seed, "gradcheck." + name, i);
      e.max_relative_error = std::max(e.max_relative_error, one(rng, seed + i, i));
    }
    out.push_back(e);
  };
  run("affine", [](Rng& r, std::uint64_t s, std::size_t) { return check_affine(r, s); });
  run("relu", [](Rng& r, std::uint64_t s, std::size_t) { return check_relu(r, s); });
  run("cross_entropy", [](Rng& r, std::uint64_t s, std::size_t) { return check_ce(r, s); });
  run("cosine", [](Rng& r, std::uint64_t s, std::size_t) { return check_cosine(r, s); });
  run("distill", [](Rng& r, std::uint64_t s, std::size_t) { return check_distill(r, s); });
  run("clad_online", [](Rng& r, std::uint64_t s, std::size_t) { return check_online(r, s); });
  run("clad_offline", [](Rng& r, std::uint64_t s, std::size_t) { return check_offline(r, s); });
  run("fused_step", [](Rng& r, std::uint64_t s, std::size_t i) { return check_composite(r, s, i); });
  return out;
}

}  // namespace cil::experiment
