#include <cmath>

#include "doctest.h"
#include "helpers.hpp"

#include "cilab/errors.hpp"
#include "cilab/experiment/config.hpp"
#include "cilab/train/trainer.hpp"

using namespace cil;
using namespace cil::train;
using cil::test::random_matrix;

namespace {

// Live model, frozen teacher and buffer with three old classes; the batch
// mixes two new classes with replayed exemplars.
struct StepFixture {
  ModelParams live;
  ModelSnapshot teacher{ModelParams{}, 0};
  replay::ReplayBuffer buffer{4};
  clad::FrozenFeatureCache cache;
  clad::ConflictMap map;
  replay::Batch batch;

  StepFixture() {
    ModelConfig c;
    c.input_dim = 5;
    c.hidden_dims = {7};
    c.feature_dim = 6;
    ModelParams old = expand_head(init_model(c, 2), 3, 2);
    teacher = snapshot(old, 0);
    live = expand_head(old, 2, 2);
    Rng rng(31);
    for (Matrix* m : live.tensors())
      for (double& v : m->values()) v += rng.uniform(-0.2, 0.2);
    for (int cls = 0; cls < 3; ++cls) {
      std::vector<replay::Exemplar> list;
      for (std::size_t s = 0; s < 4; ++s) {
        std::vector<double> f(5);
        for (double& v : f) v = rng.uniform(-1, 1);
        list.push_back({f, cls, s});
      }
      buffer.insert(cls, list);
    }
    cache = clad::FrozenFeatureCache::build(teacher, buffer);
    map.conflicts[3] = {0, 2};
    map.conflicts[4] = {1};
    data::LabeledDataset fresh;
    fresh.x = random_matrix(8, 5, rng);
    fresh.labels = {3, 4, 3, 4, 3, 4, 3, 4};
    Rng order(3);
    batch = replay::joint_batches(fresh, buffer, 20, order).front();
  }

  StepContext ctx() const { return {&teacher, &map, &cache, &buffer}; }
};

double max_abs_diff(const ModelGrads& a, const ModelGrads& b) {
  double m = 0.0;
  const auto ta = a.tensors(), tb = b.tensors();
  for (std::size_t i = 0; i < ta.size(); ++i)
    for (std::size_t k = 0; k < ta[i]->size(); ++k) m = std::max(m, std::abs(ta[i]->values()[k] - tb[i]->values()[k]));
  return m;
}

}  // namespace

TEST_CASE("lr schedule") {
  const LrSchedule s;
  CHECK(s.lr_at(0, 60) == 0.1);
  CHECK(s.lr_at(29, 60) == 0.1);
  CHECK(s.lr_at(30, 60) == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(s.lr_at(45, 60) == doctest::Approx(0.001).epsilon(1e-15));
}

TEST_CASE("config validation") {
  TrainConfig c;
  c.eta = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.lambda = -0.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.conflict.proportion = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.conflict.proportion = 1.0;
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("loss_ce") {
  SUBCASE("confident single-class batch") {
    ModelConfig c;
    c.input_dim = 2;
    c.hidden_dims = {};
    c.feature_dim = 2;
    ModelParams p = expand_head(init_model(c, 1), 2, 1);
    for (double& v : p.head.weight.values()) v = 0.0;
    p.head.bias = Matrix::from_rows({{40, 0}});
    replay::Batch b;
    b.x = Matrix(3, 2, 0.5);
    b.labels = {0, 0, 0};
    b.exemplar.assign(3, std::nullopt);
    CHECK(loss_ce(p, b).loss < 1e-6);
    b.labels = {0, 2, 0};
    CHECK_THROWS(loss_ce(p, b));
  }
}

TEST_CASE("distillation") {
  Rng rng(4);
  SUBCASE("matching distributions have zero gradient") {
    const Matrix t = random_matrix(3, 4, rng, 2.0);
    Matrix student(3, 6);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 4; ++j) student(i, j) = t(i, j);
    const LossGrad g = distill_from_logits(student, t, 2.0);
    double entropy = 0.0;
    Matrix scaled = t;
    for (double& v : scaled.values()) v /= 2.0;
    const Matrix ps = softmax_rows(scaled);
    for (double v : ps.values()) entropy -= v * std::log(v);
    CHECK(g.loss == doctest::Approx(entropy / 3.0).epsilon(1e-12));
    for (double v : g.grad.values()) CHECK(std::abs(v) <= 1e-15);
  }
  SUBCASE("a single old class gives no gradient") {
    const Matrix t = random_matrix(2, 1, rng);
    const LossGrad g = distill_from_logits(random_matrix(2, 3, rng), t, 1.0);
    for (double v : g.grad.values()) CHECK(std::abs(v) <= 1e-15);
  }
  SUBCASE("live model equal to the teacher") {
    const StepFixture f;
    ModelParams same = f.teacher.params();
    const LossGradients g = loss_distill(same, f.teacher, f.batch, 2.0);
    for (const Matrix* m : g.grads.tensors())
      for (double v : m->values()) CHECK(std::abs(v) <= 1e-15);
  }
}

TEST_CASE("fused step is the sum of its terms") {
  const StepFixture f;
  TrainConfig c;
  c.constraint = AdditionalConstraint::distill;
  c.lambda = 0.7;
  c.temperature = 2.0;
  c.eta = 1.3;
  const StepResult fused = fused_step(f.live, f.batch, f.ctx(), c);

  const LossGradients ce = loss_ce(f.live, f.batch);
  const LossGradients kd = loss_distill(f.live, f.teacher, f.batch, c.temperature);
  const clad::CladGradient cl = clad::clad_loss(f.batch, f.map, f.live, f.cache, f.buffer, c.rd);
  REQUIRE(cl.result.loss > 0.0);
  CHECK(std::abs(fused.loss.total - (ce.loss + c.lambda * kd.loss + c.eta * cl.result.loss)) <= 1e-12);
  CHECK(fused.loss.ce == ce.loss);
  CHECK(std::abs(fused.loss.distill - kd.loss) <= 1e-12);
  CHECK(std::abs(fused.loss.clad - cl.result.loss) <= 1e-12);

  ModelGrads sum = ce.grads;
  sum.add_scaled(kd.grads, c.lambda);
  sum.add_scaled(cl.grads, c.eta);
  CHECK(max_abs_diff(sum, fused.grads) <= 1e-12);
}

TEST_CASE("zero weights skip their terms bitwise") {
  const StepFixture f;
  TrainConfig naive;
  TrainConfig zero = naive;
  zero.eta = 0.0;
  zero.constraint = AdditionalConstraint::distill;
  zero.lambda = 0.0;
  const StepResult a = fused_step(f.live, f.batch, f.ctx(), naive);
  const StepResult b = fused_step(f.live, f.batch, f.ctx(), zero);
  CHECK(a.loss.total == b.loss.total);
  CHECK(max_abs_diff(a.grads, b.grads) == 0.0);
  CHECK(a.grads.tensors().size() == b.grads.tensors().size());
}

TEST_CASE("one epoch with one batch applies exactly one sgd step") {
  const StepFixture f;
  data::LabeledDataset d;
  Rng rng(1);
  d.x = random_matrix(6, 5, rng);
  d.labels = {3, 4, 3, 4, 3, 4};
  TrainConfig c;
  c.epochs_per_task = 1;
  c.batch_size = 64;
  c.seed = 9;
  ModelParams trained = f.live;
  const TaskTrace trace = train_task(trained, d, replay::ReplayBuffer(4), {}, c, 2);
  CHECK(trace.steps == 1);
  REQUIRE(trace.epochs.size() == 1);

  Rng order = Rng::stream(9, "batch", 2);
  const auto batches = replay::joint_batches(d, replay::ReplayBuffer(4), 64, order);
  REQUIRE(batches.size() == 1);
  ModelParams manual = f.live;
  const StepResult step = fused_step(manual, batches[0], {}, c);
  ModelGrads vel = ModelGrads::zeros_like(manual);
  auto p = manual.tensors();
  auto g = step.grads.tensors();
  auto v = vel.tensors();
  for (std::size_t i = 0; i < p.size(); ++i) sgd_step(*p[i], *g[i], *v[i], {c.lr.lr_at(0, 1), c.momentum, c.weight_decay});
  CHECK(manual == trained);
  CHECK(trace.epochs[0].total == step.loss.total);
}

TEST_CASE("run_sequence protocol") {
  const auto cfg = cil::test::tiny_config();
  const experiment::Benchmark bench = experiment::build_benchmark(cfg, 1);
  const TrainConfig tc = cfg.train_for_seed(1);
  const RunRecord r = run_sequence(bench.sequence, cfg.model, tc);
  REQUIRE(r.tasks.size() == 3);
  REQUIRE(r.checkpoints.size() == 3);
  for (std::size_t t = 0; t < 3; ++t) {
    CHECK(r.tasks[t].class_accuracy.size() == 2 + 2 * t);
    CHECK(r.checkpoints[t].num_classes() == 2 + 2 * t);
    for (double a : r.tasks[t].class_accuracy) CHECK((a >= 0.0 && a <= 1.0));
    CHECK(r.tasks[t].classes == bench.sequence.tasks[t].classes);
    CHECK(r.tasks[t].trace.epochs.size() == cfg.train.epochs_per_task);
  }
  CHECK(r.tasks[0].conflicts.empty());
  CHECK_FALSE(r.tasks[1].conflicts.empty());
  for (const auto& [cls, list] : r.tasks[2].conflicts.conflicts) {
    CHECK((cls >= 4 && cls < 6));
    CHECK(list.size() == 2);
    for (int o : list) CHECK(o < 4);
  }
  CHECK(run_sequence(bench.sequence, cfg.model, tc) == r);

  const auto acc = r.overall_accuracies();
  CHECK(r.average_incremental_accuracy() == doctest::Approx((acc[0] + acc[1] + acc[2]) / 3.0).epsilon(1e-15));
}

TEST_CASE("single task run") {
  auto cfg = cil::test::tiny_config();
  cfg.data.synthetic.auto_collisions.reset();
  cfg.split = {6, 0, 7};
  const experiment::Benchmark bench = experiment::build_benchmark(cfg, 3);
  const RunRecord r = run_sequence(bench.sequence, cfg.model, cfg.train_for_seed(3));
  CHECK(r.tasks.size() == 1);
  CHECK(r.tasks[0].class_accuracy.size() == 6);
}

TEST_CASE("checkpoint resume continues bitwise") {
  const auto cfg = cil::test::tiny_config();
  const experiment::Benchmark bench = experiment::build_benchmark(cfg, 2);
  const TrainConfig tc = cfg.train_for_seed(2);
  const RunRecord full = run_sequence(bench.sequence, cfg.model, tc);

  std::optional<RunState> saved;
  RunOptions first;
  first.stop_after = 1;
  first.on_task_end = [&](const RunState& s) { saved = s; };
  run_sequence(bench.sequence, cfg.model, tc, first);
  REQUIRE(saved);
  CHECK(saved->next_task == 1);
  RunOptions second;
  second.resume = *saved;
  CHECK(run_sequence(bench.sequence, cfg.model, tc, second) == full);
}
