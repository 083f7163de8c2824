#include "cilab/train/trainer.hpp"

#include <cmath>
#include <sstream>

#include "cilab/errors.hpp"
#include "cilab/metrics/metrics.hpp"

namespace cil::train {

double LrSchedule::lr_at(std::size_t epoch, std::size_t epochs) const {
  double lr = initial;
  for (double m : milestones) {
    const auto at = static_cast<std::size_t>(std::floor(m * static_cast<double>(epochs)));
    if (epoch >= at) lr *= factor;
  }
  return lr;
}

std::string_view to_string(AdditionalConstraint c) {
  return c == AdditionalConstraint::none ? "none" : "distill";
}

AdditionalConstraint parse_constraint(std::string_view s) {
  if (s == "none") return AdditionalConstraint::none;
  if (s == "distill") return AdditionalConstraint::distill;
  throw ConfigError("unknown additional constraint '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  if (epochs_per_task == 0) throw ConfigError("train: epochs_per_task must be positive");
  if (batch_size < 2) throw ConfigError("train: batch_size must be at least 2");
  if (!(lr.initial > 0.0)) throw ConfigError("train: learning rate must be positive");
  for (double m : lr.milestones) {
    if (!(m >= 0.0 && m <= 1.0)) throw ConfigError("train: lr milestones are epoch fractions in [0, 1]");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train: momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be non-negative");
  if (!(lambda >= 0.0)) throw ConfigError("train: lambda must be non-negative");
  if (!(temperature > 0.0)) throw ConfigError("train: temperature must be positive");
  if (!(eta >= 0.0)) throw ConfigError("train: eta must be non-negative");
  if (!(conflict.proportion > 0.0 && conflict.proportion <= 1.0)) {
    throw ConfigError("train: conflict proportion must lie in (0, 1]");
  }
}

LossGradients loss_ce(const ModelParams& model, const replay::Batch& batch) {
  const ForwardTrace trace = forward(model, batch.x, true);
  LossGrad ce = softmax_cross_entropy(trace.logits, batch.labels);
  return {ce.loss, backward(model, trace, &ce.grad, nullptr)};
}

LossGrad distill_from_logits(const Matrix& student_logits, const Matrix& teacher_logits,
                             double temperature) {
  const std::size_t n = student_logits.rows(), k_old = teacher_logits.cols();
  if (teacher_logits.rows() != n || student_logits.cols() < k_old) {
    throw DimensionError("distill: student " + student_logits.shape() + " vs teacher " +
                         teacher_logits.shape());
  }
  LossGrad out{0.0, Matrix(n, student_logits.cols())};
  if (n == 0 || k_old == 0) return out;
  const double inv_t = 1.0 / temperature;
  Matrix s(n, k_old), t(n, k_old);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k_old; ++j) {
      s(i, j) = student_logits(i, j) * inv_t;
      t(i, j) = teacher_logits(i, j) * inv_t;
    }
  }
  const Matrix q = softmax_rows(t);
  const Matrix logp = log_softmax_rows(s);
  const Matrix p = softmax_rows(s);
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k_old; ++j) {
      total -= q(i, j) * logp(i, j);
      out.grad(i, j) = (p(i, j) - q(i, j)) * inv_t * inv_n;
    }
  }
  out.loss = total * inv_n;
  return out;
}

LossGradients loss_distill(const ModelParams& model, const ModelSnapshot& teacher,
                           const replay::Batch& batch, double temperature) {
  const ForwardTrace trace = forward(model, batch.x, true);
  LossGrad d = distill_from_logits(trace.logits, teacher.logits(batch.x), temperature);
  return {d.loss, backward(model, trace, &d.grad, nullptr)};
}

StepResult fused_step(const ModelParams& model, const replay::Batch& batch, const StepContext& ctx,
                      const TrainConfig& config) {
  const double lambda = config.effective_lambda();
  const bool use_distill = lambda > 0.0 && ctx.teacher != nullptr;
  const bool use_clad = config.eta > 0.0 && ctx.conflicts != nullptr && !ctx.conflicts->empty();

  clad::RdPlan plan;
  if (use_clad) {
    if (ctx.frozen == nullptr || ctx.buffer == nullptr) {
      throw ConfigError("fused_step: CLAD needs the buffer and its frozen features");
    }
    plan = clad::plan_disentanglement(batch, *ctx.conflicts, *ctx.frozen, *ctx.buffer, config.rd.pairing);
  }
  const std::size_t n = batch.size();
  const bool has_aux = plan.aux_inputs.rows() > 0;
  const ForwardTrace trace = forward(model, has_aux ? Matrix::vstack(batch.x, plan.aux_inputs) : batch.x, true);

  StepResult out;
  Matrix dlogits;
  if (has_aux) {
    const Matrix batch_logits = trace.logits.slice_rows(0, n);
    LossGrad ce = softmax_cross_entropy(batch_logits, batch.labels);
    out.loss.ce = ce.loss;
    dlogits = Matrix(trace.logits.rows(), trace.logits.cols());
    std::copy(ce.grad.values().begin(), ce.grad.values().end(), dlogits.values().begin());
  } else {
    LossGrad ce = softmax_cross_entropy(trace.logits, batch.labels);
    out.loss.ce = ce.loss;
    dlogits = std::move(ce.grad);
  }

  if (use_distill) {
    const Matrix student = has_aux ? trace.logits.slice_rows(0, n) : trace.logits;
    LossGrad d = distill_from_logits(student, ctx.teacher->logits(batch.x), config.temperature);
    out.loss.distill = d.loss;
    auto dst = dlogits.values();
    auto src = d.grad.values();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] += lambda * src[i];
  }

  Matrix dfeatures;
  if (use_clad) {
    clad::CladResult c = clad::clad_loss_from_features(trace.features, plan.terms, config.rd.online_exemplar_grad);
    out.loss.clad = c.loss;
    dfeatures = std::move(c.dfeatures);
    for (double& v : dfeatures.values()) v *= config.eta;
  }

  out.loss.total = out.loss.ce;
  if (use_distill) out.loss.total += lambda * out.loss.distill;
  if (use_clad) out.loss.total += config.eta * out.loss.clad;
  out.grads = backward(model, trace, &dlogits, use_clad ? &dfeatures : nullptr);
  return out;
}

TaskTrace train_task(ModelParams& model, const data::LabeledDataset& task_train,
                     const replay::ReplayBuffer& buffer, const StepContext& ctx,
                     const TrainConfig& config, std::size_t task_index) {
  config.validate();
  Rng rng = Rng::stream(config.seed, "batch", task_index);
  ModelGrads velocity = ModelGrads::zeros_like(model);
  TaskTrace trace;
  std::vector<double> recent;

  for (std::size_t epoch = 0; epoch < config.epochs_per_task; ++epoch) {
    const double lr = config.lr.lr_at(epoch, config.epochs_per_task);
    const SgdOptions sgd{lr, config.momentum, config.weight_decay};
    const auto batches = replay::joint_batches(task_train, buffer, config.batch_size, rng);
    EpochLoss el;
    el.lr = lr;
    for (const auto& batch : batches) {
      StepResult step = fused_step(model, batch, ctx, config);
      recent.push_back(step.loss.total);
      if (recent.size() > 8) recent.erase(recent.begin());
      if (!std::isfinite(step.loss.total)) {
        std::ostringstream msg;
        msg << "non-finite loss in task " << task_index << ", epoch " << epoch << ", step "
            << trace.steps << " (ce=" << step.loss.ce << ", distill=" << step.loss.distill
            << ", clad=" << step.loss.clad << "); recent totals:";
        for (double v : recent) msg << ' ' << v;
        throw NumericalError(msg.str());
      }
      auto params = model.tensors();
      auto grads = step.grads.tensors();
      auto vel = velocity.tensors();
      for (std::size_t i = 0; i < params.size(); ++i) {
        sgd_step(*params[i], *grads[i], *vel[i], sgd, "model tensor " + std::to_string(i));
      }
      el.total += step.loss.total;
      el.ce += step.loss.ce;
      el.distill += step.loss.distill;
      el.clad += step.loss.clad;
      ++trace.steps;
    }
    const double inv = batches.empty() ? 0.0 : 1.0 / static_cast<double>(batches.size());
    el.total *= inv;
    el.ce *= inv;
    el.distill *= inv;
    el.clad *= inv;
    trace.epochs.push_back(el);
  }
  return trace;
}

std::vector<double> RunRecord::overall_accuracies() const {
  std::vector<double> out;
  out.reserve(tasks.size());
  for (const auto& t : tasks) out.push_back(t.overall_accuracy);
  return out;
}

double RunRecord::average_incremental_accuracy() const {
  const auto acc = overall_accuracies();
  return metrics::avg_incremental_accuracy(acc);
}

ModelSnapshot train_oracle(const data::TaskSequence& sequence, const ModelConfig& model_config,
                           const TrainConfig& config) {
  data::LabeledDataset all;
  for (const auto& t : sequence.tasks) all = data::LabeledDataset::concat(all, t.train);
  TrainConfig oc = config;
  oc.eta = 0.0;
  oc.constraint = AdditionalConstraint::none;
  oc.seed = Rng::stream(config.seed, "oracle").next_u64();
  ModelParams p = init_model(model_config, oc.seed);
  p = expand_head(p, sequence.num_classes(), oc.seed);
  const replay::ReplayBuffer none(0);
  train_task(p, all, none, {}, oc, 0);
  return snapshot(p, static_cast<int>(sequence.tasks.size()) - 1);
}

RunRecord run_sequence(const data::TaskSequence& sequence, const ModelConfig& model_config,
                       const TrainConfig& config, RunOptions options) {
  config.validate();
  model_config.validate();
  RunState st;
  if (options.resume) {
    st = std::move(*options.resume);
  } else {
    st.params = init_model(model_config, config.seed);
    st.buffer = replay::ReplayBuffer(config.exemplars_per_class);
    st.conflict_rng = Rng::stream(config.seed, "conflict");
  }
  if (st.params.config != model_config) throw ConfigError("resume state has a different model config");

  const bool needs_oracle = config.conflict.measurement == clad::Measurement::oracle_logits;
  if (needs_oracle && !options.oracle && st.next_task < sequence.tasks.size()) {
    options.oracle = train_oracle(sequence, model_config, config);
  }

  for (std::size_t t = st.next_task; t < sequence.tasks.size(); ++t) {
    const auto& task = sequence.tasks[t];
    const auto old_classes = sequence.classes_before(t);

    std::optional<ModelSnapshot> teacher;
    if (t > 0) teacher = snapshot(st.params, static_cast<int>(t) - 1);
    st.params = expand_head(st.params, task.classes.size(), config.seed);

    clad::ConflictMap conflicts;
    conflicts.proportion = config.conflict.proportion;
    conflicts.strategy = config.conflict.strategy;
    conflicts.measurement = config.conflict.measurement;
    clad::FrozenFeatureCache frozen;
    if (t > 0) {
      bool can_predict = true;
      if (config.conflict.measurement == clad::Measurement::cosine) {
        for (int c : old_classes) {
          if (!st.buffer.contains(c) || st.buffer.exemplars(c).empty()) can_predict = false;
        }
      }
      if (can_predict) {
        const ModelSnapshot& fp_model = needs_oracle ? *options.oracle : *teacher;
        conflicts = clad::build_conflict_map(fp_model, task.train, task.classes, old_classes,
                                             config.conflict, &st.buffer, st.conflict_rng);
      } else if (config.eta > 0.0) {
        throw ConfigError("cosine forgetting prediction needs exemplars of every old class");
      }
      if (config.eta > 0.0) frozen = clad::FrozenFeatureCache::build(*teacher, st.buffer);
    }

    StepContext ctx;
    ctx.teacher = teacher ? &*teacher : nullptr;
    ctx.conflicts = &conflicts;
    ctx.frozen = &frozen;
    ctx.buffer = &st.buffer;
    TaskTrace trace = train_task(st.params, task.train, st.buffer, ctx, config, t);

    replay::update_buffer(st.buffer, task.train, task.classes, st.params, config.herding_normalize);

    const data::LabeledDataset seen = sequence.seen_test(t);
    const std::size_t n_seen = old_classes.size() + task.classes.size();
    TaskRecord rec;
    rec.task_index = t;
    rec.classes = task.classes;
    rec.class_accuracy = metrics::per_class_accuracy(st.params, seen, n_seen);
    rec.overall_accuracy = metrics::overall_accuracy(st.params, seen);
    rec.conflicts = std::move(conflicts);
    rec.trace = std::move(trace);
    st.record.tasks.push_back(std::move(rec));
    st.record.checkpoints.push_back(st.params);
    st.next_task = t + 1;

    if (options.on_task_end) options.on_task_end(st);
    if (options.stop_after != 0 && st.next_task >= options.stop_after) break;
  }
  return st.record;
}

}  // namespace cil::train
