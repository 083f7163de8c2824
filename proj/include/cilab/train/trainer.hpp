#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cilab/clad/clad.hpp"
#include "cilab/data/dataset.hpp"
#include "cilab/model/model.hpp"
#include "cilab/numcore/ops.hpp"
#include "cilab/numcore/rng.hpp"
#include "cilab/replay/buffer.hpp"

namespace cil::train {

/// Step decay: lr = initial · factor^(number of milestones reached), with
/// milestone m reached at epoch ⌊m·epochs⌋.
struct LrSchedule {
  double initial = 0.1;
  std::vector<double> milestones{0.5, 0.75};
  double factor = 0.1;

  double lr_at(std::size_t epoch, std::size_t epochs) const;
  bool operator==(const LrSchedule&) const = default;
};

/// The L_ad slot of the replay loss.
enum class AdditionalConstraint { none, distill };

std::string_view to_string(AdditionalConstraint c);
AdditionalConstraint parse_constraint(std::string_view s);

struct TrainConfig {
  std::size_t epochs_per_task = 60;
  std::size_t batch_size = 128;
  LrSchedule lr;
  double momentum = 0.9;
  double weight_decay = 5e-4;

  AdditionalConstraint constraint = AdditionalConstraint::none;
  double lambda = 1.0;       // weight of L_ad when constraint != none
  double temperature = 2.0;  // distillation temperature

  double eta = 0.0;  // CLAD coefficient; 0 is plain replay
  clad::ConflictOptions conflict;
  clad::RdOptions rd;

  std::size_t exemplars_per_class = 20;
  bool herding_normalize = true;

  std::uint64_t seed = 1;

  void validate() const;
  double effective_lambda() const noexcept {
    return constraint == AdditionalConstraint::none ? 0.0 : lambda;
  }
};

/// Gradient of one loss term with respect to all parameters.
struct LossGradients {
  double loss = 0.0;
  ModelGrads grads;
};

/// Eq.-1 cross-entropy over all K classes, averaged over the batch.
LossGradients loss_ce(const ModelParams& model, const replay::Batch& batch);

/// −mean Σ softmax(teacher/T) · log_softmax(student/T) over the teacher's
/// classes; the student's extra columns receive no gradient.
LossGrad distill_from_logits(const Matrix& student_logits, const Matrix& teacher_logits,
                             double temperature);

/// Logit distillation of the live model toward the frozen snapshot.
LossGradients loss_distill(const ModelParams& model, const ModelSnapshot& teacher,
                           const replay::Batch& batch, double temperature);

/// Everything a step needs besides the live model and the batch. Null
/// members disable the corresponding term.
struct StepContext {
  const ModelSnapshot* teacher = nullptr;
  const clad::ConflictMap* conflicts = nullptr;
  const clad::FrozenFeatureCache* frozen = nullptr;
  const replay::ReplayBuffer* buffer = nullptr;
};

struct StepLoss {
  double total = 0.0;
  double ce = 0.0;
  double distill = 0.0;
  double clad = 0.0;

  bool operator==(const StepLoss&) const = default;
};

struct StepResult {
  StepLoss loss;
  ModelGrads grads;
};

/// L = L_ce + λ·L_ad + η·L_CLAD with a single backward pass. Terms whose
/// weight is zero are skipped entirely.
StepResult fused_step(const ModelParams& model, const replay::Batch& batch, const StepContext& ctx,
                      const TrainConfig& config);

/// Per-epoch means of the step losses.
struct EpochLoss {
  double total = 0.0;
  double ce = 0.0;
  double distill = 0.0;
  double clad = 0.0;
  double lr = 0.0;

  bool operator==(const EpochLoss&) const = default;
};

struct TaskTrace {
  std::vector<EpochLoss> epochs;
  std::size_t steps = 0;

  bool operator==(const TaskTrace&) const = default;
};

/// SGD over shuffled joint batches of D_t ∪ B for config.epochs_per_task
/// epochs. Velocity starts at zero. Batch order comes from the "batch"
/// stream for `task_index`. Throws NumericalError on a non-finite loss.
TaskTrace train_task(ModelParams& model, const data::LabeledDataset& task_train,
                     const replay::ReplayBuffer& buffer, const StepContext& ctx,
                     const TrainConfig& config, std::size_t task_index);

struct TaskRecord {
  std::size_t task_index = 0;
  std::vector<int> classes;             // trained in this task
  std::vector<double> class_accuracy;   // one entry per seen class position
  double overall_accuracy = 0.0;        // over all seen-class test rows
  clad::ConflictMap conflicts;
  TaskTrace trace;

  bool operator==(const TaskRecord&) const = default;
};

struct RunRecord {
  std::vector<TaskRecord> tasks;
  std::vector<ModelParams> checkpoints;  // model after each task

  std::vector<double> overall_accuracies() const;
  /// A_t after the last recorded task.
  double average_incremental_accuracy() const;

  bool operator==(const RunRecord&) const = default;
};

/// Everything needed to continue a sequence after a completed task.
struct RunState {
  std::size_t next_task = 0;
  ModelParams params;
  replay::ReplayBuffer buffer;
  Rng conflict_rng{0};
  RunRecord record;

  bool operator==(const RunState&) const = default;
};

struct RunOptions {
  std::optional<RunState> resume;
  /// Called after each task with the state to continue from.
  std::function<void(const RunState&)> on_task_end;
  /// Stop after this many tasks (for checkpoint tests); 0 runs them all.
  std::size_t stop_after = 0;
  /// Jointly trained model used by the oracle_logits measurement. Trained on
  /// demand when absent.
  std::optional<ModelSnapshot> oracle;
};

/// Jointly trained model on every class of the sequence (single task, no buffer).
ModelSnapshot train_oracle(const data::TaskSequence& sequence, const ModelConfig& model_config,
                           const TrainConfig& config);

/// For each task: expand the head; for t ≥ 2 freeze f_{t-1}, run forgetting
/// prediction and build the conflict map; train; refresh the buffer; evaluate
/// on the union of seen-class test sets.
RunRecord run_sequence(const data::TaskSequence& sequence, const ModelConfig& model_config,
                       const TrainConfig& config, RunOptions options = {});

}  // namespace cil::train
