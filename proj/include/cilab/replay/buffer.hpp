#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "cilab/data/dataset.hpp"
#include "cilab/model/model.hpp"
#include "cilab/numcore/rng.hpp"

namespace cil::replay {

struct Exemplar {
  std::vector<double> features;  // raw model input
  int label = 0;
  std::size_t source_index = 0;  // row in the task's training set

  bool operator==(const Exemplar&) const = default;
};

/// Per-class exemplar store with a fixed per-class cap. Lists keep herding
/// selection order.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t cap = 20) : cap_(cap) {}

  std::size_t cap() const noexcept { return cap_; }
  bool contains(int cls) const { return per_class_.contains(cls); }
  const std::vector<Exemplar>& exemplars(int cls) const;
  const std::map<int, std::vector<Exemplar>>& classes() const noexcept { return per_class_; }
  std::size_t total() const noexcept;
  bool empty() const noexcept { return per_class_.empty(); }

  /// Throws Error if `cls` already has a slot or the list exceeds the cap.
  void insert(int cls, std::vector<Exemplar> list);

  /// All exemplars, classes ascending, each in selection order.
  data::LabeledDataset as_dataset() const;

  bool operator==(const ReplayBuffer&) const = default;

 private:
  std::size_t cap_;
  std::map<int, std::vector<Exemplar>> per_class_;
};

/// Greedy herding: with μ the mean of all rows, step k picks the unchosen row
/// x minimising ‖μ − (Σ chosen + x)/k‖₂; lowest index wins ties. Returns
/// min(R, n) row indices in pick order. Throws on empty input or R = 0.
std::vector<std::size_t> herding_select(const Matrix& class_features, std::size_t r);

/// Row-wise L2 normalisation (rows with norm ≤ 1e-12 are left as is).
Matrix l2_normalize_rows(const Matrix& m);

/// Fills one slot per class in `task_classes` by herding over the model's
/// features of that class's training rows. Slots of earlier classes are left
/// untouched. A buffer cap of 0 stores nothing.
void update_buffer(ReplayBuffer& buffer, const data::LabeledDataset& task_train,
                   std::span<const int> task_classes, const ModelParams& model,
                   bool normalize_features = true);

/// Identifies a buffer exemplar: its class and position in the class list.
struct ExemplarRef {
  int cls = 0;
  std::size_t slot = 0;

  bool operator==(const ExemplarRef&) const = default;
};

struct Batch {
  Matrix x;
  std::vector<int> labels;
  std::vector<std::optional<ExemplarRef>> exemplar;  // set for replayed rows

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t exemplar_count() const noexcept;
};

/// One epoch over D_t ∪ B: the union is shuffled uniformly and cut into
/// batches of `batch_size` (the last one may be shorter).
std::vector<Batch> joint_batches(const data::LabeledDataset& task_data, const ReplayBuffer& buffer,
                                 std::size_t batch_size, Rng& rng);

}  // namespace cil::replay
