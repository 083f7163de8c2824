#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cilab/numcore/matrix.hpp"

namespace cil::data {

struct Sample {
  std::vector<double> features;
  int label = 0;
};

/// Struct-of-arrays dataset: row i of `x` has label `labels[i]`.
struct LabeledDataset {
  Matrix x;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return x.cols(); }
  Sample sample(std::size_t i) const;

  std::vector<std::size_t> indices_of(int label) const;
  LabeledDataset subset(std::span<const std::size_t> indices) const;
  /// Samples whose label is in `classes`, original order kept.
  LabeledDataset filter_classes(std::span<const int> classes) const;
  static LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b);

  bool operator==(const LabeledDataset&) const = default;
};

/// (new_class, old_class, target cosine) for one designed near-duplicate pair.
struct Collision {
  int new_class = 0;
  int old_class = 0;
  double target_cosine = 0.0;

  bool operator==(const Collision&) const = default;
};

/// One unit-norm prototype per class (row c belongs to class c).
struct ClassPrototypeSet {
  Matrix prototypes;
  std::vector<Collision> collisions;

  std::size_t num_classes() const noexcept { return prototypes.rows(); }
  double cosine(int a, int b) const;
};

inline constexpr double kMaxUnrelatedCosine = 0.5;
inline constexpr double kCollisionTolerance = 0.02;

/// Unrelated pairs end with |cos| ≤ 0.5. Each collision's new prototype is
/// rotated from its old prototype toward a random orthogonal direction by
/// exactly arccos(target). Throws ConfigError when the spec cannot be met
/// within a bounded number of resamples.
ClassPrototypeSet generate_prototypes(std::size_t n_classes, std::size_t dim,
                                      const std::vector<Collision>& collisions, std::uint64_t seed);

/// prototype + N(0, σ²I) per sample; train and test come from separate streams.
std::pair<LabeledDataset, LabeledDataset> sample_dataset(const ClassPrototypeSet& prototypes,
                                                         std::size_t n_train_per_class,
                                                         std::size_t n_test_per_class,
                                                         double noise_sigma, std::uint64_t seed);

struct Task {
  std::vector<int> classes;  // class positions (see TaskSequence)
  LabeledDataset train;
  LabeledDataset test;
};

/// Labels inside a TaskSequence are positions in `class_order`: original
/// class `class_order[p]` becomes label p, so task t owns a contiguous range
/// of head columns.
struct TaskSequence {
  std::vector<int> class_order;
  std::size_t base_size = 0;
  std::size_t increment = 0;
  std::vector<Task> tasks;

  std::size_t num_classes() const noexcept { return class_order.size(); }
  /// Position of an original class id.
  int position_of(int original_class) const;
  /// Union of test sets of tasks [0, t].
  LabeledDataset seen_test(std::size_t t) const;
  std::vector<int> classes_before(std::size_t t) const;
};

/// Deterministic class permutation from `shuffle_seed` (the "shuffle" stream).
std::vector<int> shuffled_class_order(std::size_t n_classes, std::uint64_t shuffle_seed);

/// Throws ConfigError unless n_classes = base + k·increment for some k ≥ 0
/// (k = 0 gives a single joint task).
TaskSequence split_tasks(const LabeledDataset& train, const LabeledDataset& test,
                         std::size_t n_classes, std::size_t base, std::size_t increment,
                         std::uint64_t shuffle_seed);

}  // namespace cil::data
