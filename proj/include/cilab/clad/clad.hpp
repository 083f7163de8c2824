#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cilab/data/dataset.hpp"
#include "cilab/model/model.hpp"
#include "cilab/numcore/rng.hpp"
#include "cilab/replay/buffer.hpp"

namespace cil::clad {

/// How S(C) is measured.
///   logits         mean raw logits of C under f_{t-1}, old-class entries only
///   cosine         cos(mean φ_{t-1}(C), mean φ_{t-1}(buffer exemplars of i))
///   oracle_logits  as logits, but scored by a jointly trained model
enum class Measurement { logits, cosine, oracle_logits };
enum class Strategy { top, smallest, random };
/// text: online partners are live features of conflict exemplars in the
/// batch, offline partners are frozen features of every conflict exemplar in
/// the buffer. literal: the pairing written in the loss formulas, i.e. live
/// features of all buffer conflict exemplars online, frozen features of the
/// in-batch conflict exemplars offline.
enum class RdPairing { text, literal };

std::string_view to_string(Measurement m);
std::string_view to_string(Strategy s);
std::string_view to_string(RdPairing p);
Measurement parse_measurement(std::string_view s);
Strategy parse_strategy(std::string_view s);
RdPairing parse_pairing(std::string_view s);

struct SimilarityVector {
  int new_class = 0;
  std::vector<int> old_classes;
  std::vector<double> scores;  // aligned with old_classes
  Measurement measurement = Measurement::logits;

  bool operator==(const SimilarityVector&) const = default;
};

/// S(C) for one new class. `class_x` holds that class's training inputs.
/// Cosine mode needs `buffer` to hold exemplars of every old class.
SimilarityVector forgetting_prediction(const ModelSnapshot& model, int new_class,
                                       const Matrix& class_x, std::span<const int> old_classes,
                                       Measurement measurement,
                                       const replay::ReplayBuffer* buffer = nullptr);

/// k = max(1, ⌈P·N⌉), capped at N. Zero when N = 0.
std::size_t conflict_count(std::size_t n_old, double proportion);

/// top: k largest scores, ties to the lower class id; smallest: k smallest,
/// same tie rule; random: k drawn without replacement.
std::vector<int> select_conflicts(const SimilarityVector& sim, double proportion,
                                  Strategy strategy, Rng& rng);

struct ConflictMap {
  double proportion = 0.1;
  Strategy strategy = Strategy::top;
  Measurement measurement = Measurement::logits;
  std::map<int, std::vector<int>> conflicts;  // new class → ordered old classes
  std::vector<SimilarityVector> similarities;

  bool empty() const noexcept { return conflicts.empty(); }
  /// nullptr when `cls` has no entry.
  const std::vector<int>* conflicts_of(int cls) const;

  bool operator==(const ConflictMap&) const = default;
};

struct ConflictOptions {
  double proportion = 0.1;
  Strategy strategy = Strategy::top;
  Measurement measurement = Measurement::logits;
};

/// FP over every new class of a task, then conflict selection. An empty
/// `old_classes` yields an empty map.
ConflictMap build_conflict_map(const ModelSnapshot& fp_model, const data::LabeledDataset& task_train,
                               std::span<const int> new_classes, std::span<const int> old_classes,
                               const ConflictOptions& options, const replay::ReplayBuffer* buffer,
                               Rng& rng);

struct RdTermLoss {
  double loss = 0.0;
  std::vector<double> d_x;
  std::vector<std::vector<double>> d_partners;  // online only
};

/// mean_e (1 + cos(x, e)) over live partner features, gradients for x and each e.
RdTermLoss loss_online(std::span<const double> x, std::span<const std::span<const double>> partners);
/// mean_e (1 + cos(x, e)) over frozen features; gradient for x only.
RdTermLoss loss_offline(std::span<const double> x, std::span<const std::span<const double>> frozen);

/// φ_{t-1} of buffer exemplars, computed once per task.
class FrozenFeatureCache {
 public:
  FrozenFeatureCache() = default;
  static FrozenFeatureCache build(const ModelSnapshot& frozen, const replay::ReplayBuffer& buffer);

  bool contains(int cls) const { return per_class_.contains(cls); }
  const Matrix& of(int cls) const;
  std::span<const double> feature(const replay::ExemplarRef& ref) const;

 private:
  std::map<int, Matrix> per_class_;
};

/// Partners of one new-class row. online_rows index the live feature
/// matrix (batch rows first, then auxiliary rows).
struct RdTerm {
  std::size_t row = 0;
  std::vector<std::size_t> online_rows;
  std::vector<std::span<const double>> offline;
};

struct RdPlan {
  std::vector<RdTerm> terms;
  Matrix aux_inputs;  // extra rows forwarded through the live model (literal pairing)
};

struct RdOptions {
  RdPairing pairing = RdPairing::text;
  bool online_exemplar_grad = true;
};

/// Rows that are not buffer exemplars are the new-class samples.
RdPlan plan_disentanglement(const replay::Batch& batch, const ConflictMap& map,
                            const FrozenFeatureCache& cache, const replay::ReplayBuffer& buffer,
                            RdPairing pairing);

struct CladResult {
  double loss = 0.0;
  Matrix dfeatures;
  double online_loss = 0.0;
  double offline_loss = 0.0;
  std::size_t online_count = 0;
  std::size_t offline_count = 0;
};

/// L_CLAD = mean L_on over rows with a nonempty online set + mean L_off over
/// rows with a nonempty offline set. Zero when no row qualifies.
CladResult clad_loss_from_features(const Matrix& live_features, std::span<const RdTerm> terms,
                                   bool online_exemplar_grad = true);

struct CladGradient {
  CladResult result;
  ModelGrads grads;
};

/// Forward the batch (plus any auxiliary rows) through `live`, evaluate
/// L_CLAD and backpropagate it to the parameters.
CladGradient clad_loss(const replay::Batch& batch, const ConflictMap& map, const ModelParams& live,
                       const FrozenFeatureCache& cache, const replay::ReplayBuffer& buffer,
                       const RdOptions& options);

}  // namespace cil::clad
