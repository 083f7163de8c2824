#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "cilab/experiment/config.hpp"
#include "cilab/metrics/metrics.hpp"
#include "cilab/train/trainer.hpp"

namespace cil::experiment {

/// Forgetting of one base-task class between the end of the base task and
/// the end of the sequence.
struct ClassForgetting {
  int cls = 0;
  double a_base = 0.0;
  double a_all = 0.0;
  std::optional<double> delta;  // empty when a_base = 0
  double s_max = 0.0;
  double s_mean = 0.0;
  bool colliding = false;

  bool operator==(const ClassForgetting&) const = default;
};

struct ForgettingProfile {
  std::vector<ClassForgetting> classes;  // base-task classes, ascending
  std::vector<int> excluded;             // classes with a_base = 0

  bool operator==(const ForgettingProfile&) const = default;
};

/// Needs at least two tasks and the post-base-task checkpoint. S_i is scored
/// by that checkpoint over the training data of every later task.
ForgettingProfile forgetting_profile(const data::TaskSequence& sequence, const train::RunRecord& record,
                                     std::span<const int> colliding_base);

/// (S_i, δ_i) pairs of the included classes for one aggregation.
std::pair<std::vector<double>, std::vector<double>> scatter_of(const ForgettingProfile& profile,
                                                               metrics::Aggregation aggregation);

/// Pearson over the included classes of all profiles. Empty when fewer than
/// three points or either side is constant.
std::optional<metrics::CorrelationReport> correlate(std::span<const ForgettingProfile> profiles,
                                                    metrics::Aggregation aggregation,
                                                    std::size_t permutations, std::uint64_t seed);

struct ResultBundle {
  nlohmann::json config;  // echo with defaults resolved
  std::uint64_t seed = 0;
  std::vector<int> colliding_base;
  std::vector<int> colliding_new;
  train::RunRecord record;
  std::optional<ForgettingProfile> profile;
  std::optional<metrics::CorrelationReport> correlation_max;
  std::optional<metrics::CorrelationReport> correlation_mean;

  /// Mean final accuracy over colliding base classes; empty without any.
  std::optional<double> colliding_base_final_accuracy() const;
};

/// Builds the replicate's benchmark and runs it end to end.
ResultBundle run_replicate(const ExperimentConfig& config, std::uint64_t seed,
                           train::RunOptions options = {});

/// Adds profile and correlations for a finished record.
void analyze_bundle(ResultBundle& bundle, const data::TaskSequence& sequence, const MetricsSpec& spec);

nlohmann::json profile_to_json(const ForgettingProfile& p);
ForgettingProfile profile_from_json(const nlohmann::json& j);
nlohmann::json correlation_to_json(const std::optional<metrics::CorrelationReport>& c);

/// Checkpoints are not embedded; they are written next to the bundle.
nlohmann::json bundle_to_json(const ResultBundle& b);
ResultBundle bundle_from_json(const nlohmann::json& j);

/// All-numeric CSV tables of a bundle.
std::string accuracy_csv(const train::RunRecord& r);     // task,class,accuracy
std::string tasks_csv(const train::RunRecord& r);        // task,overall_accuracy,avg_incremental_accuracy
std::string forgetting_csv(const ForgettingProfile& p);  // class,a_base,a_all,delta,s_max,s_mean,colliding
/// Two-column gnuplot data, one "S_i delta_i" line per included class.
std::string scatter_dat(const ForgettingProfile& p, metrics::Aggregation aggregation);

/// Writes bundle.json, the CSV tables, scatter files and model_task<t>.json
/// checkpoints into `dir`.
void write_bundle(const std::filesystem::path& dir, const ResultBundle& b);

/// The output directory: CILAB_OUTPUT_DIR when set and nonempty, otherwise
/// `configured`.
std::filesystem::path resolve_output_dir(const std::string& configured);

}  // namespace cil::experiment
