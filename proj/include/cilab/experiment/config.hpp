#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "cilab/data/dataset.hpp"
#include "cilab/metrics/metrics.hpp"
#include "cilab/model/model.hpp"
#include "cilab/train/trainer.hpp"

namespace cil::experiment {

inline constexpr int kConfigFormatVersion = 1;

/// Designates `count` collision pairs after the class shuffle: the first
/// `count` base-task classes each get a later-task partner, partners spread
/// round-robin over the later tasks.
struct AutoCollisions {
  std::size_t count = 4;
  double cosine = 0.9;

  bool operator==(const AutoCollisions&) const = default;
};

struct SyntheticSpec {
  std::size_t n_classes = 20;
  std::size_t dim = 32;
  std::size_t n_train_per_class = 200;
  std::size_t n_test_per_class = 100;
  double noise_sigma = 0.12;
  std::vector<data::Collision> collisions;  // explicit, in original class ids
  std::optional<AutoCollisions> auto_collisions = AutoCollisions{};

  bool operator==(const SyntheticSpec&) const = default;
};

struct DataSpec {
  enum class Source { synthetic, csv };
  Source source = Source::synthetic;
  SyntheticSpec synthetic;
  std::string csv_train;
  std::string csv_test;

  bool operator==(const DataSpec&) const = default;
};

struct SplitSpec {
  std::size_t base = 10;
  std::size_t increment = 5;
  std::uint64_t shuffle_seed = 1993;

  bool operator==(const SplitSpec&) const = default;
};

struct MetricsSpec {
  metrics::Aggregation aggregation = metrics::Aggregation::max;
  std::size_t permutations = metrics::kDefaultPermutations;

  bool operator==(const MetricsSpec&) const = default;
};

enum class Method { naive, clad };

struct ExperimentConfig {
  DataSpec data;
  SplitSpec split;
  ModelConfig model;
  Method method = Method::clad;
  train::TrainConfig train;  // train.seed is overwritten per replicate
  MetricsSpec metrics;
  std::string output_dir = "runs/default";
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<std::uint64_t> ablation_seeds{1, 2, 3};

  /// TrainConfig for one replicate: seed set, η forced to 0 for naive.
  train::TrainConfig train_for_seed(std::uint64_t seed) const;
  void validate() const;
};

/// Library defaults: 20-class synthetic benchmark, B=10, S=5, R=20, η=2,
/// P=0.1, top/logits/text, 60 epochs, batch 128, SGD 0.1/0.9/5e-4.
ExperimentConfig default_config();

/// Strict parse: unknown keys and wrong types throw ConfigError. Missing
/// keys take the defaults above.
ExperimentConfig config_from_json(const nlohmann::json& j);
/// Full echo with every default resolved.
nlohmann::json config_to_json(const ExperimentConfig& c);
ExperimentConfig load_config(const std::filesystem::path& path);

/// One replicate's data, split and collision bookkeeping.
struct Benchmark {
  data::TaskSequence sequence;
  std::optional<data::ClassPrototypeSet> prototypes;
  std::vector<data::Collision> collisions;  // original class ids
  std::vector<int> colliding_base;          // class positions (labels in `sequence`)
  std::vector<int> colliding_new;
};

/// Builds the replicate's benchmark. Synthetic data is drawn from `seed`;
/// CSV data is fixed across seeds.
Benchmark build_benchmark(const ExperimentConfig& config, std::uint64_t seed);

/// Resolves auto collisions into explicit pairs of original class ids.
std::vector<data::Collision> resolve_collisions(const SyntheticSpec& spec, const SplitSpec& split);

std::string_view to_string(Method m);
Method parse_method(std::string_view s);
std::string_view to_string(metrics::Aggregation a);
metrics::Aggregation parse_aggregation(std::string_view s);

}  // namespace cil::experiment
