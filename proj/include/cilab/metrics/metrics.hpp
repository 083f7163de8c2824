#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cilab/clad/clad.hpp"
#include "cilab/data/dataset.hpp"
#include "cilab/model/model.hpp"

namespace cil::metrics {

/// Accuracy per class id in [0, n_classes): argmax over all K logits, ties to
/// the lowest column. Throws if any class in [0, n_classes) has no test rows.
std::vector<double> per_class_accuracy(const ModelParams& model, const data::LabeledDataset& test,
                                       std::size_t n_classes);

/// Fraction of all test rows classified correctly.
double overall_accuracy(const ModelParams& model, const data::LabeledDataset& test);

/// (A_base − A_all) / A_base; nullopt when A_base = 0.
std::optional<double> normalized_forgetting(double a_base, double a_all);

/// Mean of A_1..A_t. Throws on empty input.
double avg_incremental_accuracy(std::span<const double> per_task_accuracy);

enum class Aggregation { max, mean };

/// S_i for every old class: entry i of S(C) aggregated over later classes C.
/// `later` holds one SimilarityVector per later class, all over the same
/// old-class list.
std::vector<double> aggregate_similarity(std::span<const clad::SimilarityVector> later,
                                         Aggregation aggregation);

/// Computes S(C) with `f1` (logits) for every class present in
/// `later_data`, then aggregates per old class.
std::vector<double> similarity_level(const ModelSnapshot& f1, const data::LabeledDataset& later_data,
                                     std::span<const int> old_classes, Aggregation aggregation);

struct CorrelationReport {
  double pearson_r = 0.0;
  double permutation_p = 1.0;
  std::size_t n = 0;
  std::size_t permutations = 0;
  std::vector<std::pair<double, double>> scatter;
};

inline constexpr std::size_t kDefaultPermutations = 10000;

/// Pearson r with a two-sided permutation p: the fraction of label
/// permutations whose |r'| ≥ |r|. Throws on n < 3 or zero variance.
CorrelationReport pearson(std::span<const double> xs, std::span<const double> ys,
                          std::size_t permutations = kDefaultPermutations, std::uint64_t seed = 0);

/// Plain Pearson coefficient, no significance.
double pearson_r(std::span<const double> xs, std::span<const double> ys);
/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> xs, std::span<const double> ys);
/// |A ∩ B| / |A ∪ B|; 1 for two empty sets.
double jaccard(std::span<const int> a, std::span<const int> b);

double mean(std::span<const double> v);
/// Sample standard deviation (n − 1); 0 for fewer than two values.
double stddev(std::span<const double> v);

}  // namespace cil::metrics
