#include "cilab/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "cilab/errors.hpp"
#include "cilab/numcore/rng.hpp"

namespace cil::metrics {

namespace {

std::vector<int> predictions(const ModelParams& model, const data::LabeledDataset& test) {
  const Matrix z = logits(model, test.x);
  std::vector<int> pred(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    auto r = z.row(i);
    pred[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return pred;
}

}  // namespace

std::vector<double> per_class_accuracy(const ModelParams& model, const data::LabeledDataset& test,
                                       std::size_t n_classes) {
  const auto pred = predictions(model, test);
  std::vector<std::size_t> correct(n_classes, 0), total(n_classes, 0);
  for (std::size_t i = 0; i < test.size(); ++i) {
    const int y = test.labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= n_classes) {
      throw Error("per_class_accuracy: test label " + std::to_string(y) + " is not a seen class");
    }
    ++total[static_cast<std::size_t>(y)];
    if (pred[i] == y) ++correct[static_cast<std::size_t>(y)];
  }
  std::vector<double> acc(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (total[c] == 0) throw Error("per_class_accuracy: class " + std::to_string(c) + " has no test samples");
    acc[c] = static_cast<double>(correct[c]) / static_cast<double>(total[c]);
  }
  return acc;
}

double overall_accuracy(const ModelParams& model, const data::LabeledDataset& test) {
  if (test.size() == 0) throw Error("overall_accuracy: empty test set");
  const auto pred = predictions(model, test);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) correct += pred[i] == test.labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

std::optional<double> normalized_forgetting(double a_base, double a_all) {
  if (!(a_base > 0.0)) return std::nullopt;
  return (a_base - a_all) / a_base;
}

double avg_incremental_accuracy(std::span<const double> per_task_accuracy) {
  if (per_task_accuracy.empty()) throw Error("avg_incremental_accuracy: no tasks");
  return mean(per_task_accuracy);
}

std::vector<double> aggregate_similarity(std::span<const clad::SimilarityVector> later,
                                         Aggregation aggregation) {
  if (later.empty()) return {};
  const std::size_t n_old = later.front().scores.size();
  std::vector<double> out(n_old, aggregation == Aggregation::max ? -INFINITY : 0.0);
  for (const auto& sim : later) {
    if (sim.scores.size() != n_old || sim.old_classes != later.front().old_classes) {
      throw Error("aggregate_similarity: similarity vectors over different old classes");
    }
    for (std::size_t i = 0; i < n_old; ++i) {
      if (aggregation == Aggregation::max) {
        out[i] = std::max(out[i], sim.scores[i]);
      } else {
        out[i] += sim.scores[i];
      }
    }
  }
  if (aggregation == Aggregation::mean) {
    for (double& v : out) v /= static_cast<double>(later.size());
  }
  return out;
}

std::vector<double> similarity_level(const ModelSnapshot& f1, const data::LabeledDataset& later_data,
                                     std::span<const int> old_classes, Aggregation aggregation) {
  const std::set<int> classes(later_data.labels.begin(), later_data.labels.end());
  std::vector<clad::SimilarityVector> sims;
  for (int c : classes) {
    const auto idx = later_data.indices_of(c);
    sims.push_back(clad::forgetting_prediction(f1, c, later_data.x.gather_rows(idx), old_classes,
                                               clad::Measurement::logits));
  }
  return aggregate_similarity(sims, aggregation);
}

double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double stddev(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

double pearson_r(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw DimensionError("pearson: length mismatch");
  if (xs.size() < 3) throw Error("pearson: need at least 3 points");
  const double mx = mean(xs), my = mean(ys);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) throw NumericalError("pearson: zero variance, correlation undefined");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

CorrelationReport pearson(std::span<const double> xs, std::span<const double> ys,
                          std::size_t permutations, std::uint64_t seed) {
  CorrelationReport rep;
  rep.pearson_r = pearson_r(xs, ys);
  rep.n = xs.size();
  rep.permutations = permutations;
  for (std::size_t i = 0; i < xs.size(); ++i) rep.scatter.emplace_back(xs[i], ys[i]);
  if (permutations == 0) return rep;

  // Tiny slack so permutations reproducing r exactly (up to summation order) count.
  const double threshold = std::abs(rep.pearson_r) - 1e-12;
  std::vector<double> shuffled(ys.begin(), ys.end());
  Rng rng = Rng::stream(seed, "permutation");
  std::size_t extreme = 0;
  for (std::size_t p = 0; p < permutations; ++p) {
    rng.shuffle(shuffled);
    if (std::abs(pearson_r(xs, shuffled)) >= threshold) ++extreme;
  }
  rep.permutation_p = static_cast<double>(extreme) / static_cast<double>(permutations);
  return rep;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = r;
    i = j + 1;
  }
  return rank;
}

}  // namespace

double spearman(std::span<const double> xs, std::span<const double> ys) {
  const auto rx = average_ranks(xs), ry = average_ranks(ys);
  return pearson_r(rx, ry);
}

double jaccard(std::span<const int> a, std::span<const int> b) {
  const std::set<int> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::size_t inter = 0;
  for (int x : sa) inter += sb.contains(x) ? 1 : 0;
  const std::size_t uni = sa.size() + sb.size() - inter;
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace cil::metrics
