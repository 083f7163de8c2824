#include "cilab/replay/buffer.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "cilab/errors.hpp"
#include "cilab/numcore/ops.hpp"

namespace cil::replay {

const std::vector<Exemplar>& ReplayBuffer::exemplars(int cls) const {
  auto it = per_class_.find(cls);
  if (it == per_class_.end()) throw Error("replay buffer has no class " + std::to_string(cls));
  return it->second;
}

std::size_t ReplayBuffer::total() const noexcept {
  std::size_t n = 0;
  for (const auto& [cls, list] : per_class_) n += list.size();
  return n;
}

void ReplayBuffer::insert(int cls, std::vector<Exemplar> list) {
  if (per_class_.contains(cls)) {
    throw Error("replay buffer already holds class " + std::to_string(cls));
  }
  if (list.size() > cap_) {
    throw Error("replay buffer: " + std::to_string(list.size()) + " exemplars exceed cap " +
                std::to_string(cap_));
  }
  per_class_.emplace(cls, std::move(list));
}

data::LabeledDataset ReplayBuffer::as_dataset() const {
  data::LabeledDataset d;
  const std::size_t n = total();
  std::size_t dim = 0;
  for (const auto& [cls, list] : per_class_) {
    if (!list.empty()) {
      dim = list.front().features.size();
      break;
    }
  }
  d.x = Matrix(n, dim);
  std::size_t r = 0;
  for (const auto& [cls, list] : per_class_) {
    for (const auto& e : list) {
      std::copy(e.features.begin(), e.features.end(), d.x.row(r).begin());
      d.labels.push_back(e.label);
      ++r;
    }
  }
  return d;
}

std::vector<std::size_t> herding_select(const Matrix& class_features, std::size_t r) {
  const std::size_t n = class_features.rows(), dim = class_features.cols();
  if (n == 0) throw Error("herding_select: empty class");
  if (r == 0) throw ConfigError("herding_select: R must be at least 1");

  std::vector<double> mu(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = class_features.row(i);
    for (std::size_t j = 0; j < dim; ++j) mu[j] += row[j];
  }
  for (double& v : mu) v /= static_cast<double>(n);

  const std::size_t picks = std::min(r, n);
  std::vector<std::size_t> chosen;
  chosen.reserve(picks);
  std::vector<bool> used(n, false);
  std::vector<double> running(dim, 0.0);
  for (std::size_t k = 1; k <= picks; ++k) {
    const double inv_k = 1.0 / static_cast<double>(k);
    std::size_t best = n;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (used[i]) continue;
      auto row = class_features.row(i);
      double d2 = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double diff = mu[j] - (running[j] + row[j]) * inv_k;
        d2 += diff * diff;
      }
      if (d2 < best_dist) {
        best_dist = d2;
        best = i;
      }
    }
    used[best] = true;
    chosen.push_back(best);
    auto row = class_features.row(best);
    for (std::size_t j = 0; j < dim; ++j) running[j] += row[j];
  }
  return chosen;
}

Matrix l2_normalize_rows(const Matrix& m) {
  Matrix out = m;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    const double n = l2_norm(row);
    if (n > kDegenerateNorm) {
      for (double& v : row) v /= n;
    }
  }
  return out;
}

void update_buffer(ReplayBuffer& buffer, const data::LabeledDataset& task_train,
                   std::span<const int> task_classes, const ModelParams& model,
                   bool normalize_features) {
  for (int cls : task_classes) {
    if (buffer.contains(cls)) {
      throw Error("update_buffer: class " + std::to_string(cls) + " is already buffered");
    }
  }
  if (buffer.cap() == 0) return;
  for (int cls : task_classes) {
    const auto idx = task_train.indices_of(cls);
    if (idx.empty()) throw Error("update_buffer: class " + std::to_string(cls) + " has no samples");
    const Matrix xs = task_train.x.gather_rows(idx);
    Matrix feats = features(model, xs);
    if (normalize_features) feats = l2_normalize_rows(feats);
    const auto picks = herding_select(feats, buffer.cap());
    std::vector<Exemplar> list;
    list.reserve(picks.size());
    for (auto p : picks) {
      auto row = xs.row(p);
      list.push_back({std::vector<double>(row.begin(), row.end()), cls, idx[p]});
    }
    buffer.insert(cls, std::move(list));
  }
}

std::size_t Batch::exemplar_count() const noexcept {
  std::size_t n = 0;
  for (const auto& e : exemplar) n += e.has_value() ? 1 : 0;
  return n;
}

std::vector<Batch> joint_batches(const data::LabeledDataset& task_data, const ReplayBuffer& buffer,
                                 std::size_t batch_size, Rng& rng) {
  if (batch_size < 2) throw ConfigError("joint_batches: batch_size must be at least 2");
  // Union index space: [0, |D_t|) are task rows, the rest are buffer slots.
  std::vector<ExemplarRef> refs;
  for (const auto& [cls, list] : buffer.classes()) {
    for (std::size_t s = 0; s < list.size(); ++s) refs.push_back({cls, s});
  }
  const std::size_t n_task = task_data.size();
  std::vector<std::size_t> order(n_task + refs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);

  const std::size_t dim = task_data.dim();
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t m = std::min(batch_size, order.size() - start);
    Batch b;
    b.x = Matrix(m, dim);
    b.labels.reserve(m);
    b.exemplar.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t u = order[start + i];
      auto dst = b.x.row(i);
      if (u < n_task) {
        auto src = task_data.x.row(u);
        std::copy(src.begin(), src.end(), dst.begin());
        b.labels.push_back(task_data.labels[u]);
        b.exemplar.emplace_back(std::nullopt);
      } else {
        const auto& ref = refs[u - n_task];
        const auto& ex = buffer.exemplars(ref.cls)[ref.slot];
        if (ex.features.size() != dim) throw DimensionError("buffer exemplar dimension mismatch");
        std::copy(ex.features.begin(), ex.features.end(), dst.begin());
        b.labels.push_back(ex.label);
        b.exemplar.emplace_back(ref);
      }
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace cil::replay
