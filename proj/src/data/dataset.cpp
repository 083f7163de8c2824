#include "cilab/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "cilab/errors.hpp"
#include "cilab/numcore/ops.hpp"
#include "cilab/numcore/rng.hpp"

namespace cil::data {

namespace {

constexpr int kMaxPlacementAttempts = 2000;

std::vector<double> random_unit(std::size_t dim, Rng& rng) {
  std::vector<double> v(dim);
  double n = 0.0;
  do {
    for (double& x : v) x = rng.normal();
    n = l2_norm(v);
  } while (n < 1e-8);
  for (double& x : v) x /= n;
  return v;
}

}  // namespace

Sample LabeledDataset::sample(std::size_t i) const {
  auto r = x.row(i);
  return {std::vector<double>(r.begin(), r.end()), labels[i]};
}

std::vector<std::size_t> LabeledDataset::indices_of(int label) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) out.push_back(i);
  }
  return out;
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
  LabeledDataset out;
  out.x = x.gather_rows(indices);
  out.labels.reserve(indices.size());
  for (auto i : indices) out.labels.push_back(labels[i]);
  return out;
}

LabeledDataset LabeledDataset::filter_classes(std::span<const int> classes) const {
  const std::set<int> keep(classes.begin(), classes.end());
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (keep.contains(labels[i])) idx.push_back(i);
  }
  LabeledDataset out = subset(idx);
  if (out.x.rows() == 0) out.x = Matrix(0, x.cols());
  return out;
}

LabeledDataset LabeledDataset::concat(const LabeledDataset& a, const LabeledDataset& b) {
  LabeledDataset out;
  out.x = Matrix::vstack(a.x, b.x);
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

double ClassPrototypeSet::cosine(int a, int b) const {
  return dot(prototypes.row(static_cast<std::size_t>(a)), prototypes.row(static_cast<std::size_t>(b)));
}

ClassPrototypeSet generate_prototypes(std::size_t n_classes, std::size_t dim,
                                      const std::vector<Collision>& collisions,
                                      std::uint64_t seed) {
  if (dim < 4) throw ConfigError("generate_prototypes: dim must be at least 4");
  std::vector<int> collision_of(n_classes, -1);
  std::set<std::pair<int, int>> designed;
  for (std::size_t c = 0; c < collisions.size(); ++c) {
    const auto& col = collisions[c];
    const auto in_range = [&](int id) { return id >= 0 && static_cast<std::size_t>(id) < n_classes; };
    if (!in_range(col.new_class) || !in_range(col.old_class) || col.new_class == col.old_class) {
      throw ConfigError("collision (" + std::to_string(col.new_class) + ", " +
                        std::to_string(col.old_class) + ") has invalid class ids");
    }
    if (!(col.target_cosine >= 0.0 && col.target_cosine < 1.0)) {
      throw ConfigError("collision target cosine must lie in [0, 1)");
    }
    if (collision_of[static_cast<std::size_t>(col.new_class)] != -1) {
      throw ConfigError("class " + std::to_string(col.new_class) + " is the new side of two collisions");
    }
    collision_of[static_cast<std::size_t>(col.new_class)] = static_cast<int>(c);
    designed.insert(std::minmax(col.new_class, col.old_class));
  }

  Rng rng = Rng::stream(seed, "prototypes");
  Matrix protos(n_classes, dim);
  std::vector<bool> placed(n_classes, false);

  const auto acceptable = [&](int cls, std::span<const double> v) {
    for (std::size_t j = 0; j < n_classes; ++j) {
      if (!placed[j] || designed.contains(std::minmax(cls, static_cast<int>(j)))) continue;
      if (std::abs(dot(v, protos.row(j))) > kMaxUnrelatedCosine) return false;
    }
    return true;
  };
  const auto place = [&](std::size_t cls, const std::vector<double>& v) {
    std::copy(v.begin(), v.end(), protos.row(cls).begin());
    placed[cls] = true;
  };

  for (std::size_t c = 0; c < n_classes; ++c) {
    if (collision_of[c] != -1) continue;
    bool ok = false;
    for (int attempt = 0; attempt < kMaxPlacementAttempts && !ok; ++attempt) {
      auto v = random_unit(dim, rng);
      if (acceptable(static_cast<int>(c), v)) {
        place(c, v);
        ok = true;
      }
    }
    if (!ok) {
      throw ConfigError("generate_prototypes: cannot place " + std::to_string(n_classes) +
                        " classes with |cos| <= 0.5 in dimension " + std::to_string(dim));
    }
  }

  // Collisions may chain (old side is itself a collision's new side), so
  // sweep until no progress.
  std::size_t remaining = collisions.size();
  while (remaining > 0) {
    std::size_t progressed = 0;
    for (const auto& col : collisions) {
      const auto nc = static_cast<std::size_t>(col.new_class);
      const auto oc = static_cast<std::size_t>(col.old_class);
      if (placed[nc] || !placed[oc]) continue;
      const auto base = protos.row(oc);
      const double t = col.target_cosine;
      bool ok = false;
      for (int attempt = 0; attempt < kMaxPlacementAttempts && !ok; ++attempt) {
        auto u = random_unit(dim, rng);
        const double proj = dot(u, base);
        for (std::size_t i = 0; i < dim; ++i) u[i] -= proj * base[i];
        const double un = l2_norm(u);
        if (un < 1e-8) continue;
        std::vector<double> v(dim);
        for (std::size_t i = 0; i < dim; ++i) v[i] = t * base[i] + std::sqrt(1.0 - t * t) * u[i] / un;
        const double vn = l2_norm(v);
        for (double& x : v) x /= vn;
        if (acceptable(col.new_class, v)) {
          place(nc, v);
          ok = true;
        }
      }
      if (!ok) {
        throw ConfigError("generate_prototypes: collision (" + std::to_string(col.new_class) + ", " +
                          std::to_string(col.old_class) + ") is infeasible next to the other prototypes");
      }
      ++progressed;
      --remaining;
    }
    if (progressed == 0) throw ConfigError("generate_prototypes: cyclic collision spec");
  }
  return {std::move(protos), collisions};
}

std::pair<LabeledDataset, LabeledDataset> sample_dataset(const ClassPrototypeSet& prototypes,
                                                         std::size_t n_train_per_class,
                                                         std::size_t n_test_per_class,
                                                         double noise_sigma, std::uint64_t seed) {
  if (!(noise_sigma > 0.0)) throw ConfigError("sample_dataset: noise_sigma must be positive");
  const std::size_t k = prototypes.num_classes(), dim = prototypes.prototypes.cols();
  const auto draw = [&](std::size_t per_class, Rng rng) {
    LabeledDataset d;
    d.x = Matrix(k * per_class, dim);
    d.labels.reserve(k * per_class);
    for (std::size_t c = 0; c < k; ++c) {
      const auto p = prototypes.prototypes.row(c);
      for (std::size_t s = 0; s < per_class; ++s) {
        auto row = d.x.row(c * per_class + s);
        for (std::size_t i = 0; i < dim; ++i) row[i] = p[i] + noise_sigma * rng.normal();
        d.labels.push_back(static_cast<int>(c));
      }
    }
    return d;
  };
  return {draw(n_train_per_class, Rng::stream(seed, "data.train")),
          draw(n_test_per_class, Rng::stream(seed, "data.test"))};
}

int TaskSequence::position_of(int original_class) const {
  auto it = std::find(class_order.begin(), class_order.end(), original_class);
  if (it == class_order.end()) throw ConfigError("class " + std::to_string(original_class) + " not in sequence");
  return static_cast<int>(it - class_order.begin());
}

LabeledDataset TaskSequence::seen_test(std::size_t t) const {
  LabeledDataset out;
  for (std::size_t i = 0; i <= t && i < tasks.size(); ++i) out = LabeledDataset::concat(out, tasks[i].test);
  return out;
}

std::vector<int> TaskSequence::classes_before(std::size_t t) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < t && i < tasks.size(); ++i) {
    out.insert(out.end(), tasks[i].classes.begin(), tasks[i].classes.end());
  }
  return out;
}

std::vector<int> shuffled_class_order(std::size_t n_classes, std::uint64_t shuffle_seed) {
  std::vector<int> order(n_classes);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::stream(shuffle_seed, "shuffle");
  rng.shuffle(order);
  return order;
}

TaskSequence split_tasks(const LabeledDataset& train, const LabeledDataset& test,
                         std::size_t n_classes, std::size_t base, std::size_t increment,
                         std::uint64_t shuffle_seed) {
  if (base == 0 || base > n_classes) {
    throw ConfigError("split_tasks: base size " + std::to_string(base) + " invalid for " +
                      std::to_string(n_classes) + " classes");
  }
  const std::size_t rest = n_classes - base;
  if (rest > 0 && (increment == 0 || rest % increment != 0)) {
    throw ConfigError("split_tasks: " + std::to_string(n_classes) + " classes do not split into " +
                      std::to_string(base) + " + k*" + std::to_string(increment));
  }
  TaskSequence seq;
  seq.class_order = shuffled_class_order(n_classes, shuffle_seed);
  seq.base_size = base;
  seq.increment = increment;

  std::vector<int> position(n_classes);
  for (std::size_t p = 0; p < n_classes; ++p) position[static_cast<std::size_t>(seq.class_order[p])] = static_cast<int>(p);
  const auto remap = [&](const LabeledDataset& d) {
    LabeledDataset r = d;
    for (int& y : r.labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= n_classes) {
        throw ConfigError("split_tasks: label " + std::to_string(y) + " outside [0, " +
                          std::to_string(n_classes) + ")");
      }
      y = position[static_cast<std::size_t>(y)];
    }
    return r;
  };
  const LabeledDataset rtrain = remap(train), rtest = remap(test);

  std::size_t start = 0;
  while (start < n_classes) {
    const std::size_t size = start == 0 ? base : increment;
    Task task;
    for (std::size_t p = start; p < start + size; ++p) task.classes.push_back(static_cast<int>(p));
    task.train = rtrain.filter_classes(task.classes);
    task.test = rtest.filter_classes(task.classes);
    seq.tasks.push_back(std::move(task));
    start += size;
  }
  return seq;
}

}  // namespace cil::data
