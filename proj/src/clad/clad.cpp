#include "cilab/clad/clad.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cilab/errors.hpp"
#include "cilab/numcore/ops.hpp"

namespace cil::clad {

std::string_view to_string(Measurement m) {
  switch (m) {
    case Measurement::logits: return "logits";
    case Measurement::cosine: return "cosine";
    case Measurement::oracle_logits: return "oracle_logits";
  }
  return "?";
}

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::top: return "top";
    case Strategy::smallest: return "smallest";
    case Strategy::random: return "random";
  }
  return "?";
}

std::string_view to_string(RdPairing p) {
  switch (p) {
    case RdPairing::text: return "text";
    case RdPairing::literal: return "literal";
  }
  return "?";
}

Measurement parse_measurement(std::string_view s) {
  if (s == "logits") return Measurement::logits;
  if (s == "cosine") return Measurement::cosine;
  if (s == "oracle_logits" || s == "oracle") return Measurement::oracle_logits;
  throw ConfigError("unknown measurement '" + std::string(s) + "'");
}

Strategy parse_strategy(std::string_view s) {
  if (s == "top") return Strategy::top;
  if (s == "smallest") return Strategy::smallest;
  if (s == "random") return Strategy::random;
  throw ConfigError("unknown strategy '" + std::string(s) + "'");
}

RdPairing parse_pairing(std::string_view s) {
  if (s == "text") return RdPairing::text;
  if (s == "literal") return RdPairing::literal;
  throw ConfigError("unknown rd_pairing '" + std::string(s) + "'");
}

namespace {

std::vector<double> column_mean(const Matrix& m) {
  std::vector<double> mu(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < mu.size(); ++j) mu[j] += r[j];
  }
  for (double& v : mu) v /= static_cast<double>(m.rows());
  return mu;
}

}  // namespace

SimilarityVector forgetting_prediction(const ModelSnapshot& model, int new_class,
                                       const Matrix& class_x, std::span<const int> old_classes,
                                       Measurement measurement,
                                       const replay::ReplayBuffer* buffer) {
  if (class_x.rows() == 0) {
    throw Error("forgetting_prediction: class " + std::to_string(new_class) + " has no samples");
  }
  SimilarityVector sim{new_class, {old_classes.begin(), old_classes.end()}, {}, measurement};
  sim.scores.reserve(old_classes.size());

  if (measurement == Measurement::cosine) {
    if (buffer == nullptr) throw Error("forgetting_prediction: cosine measurement needs a buffer");
    const auto mean_new = column_mean(model.features(class_x));
    for (int old : old_classes) {
      if (!buffer->contains(old) || buffer->exemplars(old).empty()) {
        throw Error("forgetting_prediction: no buffer exemplars for old class " + std::to_string(old));
      }
      const auto& list = buffer->exemplars(old);
      Matrix ex(list.size(), list.front().features.size());
      for (std::size_t i = 0; i < list.size(); ++i) {
        std::copy(list[i].features.begin(), list[i].features.end(), ex.row(i).begin());
      }
      const auto mean_old = column_mean(model.features(ex));
      sim.scores.push_back(cosine_sim(mean_new, mean_old).value);
    }
    return sim;
  }

  const Matrix z = model.logits(class_x);
  const auto mean = column_mean(z);
  for (int old : old_classes) {
    if (old < 0 || static_cast<std::size_t>(old) >= mean.size()) {
      throw Error("forgetting_prediction: old class " + std::to_string(old) +
                  " not covered by a head with " + std::to_string(mean.size()) + " classes");
    }
    sim.scores.push_back(mean[static_cast<std::size_t>(old)]);
  }
  return sim;
}

std::size_t conflict_count(std::size_t n_old, double proportion) {
  if (!(proportion > 0.0 && proportion <= 1.0)) {
    throw ConfigError("conflict proportion must lie in (0, 1]");
  }
  if (n_old == 0) return 0;
  // Tolerance keeps e.g. 0.1·30 = 3.0000000000000004 at 3.
  const auto k = static_cast<std::size_t>(std::ceil(proportion * static_cast<double>(n_old) - 1e-9));
  return std::clamp<std::size_t>(k, 1, n_old);
}

std::vector<int> select_conflicts(const SimilarityVector& sim, double proportion,
                                  Strategy strategy, Rng& rng) {
  const std::size_t n = sim.old_classes.size();
  const std::size_t k = conflict_count(n, proportion);
  if (k == 0) return {};
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  switch (strategy) {
    case Strategy::top:
      std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (sim.scores[a] != sim.scores[b]) return sim.scores[a] > sim.scores[b];
        return sim.old_classes[a] < sim.old_classes[b];
      });
      break;
    case Strategy::smallest:
      std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (sim.scores[a] != sim.scores[b]) return sim.scores[a] < sim.scores[b];
        return sim.old_classes[a] < sim.old_classes[b];
      });
      break;
    case Strategy::random:
      // Partial Fisher-Yates from the front.
      for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
        std::swap(idx[i], idx[j]);
      }
      break;
  }
  std::vector<int> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(sim.old_classes[idx[i]]);
  return out;
}

const std::vector<int>* ConflictMap::conflicts_of(int cls) const {
  auto it = conflicts.find(cls);
  return it == conflicts.end() ? nullptr : &it->second;
}

ConflictMap build_conflict_map(const ModelSnapshot& fp_model, const data::LabeledDataset& task_train,
                               std::span<const int> new_classes, std::span<const int> old_classes,
                               const ConflictOptions& options, const replay::ReplayBuffer* buffer,
                               Rng& rng) {
  ConflictMap map;
  map.proportion = options.proportion;
  map.strategy = options.strategy;
  map.measurement = options.measurement;
  if (old_classes.empty()) return map;
  for (int cls : new_classes) {
    const auto idx = task_train.indices_of(cls);
    auto sim = forgetting_prediction(fp_model, cls, task_train.x.gather_rows(idx), old_classes,
                                     options.measurement, buffer);
    map.conflicts[cls] = select_conflicts(sim, options.proportion, options.strategy, rng);
    map.similarities.push_back(std::move(sim));
  }
  return map;
}

RdTermLoss loss_online(std::span<const double> x, std::span<const std::span<const double>> partners) {
  RdTermLoss out;
  out.d_x.assign(x.size(), 0.0);
  if (partners.empty()) return out;
  const double inv = 1.0 / static_cast<double>(partners.size());
  out.d_partners.reserve(partners.size());
  for (const auto& e : partners) {
    auto c = cosine_sim(x, e);
    out.loss += 1.0 + c.value;
    for (std::size_t i = 0; i < x.size(); ++i) out.d_x[i] += c.du[i] * inv;
    for (double& v : c.dv) v *= inv;
    out.d_partners.push_back(std::move(c.dv));
  }
  out.loss *= inv;
  return out;
}

RdTermLoss loss_offline(std::span<const double> x, std::span<const std::span<const double>> frozen) {
  RdTermLoss out;
  out.d_x.assign(x.size(), 0.0);
  if (frozen.empty()) return out;
  const double inv = 1.0 / static_cast<double>(frozen.size());
  for (const auto& e : frozen) {
    auto c = cosine_sim(x, e);
    out.loss += 1.0 + c.value;
    for (std::size_t i = 0; i < x.size(); ++i) out.d_x[i] += c.du[i] * inv;
  }
  out.loss *= inv;
  return out;
}

FrozenFeatureCache FrozenFeatureCache::build(const ModelSnapshot& frozen,
                                             const replay::ReplayBuffer& buffer) {
  FrozenFeatureCache cache;
  for (const auto& [cls, list] : buffer.classes()) {
    if (list.empty()) continue;
    Matrix x(list.size(), list.front().features.size());
    for (std::size_t i = 0; i < list.size(); ++i) {
      std::copy(list[i].features.begin(), list[i].features.end(), x.row(i).begin());
    }
    cache.per_class_.emplace(cls, frozen.features(x));
  }
  return cache;
}

const Matrix& FrozenFeatureCache::of(int cls) const {
  auto it = per_class_.find(cls);
  if (it == per_class_.end()) throw Error("frozen feature cache has no class " + std::to_string(cls));
  return it->second;
}

std::span<const double> FrozenFeatureCache::feature(const replay::ExemplarRef& ref) const {
  const Matrix& m = of(ref.cls);
  if (ref.slot >= m.rows()) throw Error("frozen feature cache: slot out of range");
  return m.row(ref.slot);
}

RdPlan plan_disentanglement(const replay::Batch& batch, const ConflictMap& map,
                            const FrozenFeatureCache& cache, const replay::ReplayBuffer& buffer,
                            RdPairing pairing) {
  RdPlan plan;
  if (map.empty()) return plan;

  std::map<int, std::vector<std::size_t>> batch_rows_of;  // exemplar class → batch rows
  for (std::size_t j = 0; j < batch.size(); ++j) {
    if (batch.exemplar[j]) batch_rows_of[batch.exemplar[j]->cls].push_back(j);
  }

  // literal pairing: forward every needed conflict class's exemplars live.
  std::map<int, std::pair<std::size_t, std::size_t>> aux_range;  // class → (first row, count)
  if (pairing == RdPairing::literal) {
    std::vector<int> needed;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (batch.exemplar[i]) continue;
      if (const auto* list = map.conflicts_of(batch.labels[i])) needed.insert(needed.end(), list->begin(), list->end());
    }
    std::sort(needed.begin(), needed.end());
    needed.erase(std::unique(needed.begin(), needed.end()), needed.end());
    data::LabeledDataset aux;
    aux.x = Matrix(0, batch.x.cols());
    for (int cls : needed) {
      if (!buffer.contains(cls)) continue;
      const auto& list = buffer.exemplars(cls);
      aux_range[cls] = {batch.size() + aux.size(), list.size()};
      for (const auto& e : list) {
        aux.x = Matrix::vstack(aux.x, Matrix::row_vector(e.features));
        aux.labels.push_back(e.label);
      }
    }
    plan.aux_inputs = std::move(aux.x);
  }

  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch.exemplar[i]) continue;
    const auto* list = map.conflicts_of(batch.labels[i]);
    if (list == nullptr) continue;
    RdTerm term;
    term.row = i;
    for (int cls : *list) {
      if (pairing == RdPairing::text) {
        if (auto it = batch_rows_of.find(cls); it != batch_rows_of.end()) {
          term.online_rows.insert(term.online_rows.end(), it->second.begin(), it->second.end());
        }
        if (cache.contains(cls)) {
          const Matrix& f = cache.of(cls);
          for (std::size_t r = 0; r < f.rows(); ++r) term.offline.push_back(f.row(r));
        }
      } else {
        if (auto it = aux_range.find(cls); it != aux_range.end()) {
          for (std::size_t r = 0; r < it->second.second; ++r) term.online_rows.push_back(it->second.first + r);
        }
        if (auto it = batch_rows_of.find(cls); it != batch_rows_of.end()) {
          for (auto j : it->second) term.offline.push_back(cache.feature(*batch.exemplar[j]));
        }
      }
    }
    if (!term.online_rows.empty() || !term.offline.empty()) plan.terms.push_back(std::move(term));
  }
  return plan;
}

namespace {

bool degenerate(std::span<const double> v) { return l2_norm(v) <= kDegenerateNorm; }

}  // namespace

CladResult clad_loss_from_features(const Matrix& live_features, std::span<const RdTerm> terms,
                                   bool online_exemplar_grad) {
  CladResult out;
  out.dfeatures = Matrix(live_features.rows(), live_features.cols());

  // A dead (all-zero) post-ReLU feature has no direction and no gradient
  // path, so pairs touching one are dropped before averaging.
  struct Kept {
    std::size_t row;
    std::vector<std::size_t> online;
    std::vector<std::span<const double>> offline;
  };
  std::vector<Kept> kept;
  kept.reserve(terms.size());
  for (const auto& t : terms) {
    if (degenerate(live_features.row(t.row))) continue;
    Kept k{t.row, {}, {}};
    for (auto r : t.online_rows) {
      if (!degenerate(live_features.row(r))) k.online.push_back(r);
    }
    for (const auto& f : t.offline) {
      if (!degenerate(f)) k.offline.push_back(f);
    }
    out.online_count += k.online.empty() ? 0 : 1;
    out.offline_count += k.offline.empty() ? 0 : 1;
    kept.push_back(std::move(k));
  }
  const double inv_on = out.online_count ? 1.0 / static_cast<double>(out.online_count) : 0.0;
  const double inv_off = out.offline_count ? 1.0 / static_cast<double>(out.offline_count) : 0.0;

  std::vector<std::span<const double>> partners;
  for (const auto& t : kept) {
    const auto x = live_features.row(t.row);
    auto dx = out.dfeatures.row(t.row);
    if (!t.online.empty()) {
      partners.clear();
      for (auto r : t.online) partners.push_back(live_features.row(r));
      const auto on = loss_online(x, partners);
      out.online_loss += on.loss * inv_on;
      for (std::size_t k = 0; k < dx.size(); ++k) dx[k] += on.d_x[k] * inv_on;
      if (online_exemplar_grad) {
        for (std::size_t p = 0; p < t.online.size(); ++p) {
          auto dp = out.dfeatures.row(t.online[p]);
          for (std::size_t k = 0; k < dp.size(); ++k) dp[k] += on.d_partners[p][k] * inv_on;
        }
      }
    }
    if (!t.offline.empty()) {
      const auto off = loss_offline(x, t.offline);
      out.offline_loss += off.loss * inv_off;
      for (std::size_t k = 0; k < dx.size(); ++k) dx[k] += off.d_x[k] * inv_off;
    }
  }
  out.loss = out.online_loss + out.offline_loss;
  return out;
}

CladGradient clad_loss(const replay::Batch& batch, const ConflictMap& map, const ModelParams& live,
                       const FrozenFeatureCache& cache, const replay::ReplayBuffer& buffer,
                       const RdOptions& options) {
  RdPlan plan = plan_disentanglement(batch, map, cache, buffer, options.pairing);
  const Matrix inputs = Matrix::vstack(batch.x, plan.aux_inputs);
  const ForwardTrace trace = forward(live, inputs, false);
  CladGradient g;
  g.result = clad_loss_from_features(trace.features, plan.terms, options.online_exemplar_grad);
  g.grads = backward(live, trace, nullptr, &g.result.dfeatures);
  return g;
}

}  // namespace cil::clad
