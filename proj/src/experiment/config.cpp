#include "cilab/experiment/config.hpp"

#include <fstream>
#include <set>

#include "cilab/data/csv.hpp"
#include "cilab/errors.hpp"

namespace cil::experiment {

using nlohmann::json;

namespace {

/// Reads keys from one JSON object and rejects any key nobody asked for.
class StrictObject {
 public:
  StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  void read_count(const char* key, std::size_t& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!it->is_number_unsigned()) throw ConfigError(path_ + "." + key + ": expected a non-negative integer");
    out = it->get<std::size_t>();
  }

  void read_number(const char* key, double& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!it->is_number()) throw ConfigError(path_ + "." + key + ": expected a number");
    out = it->get<double>();
  }

  void read_seed(const char* key, std::uint64_t& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!it->is_number_unsigned()) throw ConfigError(path_ + "." + key + ": expected a non-negative integer");
    out = it->get<std::uint64_t>();
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string path(const char* key) const { return path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.contains(it.key())) throw ConfigError(path_ + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::vector<std::uint64_t> read_seed_list(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) throw ConfigError(path + ": expected a nonempty array of seeds");
  std::vector<std::uint64_t> out;
  for (const auto& v : j) {
    if (!v.is_number_unsigned()) throw ConfigError(path + ": seeds are non-negative integers");
    out.push_back(v.get<std::uint64_t>());
  }
  return out;
}

}  // namespace

std::string_view to_string(Method m) { return m == Method::naive ? "naive" : "clad"; }

Method parse_method(std::string_view s) {
  if (s == "naive") return Method::naive;
  if (s == "clad") return Method::clad;
  throw ConfigError("unknown method '" + std::string(s) + "'");
}

std::string_view to_string(metrics::Aggregation a) {
  return a == metrics::Aggregation::max ? "max" : "mean";
}

metrics::Aggregation parse_aggregation(std::string_view s) {
  if (s == "max") return metrics::Aggregation::max;
  if (s == "mean") return metrics::Aggregation::mean;
  throw ConfigError("unknown aggregation '" + std::string(s) + "'");
}

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.train.eta = 2.0;
  c.train.exemplars_per_class = 20;
  return c;
}

train::TrainConfig ExperimentConfig::train_for_seed(std::uint64_t seed) const {
  train::TrainConfig t = train;
  t.seed = seed;
  if (method == Method::naive) t.eta = 0.0;
  return t;
}

void ExperimentConfig::validate() const {
  model.validate();
  train.validate();
  if (seeds.empty()) throw ConfigError("seeds must be nonempty");
  if (ablation_seeds.empty()) throw ConfigError("ablation_seeds must be nonempty");
  if (metrics.permutations == 0) throw ConfigError("metrics.permutations must be positive");
  if (data.source == DataSpec::Source::synthetic) {
    const auto& s = data.synthetic;
    if (s.dim != model.input_dim) {
      throw ConfigError("data.synthetic.dim (" + std::to_string(s.dim) + ") must equal model.input_dim (" +
                        std::to_string(model.input_dim) + ")");
    }
    if (s.n_train_per_class == 0 || s.n_test_per_class == 0) {
      throw ConfigError("data.synthetic: per-class sample counts must be positive");
    }
    if (split.base > s.n_classes) throw ConfigError("split.base exceeds the number of classes");
  } else if (data.csv_train.empty() || data.csv_test.empty()) {
    throw ConfigError("data.csv: train and test paths are required");
  }
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c = default_config();
  StrictObject root(j, "config");
  int version = kConfigFormatVersion;
  root.read("format_version", version);
  if (version > kConfigFormatVersion) {
    throw ConfigError("config format_version " + std::to_string(version) + " is newer than supported (" +
                      std::to_string(kConfigFormatVersion) + ")");
  }

  if (const json* d = root.child("data")) {
    StrictObject data(*d, root.path("data"));
    std::string source = "synthetic";
    data.read("source", source);
    if (source == "synthetic") {
      c.data.source = DataSpec::Source::synthetic;
    } else if (source == "csv") {
      c.data.source = DataSpec::Source::csv;
    } else {
      throw ConfigError("config.data.source: expected 'synthetic' or 'csv'");
    }
    if (const json* s = data.child("synthetic")) {
      StrictObject syn(*s, data.path("synthetic"));
      auto& sp = c.data.synthetic;
      syn.read_count("n_classes", sp.n_classes);
      syn.read_count("dim", sp.dim);
      syn.read_count("n_train_per_class", sp.n_train_per_class);
      syn.read_count("n_test_per_class", sp.n_test_per_class);
      syn.read_number("noise_sigma", sp.noise_sigma);
      if (const json* cols = syn.child("collisions")) {
        if (!cols->is_array()) throw ConfigError(syn.path("collisions") + ": expected an array");
        sp.collisions.clear();
        for (const auto& cj : *cols) {
          StrictObject co(cj, syn.path("collisions[]"));
          data::Collision col;
          co.read("new", col.new_class);
          co.read("old", col.old_class);
          co.read_number("cosine", col.target_cosine);
          co.finish();
          sp.collisions.push_back(col);
        }
      }
      if (const json* a = syn.child("auto_collisions")) {
        if (a->is_null()) {
          sp.auto_collisions.reset();
        } else {
          StrictObject ao(*a, syn.path("auto_collisions"));
          AutoCollisions ac;
          ao.read_count("count", ac.count);
          ao.read_number("cosine", ac.cosine);
          ao.finish();
          sp.auto_collisions = ac;
        }
      }
      syn.finish();
    }
    if (const json* s = data.child("csv")) {
      StrictObject csv(*s, data.path("csv"));
      csv.read("train", c.data.csv_train);
      csv.read("test", c.data.csv_test);
      csv.finish();
    }
    data.finish();
  }

  if (const json* s = root.child("split")) {
    StrictObject sp(*s, root.path("split"));
    sp.read_count("base", c.split.base);
    sp.read_count("increment", c.split.increment);
    sp.read_seed("shuffle_seed", c.split.shuffle_seed);
    sp.finish();
  }

  if (const json* m = root.child("model")) {
    StrictObject mo(*m, root.path("model"));
    mo.read_count("input_dim", c.model.input_dim);
    mo.read("hidden_dims", c.model.hidden_dims);
    mo.read_count("feature_dim", c.model.feature_dim);
    std::string act = "relu";
    mo.read("activation", act);
    if (act != "relu") throw ConfigError("config.model.activation: only 'relu' is supported");
    mo.finish();
  }

  std::string method(to_string(c.method));
  root.read("method", method);
  c.method = parse_method(method);

  if (const json* t = root.child("train")) {
    StrictObject tr(*t, root.path("train"));
    auto& tc = c.train;
    tr.read_count("epochs_per_task", tc.epochs_per_task);
    tr.read_count("batch_size", tc.batch_size);
    tr.read_number("lr", tc.lr.initial);
    tr.read("lr_milestones", tc.lr.milestones);
    tr.read_number("lr_decay", tc.lr.factor);
    tr.read_number("momentum", tc.momentum);
    tr.read_number("weight_decay", tc.weight_decay);
    std::string constraint(train::to_string(tc.constraint));
    tr.read("additional_constraint", constraint);
    tc.constraint = train::parse_constraint(constraint);
    tr.read_number("lambda", tc.lambda);
    tr.read_number("temperature", tc.temperature);
    tr.finish();
  }

  if (const json* cl = root.child("clad")) {
    StrictObject co(*cl, root.path("clad"));
    auto& tc = c.train;
    co.read_number("eta", tc.eta);
    co.read_number("proportion", tc.conflict.proportion);
    std::string strategy(clad::to_string(tc.conflict.strategy));
    std::string measurement(clad::to_string(tc.conflict.measurement));
    std::string pairing(clad::to_string(tc.rd.pairing));
    co.read("strategy", strategy);
    co.read("measurement", measurement);
    co.read("rd_pairing", pairing);
    co.read("online_exemplar_grad", tc.rd.online_exemplar_grad);
    tc.conflict.strategy = clad::parse_strategy(strategy);
    tc.conflict.measurement = clad::parse_measurement(measurement);
    tc.rd.pairing = clad::parse_pairing(pairing);
    co.finish();
  }

  if (const json* r = root.child("replay")) {
    StrictObject re(*r, root.path("replay"));
    re.read_count("exemplars_per_class", c.train.exemplars_per_class);
    re.read("herding_normalize", c.train.herding_normalize);
    re.finish();
  }

  if (const json* m = root.child("metrics")) {
    StrictObject me(*m, root.path("metrics"));
    std::string agg(to_string(c.metrics.aggregation));
    me.read("aggregation", agg);
    c.metrics.aggregation = parse_aggregation(agg);
    me.read_count("permutations", c.metrics.permutations);
    me.finish();
  }

  root.read("output_dir", c.output_dir);
  if (const json* s = root.child("seeds")) c.seeds = read_seed_list(*s, root.path("seeds"));
  if (const json* s = root.child("ablation_seeds")) c.ablation_seeds = read_seed_list(*s, root.path("ablation_seeds"));
  root.finish();
  c.validate();
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["format_version"] = kConfigFormatVersion;
  const auto& sp = c.data.synthetic;
  json cols = json::array();
  for (const auto& col : sp.collisions) {
    cols.push_back({{"new", col.new_class}, {"old", col.old_class}, {"cosine", col.target_cosine}});
  }
  json syn = {{"n_classes", sp.n_classes},
              {"dim", sp.dim},
              {"n_train_per_class", sp.n_train_per_class},
              {"n_test_per_class", sp.n_test_per_class},
              {"noise_sigma", sp.noise_sigma},
              {"collisions", cols}};
  syn["auto_collisions"] = sp.auto_collisions
                               ? json{{"count", sp.auto_collisions->count}, {"cosine", sp.auto_collisions->cosine}}
                               : json(nullptr);
  j["data"] = {{"source", c.data.source == DataSpec::Source::synthetic ? "synthetic" : "csv"},
               {"synthetic", syn},
               {"csv", {{"train", c.data.csv_train}, {"test", c.data.csv_test}}}};
  j["split"] = {{"base", c.split.base}, {"increment", c.split.increment}, {"shuffle_seed", c.split.shuffle_seed}};
  j["model"] = {{"input_dim", c.model.input_dim},
                {"hidden_dims", c.model.hidden_dims},
                {"feature_dim", c.model.feature_dim},
                {"activation", "relu"}};
  j["method"] = std::string(to_string(c.method));
  const auto& t = c.train;
  j["train"] = {{"epochs_per_task", t.epochs_per_task},
                {"batch_size", t.batch_size},
                {"lr", t.lr.initial},
                {"lr_milestones", t.lr.milestones},
                {"lr_decay", t.lr.factor},
                {"momentum", t.momentum},
                {"weight_decay", t.weight_decay},
                {"additional_constraint", std::string(train::to_string(t.constraint))},
                {"lambda", t.lambda},
                {"temperature", t.temperature}};
  j["clad"] = {{"eta", t.eta},
               {"proportion", t.conflict.proportion},
               {"strategy", std::string(clad::to_string(t.conflict.strategy))},
               {"measurement", std::string(clad::to_string(t.conflict.measurement))},
               {"rd_pairing", std::string(clad::to_string(t.rd.pairing))},
               {"online_exemplar_grad", t.rd.online_exemplar_grad}};
  j["replay"] = {{"exemplars_per_class", t.exemplars_per_class}, {"herding_normalize", t.herding_normalize}};
  j["metrics"] = {{"aggregation", std::string(to_string(c.metrics.aggregation))},
                  {"permutations", c.metrics.permutations}};
  j["output_dir"] = c.output_dir;
  j["seeds"] = c.seeds;
  j["ablation_seeds"] = c.ablation_seeds;
  return j;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

std::vector<data::Collision> resolve_collisions(const SyntheticSpec& spec, const SplitSpec& split) {
  std::vector<data::Collision> out = spec.collisions;
  if (!spec.auto_collisions || spec.auto_collisions->count == 0) return out;
  const auto& ac = *spec.auto_collisions;
  if (split.base >= spec.n_classes || split.increment == 0) {
    throw ConfigError("auto_collisions need at least one later task");
  }
  const std::size_t n_later = (spec.n_classes - split.base) / split.increment;
  if (ac.count > split.base || ac.count > spec.n_classes - split.base) {
    throw ConfigError("auto_collisions.count exceeds the available base or later classes");
  }
  if (ac.count > n_later * split.increment) throw ConfigError("auto_collisions.count too large");
  const auto order = data::shuffled_class_order(spec.n_classes, split.shuffle_seed);
  for (std::size_t i = 0; i < ac.count; ++i) {
    const std::size_t task = i % n_later;
    const std::size_t within = i / n_later;
    const std::size_t pos = split.base + task * split.increment + within;
    out.push_back({order[pos], order[i], ac.cosine});
  }
  return out;
}

Benchmark build_benchmark(const ExperimentConfig& config, std::uint64_t seed) {
  Benchmark b;
  data::LabeledDataset train, test;
  std::size_t n_classes = 0;
  if (config.data.source == DataSpec::Source::synthetic) {
    const auto& sp = config.data.synthetic;
    b.collisions = resolve_collisions(sp, config.split);
    b.prototypes = data::generate_prototypes(sp.n_classes, sp.dim, b.collisions, seed);
    std::tie(train, test) =
        data::sample_dataset(*b.prototypes, sp.n_train_per_class, sp.n_test_per_class, sp.noise_sigma, seed);
    n_classes = sp.n_classes;
  } else {
    auto tr = data::load_csv(config.data.csv_train);
    auto te = data::load_csv(config.data.csv_test);
    if (tr.label_map != te.label_map) {
      // Re-key the test labels through the training map.
      std::map<long long, int> dense(tr.label_map.begin(), tr.label_map.end());
      std::vector<int> test_to_train(te.label_map.size());
      for (const auto& [orig, id] : te.label_map) {
        auto it = dense.find(orig);
        if (it == dense.end()) throw ConfigError("test CSV has label " + std::to_string(orig) + " absent from training CSV");
        test_to_train[static_cast<std::size_t>(id)] = it->second;
      }
      for (int& y : te.data.labels) y = test_to_train[static_cast<std::size_t>(y)];
    }
    train = std::move(tr.data);
    test = std::move(te.data);
    n_classes = tr.label_map.size();
  }
  b.sequence = data::split_tasks(train, test, n_classes, config.split.base, config.split.increment,
                                 config.split.shuffle_seed);
  for (const auto& c : b.collisions) {
    b.colliding_base.push_back(b.sequence.position_of(c.old_class));
    b.colliding_new.push_back(b.sequence.position_of(c.new_class));
  }
  return b;
}

}  // namespace cil::experiment
