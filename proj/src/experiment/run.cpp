#include "cilab/experiment/run.hpp"

#include <algorithm>
#include <cstdlib>
#include <sstream>

#include "cilab/data/csv.hpp"
#include "cilab/errors.hpp"
#include "cilab/io/serialize.hpp"

namespace cil::experiment {

using nlohmann::json;

ForgettingProfile forgetting_profile(const data::TaskSequence& sequence, const train::RunRecord& record,
                                     std::span<const int> colliding_base) {
  if (record.tasks.size() < 2 || sequence.tasks.size() < record.tasks.size()) {
    throw Error("forgetting profile needs a run with at least two tasks");
  }
  if (record.checkpoints.empty()) throw Error("forgetting profile needs the base-task checkpoint");

  const std::vector<int>& base = sequence.tasks[0].classes;
  data::LabeledDataset later = sequence.tasks[1].train;
  for (std::size_t t = 2; t < record.tasks.size(); ++t) later = data::LabeledDataset::concat(later, sequence.tasks[t].train);
  const ModelSnapshot f1 = snapshot(record.checkpoints[0], 0);
  const auto s_max = metrics::similarity_level(f1, later, base, metrics::Aggregation::max);
  const auto s_mean = metrics::similarity_level(f1, later, base, metrics::Aggregation::mean);

  ForgettingProfile p;
  const auto& first = record.tasks.front().class_accuracy;
  const auto& last = record.tasks.back().class_accuracy;
  for (std::size_t i = 0; i < base.size(); ++i) {
    const int c = base[i];
    ClassForgetting cf;
    cf.cls = c;
    cf.a_base = first.at(static_cast<std::size_t>(c));
    cf.a_all = last.at(static_cast<std::size_t>(c));
    cf.delta = metrics::normalized_forgetting(cf.a_base, cf.a_all);
    cf.s_max = s_max[i];
    cf.s_mean = s_mean[i];
    cf.colliding = std::find(colliding_base.begin(), colliding_base.end(), c) != colliding_base.end();
    if (!cf.delta) p.excluded.push_back(c);
    p.classes.push_back(cf);
  }
  return p;
}

std::pair<std::vector<double>, std::vector<double>> scatter_of(const ForgettingProfile& profile,
                                                               metrics::Aggregation aggregation) {
  std::vector<double> s, d;
  for (const auto& c : profile.classes) {
    if (!c.delta) continue;
    s.push_back(aggregation == metrics::Aggregation::max ? c.s_max : c.s_mean);
    d.push_back(*c.delta);
  }
  return {std::move(s), std::move(d)};
}

std::optional<metrics::CorrelationReport> correlate(std::span<const ForgettingProfile> profiles,
                                                    metrics::Aggregation aggregation,
                                                    std::size_t permutations, std::uint64_t seed) {
  std::vector<double> s, d;
  for (const auto& p : profiles) {
    auto [ps, pd] = scatter_of(p, aggregation);
    s.insert(s.end(), ps.begin(), ps.end());
    d.insert(d.end(), pd.begin(), pd.end());
  }
  try {
    return metrics::pearson(s, d, permutations, seed);
  } catch (const Error&) {
    return std::nullopt;
  }
}

std::optional<double> ResultBundle::colliding_base_final_accuracy() const {
  if (colliding_base.empty() || record.tasks.empty()) return std::nullopt;
  const auto& last = record.tasks.back().class_accuracy;
  double sum = 0.0;
  for (int c : colliding_base) sum += last.at(static_cast<std::size_t>(c));
  return sum / static_cast<double>(colliding_base.size());
}

void analyze_bundle(ResultBundle& bundle, const data::TaskSequence& sequence, const MetricsSpec& spec) {
  if (bundle.record.tasks.size() < 2) return;
  bundle.profile = forgetting_profile(sequence, bundle.record, bundle.colliding_base);
  const std::span<const ForgettingProfile> one(&*bundle.profile, 1);
  bundle.correlation_max = correlate(one, metrics::Aggregation::max, spec.permutations, bundle.seed);
  bundle.correlation_mean = correlate(one, metrics::Aggregation::mean, spec.permutations, bundle.seed);
}

ResultBundle run_replicate(const ExperimentConfig& config, std::uint64_t seed, train::RunOptions options) {
  const Benchmark bench = build_benchmark(config, seed);
  const train::TrainConfig tc = config.train_for_seed(seed);
  ResultBundle b;
  b.config = config_to_json(config);
  b.seed = seed;
  b.colliding_base = bench.colliding_base;
  b.colliding_new = bench.colliding_new;
  b.record = train::run_sequence(bench.sequence, config.model, tc, std::move(options));
  analyze_bundle(b, bench.sequence, config.metrics);
  return b;
}

json profile_to_json(const ForgettingProfile& p) {
  json classes = json::array();
  for (const auto& c : p.classes) {
    classes.push_back({{"class", c.cls},
                       {"a_base", c.a_base},
                       {"a_all", c.a_all},
                       {"delta", c.delta ? json(*c.delta) : json(nullptr)},
                       {"s_max", c.s_max},
                       {"s_mean", c.s_mean},
                       {"colliding", c.colliding}});
  }
  return {{"classes", classes}, {"excluded", p.excluded}};
}

ForgettingProfile profile_from_json(const json& j) {
  ForgettingProfile p;
  for (const auto& c : j.at("classes")) {
    ClassForgetting cf;
    cf.cls = c.at("class").get<int>();
    cf.a_base = c.at("a_base").get<double>();
    cf.a_all = c.at("a_all").get<double>();
    if (!c.at("delta").is_null()) cf.delta = c.at("delta").get<double>();
    cf.s_max = c.at("s_max").get<double>();
    cf.s_mean = c.at("s_mean").get<double>();
    cf.colliding = c.at("colliding").get<bool>();
    p.classes.push_back(cf);
  }
  p.excluded = j.at("excluded").get<std::vector<int>>();
  return p;
}

json correlation_to_json(const std::optional<metrics::CorrelationReport>& c) {
  if (!c) return nullptr;
  json scatter = json::array();
  for (const auto& [s, d] : c->scatter) scatter.push_back({s, d});
  return {{"pearson_r", c->pearson_r},
          {"permutation_p", c->permutation_p},
          {"n", c->n},
          {"permutations", c->permutations},
          {"scatter", scatter}};
}

namespace {

std::optional<metrics::CorrelationReport> correlation_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  metrics::CorrelationReport c;
  c.pearson_r = j.at("pearson_r").get<double>();
  c.permutation_p = j.at("permutation_p").get<double>();
  c.n = j.at("n").get<std::size_t>();
  c.permutations = j.at("permutations").get<std::size_t>();
  for (const auto& p : j.at("scatter")) c.scatter.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
  return c;
}

}  // namespace

json bundle_to_json(const ResultBundle& b) {
  return {{"format_version", io::kFormatVersion},
          {"kind", "result_bundle"},
          {"seed", b.seed},
          {"config", b.config},
          {"colliding_base", b.colliding_base},
          {"colliding_new", b.colliding_new},
          {"record", io::run_record_to_json(b.record, false)},
          {"forgetting_profile", b.profile ? profile_to_json(*b.profile) : json(nullptr)},
          {"correlation", {{"max", correlation_to_json(b.correlation_max)},
                           {"mean", correlation_to_json(b.correlation_mean)}}}};
}

ResultBundle bundle_from_json(const json& j) {
  io::check_format_version(j, "result bundle");
  try {
    if (j.at("kind").get<std::string>() != "result_bundle") throw FormatError("not a result bundle");
    ResultBundle b;
    b.seed = j.at("seed").get<std::uint64_t>();
    b.config = j.at("config");
    b.colliding_base = j.at("colliding_base").get<std::vector<int>>();
    b.colliding_new = j.at("colliding_new").get<std::vector<int>>();
    b.record = io::run_record_from_json(j.at("record"));
    if (!j.at("forgetting_profile").is_null()) b.profile = profile_from_json(j.at("forgetting_profile"));
    b.correlation_max = correlation_from_json(j.at("correlation").at("max"));
    b.correlation_mean = correlation_from_json(j.at("correlation").at("mean"));
    return b;
  } catch (const json::exception& e) {
    throw FormatError(std::string("result bundle: ") + e.what());
  }
}

std::string accuracy_csv(const train::RunRecord& r) {
  std::ostringstream out;
  out << "task,class,accuracy\n";
  for (const auto& t : r.tasks) {
    for (std::size_t c = 0; c < t.class_accuracy.size(); ++c) {
      out << t.task_index << ',' << c << ',' << data::format_double(t.class_accuracy[c]) << '\n';
    }
  }
  return out.str();
}

std::string tasks_csv(const train::RunRecord& r) {
  std::ostringstream out;
  out << "task,overall_accuracy,avg_incremental_accuracy\n";
  std::vector<double> seen;
  for (const auto& t : r.tasks) {
    seen.push_back(t.overall_accuracy);
    out << t.task_index << ',' << data::format_double(t.overall_accuracy) << ','
        << data::format_double(metrics::avg_incremental_accuracy(seen)) << '\n';
  }
  return out.str();
}

std::string forgetting_csv(const ForgettingProfile& p) {
  std::ostringstream out;
  out << "class,a_base,a_all,delta,s_max,s_mean,colliding\n";
  for (const auto& c : p.classes) {
    if (!c.delta) continue;
    out << c.cls << ',' << data::format_double(c.a_base) << ',' << data::format_double(c.a_all) << ','
        << data::format_double(*c.delta) << ',' << data::format_double(c.s_max) << ','
        << data::format_double(c.s_mean) << ',' << (c.colliding ? 1 : 0) << '\n';
  }
  return out.str();
}

std::string scatter_dat(const ForgettingProfile& p, metrics::Aggregation aggregation) {
  std::ostringstream out;
  out << "# S_i (" << to_string(aggregation) << ") delta_i\n";
  auto [s, d] = scatter_of(p, aggregation);
  for (std::size_t i = 0; i < s.size(); ++i) out << data::format_double(s[i]) << ' ' << data::format_double(d[i]) << '\n';
  return out.str();
}

void write_bundle(const std::filesystem::path& dir, const ResultBundle& b) {
  io::write_json(dir / "bundle.json", bundle_to_json(b));
  io::write_text(dir / "accuracy.csv", accuracy_csv(b.record));
  io::write_text(dir / "tasks.csv", tasks_csv(b.record));
  if (b.profile) {
    io::write_text(dir / "forgetting.csv", forgetting_csv(*b.profile));
    io::write_text(dir / "scatter_max.dat", scatter_dat(*b.profile, metrics::Aggregation::max));
    io::write_text(dir / "scatter_mean.dat", scatter_dat(*b.profile, metrics::Aggregation::mean));
  }
  for (std::size_t t = 0; t < b.record.checkpoints.size(); ++t) {
    io::write_json(dir / ("model_task" + std::to_string(t) + ".json"), io::model_to_json(b.record.checkpoints[t], t));
  }
}

std::filesystem::path resolve_output_dir(const std::string& configured) {
  const char* env = std::getenv("CILAB_OUTPUT_DIR");
  if (env != nullptr && *env != '\0') return env;
  return configured;
}

}  // namespace cil::experiment
