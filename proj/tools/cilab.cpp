// cilab: command-line runner for class-incremental experiments.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cilab/data/csv.hpp"
#include "cilab/errors.hpp"
#include "cilab/experiment/config.hpp"
#include "cilab/experiment/gradsuite.hpp"
#include "cilab/experiment/run.hpp"
#include "cilab/io/serialize.hpp"

namespace fs = std::filesystem;
using namespace cil;
using experiment::ExperimentConfig;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kConfigError = 2, kRuntimeError = 3, kNumericalAbort = 4 };

struct Overrides {
  std::string config_path;
  std::string out;
  std::optional<double> eta;
  std::optional<double> proportion;
  std::optional<std::string> strategy;
  std::optional<std::string> measurement;
  std::optional<std::string> rd_pairing;
  std::optional<std::string> method;
  std::optional<std::size_t> exemplars;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_path, "Experiment config JSON (defaults when omitted)");
  cmd->add_option("--out", o.out, "Output directory (overrides config and CILAB_OUTPUT_DIR)");
  cmd->add_option("--seed", o.seed, "Run this single replicate seed");
}

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--eta", o.eta, "CLAD coefficient");
  cmd->add_option("--proportion", o.proportion, "Conflict proportion P");
  cmd->add_option("--strategy", o.strategy, "Conflict selection: top, smallest, random");
  cmd->add_option("--measurement", o.measurement, "Forgetting prediction: logits, cosine, oracle_logits");
  cmd->add_option("--rd-pairing", o.rd_pairing, "Online/offline partner pairing: text, literal");
  cmd->add_option("--method", o.method, "naive or clad");
  cmd->add_option("--exemplars", o.exemplars, "Exemplars per class R");
  cmd->add_option("--epochs", o.epochs, "Epochs per task");
}

ExperimentConfig load(const Overrides& o) {
  ExperimentConfig c = o.config_path.empty() ? experiment::default_config() : experiment::load_config(o.config_path);
  if (o.eta) c.train.eta = *o.eta;
  if (o.proportion) c.train.conflict.proportion = *o.proportion;
  if (o.strategy) c.train.conflict.strategy = clad::parse_strategy(*o.strategy);
  if (o.measurement) c.train.conflict.measurement = clad::parse_measurement(*o.measurement);
  if (o.rd_pairing) c.train.rd.pairing = clad::parse_pairing(*o.rd_pairing);
  if (o.method) c.method = experiment::parse_method(*o.method);
  if (o.exemplars) c.train.exemplars_per_class = *o.exemplars;
  if (o.epochs) c.train.epochs_per_task = *o.epochs;
  if (o.seed) {
    c.seeds = {*o.seed};
    c.ablation_seeds = {*o.seed};
  }
  c.validate();
  return c;
}

fs::path output_dir(const Overrides& o, const ExperimentConfig& c) {
  return o.out.empty() ? experiment::resolve_output_dir(c.output_dir) : fs::path(o.out);
}

fs::path seed_dir(const fs::path& out, std::uint64_t seed) { return out / ("seed_" + std::to_string(seed)); }

struct SeedSummary {
  std::uint64_t seed = 0;
  double aia = 0.0;
  double final_accuracy = 0.0;
  std::optional<double> colliding_final;
};

SeedSummary summarize(const experiment::ResultBundle& b) {
  return {b.seed, b.record.average_incremental_accuracy(), b.record.tasks.back().overall_accuracy,
          b.colliding_base_final_accuracy()};
}

json mean_std(const std::vector<double>& v) {
  return {{"mean", metrics::mean(v)}, {"std", metrics::stddev(v)}, {"values", v}};
}

void write_summary(const fs::path& out, const std::vector<SeedSummary>& rows) {
  const bool with_colliding = !rows.empty() && rows.front().colliding_final.has_value();
  std::ostringstream csv;
  csv << "seed,avg_incremental_accuracy,final_accuracy" << (with_colliding ? ",colliding_base_final_accuracy" : "")
      << '\n';
  std::vector<double> aia, fin, col;
  for (const auto& r : rows) {
    csv << r.seed << ',' << data::format_double(r.aia) << ',' << data::format_double(r.final_accuracy);
    if (with_colliding) {
      csv << ',' << data::format_double(*r.colliding_final);
      col.push_back(*r.colliding_final);
    }
    csv << '\n';
    aia.push_back(r.aia);
    fin.push_back(r.final_accuracy);
  }
  io::write_text(out / "summary.csv", csv.str());
  json j = {{"format_version", io::kFormatVersion},
            {"seeds", rows.size()},
            {"avg_incremental_accuracy", mean_std(aia)},
            {"final_accuracy", mean_std(fin)}};
  if (with_colliding) j["colliding_base_final_accuracy"] = mean_std(col);
  io::write_json(out / "summary.json", j);
}

json checkpoint_doc(const ExperimentConfig& c, std::uint64_t seed, const train::RunState& s) {
  return {{"format_version", io::kFormatVersion},
          {"kind", "checkpoint"},
          {"seed", seed},
          {"config", experiment::config_to_json(c)},
          {"state", io::run_state_to_json(s)}};
}

experiment::ResultBundle run_one(const ExperimentConfig& c, std::uint64_t seed, const fs::path& dir,
                                 bool checkpoints, std::size_t stop_after, std::optional<train::RunState> resume) {
  train::RunOptions opts;
  opts.stop_after = stop_after;
  opts.resume = std::move(resume);
  if (checkpoints) {
    opts.on_task_end = [&](const train::RunState& s) {
      io::write_json(dir / ("state_task" + std::to_string(s.next_task - 1) + ".json"), checkpoint_doc(c, seed, s));
    };
  }
  const auto t0 = std::chrono::steady_clock::now();
  experiment::ResultBundle b = experiment::run_replicate(c, seed, std::move(opts));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  experiment::write_bundle(dir, b);
  io::write_json(dir / "timings.json", {{"format_version", io::kFormatVersion}, {"run_seconds", secs}});
  std::printf("seed %llu: tasks %zu  avg incremental accuracy %.4f  final accuracy %.4f  (%.1f s)\n",
              static_cast<unsigned long long>(seed), b.record.tasks.size(),
              b.record.average_incremental_accuracy(), b.record.tasks.back().overall_accuracy, secs);
  return b;
}

int cmd_train(const Overrides& o, bool checkpoints, std::size_t stop_after, const std::string& resume_path) {
  if (!resume_path.empty()) {
    const json doc = io::read_json(resume_path);
    io::check_format_version(doc, "checkpoint");
    if (doc.value("kind", "") != "checkpoint") throw FormatError(resume_path + " is not a checkpoint");
    const ExperimentConfig c = experiment::config_from_json(doc.at("config"));
    const std::uint64_t seed = doc.at("seed").get<std::uint64_t>();
    const fs::path out = o.out.empty() ? fs::path(resume_path).parent_path() : fs::path(o.out);
    run_one(c, seed, out, checkpoints, 0, io::run_state_from_json(doc.at("state")));
    return kOk;
  }
  const ExperimentConfig c = load(o);
  const fs::path out = output_dir(o, c);
  io::write_json(out / "config.json", experiment::config_to_json(c));
  std::vector<SeedSummary> rows;
  for (std::uint64_t seed : c.seeds) {
    const auto b = run_one(c, seed, seed_dir(out, seed), checkpoints, stop_after, std::nullopt);
    if (b.record.tasks.empty()) continue;
    rows.push_back(summarize(b));
  }
  if (stop_after == 0) write_summary(out, rows);
  std::printf("wrote %s\n", out.string().c_str());
  return kOk;
}

std::vector<std::string> default_grid(const std::string& sweep) {
  if (sweep == "strategy") return {"top", "smallest", "random"};
  if (sweep == "proportion") return {"0.05", "0.1", "0.2", "0.3"};
  if (sweep == "eta") return {"1", "2", "4", "8"};
  if (sweep == "exemplars") return {"5", "10", "20", "30", "40"};
  if (sweep == "measurement") return {"logits", "cosine", "oracle_logits"};
  throw ConfigError("unknown sweep '" + sweep + "'");
}

double parse_number(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size()) throw ConfigError("not a number: '" + s + "'");
  return v;
}

/// Applies one grid value; returns its numeric code for the CSV table.
double apply_sweep(ExperimentConfig& c, const std::string& sweep, const std::string& value) {
  if (sweep == "strategy") {
    c.train.conflict.strategy = clad::parse_strategy(value);
    return static_cast<double>(c.train.conflict.strategy);
  }
  if (sweep == "measurement") {
    c.train.conflict.measurement = clad::parse_measurement(value);
    return static_cast<double>(c.train.conflict.measurement);
  }
  const double v = parse_number(value);
  if (sweep == "proportion") c.train.conflict.proportion = v;
  if (sweep == "eta") c.train.eta = v;
  if (sweep == "exemplars") {
    if (v < 0 || v != static_cast<double>(static_cast<std::size_t>(v))) throw ConfigError("exemplars must be a count");
    c.train.exemplars_per_class = static_cast<std::size_t>(v);
  }
  return v;
}

int cmd_ablate(const Overrides& o, const std::string& sweep, std::vector<std::string> values) {
  ExperimentConfig base = load(o);
  base.method = experiment::Method::clad;
  if (values.empty()) values = default_grid(sweep);
  else default_grid(sweep);
  const fs::path out = output_dir(o, base);

  std::ostringstream csv;
  csv << "value,avg_incremental_accuracy_mean,avg_incremental_accuracy_std,final_accuracy_mean,"
         "final_accuracy_std,colliding_base_final_accuracy_mean\n";
  json rows = json::array();
  for (const auto& value : values) {
    ExperimentConfig c = base;
    const double code = apply_sweep(c, sweep, value);
    c.validate();
    std::vector<double> aia, fin, col;
    for (std::uint64_t seed : c.ablation_seeds) {
      const auto b = experiment::run_replicate(c, seed);
      aia.push_back(b.record.average_incremental_accuracy());
      fin.push_back(b.record.tasks.back().overall_accuracy);
      col.push_back(b.colliding_base_final_accuracy().value_or(0.0));
    }
    std::printf("%s=%s: avg incremental accuracy %.4f ± %.4f\n", sweep.c_str(), value.c_str(), metrics::mean(aia),
                metrics::stddev(aia));
    csv << data::format_double(code) << ',' << data::format_double(metrics::mean(aia)) << ','
        << data::format_double(metrics::stddev(aia)) << ',' << data::format_double(metrics::mean(fin)) << ','
        << data::format_double(metrics::stddev(fin)) << ',' << data::format_double(metrics::mean(col)) << '\n';
    rows.push_back({{"value", value},
                    {"code", code},
                    {"avg_incremental_accuracy", mean_std(aia)},
                    {"final_accuracy", mean_std(fin)},
                    {"colliding_base_final_accuracy", mean_std(col)}});
  }
  io::write_text(out / ("ablation_" + sweep + ".csv"), csv.str());
  io::write_json(out / ("ablation_" + sweep + ".json"), {{"format_version", io::kFormatVersion},
                                                          {"sweep", sweep},
                                                          {"seeds", base.ablation_seeds},
                                                          {"config", experiment::config_to_json(base)},
                                                          {"rows", rows}});
  std::printf("wrote %s\n", (out / ("ablation_" + sweep + ".csv")).string().c_str());
  return kOk;
}

int cmd_analyze(const std::vector<std::string>& runs, const std::string& out_arg) {
  if (runs.empty()) throw ConfigError("analyze needs at least one run directory");
  std::vector<experiment::ForgettingProfile> profiles;
  json per_run = json::array();
  std::ostringstream csv;
  csv << "run,class,a_base,a_all,delta,s_max,s_mean,colliding\n";
  experiment::MetricsSpec spec;
  std::uint64_t first_seed = 0;
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const fs::path dir = runs[r];
    experiment::ResultBundle b = experiment::bundle_from_json(io::read_json(dir / "bundle.json"));
    const ExperimentConfig c = experiment::config_from_json(b.config);
    if (r == 0) {
      spec = c.metrics;
      first_seed = b.seed;
    }
    const experiment::Benchmark bench = experiment::build_benchmark(c, b.seed);
    b.record.checkpoints = {io::model_from_json(io::read_json(dir / "model_task0.json"))};
    experiment::analyze_bundle(b, bench.sequence, c.metrics);
    if (!b.profile) throw Error(dir.string() + ": run has fewer than two tasks");
    for (const auto& cf : b.profile->classes) {
      if (!cf.delta) continue;
      csv << r << ',' << cf.cls << ',' << data::format_double(cf.a_base) << ',' << data::format_double(cf.a_all)
          << ',' << data::format_double(*cf.delta) << ',' << data::format_double(cf.s_max) << ','
          << data::format_double(cf.s_mean) << ',' << (cf.colliding ? 1 : 0) << '\n';
    }
    per_run.push_back({{"run", dir.string()},
                       {"seed", b.seed},
                       {"excluded", b.profile->excluded},
                       {"correlation_max", experiment::correlation_to_json(b.correlation_max)},
                       {"correlation_mean", experiment::correlation_to_json(b.correlation_mean)}});
    profiles.push_back(*b.profile);
  }
  const auto pooled_max = experiment::correlate(profiles, metrics::Aggregation::max, spec.permutations, first_seed);
  const auto pooled_mean = experiment::correlate(profiles, metrics::Aggregation::mean, spec.permutations, first_seed);

  const fs::path out = out_arg.empty() ? fs::path(runs.front()) / "analysis" : fs::path(out_arg);
  io::write_json(out / "analysis.json", {{"format_version", io::kFormatVersion},
                                          {"runs", per_run},
                                          {"pooled", {{"max", experiment::correlation_to_json(pooled_max)},
                                                      {"mean", experiment::correlation_to_json(pooled_mean)}}}});
  io::write_text(out / "forgetting.csv", csv.str());
  std::ostringstream smax, smean;
  smax << "# S_i (max) delta_i\n";
  smean << "# S_i (mean) delta_i\n";
  for (const auto& p : profiles) {
    for (const auto& cf : p.classes) {
      if (!cf.delta) continue;
      smax << data::format_double(cf.s_max) << ' ' << data::format_double(*cf.delta) << '\n';
      smean << data::format_double(cf.s_mean) << ' ' << data::format_double(*cf.delta) << '\n';
    }
  }
  io::write_text(out / "scatter_max.dat", smax.str());
  io::write_text(out / "scatter_mean.dat", smean.str());
  auto show = [](const char* name, const std::optional<metrics::CorrelationReport>& c) {
    if (c) std::printf("pooled %s: r = %.4f  p = %.4g  n = %zu\n", name, c->pearson_r, c->permutation_p, c->n);
    else std::printf("pooled %s: undefined (too few points or constant data)\n", name);
  };
  show("max", pooled_max);
  show("mean", pooled_mean);
  std::printf("wrote %s\n", out.string().c_str());
  return kOk;
}

int cmd_generate(const Overrides& o) {
  const ExperimentConfig c = load(o);
  if (c.data.source != experiment::DataSpec::Source::synthetic) throw ConfigError("generate needs a synthetic data spec");
  const std::uint64_t seed = c.seeds.front();
  const auto& sp = c.data.synthetic;
  const auto collisions = experiment::resolve_collisions(sp, c.split);
  const auto protos = data::generate_prototypes(sp.n_classes, sp.dim, collisions, seed);
  const auto [train, test] = data::sample_dataset(protos, sp.n_train_per_class, sp.n_test_per_class, sp.noise_sigma, seed);
  const fs::path out = output_dir(o, c);
  data::save_csv(out / "train.csv", train);
  data::save_csv(out / "test.csv", test);

  json cols = json::array();
  for (const auto& col : protos.collisions) {
    cols.push_back({{"new", col.new_class},
                    {"old", col.old_class},
                    {"target_cosine", col.target_cosine},
                    {"realized_cosine", protos.cosine(col.new_class, col.old_class)}});
  }
  double max_unrelated = -1.0;
  for (std::size_t a = 0; a < protos.num_classes(); ++a) {
    for (std::size_t b = a + 1; b < protos.num_classes(); ++b) {
      bool designed = false;
      for (const auto& col : protos.collisions) {
        designed |= (col.new_class == static_cast<int>(a) && col.old_class == static_cast<int>(b)) ||
                    (col.new_class == static_cast<int>(b) && col.old_class == static_cast<int>(a));
      }
      if (!designed) max_unrelated = std::max(max_unrelated, protos.cosine(static_cast<int>(a), static_cast<int>(b)));
    }
  }
  io::write_json(out / "prototypes.json", {{"format_version", io::kFormatVersion},
                                           {"seed", seed},
                                           {"noise_sigma", sp.noise_sigma},
                                           {"prototypes", io::matrix_to_json(protos.prototypes)},
                                           {"collisions", cols},
                                           {"max_unrelated_cosine", max_unrelated}});
  std::printf("wrote %zu train and %zu test rows to %s\n", train.size(), test.size(), out.string().c_str());
  return kOk;
}

int cmd_gradcheck(std::size_t instances, std::uint64_t seed, double tolerance) {
  bool ok = true;
  for (const auto& e : experiment::gradient_suite(instances, seed)) {
    const bool pass = e.max_relative_error <= tolerance;
    ok &= pass;
    std::printf("%-14s instances %3zu  max rel err %.3e  %s\n", e.op.c_str(), e.instances, e.max_relative_error,
                pass ? "ok" : "FAIL");
  }
  return ok ? kOk : kNumericalAbort;
}

/// Small end-to-end checks that need no data on disk.
int cmd_selftest() {
  bool ok = true;
  auto report = [&](const char* what, bool pass) {
    ok &= pass;
    std::printf("%-28s %s\n", what, pass ? "ok" : "FAIL");
  };

  bool grads = true;
  for (const auto& e : experiment::gradient_suite(5, 11)) grads &= e.max_relative_error <= 1e-6;
  report("gradients", grads);

  ExperimentConfig c = experiment::default_config();
  c.data.synthetic.n_classes = 8;
  c.data.synthetic.dim = 8;
  c.data.synthetic.n_train_per_class = 30;
  c.data.synthetic.n_test_per_class = 10;
  c.data.synthetic.auto_collisions = experiment::AutoCollisions{2, 0.9};
  c.split = {4, 2, 7};
  c.model.input_dim = 8;
  c.model.hidden_dims = {16};
  c.model.feature_dim = 8;
  c.train.epochs_per_task = 3;
  c.train.batch_size = 32;
  c.train.exemplars_per_class = 3;
  c.metrics.permutations = 200;
  const auto a = experiment::run_replicate(c, 5);
  const auto b = experiment::run_replicate(c, 5);
  report("deterministic replicate", experiment::bundle_to_json(a).dump() == experiment::bundle_to_json(b).dump());

  const json m = io::model_to_json(a.record.checkpoints.back(), 2);
  report("checkpoint round trip",
         io::model_from_json(json::parse(m.dump())) == a.record.checkpoints.back());

  const auto parsed = data::parse_numeric_csv(experiment::accuracy_csv(a.record));
  report("metrics csv readable", parsed.rows.size() == 4 + 6 + 8);
  return ok ? kOk : kRuntimeError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cilab: class-incremental learning lab with conflict-aware disentanglement"};
  app.require_subcommand(1);
  Overrides o;

  auto* gen = app.add_subcommand("generate", "Write the synthetic dataset and prototype audit");
  add_common(gen, o);

  bool checkpoints = false;
  std::size_t stop_after = 0;
  std::string resume;
  auto* trn = app.add_subcommand("train", "Run every replicate seed and summarise");
  add_common(trn, o);
  add_overrides(trn, o);
  trn->add_flag("--checkpoint", checkpoints, "Write a resumable state after each task");
  trn->add_option("--stop-after", stop_after, "Stop each replicate after this many tasks");
  trn->add_option("--resume", resume, "Continue from a state_task<t>.json checkpoint");

  std::string sweep;
  std::vector<std::string> values;
  auto* abl = app.add_subcommand("ablate", "Sweep one setting over the ablation seeds");
  add_common(abl, o);
  add_overrides(abl, o);
  abl->add_option("--sweep", sweep, "strategy, proportion, eta, exemplars or measurement")->required();
  abl->add_option("--values", values, "Grid values (defaults per sweep)")->delimiter(',');

  std::vector<std::string> runs;
  std::string analyze_out;
  auto* ana = app.add_subcommand("analyze", "Similarity/forgetting correlation over finished runs");
  ana->add_option("runs", runs, "Run directories holding bundle.json")->required();
  ana->add_option("--out", analyze_out, "Output directory (default <first run>/analysis)");

  std::size_t instances = 20;
  std::uint64_t gc_seed = 1;
  double tolerance = 1e-6;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference checks of every differentiable op");
  gc->add_option("--instances", instances, "Random instances per op");
  gc->add_option("--seed", gc_seed, "Seed for the random instances");
  gc->add_option("--tolerance", tolerance, "Maximum relative error");

  auto* self = app.add_subcommand("selftest", "Quick end-to-end sanity checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (gen->parsed()) return cmd_generate(o);
    if (trn->parsed()) return cmd_train(o, checkpoints, stop_after, resume);
    if (abl->parsed()) return cmd_ablate(o, sweep, values);
    if (ana->parsed()) return cmd_analyze(runs, analyze_out);
    if (gc->parsed()) return cmd_gradcheck(instances, gc_seed, tolerance);
    if (self->parsed()) return cmd_selftest();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kConfigError;
  } catch (const NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << '\n';
    return kNumericalAbort;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kOk;
}
