#include "cilab/io/serialize.hpp"

#include <fstream>
#include <sstream>

#include "cilab/errors.hpp"

namespace cil::io {

namespace {

template <typename T>
T field(const json& j, const char* key, std::string_view what) {
  auto it = j.find(key);
  if (it == j.end()) throw FormatError(std::string(what) + ": missing field '" + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw FormatError(std::string(what) + "." + key + ": " + e.what());
  }
}

const json& child(const json& j, const char* key, std::string_view what) {
  auto it = j.find(key);
  if (it == j.end()) throw FormatError(std::string(what) + ": missing field '" + key + "'");
  return *it;
}

json layer_to_json(const std::string& name, const Layer& l) {
  return {{"name", name},
          {"shape", {l.weight.rows(), l.weight.cols()}},
          {"weight", l.weight.values()},
          {"bias", l.bias.values()}};
}

Layer layer_from_json(const json& j) {
  const auto shape = field<std::vector<std::size_t>>(j, "shape", "layer");
  if (shape.size() != 2) throw FormatError("layer shape must have two entries");
  Layer l;
  l.weight = Matrix(shape[0], shape[1], field<std::vector<double>>(j, "weight", "layer"));
  l.bias = Matrix(1, shape[1], field<std::vector<double>>(j, "bias", "layer"));
  return l;
}

json epoch_to_json(const train::EpochLoss& e) {
  return {{"total", e.total}, {"ce", e.ce}, {"distill", e.distill}, {"clad", e.clad}, {"lr", e.lr}};
}

train::EpochLoss epoch_from_json(const json& j) {
  train::EpochLoss e;
  e.total = field<double>(j, "total", "epoch");
  e.ce = field<double>(j, "ce", "epoch");
  e.distill = field<double>(j, "distill", "epoch");
  e.clad = field<double>(j, "clad", "epoch");
  e.lr = field<double>(j, "lr", "epoch");
  return e;
}

}  // namespace

void check_format_version(const json& j, std::string_view what) {
  if (!j.is_object()) throw FormatError(std::string(what) + ": expected a JSON object");
  const int v = field<int>(j, "format_version", what);
  if (v > kFormatVersion) {
    throw FormatError(std::string(what) + ": format_version " + std::to_string(v) +
                      " is newer than this build supports (" + std::to_string(kFormatVersion) + ")");
  }
  if (v < 1) throw FormatError(std::string(what) + ": invalid format_version " + std::to_string(v));
}

json matrix_to_json(const Matrix& m) {
  return {{"shape", {m.rows(), m.cols()}}, {"data", m.values()}};
}

Matrix matrix_from_json(const json& j) {
  const auto shape = field<std::vector<std::size_t>>(j, "shape", "matrix");
  if (shape.size() != 2) throw FormatError("matrix shape must have two entries");
  try {
    return Matrix(shape[0], shape[1], field<std::vector<double>>(j, "data", "matrix"));
  } catch (const DimensionError& e) {
    throw FormatError(std::string("matrix: ") + e.what());
  }
}

json model_config_to_json(const ModelConfig& c) {
  return {{"input_dim", c.input_dim}, {"hidden_dims", c.hidden_dims}, {"feature_dim", c.feature_dim},
          {"activation", "relu"}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.input_dim = field<std::size_t>(j, "input_dim", "model_config");
  c.hidden_dims = field<std::vector<std::size_t>>(j, "hidden_dims", "model_config");
  c.feature_dim = field<std::size_t>(j, "feature_dim", "model_config");
  if (field<std::string>(j, "activation", "model_config") != "relu") {
    throw FormatError("model_config: unsupported activation");
  }
  return c;
}

json model_to_json(const ModelParams& params, std::size_t task_index) {
  json layers = json::array();
  for (std::size_t l = 0; l < params.extractor.size(); ++l) {
    layers.push_back(layer_to_json("extractor." + std::to_string(l), params.extractor[l]));
  }
  layers.push_back(layer_to_json("head", params.head));
  return {{"format_version", kFormatVersion},
          {"model_config", model_config_to_json(params.config)},
          {"task_index", task_index},
          {"layers", layers}};
}

ModelParams model_from_json(const json& j) {
  check_format_version(j, "model");
  ModelParams p;
  p.config = model_config_from_json(child(j, "model_config", "model"));
  const json& layers = child(j, "layers", "model");
  const std::size_t n_extractor = p.config.hidden_dims.size() + 1;
  if (!layers.is_array() || layers.size() != n_extractor + 1) {
    throw FormatError("model: expected " + std::to_string(n_extractor + 1) + " layers");
  }
  std::size_t in = p.config.input_dim;
  for (std::size_t l = 0; l < n_extractor; ++l) {
    Layer layer = layer_from_json(layers[l]);
    const std::size_t out = l < p.config.hidden_dims.size() ? p.config.hidden_dims[l] : p.config.feature_dim;
    if (layer.weight.rows() != in || layer.weight.cols() != out) {
      throw FormatError("model: layer " + std::to_string(l) + " has shape " + layer.weight.shape());
    }
    p.extractor.push_back(std::move(layer));
    in = out;
  }
  p.head = layer_from_json(layers[n_extractor]);
  if (p.head.weight.rows() != p.config.feature_dim) throw FormatError("model: head shape mismatch");
  return p;
}

json buffer_to_json(const replay::ReplayBuffer& buffer) {
  json classes = json::array();
  for (const auto& [cls, list] : buffer.classes()) {
    json ex = json::array();
    for (const auto& e : list) {
      ex.push_back({{"features", e.features}, {"label", e.label}, {"source_index", e.source_index}});
    }
    classes.push_back({{"class", cls}, {"exemplars", ex}});
  }
  return {{"format_version", kFormatVersion}, {"cap", buffer.cap()}, {"classes", classes}};
}

replay::ReplayBuffer buffer_from_json(const json& j) {
  check_format_version(j, "buffer");
  replay::ReplayBuffer b(field<std::size_t>(j, "cap", "buffer"));
  for (const auto& c : child(j, "classes", "buffer")) {
    std::vector<replay::Exemplar> list;
    for (const auto& e : child(c, "exemplars", "buffer class")) {
      list.push_back({field<std::vector<double>>(e, "features", "exemplar"), field<int>(e, "label", "exemplar"),
                      field<std::size_t>(e, "source_index", "exemplar")});
    }
    try {
      b.insert(field<int>(c, "class", "buffer class"), std::move(list));
    } catch (const Error& e) {
      throw FormatError(std::string("buffer: ") + e.what());
    }
  }
  return b;
}

json similarity_to_json(const clad::SimilarityVector& s) {
  return {{"new_class", s.new_class},
          {"old_classes", s.old_classes},
          {"scores", s.scores},
          {"measurement", std::string(clad::to_string(s.measurement))}};
}

clad::SimilarityVector similarity_from_json(const json& j) {
  clad::SimilarityVector s;
  s.new_class = field<int>(j, "new_class", "similarity");
  s.old_classes = field<std::vector<int>>(j, "old_classes", "similarity");
  s.scores = field<std::vector<double>>(j, "scores", "similarity");
  s.measurement = clad::parse_measurement(field<std::string>(j, "measurement", "similarity"));
  if (s.scores.size() != s.old_classes.size()) throw FormatError("similarity: scores and classes differ in length");
  return s;
}

json conflict_map_to_json(const clad::ConflictMap& m) {
  json conflicts = json::array();
  for (const auto& [cls, list] : m.conflicts) conflicts.push_back({{"new_class", cls}, {"conflicts", list}});
  json sims = json::array();
  for (const auto& s : m.similarities) sims.push_back(similarity_to_json(s));
  return {{"proportion", m.proportion},
          {"strategy", std::string(clad::to_string(m.strategy))},
          {"measurement", std::string(clad::to_string(m.measurement))},
          {"conflicts", conflicts},
          {"similarities", sims}};
}

clad::ConflictMap conflict_map_from_json(const json& j) {
  clad::ConflictMap m;
  m.proportion = field<double>(j, "proportion", "conflict_map");
  m.strategy = clad::parse_strategy(field<std::string>(j, "strategy", "conflict_map"));
  m.measurement = clad::parse_measurement(field<std::string>(j, "measurement", "conflict_map"));
  for (const auto& c : child(j, "conflicts", "conflict_map")) {
    m.conflicts[field<int>(c, "new_class", "conflict")] = field<std::vector<int>>(c, "conflicts", "conflict");
  }
  for (const auto& s : child(j, "similarities", "conflict_map")) m.similarities.push_back(similarity_from_json(s));
  return m;
}

json run_record_to_json(const train::RunRecord& r, bool with_checkpoints) {
  json tasks = json::array();
  for (const auto& t : r.tasks) {
    json epochs = json::array();
    for (const auto& e : t.trace.epochs) epochs.push_back(epoch_to_json(e));
    tasks.push_back({{"task_index", t.task_index},
                     {"classes", t.classes},
                     {"class_accuracy", t.class_accuracy},
                     {"overall_accuracy", t.overall_accuracy},
                     {"conflicts", conflict_map_to_json(t.conflicts)},
                     {"trace", {{"steps", t.trace.steps}, {"epochs", epochs}}}});
  }
  json out = {{"tasks", tasks},
              {"overall_accuracies", r.overall_accuracies()},
              {"average_incremental_accuracy", r.tasks.empty() ? 0.0 : r.average_incremental_accuracy()}};
  if (with_checkpoints) {
    json cps = json::array();
    for (std::size_t t = 0; t < r.checkpoints.size(); ++t) cps.push_back(model_to_json(r.checkpoints[t], t));
    out["checkpoints"] = cps;
  }
  return out;
}

train::RunRecord run_record_from_json(const json& j) {
  train::RunRecord r;
  for (const auto& t : child(j, "tasks", "run_record")) {
    train::TaskRecord rec;
    rec.task_index = field<std::size_t>(t, "task_index", "task");
    rec.classes = field<std::vector<int>>(t, "classes", "task");
    rec.class_accuracy = field<std::vector<double>>(t, "class_accuracy", "task");
    rec.overall_accuracy = field<double>(t, "overall_accuracy", "task");
    rec.conflicts = conflict_map_from_json(child(t, "conflicts", "task"));
    const json& trace = child(t, "trace", "task");
    rec.trace.steps = field<std::size_t>(trace, "steps", "trace");
    for (const auto& e : child(trace, "epochs", "trace")) rec.trace.epochs.push_back(epoch_from_json(e));
    r.tasks.push_back(std::move(rec));
  }
  if (auto it = j.find("checkpoints"); it != j.end()) {
    for (const auto& c : *it) r.checkpoints.push_back(model_from_json(c));
  }
  return r;
}

json run_state_to_json(const train::RunState& s) {
  return {{"format_version", kFormatVersion},
          {"kind", "run_state"},
          {"next_task", s.next_task},
          {"model", model_to_json(s.params, s.next_task)},
          {"buffer", buffer_to_json(s.buffer)},
          {"conflict_rng", s.conflict_rng.state()},
          {"record", run_record_to_json(s.record, true)}};
}

train::RunState run_state_from_json(const json& j) {
  check_format_version(j, "run_state");
  if (field<std::string>(j, "kind", "run_state") != "run_state") throw FormatError("not a run_state document");
  train::RunState s;
  s.next_task = field<std::size_t>(j, "next_task", "run_state");
  s.params = model_from_json(child(j, "model", "run_state"));
  s.buffer = buffer_from_json(child(j, "buffer", "run_state"));
  s.conflict_rng = Rng::from_state(field<Rng::State>(j, "conflict_rng", "run_state"));
  s.record = run_record_from_json(child(j, "record", "run_state"));
  return s;
}

void write_json(const std::filesystem::path& path, const json& j) {
  write_text(path, j.dump(1) + "\n");
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace cil::io
