#pragma once

#include <filesystem>

#include "json.hpp"

#include "cilab/clad/clad.hpp"
#include "cilab/model/model.hpp"
#include "cilab/numcore/matrix.hpp"
#include "cilab/replay/buffer.hpp"
#include "cilab/train/trainer.hpp"

namespace cil::io {

/// Version stamped into every JSON artifact this module writes.
inline constexpr int kFormatVersion = 1;

using nlohmann::json;

/// Throws FormatError when `j` lacks format_version or it is newer than
/// kFormatVersion.
void check_format_version(const json& j, std::string_view what);

json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const json& j);

json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const json& j);

/// {format_version, model_config, task_index, layers: [{name, shape, data}]}.
json model_to_json(const ModelParams& params, std::size_t task_index);
ModelParams model_from_json(const json& j);

json buffer_to_json(const replay::ReplayBuffer& buffer);
replay::ReplayBuffer buffer_from_json(const json& j);

json similarity_to_json(const clad::SimilarityVector& s);
clad::SimilarityVector similarity_from_json(const json& j);

json conflict_map_to_json(const clad::ConflictMap& m);
clad::ConflictMap conflict_map_from_json(const json& j);

/// Checkpoints are included only when `with_checkpoints`.
json run_record_to_json(const train::RunRecord& r, bool with_checkpoints);
train::RunRecord run_record_from_json(const json& j);

/// Everything needed to resume run_sequence after a finished task.
json run_state_to_json(const train::RunState& s);
train::RunState run_state_from_json(const json& j);

/// Writes `j` with a trailing newline; parent directories are created.
void write_json(const std::filesystem::path& path, const json& j);
/// Throws FormatError on missing or malformed files.
json read_json(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

}  // namespace cil::io
