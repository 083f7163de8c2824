#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cilab/data/dataset.hpp"

namespace cil::data {

/// Header plus all-numeric rows. Every CSV the project writes has this shape.
struct NumericTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> row_lines;  // 1-based source line of each row

  std::size_t column(const std::string& name) const;
};

/// Throws ParseError (with the 1-based line) on empty input, ragged rows or
/// cells strtod cannot consume entirely.
NumericTable parse_numeric_csv(const std::string& text);
NumericTable read_numeric_csv(const std::filesystem::path& path);

/// Parent directories are created.
void write_numeric_csv(const std::filesystem::path& path, const NumericTable& table);

/// Dataset loaded from `label,f0,f1,...` with labels re-indexed densely in
/// order of first appearance.
struct CsvDataset {
  LabeledDataset data;
  std::vector<std::pair<long long, int>> label_map;  // original → dense
};

CsvDataset parse_dataset_csv(const std::string& text);
CsvDataset load_csv(const std::filesystem::path& path);

/// Writes `label,f0,...` with shortest round-trip doubles.
void save_csv(const std::filesystem::path& path, const LabeledDataset& data);

/// Shortest decimal that parses back to exactly `v`.
std::string format_double(double v);

}  // namespace cil::data
