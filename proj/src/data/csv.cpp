#include "cilab/data/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "cilab/errors.hpp"

namespace cil::data {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    cells.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return cells;
}

double parse_cell(std::string_view cell, std::size_t line_no, std::size_t col) {
  double v = 0.0;
  const auto* end = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(cell.data(), end, v);
  if (cell.empty() || ec != std::errc() || ptr != end) {
    throw ParseError("column " + std::to_string(col + 1) + ": '" + std::string(cell) +
                         "' is not a number",
                     line_no);
  }
  return v;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::size_t NumericTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw ParseError("missing column '" + name + "'");
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

NumericTable parse_numeric_csv(const std::string& text) {
  NumericTable table;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_commas(line);
    if (!have_header) {
      for (auto c : cells) table.header.emplace_back(c);
      have_header = true;
      continue;
    }
    if (cells.size() != table.header.size()) {
      throw ParseError("expected " + std::to_string(table.header.size()) + " columns, found " +
                           std::to_string(cells.size()),
                       line_no);
    }
    std::vector<double> row;
    row.reserve(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) row.push_back(parse_cell(cells[c], line_no, c));
    table.rows.push_back(std::move(row));
    table.row_lines.push_back(line_no);
  }
  if (!have_header) throw ParseError("empty CSV", 1);
  return table;
}

NumericTable read_numeric_csv(const std::filesystem::path& path) {
  return parse_numeric_csv(read_file(path));
}

void write_numeric_csv(const std::filesystem::path& path, const NumericTable& table) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (std::size_t i = 0; i < table.header.size(); ++i) {
    out << (i ? "," : "") << table.header[i];
  }
  out << '\n';
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << format_double(row[i]);
    out << '\n';
  }
  if (!out) throw Error("failed writing " + path.string());
}

CsvDataset parse_dataset_csv(const std::string& text) {
  NumericTable table = parse_numeric_csv(text);
  if (table.header.empty() || table.header.front() != "label") {
    throw ParseError("header must start with 'label'", 1);
  }
  if (table.header.size() < 2) throw ParseError("no feature columns", 1);
  if (table.rows.empty()) throw ParseError("no data rows", 2);
  const std::size_t dim = table.header.size() - 1;

  CsvDataset out;
  out.data.x = Matrix(table.rows.size(), dim);
  std::map<long long, int> dense;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const double lab = row[0];
    if (!std::isfinite(lab) || std::trunc(lab) != lab) {
      throw ParseError("label " + format_double(lab) + " is not an integer", table.row_lines[r]);
    }
    const auto key = static_cast<long long>(lab);
    auto [it, inserted] = dense.try_emplace(key, static_cast<int>(dense.size()));
    if (inserted) out.label_map.emplace_back(key, it->second);
    out.data.labels.push_back(it->second);
    for (std::size_t c = 0; c < dim; ++c) {
      if (!std::isfinite(row[c + 1])) throw ParseError("non-finite feature value", table.row_lines[r]);
      out.data.x(r, c) = row[c + 1];
    }
  }
  return out;
}

CsvDataset load_csv(const std::filesystem::path& path) { return parse_dataset_csv(read_file(path)); }

void save_csv(const std::filesystem::path& path, const LabeledDataset& data) {
  NumericTable t;
  t.header.push_back("label");
  for (std::size_t c = 0; c < data.dim(); ++c) t.header.push_back("f" + std::to_string(c));
  t.rows.reserve(data.size());
  for (std::size_t r = 0; r < data.size(); ++r) {
    std::vector<double> row{static_cast<double>(data.labels[r])};
    auto xs = data.x.row(r);
    row.insert(row.end(), xs.begin(), xs.end());
    t.rows.push_back(std::move(row));
  }
  write_numeric_csv(path, t);
}

}  // namespace cil::data
