#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace afh::check {

/// One row of a fixture reference.csv: pair name and its numeric columns.
struct FixtureRow {
  std::string pair;
  std::vector<double> values;
};

inline std::vector<FixtureRow> read_reference(const std::filesystem::path& csv, std::size_t columns) {
  std::ifstream in(csv);
  if (!in) throw std::runtime_error("missing fixture " + csv.string());
  std::string line;
  std::getline(in, line);
  std::vector<FixtureRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    FixtureRow row;
    std::getline(ss, row.pair, ',');
    for (std::size_t i = 0; i < columns; ++i) {
      std::string cell;
      std::getline(ss, cell, ',');
      row.values.push_back(std::stod(cell));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace afh::check
