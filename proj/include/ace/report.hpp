#pragma once

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ace/errors.hpp"
#include "ace/format.hpp"
#include "ace/metrics.hpp"

namespace ace {

// One results table: an epsilon sweep for a single (victim, scorer, attack) setting.
struct ResultTable {
  std::string name;
  std::string title;
  std::vector<EvalReport> rows;  // ascending epsilon, clean row first

  bool has_selective_risk() const {
    return std::any_of(rows.begin(), rows.end(), [](const EvalReport& r) { return r.has_selective_risk(); });
  }

  void sort_rows() {
    std::stable_sort(rows.begin(), rows.end(),
                     [](const EvalReport& a, const EvalReport& b) { return a.epsilon < b.epsilon; });
  }
};

inline std::vector<std::string> report_columns(bool selective_risk) {
  std::vector<std::string> cols{"epsilon", "effective_epsilon"};
  if (selective_risk) cols.push_back("selective_risk");
  for (const char* c : {"aurc_x1000", "nll", "brier", "accuracy_percent"}) cols.emplace_back(c);
  return cols;
}

// Columns follow the results-table order; selective risk appears only for
// tables that carry it.
inline void write_report_csv(std::ostream& os, const ResultTable& table) {
  const bool sr = table.has_selective_risk();
  const auto cols = report_columns(sr);
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n';
  for (const auto& r : table.rows) {
    os << format_exact(r.epsilon) << ',' << format_exact(r.effective_epsilon);
    if (sr) os << ',' << format_exact(r.selective_risk);
    os << ',' << format_exact(r.aurc_x1000) << ',' << format_exact(r.nll) << ',' << format_exact(r.brier)
       << ',' << format_exact(r.accuracy_percent) << '\n';
  }
}

inline ResultTable read_report_csv(std::istream& is, std::string name = {}) {
  std::string line;
  if (!std::getline(is, line)) throw ConfigError("report CSV is empty");
  const auto header = split(line, ',');
  const bool sr = header == report_columns(true);
  if (!sr && header != report_columns(false)) throw ConfigError("unexpected report CSV header");
  ResultTable table;
  table.name = std::move(name);
  while (std::getline(is, line)) {
    if (trim(line).empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != header.size()) throw ConfigError("report CSV row has wrong field count");
    EvalReport r;
    std::size_t k = 0;
    r.epsilon = parse_double(f[k++]);
    r.effective_epsilon = parse_double(f[k++]);
    if (sr) r.selective_risk = parse_double(f[k++]);
    r.aurc_x1000 = parse_double(f[k++]);
    r.nll = parse_double(f[k++]);
    r.brier = parse_double(f[k++]);
    r.accuracy_percent = parse_double(f[k++]);
    table.rows.push_back(r);
  }
  return table;
}

inline std::string format_epsilon(double eps) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", eps);
  return buf;
}

/// Aligned plain-text rendering: AURC scaled by 1000, accuracy in percent with
/// two decimals.
inline std::string report_table(const ResultTable& table) {
  const bool sr = table.has_selective_risk();
  std::vector<std::string> header{"eps", "Effective eps"};
  if (sr) header.emplace_back("Selective Risk");
  for (const char* c : {"AURC (x1e3)", "NLL", "Brier", "Accuracy"}) header.emplace_back(c);

  std::vector<std::vector<std::string>> cells;
  for (const auto& r : table.rows) {
    std::vector<std::string> row{format_epsilon(r.epsilon), format_fixed(r.effective_epsilon, 5)};
    if (sr) row.push_back(r.has_selective_risk() ? format_fixed(r.selective_risk, 4) : "-");
    row.push_back(format_fixed(r.aurc_x1000, 2));
    row.push_back(format_fixed(r.nll, 4));
    row.push_back(format_fixed(r.brier, 4));
    row.push_back(format_fixed(r.accuracy_percent, 2));
    cells.push_back(std::move(row));
  }
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) {
    width[c] = header[c].size();
    for (const auto& row : cells) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream os;
  if (!table.title.empty()) os << table.title << '\n';
  auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) os << "  ";
      os << std::string(width[c] - row[c].size(), ' ') << row[c];
    }
    os << '\n';
  };
  emit(header);
  std::size_t total = 0;
  for (auto w : width) total += w;
  os << std::string(total + 2 * (width.size() - 1), '-') << '\n';
  for (const auto& row : cells) emit(row);
  return os.str();
}

}  // namespace ace
