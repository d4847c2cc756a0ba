#pragma once
// Rendering of command results: aligned text tables, delimited tables, and a
// versioned JSON envelope {tool_version, command, seed, params, metrics}.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

namespace hbeval {

#ifndef HBEVAL_VERSION
#define HBEVAL_VERSION "0.0.0"
#endif

inline constexpr const char* kToolVersion = HBEVAL_VERSION;

using OrderedJson = nlohmann::ordered_json;

enum class OutputFormat { text, delimited, json };

struct Table {
  std::string title;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  Table& add(std::vector<std::string> row) {
    rows.push_back(std::move(row));
    return *this;
  }
};

struct Report {
  std::string command;
  std::optional<std::uint64_t> seed;  // absent for deterministic commands
  OrderedJson params = OrderedJson::object();
  OrderedJson metrics = OrderedJson::object();
  std::vector<Table> tables;
  std::vector<std::string> warnings;
};

inline std::string fmt(double v, int precision = 4) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  std::string s = buf;
  if (s == "-0" || s.find_first_not_of("-0.") == std::string::npos) s.erase(0, s[0] == '-' ? 1 : 0);
  return s;
}

inline void render_text(std::ostream& out, const Table& t) {
  if (!t.title.empty()) out << t.title << '\n';
  std::vector<std::size_t> width(t.columns.size());
  for (std::size_t c = 0; c < t.columns.size(); ++c) width[c] = t.columns[c].size();
  for (const auto& row : t.rows)
    for (std::size_t c = 0; c < row.size() && c < width.size(); ++c) width[c] = std::max(width[c], row[c].size());
  auto line = [&](const std::vector<std::string>& cells) {
    std::string s;
    for (std::size_t c = 0; c < width.size(); ++c) {
      const std::string& cell = c < cells.size() ? cells[c] : std::string();
      if (c > 0) s += "  ";
      s += cell;
      if (c + 1 < width.size()) s.append(width[c] - cell.size(), ' ');
    }
    out << s << '\n';
  };
  line(t.columns);
  std::string rule;
  for (std::size_t c = 0; c < width.size(); ++c) rule += (c ? "  " : "") + std::string(width[c], '-');
  out << rule << '\n';
  for (const auto& row : t.rows) line(row);
}

inline std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (const char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + '"';
}

inline void render_delimited(std::ostream& out, const Table& t) {
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) out << (c ? "," : "") << csv_cell(cells[c]);
    out << '\n';
  };
  line(t.columns);
  for (const auto& row : t.rows) line(row);
}

inline OrderedJson envelope(const Report& r) {
  OrderedJson j;
  j["tool_version"] = kToolVersion;
  j["command"] = r.command;
  j["seed"] = r.seed ? OrderedJson(*r.seed) : OrderedJson(nullptr);
  j["params"] = r.params;
  j["metrics"] = r.metrics;
  return j;
}

inline void emit_report(std::ostream& out, const Report& r, OutputFormat format) {
  switch (format) {
    case OutputFormat::json: out << envelope(r).dump(2) << '\n'; return;
    case OutputFormat::delimited:
      for (std::size_t i = 0; i < r.tables.size(); ++i) {
        if (i > 0) out << '\n';
        if (!r.tables[i].title.empty()) out << "# " << r.tables[i].title << '\n';
        render_delimited(out, r.tables[i]);
      }
      return;
    case OutputFormat::text:
      if (r.seed) out << "seed: " << *r.seed << "\n\n";
      for (std::size_t i = 0; i < r.tables.size(); ++i) {
        if (i > 0) out << '\n';
        render_text(out, r.tables[i]);
      }
      if (!r.warnings.empty()) {
        out << "\nwarnings:\n";
        for (const auto& w : r.warnings) out << "  " << w << '\n';
      }
      return;
  }
}

}  // namespace hbeval
