#pragma once
// Hierarchical outcome data: suite -> app -> scenario -> configuration ->
// rollouts. One BenchmarkTree holds one model's results.

#include <algorithm>
#include <array>
#include <bitset>
#include <climits>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hbeval/errors.hpp"

namespace hbeval {

enum class Axis : std::uint8_t { instance = 0, profile = 1, theme = 2, ui_state = 3 };

inline constexpr std::array<Axis, 4> kAxes{Axis::instance, Axis::profile, Axis::theme,
                                          Axis::ui_state};
inline constexpr std::string_view kDefaultAxisValue = "default";

constexpr std::string_view axis_name(Axis axis) noexcept {
  switch (axis) {
    case Axis::instance: return "instance";
    case Axis::profile: return "profile";
    case Axis::theme: return "theme";
    case Axis::ui_state: return "ui_state";
  }
  return "?";
}

inline std::optional<Axis> parse_axis(std::string_view name) {
  for (const Axis axis : kAxes)
    if (axis_name(axis) == name) return axis;
  return std::nullopt;
}

class AxisMask {
 public:
  constexpr AxisMask() = default;

  static AxisMask all() { return AxisMask{}.with_all(); }
  static AxisMask none() { return AxisMask{}; }

  // Comma-separated axis names, or "all" / "none".
  static AxisMask parse(std::string_view text) {
    if (text == "all") return all();
    AxisMask mask;
    if (text == "none" || text.empty()) return mask;
    std::size_t start = 0;
    while (start <= text.size()) {
      const std::size_t end = std::min(text.find(',', start), text.size());
      const std::string_view name = text.substr(start, end - start);
      const auto axis = parse_axis(name);
      if (!axis) throw ParseError("unknown axis '" + std::string(name) + "'");
      mask.set(*axis);
      start = end + 1;
    }
    return mask;
  }

  AxisMask& set(Axis axis, bool on = true) {
    bits_.set(static_cast<std::size_t>(axis), on);
    return *this;
  }
  bool enabled(Axis axis) const { return bits_.test(static_cast<std::size_t>(axis)); }
  std::size_t count() const { return bits_.count(); }

  std::string to_string() const {
    std::string out;
    for (const Axis axis : kAxes) {
      if (!enabled(axis)) continue;
      if (!out.empty()) out += ',';
      out += axis_name(axis);
    }
    return out.empty() ? "none" : out;
  }

  friend bool operator==(const AxisMask&, const AxisMask&) = default;

 private:
  AxisMask& with_all() {
    bits_.set();
    return *this;
  }
  std::bitset<4> bits_;
};

struct ConfigKey {
  std::string instance{kDefaultAxisValue};
  std::string profile{kDefaultAxisValue};
  std::string theme{kDefaultAxisValue};
  std::string ui_state{kDefaultAxisValue};

  const std::string& get(Axis axis) const {
    switch (axis) {
      case Axis::instance: return instance;
      case Axis::profile: return profile;
      case Axis::theme: return theme;
      case Axis::ui_state: return ui_state;
    }
    return instance;
  }
  std::string& get(Axis axis) { return const_cast<std::string&>(std::as_const(*this).get(axis)); }

  // Disabled axes collapse to "default".
  ConfigKey masked(const AxisMask& mask) const {
    ConfigKey out = *this;
    for (const Axis axis : kAxes)
      if (!mask.enabled(axis)) out.get(axis) = kDefaultAxisValue;
    return out;
  }

  std::string to_string() const { return instance + "/" + profile + "/" + theme + "/" + ui_state; }

  auto operator<=>(const ConfigKey&) const = default;
};

struct OutcomeRecord {
  std::string model;
  std::string app;
  std::string scenario;
  ConfigKey config;
  std::uint32_t rollout = 0;
  bool success = false;
};

// Successes k out of R trials for one leaf, with p̂ = k / R.
struct LeafRate {
  double rate = 0.0;
  std::size_t successes = 0;
  std::size_t trials = 0;
};

class TreeBuilder;

// Immutable once built; iteration is sorted by identifier at every level.
class BenchmarkTree {
 public:
  using Leaf = std::map<std::uint32_t, bool>;  // rollout index -> outcome
  using Scenario = std::map<ConfigKey, Leaf>;
  using App = std::map<std::string, Scenario>;
  using Apps = std::map<std::string, App>;

  BenchmarkTree() = default;

  const Apps& apps() const noexcept { return apps_; }
  const AxisMask& axis_mask() const noexcept { return mask_; }

  const App& app(const std::string& name) const {
    const auto it = apps_.find(name);
    if (it == apps_.end()) throw LookupError("unknown app '" + name + "'");
    return it->second;
  }

  const Leaf& leaf(const std::string& app_name, const std::string& scenario,
                   const ConfigKey& config) const {
    const App& a = app(app_name);
    const auto s = a.find(scenario);
    if (s == a.end())
      throw LookupError("unknown scenario '" + scenario + "' in app '" + app_name + "'");
    const auto c = s->second.find(config);
    if (c == s->second.end())
      throw LookupError("no leaf for configuration " + config.to_string() + " in " + app_name +
                        "/" + scenario);
    return c->second;
  }

  std::size_t app_count() const noexcept { return apps_.size(); }
  std::size_t scenario_count(const std::string& app_name) const { return app(app_name).size(); }
  std::size_t leaf_count() const {
    std::size_t n = 0;
    for (const auto& [_, a] : apps_)
      for (const auto& [__, s] : a) n += s.size();
    return n;
  }
  std::size_t rollout_count() const {
    std::size_t n = 0;
    for (const auto& [_, a] : apps_)
      for (const auto& [__, s] : a)
        for (const auto& [___, leaf] : s) n += leaf.size();
    return n;
  }
  bool empty() const noexcept { return apps_.empty(); }

  friend bool operator==(const BenchmarkTree&, const BenchmarkTree&) = default;

 private:
  friend class TreeBuilder;
  Apps apps_;
  AxisMask mask_ = AxisMask::all();
};

inline std::size_t successes(const BenchmarkTree::Leaf& leaf) {
  std::size_t k = 0;
  for (const auto& [_, ok] : leaf) k += ok ? 1 : 0;
  return k;
}

// p̂ = k / R of a non-empty leaf.
inline double rate_of(const BenchmarkTree::Leaf& leaf) {
  return static_cast<double>(successes(leaf)) / static_cast<double>(leaf.size());
}

class TreeBuilder {
 public:
  explicit TreeBuilder(AxisMask mask = AxisMask::all()) { tree_.mask_ = mask; }

  // Returns false when an identical record was already present. A record
  // with the same key and a different outcome raises IntegrityError.
  bool add(const std::string& app, const std::string& scenario, const ConfigKey& config,
           std::uint32_t rollout, bool success) {
    auto& leaf = tree_.apps_[app][scenario][config.masked(tree_.mask_)];
    const auto [it, inserted] = leaf.emplace(rollout, success);
    if (!inserted && it->second != success)
      throw IntegrityError("conflicting outcomes for " + app + "/" + scenario + "/" +
                           config.masked(tree_.mask_).to_string() + " rollout " +
                           std::to_string(rollout));
    return inserted;
  }

  bool add(const OutcomeRecord& r) { return add(r.app, r.scenario, r.config, r.rollout, r.success); }

  // Appends a whole outcome vector with rollout indices 0..n-1.
  void add_leaf(const std::string& app, const std::string& scenario, const ConfigKey& config,
                const std::vector<bool>& outcomes) {
    for (std::size_t r = 0; r < outcomes.size(); ++r)
      add(app, scenario, config, static_cast<std::uint32_t>(r), outcomes[r]);
  }

  // Structural holes are representable so validate_tree can report them.
  void add_app(const std::string& app) { tree_.apps_[app]; }
  void add_scenario(const std::string& app, const std::string& scenario) {
    tree_.apps_[app][scenario];
  }
  void add_empty_leaf(const std::string& app, const std::string& scenario, const ConfigKey& config) {
    tree_.apps_[app][scenario][config.masked(tree_.mask_)];
  }

  BenchmarkTree build() && { return std::move(tree_); }
  BenchmarkTree build() const& { return tree_; }

 private:
  BenchmarkTree tree_;
};

// ---------------------------------------------------------------------------
// Leaf-level rate

inline LeafRate leaf_rate(const BenchmarkTree& tree, const std::string& app,
                          const std::string& scenario, const ConfigKey& config) {
  const auto& leaf = tree.leaf(app, scenario, config);
  LeafRate out;
  out.trials = leaf.size();
  out.successes = successes(leaf);
  if (out.trials == 0) throw DomainError("leaf has no rollouts");
  out.rate = static_cast<double>(out.successes) / static_cast<double>(out.trials);
  return out;
}

// ---------------------------------------------------------------------------
// Validation

struct Diagnostic {
  std::string location;
  std::string message;
};

struct ValidationReport {
  std::vector<Diagnostic> errors;
  std::vector<Diagnostic> warnings;
  bool is_balanced = true;

  bool ok() const noexcept { return errors.empty(); }
};

inline ValidationReport validate_tree(const BenchmarkTree& tree) {
  ValidationReport report;
  if (tree.empty()) report.errors.push_back({"suite", "tree contains no apps"});

  std::map<std::size_t, std::size_t> lengths;
  for (const auto& [app, scenarios] : tree.apps()) {
    if (scenarios.empty()) report.errors.push_back({app, "app has no scenarios"});
    for (const auto& [scenario, configs] : scenarios) {
      const std::string where = app + "/" + scenario;
      if (configs.empty()) report.errors.push_back({where, "scenario has no configurations"});
      for (const auto& [config, leaf] : configs) {
        if (leaf.empty())
          report.errors.push_back({where + "/" + config.to_string(), "leaf has no rollouts"});
        ++lengths[leaf.size()];
        for (const Axis axis : kAxes)
          if (!tree.axis_mask().enabled(axis) && config.get(axis) != kDefaultAxisValue)
            report.warnings.push_back({where + "/" + config.to_string(),
                                       "disabled axis '" + std::string(axis_name(axis)) +
                                           "' carries a non-default value"});
      }
    }
  }

  report.is_balanced = lengths.size() <= 1;
  if (!report.is_balanced) {
    // Modal R; ties resolve to the larger R.
    std::size_t modal = 0, best = 0;
    for (const auto& [len, n] : lengths)
      if (n >= best) best = n, modal = len;
    for (const auto& [app, scenarios] : tree.apps())
      for (const auto& [scenario, configs] : scenarios)
        for (const auto& [config, leaf] : configs)
          if (leaf.size() != modal)
            report.warnings.push_back({app + "/" + scenario + "/" + config.to_string(),
                                       "unbalanced leaf: R=" + std::to_string(leaf.size()) +
                                           " (modal R=" + std::to_string(modal) + ")"});
  }
  return report;
}

// ---------------------------------------------------------------------------
// Ingestion

enum class InputFormat { automatic, jsonl, csv };

struct Dataset {
  std::map<std::string, BenchmarkTree> models;
  std::vector<Diagnostic> warnings;
  std::size_t records = 0;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

// Splits one CSV line; supports double-quoted fields with "" escapes.
inline std::vector<std::string> split_csv(std::string_view line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw ParseError("unterminated quoted field", line_no);
  fields.push_back(trim(cur));
  return fields;
}

inline std::string require_identifier(const std::string& value, std::string_view field,
                                      std::size_t line_no) {
  if (value.empty()) throw ParseError("field '" + std::string(field) + "' is empty", line_no);
  return value;
}

inline bool parse_success_text(const std::string& text, std::size_t line_no) {
  if (text == "true" || text == "1" || text == "True" || text == "TRUE") return true;
  if (text == "false" || text == "0" || text == "False" || text == "FALSE") return false;
  throw ParseError("field 'success' must be a boolean, got '" + text + "'", line_no);
}

inline std::uint32_t parse_rollout_text(const std::string& text, std::size_t line_no) {
  if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos)
    throw ParseError("field 'rollout' must be a non-negative integer, got '" + text + "'",
                     line_no);
  try {
    const unsigned long v = std::stoul(text);
    if (v > UINT32_MAX) throw std::out_of_range("rollout");
    return static_cast<std::uint32_t>(v);
  } catch (const std::exception&) {
    throw ParseError("field 'rollout' out of range", line_no);
  }
}

inline OutcomeRecord record_from_json(const nlohmann::json& obj, std::size_t line_no) {
  if (!obj.is_object()) throw ParseError("expected a JSON object", line_no);
  auto str_field = [&](const char* name, bool required) -> std::string {
    const auto it = obj.find(name);
    if (it == obj.end() || it->is_null()) {
      if (required) throw ParseError(std::string("missing field '") + name + "'", line_no);
      return std::string(kDefaultAxisValue);
    }
    if (!it->is_string()) throw ParseError(std::string("field '") + name + "' must be a string", line_no);
    return require_identifier(it->get<std::string>(), name, line_no);
  };
  OutcomeRecord r;
  r.model = str_field("model", true);
  r.app = str_field("app", true);
  r.scenario = str_field("scenario", true);
  for (const Axis axis : kAxes) r.config.get(axis) = str_field(axis_name(axis).data(), false);

  const auto rollout = obj.find("rollout");
  if (rollout == obj.end()) throw ParseError("missing field 'rollout'", line_no);
  if (!rollout->is_number_integer() || rollout->get<std::int64_t>() < 0 ||
      rollout->get<std::int64_t>() > static_cast<std::int64_t>(UINT32_MAX))
    throw ParseError("field 'rollout' must be a non-negative integer", line_no);
  r.rollout = static_cast<std::uint32_t>(rollout->get<std::int64_t>());

  const auto success = obj.find("success");
  if (success == obj.end()) throw ParseError("missing field 'success'", line_no);
  if (success->is_boolean()) {
    r.success = success->get<bool>();
  } else if (success->is_number_integer() &&
             (success->get<std::int64_t>() == 0 || success->get<std::int64_t>() == 1)) {
    r.success = success->get<std::int64_t>() == 1;
  } else {
    throw ParseError("field 'success' must be a boolean", line_no);
  }
  return r;
}

}  // namespace detail

// Reads JSON Lines (one object per rollout) or the comma-separated variant
// with the same header names. Blank lines are skipped.
inline Dataset ingest_records(std::istream& in, const AxisMask& mask,
                              InputFormat format = InputFormat::automatic) {
  Dataset data;
  std::map<std::string, TreeBuilder> builders;
  std::map<Axis, std::pair<std::size_t, std::size_t>> collapsed;  // count, first line
  std::size_t duplicates = 0;

  std::vector<std::string> header;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string text = detail::trim(line);
    if (text.empty()) continue;
    if (format == InputFormat::automatic)
      format = text.front() == '{' ? InputFormat::jsonl : InputFormat::csv;

    OutcomeRecord r;
    if (format == InputFormat::jsonl) {
      nlohmann::json obj;
      try {
        obj = nlohmann::json::parse(text);
      } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("invalid JSON: ") + e.what(), line_no);
      }
      r = detail::record_from_json(obj, line_no);
    } else {
      auto fields = detail::split_csv(text, line_no);
      if (header.empty()) {
        header = std::move(fields);
        for (const char* required : {"model", "app", "scenario", "rollout", "success"})
          if (std::find(header.begin(), header.end(), required) == header.end())
            throw ParseError(std::string("CSV header lacks column '") + required + "'", line_no);
        continue;
      }
      if (fields.size() != header.size())
        throw ParseError("expected " + std::to_string(header.size()) + " fields, got " +
                             std::to_string(fields.size()),
                         line_no);
      nlohmann::json obj = nlohmann::json::object();
      for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == "rollout")
          obj["rollout"] = detail::parse_rollout_text(fields[i], line_no);
        else if (header[i] == "success")
          obj["success"] = detail::parse_success_text(fields[i], line_no);
        else if (!fields[i].empty())
          obj[header[i]] = fields[i];
      }
      r = detail::record_from_json(obj, line_no);
    }

    for (const Axis axis : kAxes) {
      if (!mask.enabled(axis) && r.config.get(axis) != kDefaultAxisValue) {
        auto& [count, first] = collapsed[axis];
        if (count++ == 0) first = line_no;
      }
    }
    auto [it, _] = builders.try_emplace(r.model, mask);
    try {
      if (!it->second.add(r)) ++duplicates;
    } catch (const IntegrityError& e) {
      throw IntegrityError("line " + std::to_string(line_no) + ": " + e.what());
    }
    ++data.records;
  }
  if (data.records == 0) throw EmptyDatasetError("input contains no records");

  for (const auto& [axis, info] : collapsed)
    data.warnings.push_back(
        {"line " + std::to_string(info.second),
         std::to_string(info.first) + " record(s) carry a value on disabled axis '" +
             std::string(axis_name(axis)) + "'; collapsed to 'default'"});
  if (duplicates > 0)
    data.warnings.push_back(
        {"input", std::to_string(duplicates) + " exact duplicate record(s) ignored"});
  for (auto& [model, builder] : builders) data.models.emplace(model, std::move(builder).build());
  return data;
}

inline Dataset ingest_records(std::string_view text, const AxisMask& mask,
                              InputFormat format = InputFormat::automatic) {
  std::istringstream in{std::string(text)};
  return ingest_records(in, mask, format);
}

// Canonical JSON Lines form; ingesting the output reproduces the tree.
inline void write_records(std::ostream& out, const std::string& model, const BenchmarkTree& tree) {
  for (const auto& [app, scenarios] : tree.apps())
    for (const auto& [scenario, configs] : scenarios)
      for (const auto& [config, leaf] : configs)
        for (const auto& [rollout, ok] : leaf) {
          nlohmann::ordered_json obj;
          obj["model"] = model;
          obj["app"] = app;
          obj["scenario"] = scenario;
          for (const Axis axis : kAxes) obj[std::string(axis_name(axis))] = config.get(axis);
          obj["rollout"] = rollout;
          obj["success"] = ok;
          out << obj.dump() << '\n';
        }
}

}  // namespace hbeval
