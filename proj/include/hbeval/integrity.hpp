#pragma once
// Offline integrity checks for task configurations: {{template}} resolution
// against profile stores, feasibility constraints, and a small predicate
// language for spotting configurations that are already solved at start.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hbeval/errors.hpp"
#include "hbeval/parallel.hpp"

namespace hbeval {

using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// Profile store

struct ProfileStore {
  std::string profile_id;
  Json user_meta = Json::object();
  std::map<std::string, std::vector<Json>> tables;

  const std::vector<Json>* table(const std::string& name) const {
    const auto it = tables.find(name);
    return it == tables.end() ? nullptr : &it->second;
  }
};

inline ProfileStore profile_from_json(const Json& doc, const std::string& fallback_id = {}) {
  if (!doc.is_object()) throw ParseError("profile document must be a JSON object");
  ProfileStore store;
  store.profile_id = doc.value("profile_id", fallback_id);
  if (store.profile_id.empty()) throw ParseError("profile has no profile_id");
  if (doc.contains("user_meta")) {
    if (!doc["user_meta"].is_object()) throw ParseError("user_meta must be an object");
    store.user_meta = doc["user_meta"];
  }
  if (doc.contains("tables")) {
    const Json& tables = doc["tables"];
    if (!tables.is_object()) throw ParseError("tables must be an object");
    for (const auto& [name, rows] : tables.items()) {
      if (!rows.is_array()) throw ParseError("table '" + name + "' must be an array");
      std::vector<Json> records;
      std::optional<std::set<std::string>> fields;
      for (const Json& row : rows) {
        if (!row.is_object()) throw ParseError("table '" + name + "' holds a non-object row");
        std::set<std::string> keys;
        for (const auto& [field, value] : row.items()) {
          if (value.is_object() || value.is_array())
            throw ParseError("table '" + name + "' field '" + field + "' is not a scalar");
          keys.insert(field);
        }
        if (!fields) fields = keys;
        if (keys != *fields)
          throw IntegrityError("profile '" + store.profile_id + "': table '" + name +
                               "' has rows with different field sets");
        records.push_back(row);
      }
      store.tables.emplace(name, std::move(records));
    }
  }
  return store;
}

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LookupError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

// A single .json file, or every .json file of a directory (sorted by name).
inline std::vector<ProfileStore> load_profiles(const std::filesystem::path& path) {
  std::vector<std::filesystem::path> files;
  if (std::filesystem::is_directory(path)) {
    for (const auto& entry : std::filesystem::directory_iterator(path))
      if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(path);
  }
  std::vector<ProfileStore> out;
  for (const auto& file : files) {
    const Json doc = read_json_file(file);
    if (doc.is_array()) {
      for (const Json& p : doc) out.push_back(profile_from_json(p));
    } else {
      out.push_back(profile_from_json(doc, file.stem().string()));
    }
  }
  std::set<std::string> seen;
  for (const auto& p : out)
    if (!seen.insert(p.profile_id).second)
      throw IntegrityError("duplicate profile_id '" + p.profile_id + "'");
  return out;
}

// ---------------------------------------------------------------------------
// Timestamps

// ISO-8601 date or date-time (optional fraction and zone) to seconds since
// the Unix epoch; numbers are taken as epoch seconds.
inline std::optional<double> timestamp_seconds(const Json& value) {
  if (value.is_number()) return value.get<double>();
  if (!value.is_string()) return std::nullopt;
  const std::string& s = value.get_ref<const std::string&>();
  auto num = [&](std::size_t pos, std::size_t len) -> std::optional<int> {
    if (pos + len > s.size()) return std::nullopt;
    int v = 0;
    const auto r = std::from_chars(s.data() + pos, s.data() + pos + len, v);
    if (r.ec != std::errc{} || r.ptr != s.data() + pos + len) return std::nullopt;
    return v;
  };
  const auto y = num(0, 4), mo = num(5, 2), d = num(8, 2);
  if (!y || !mo || !d || s[4] != '-' || s[7] != '-') return std::nullopt;
  const std::chrono::year_month_day ymd{std::chrono::year{*y}, std::chrono::month{unsigned(*mo)},
                                        std::chrono::day{unsigned(*d)}};
  if (!ymd.ok()) return std::nullopt;
  double secs = static_cast<double>(std::chrono::sys_days{ymd}.time_since_epoch().count()) * 86400.0;
  std::size_t pos = 10;
  if (pos < s.size() && (s[pos] == 'T' || s[pos] == ' ')) {
    const auto h = num(pos + 1, 2), mi = num(pos + 4, 2);
    if (!h || !mi || s[pos + 3] != ':' || *h > 23 || *mi > 59) return std::nullopt;
    secs += *h * 3600.0 + *mi * 60.0;
    pos += 6;
    if (pos < s.size() && s[pos] == ':') {
      const auto sec = num(pos + 1, 2);
      if (!sec || *sec > 60) return std::nullopt;
      secs += *sec;
      pos += 3;
      if (pos < s.size() && s[pos] == '.') {
        std::size_t end = pos + 1;
        while (end < s.size() && std::isdigit(static_cast<unsigned char>(s[end]))) ++end;
        if (end == pos + 1) return std::nullopt;
        secs += std::stod("0" + s.substr(pos, end - pos));
        pos = end;
      }
    }
    if (pos < s.size() && s[pos] == 'Z') {
      ++pos;
    } else if (pos < s.size() && (s[pos] == '+' || s[pos] == '-')) {
      const auto zh = num(pos + 1, 2), zm = num(pos + 4, 2);
      if (!zh || !zm || s[pos + 3] != ':') return std::nullopt;
      const double offset = *zh * 3600.0 + *zm * 60.0;
      secs += s[pos] == '+' ? -offset : offset;
      pos += 6;
    }
  }
  if (pos != s.size()) return std::nullopt;
  return secs;
}

// UTC "YYYY-MM-DDTHH:MM:SS[.fff]Z".
inline std::string format_timestamp(double seconds) {
  seconds = std::round(seconds * 1000.0) / 1000.0;
  const double whole = std::floor(seconds);
  const auto days = static_cast<long long>(std::floor(whole / 86400.0));
  auto rem = static_cast<long long>(whole - static_cast<double>(days) * 86400.0);
  const std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{days}}};
  char buf[40];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02lld:%02lld:%02lld", int(ymd.year()),
                unsigned(ymd.month()), unsigned(ymd.day()), rem / 3600, (rem / 60) % 60, rem % 60);
  std::string out = buf;
  const long long millis = std::llround((seconds - whole) * 1000.0);
  if (millis > 0) {
    std::snprintf(buf, sizeof buf, ".%03lld", millis);
    out += buf;
  }
  return out + "Z";
}

// ---------------------------------------------------------------------------
// Values, literals, conditions

enum class CompareOp { ge, le, eq, gt, lt };

constexpr const char* op_symbol(CompareOp op) noexcept {
  switch (op) {
    case CompareOp::ge: return ">=";
    case CompareOp::le: return "<=";
    case CompareOp::eq: return "=";
    case CompareOp::gt: return ">";
    case CompareOp::lt: return "<";
  }
  return "?";
}

inline std::optional<CompareOp> parse_op(std::string_view s) {
  if (s == ">=") return CompareOp::ge;
  if (s == "<=") return CompareOp::le;
  if (s == "=" || s == "==") return CompareOp::eq;
  if (s == ">") return CompareOp::gt;
  if (s == "<") return CompareOp::lt;
  return std::nullopt;
}

// Numbers compare numerically, strings that both read as timestamps compare
// as instants, other strings lexicographically, booleans by equality only.
// Mismatched types never compare true.
inline bool compare_values(const Json& lhs, CompareOp op, const Json& rhs) {
  int cmp = 0;
  if (lhs.is_number() && rhs.is_number()) {
    const double a = lhs.get<double>(), b = rhs.get<double>();
    cmp = a < b ? -1 : (a > b ? 1 : 0);
  } else if (lhs.is_string() && rhs.is_string()) {
    const auto ta = timestamp_seconds(lhs), tb = timestamp_seconds(rhs);
    if (ta && tb) {
      cmp = *ta < *tb ? -1 : (*ta > *tb ? 1 : 0);
    } else {
      const int c = lhs.get_ref<const std::string&>().compare(rhs.get_ref<const std::string&>());
      cmp = c < 0 ? -1 : (c > 0 ? 1 : 0);
    }
  } else if (lhs.is_boolean() && rhs.is_boolean()) {
    if (op != CompareOp::eq) return false;
    return lhs.get<bool>() == rhs.get<bool>();
  } else {
    return false;
  }
  switch (op) {
    case CompareOp::ge: return cmp >= 0;
    case CompareOp::le: return cmp <= 0;
    case CompareOp::eq: return cmp == 0;
    case CompareOp::gt: return cmp > 0;
    case CompareOp::lt: return cmp < 0;
  }
  return false;
}

struct Literal {
  enum class Kind { value, template_token, param };
  Kind kind = Kind::value;
  Json value;        // Kind::value
  std::string name;  // template raw token or parameter name

  std::string to_string() const {
    switch (kind) {
      case Kind::value:
        return value.is_string() ? "'" + value.get<std::string>() + "'" : value.dump();
      case Kind::template_token: return name;
      case Kind::param: return "<" + name + ">";
    }
    return "?";
  }
  friend bool operator==(const Literal&, const Literal&) = default;
};

struct Condition {
  std::string field;
  CompareOp op = CompareOp::eq;
  Literal value;

  std::string to_string() const { return field + op_symbol(op) + value.to_string(); }
  friend bool operator==(const Condition&, const Condition&) = default;
};

inline std::string conditions_to_string(const std::vector<Condition>& conds) {
  std::string out;
  for (const auto& c : conds) {
    if (!out.empty()) out += " and ";
    out += c.to_string();
  }
  return out;
}

inline const Json& lookup_param(const Json& params, const std::string& name) {
  if (!params.is_object() || !params.contains(name))
    throw ResolutionError("instance parameter '" + name + "' is not defined");
  return params.at(name);
}

// ---------------------------------------------------------------------------
// Templates

enum class TemplateKind { identity, relational, positioning };

constexpr const char* template_kind_name(TemplateKind k) noexcept {
  switch (k) {
    case TemplateKind::identity: return "identity";
    case TemplateKind::relational: return "relational";
    case TemplateKind::positioning: return "positioning";
  }
  return "?";
}

enum class Position { beginning, middle, end };

struct TemplateExpr {
  std::string raw;  // "{{...}}"
  TemplateKind kind = TemplateKind::identity;
  std::string key;     // identity: user_meta key (email, id, name)
  std::string entity;  // relational / positioning
  std::string table;
  std::string field;   // relational: selected field; positioning: "timestamp"
  Position position = Position::beginning;
  std::vector<Condition> filter;
};

// Naive English plural: room -> rooms, address -> addresses, entry -> entries.
inline std::string plural(const std::string& noun) {
  if (noun.empty()) return noun;
  auto ends = [&](std::string_view suffix) {
    return noun.size() >= suffix.size() && noun.compare(noun.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  if (ends("s") || ends("x") || ends("z") || ends("ch") || ends("sh")) return noun + "es";
  if (ends("y") && noun.size() > 1 && std::string_view("aeiou").find(noun[noun.size() - 2]) == std::string_view::npos)
    return noun.substr(0, noun.size() - 1) + "ies";
  return noun + "s";
}

inline std::vector<Condition> parse_conditions(std::string_view text, char separator = '\0',
                                        bool allow_templates = true);

namespace detail {

inline bool is_ident(std::string_view s) {
  if (s.empty() || !(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) return false;
  return std::all_of(s.begin(), s.end(),
                     [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; });
}

inline bool starts_with(std::string_view s, std::string_view p) { return s.substr(0, p.size()) == p; }
inline bool ends_with(std::string_view s, std::string_view p) {
  return s.size() >= p.size() && s.substr(s.size() - p.size()) == p;
}

}  // namespace detail

// Grammar:
//   current_user_(email|id|name)
//   first_<entity>_<field>[:<cond>{,<cond>}]            table = plural(entity)
//   (beginning|middle|end)_<entity>_time[:<cond>...]    reads field "timestamp"
// <field> is the last underscore-separated word; use first_<entity>.<field>
// when the field name itself contains underscores.
inline TemplateExpr parse_template(std::string_view token) {
  const std::string raw(token);
  auto fail = [&](const std::string& why) -> TemplateExpr {
    throw ParseError(why + ": '" + raw + "'");
  };
  if (!detail::starts_with(token, "{{") || !detail::ends_with(token, "}}") || token.size() < 4)
    return fail("not a {{...}} template token");
  std::string_view body = token.substr(2, token.size() - 4);
  while (!body.empty() && body.front() == ' ') body.remove_prefix(1);
  while (!body.empty() && body.back() == ' ') body.remove_suffix(1);

  TemplateExpr expr;
  expr.raw = raw;
  std::string_view name = body;
  std::string_view filter;
  if (const auto colon = body.find(':'); colon != std::string_view::npos) {
    name = body.substr(0, colon);
    filter = body.substr(colon + 1);
  }

  if (detail::starts_with(name, "current_user_")) {
    const auto key = name.substr(13);
    if (key != "email" && key != "id" && key != "name") return fail("unknown identity template");
    if (!filter.empty()) return fail("identity templates take no filter");
    expr.kind = TemplateKind::identity;
    expr.key = std::string(key);
    return expr;
  }

  for (const auto& [prefix, pos] : {std::pair{std::string_view("beginning_"), Position::beginning},
                                    std::pair{std::string_view("middle_"), Position::middle},
                                    std::pair{std::string_view("end_"), Position::end}}) {
    if (detail::starts_with(name, prefix) && detail::ends_with(name, "_time")) {
      const auto entity = name.substr(prefix.size(), name.size() - prefix.size() - 5);
      if (!detail::is_ident(entity)) return fail("malformed positioning template");
      expr.kind = TemplateKind::positioning;
      expr.position = pos;
      expr.entity = std::string(entity);
      expr.table = plural(expr.entity);
      expr.field = "timestamp";
      if (!filter.empty()) expr.filter = parse_conditions(filter, ',', false);
      return expr;
    }
  }

  if (detail::starts_with(name, "first_")) {
    const auto rest = name.substr(6);
    auto split = rest.find('.');
    std::size_t field_start = split;
    if (split == std::string_view::npos) {
      split = rest.rfind('_');
      field_start = split;
    }
    if (split == std::string_view::npos || split == 0) return fail("malformed relational template");
    const auto entity = rest.substr(0, split);
    const auto field = rest.substr(field_start + 1);
    if (!detail::is_ident(entity) || !detail::is_ident(field)) return fail("malformed relational template");
    expr.kind = TemplateKind::relational;
    expr.entity = std::string(entity);
    expr.table = plural(expr.entity);
    expr.field = std::string(field);
    if (!filter.empty()) expr.filter = parse_conditions(filter, ',', false);
    return expr;
  }
  return fail("unknown template");
}

namespace detail {

inline Json literal_value(const Literal& lit, const ProfileStore& store, const Json& params);

inline bool row_matches(const Json& row, const std::vector<Condition>& filter,
                        const ProfileStore& store, const Json& params) {
  for (const auto& c : filter) {
    if (!row.contains(c.field)) return false;
    if (!compare_values(row.at(c.field), c.op, literal_value(c.value, store, params))) return false;
  }
  return true;
}

inline std::vector<const Json*> matching_rows(const std::vector<Json>& rows,
                                              const std::vector<Condition>& filter,
                                              const ProfileStore& store, const Json& params) {
  std::vector<const Json*> out;
  for (const Json& row : rows)
    if (row_matches(row, filter, store, params)) out.push_back(&row);
  return out;
}

}  // namespace detail

inline Json resolve_template(const TemplateExpr& t, const ProfileStore& store, const Json& params = Json::object()) {
  if (t.kind == TemplateKind::identity) {
    for (const std::string& key : {t.key, "current_user_" + t.key})
      if (store.user_meta.contains(key)) return store.user_meta.at(key);
    throw ResolutionError("profile '" + store.profile_id + "': user_meta has no '" + t.key + "' for " + t.raw);
  }
  const auto* rows = store.table(t.table);
  const auto matched = rows ? detail::matching_rows(*rows, t.filter, store, params) : std::vector<const Json*>{};
  if (matched.empty())
    throw ResolutionError("profile '" + store.profile_id + "': table '" + t.table + "' has no " +
                          (t.filter.empty() ? "rows" : "matching rows") + " for " + t.raw);
  if (t.kind == TemplateKind::relational) {
    if (!matched.front()->contains(t.field))
      throw ResolutionError("profile '" + store.profile_id + "': table '" + t.table + "' has no field '" +
                            t.field + "'");
    return matched.front()->at(t.field);
  }
  std::vector<std::pair<double, const Json*>> times;
  for (const Json* row : matched) {
    if (!row->contains(t.field))
      throw ResolutionError("profile '" + store.profile_id + "': table '" + t.table + "' has no field '" +
                            t.field + "'");
    const auto secs = timestamp_seconds(row->at(t.field));
    if (!secs)
      throw ResolutionError("profile '" + store.profile_id + "': unreadable timestamp " +
                            row->at(t.field).dump() + " in table '" + t.table + "'");
    times.emplace_back(*secs, &row->at(t.field));
  }
  std::stable_sort(times.begin(), times.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  switch (t.position) {
    case Position::beginning: return *times.front().second;
    case Position::end: return *times.back().second;
    case Position::middle: {
      const std::size_t n = times.size();
      if (n % 2 == 1) return *times[n / 2].second;
      const double mid = 0.5 * (times[n / 2 - 1].first + times[n / 2].first);
      if (times[n / 2].second->is_number()) return mid;
      return format_timestamp(mid);
    }
  }
  return nullptr;
}

namespace detail {

inline Json literal_value(const Literal& lit, const ProfileStore& store, const Json& params) {
  switch (lit.kind) {
    case Literal::Kind::value: return lit.value;
    case Literal::Kind::param: return lookup_param(params, lit.name);
    case Literal::Kind::template_token: return resolve_template(parse_template(lit.name), store, params);
  }
  return nullptr;
}

// Calls fn(token, begin, end) for every {{...}} in `s`.
template <class Fn>
void for_each_token(const std::string& s, Fn&& fn) {
  std::size_t pos = 0;
  while ((pos = s.find("{{", pos)) != std::string::npos) {
    const auto close = s.find("}}", pos + 2);
    if (close == std::string::npos) throw ParseError("unterminated template in '" + s + "'");
    fn(std::string_view(s).substr(pos, close + 2 - pos), pos, close + 2);
    pos = close + 2;
  }
}

template <class Fn>
void walk_strings(const Json& node, Fn&& fn) {
  if (node.is_string()) {
    fn(node.get_ref<const std::string&>());
  } else if (node.is_structured()) {
    for (const auto& child : node) walk_strings(child, fn);
  }
}

}  // namespace detail

// A string that is exactly one token takes the resolved value with its JSON
// type; tokens embedded in longer strings are spliced in as text.
inline Json resolve_templates(const Json& mockdata, const ProfileStore& store,
                              const Json& params = Json::object()) {
  if (mockdata.is_object()) {
    Json out = Json::object();
    for (const auto& [k, v] : mockdata.items()) out[k] = resolve_templates(v, store, params);
    return out;
  }
  if (mockdata.is_array()) {
    Json out = Json::array();
    for (const auto& v : mockdata) out.push_back(resolve_templates(v, store, params));
    return out;
  }
  if (!mockdata.is_string()) return mockdata;
  const std::string& s = mockdata.get_ref<const std::string&>();
  std::vector<std::tuple<std::size_t, std::size_t, Json>> parts;
  detail::for_each_token(s, [&](std::string_view token, std::size_t b, std::size_t e) {
    parts.emplace_back(b, e, resolve_template(parse_template(token), store, params));
  });
  if (parts.empty()) return mockdata;
  if (parts.size() == 1 && std::get<0>(parts[0]) == 0 && std::get<1>(parts[0]) == s.size())
    return std::get<2>(parts[0]);
  std::string out;
  std::size_t at = 0;
  for (const auto& [b, e, v] : parts) {
    out += s.substr(at, b - at);
    out += v.is_string() ? v.get<std::string>() : v.dump();
    at = e;
  }
  return out + s.substr(at);
}

// ---------------------------------------------------------------------------
// Constraints

enum class ConstraintKind { entity_exists, data_volume, balance, max_count };

constexpr const char* constraint_kind_name(ConstraintKind k) noexcept {
  switch (k) {
    case ConstraintKind::entity_exists: return "EntityExists";
    case ConstraintKind::data_volume: return "DataVolume";
    case ConstraintKind::balance: return "Balance";
    case ConstraintKind::max_count: return "MaxCount";
  }
  return "?";
}

enum class Aggregate { any, sum, min, max };

struct Constraint {
  ConstraintKind kind = ConstraintKind::entity_exists;
  std::string table;
  std::vector<Condition> filter;
  std::size_t n = 1;                  // row-count kinds
  std::string field;                  // balance
  CompareOp op = CompareOp::ge;       // balance
  Literal threshold;                  // balance: number or <param>
  Aggregate aggregate = Aggregate::any;

  static Constraint entity_exists(std::string table, std::size_t n = 1) {
    Constraint c;
    c.table = std::move(table);
    c.n = n;
    return c;
  }
  static Constraint data_volume(std::string table, std::size_t n) {
    Constraint c = entity_exists(std::move(table), n);
    c.kind = ConstraintKind::data_volume;
    return c;
  }
  static Constraint max_count(std::string table, std::size_t n) {
    Constraint c = entity_exists(std::move(table), n);
    c.kind = ConstraintKind::max_count;
    return c;
  }
  static Constraint balance(std::string table, std::string field, CompareOp op, Literal threshold) {
    Constraint c;
    c.kind = ConstraintKind::balance;
    c.table = std::move(table);
    c.field = std::move(field);
    c.op = op;
    c.threshold = std::move(threshold);
    return c;
  }

  std::string to_string() const {
    std::string where = filter.empty() ? "" : " where " + conditions_to_string(filter);
    if (kind == ConstraintKind::balance) {
      std::string agg = aggregate == Aggregate::any ? "" : (aggregate == Aggregate::sum ? "sum " : (aggregate == Aggregate::min ? "min " : "max "));
      return std::string("Balance(") + agg + table + "." + field + where + " " + op_symbol(op) + " " +
             threshold.to_string() + ")";
    }
    return std::string(constraint_kind_name(kind)) + "(" + table + where + ", " + std::to_string(n) + ")";
  }
  friend bool operator==(const Constraint&, const Constraint&) = default;
};

inline Literal literal_from_json(const Json& v) {
  Literal lit;
  if (v.is_string()) {
    const auto& s = v.get_ref<const std::string&>();
    if (s.size() > 2 && s.front() == '<' && s.back() == '>') {
      lit.kind = Literal::Kind::param;
      lit.name = s.substr(1, s.size() - 2);
      return lit;
    }
    if (detail::starts_with(s, "{{")) {
      parse_template(s);
      lit.kind = Literal::Kind::template_token;
      lit.name = s;
      return lit;
    }
  }
  if (v.is_structured() || v.is_null()) throw ParseError("literal must be a scalar: " + v.dump());
  lit.value = v;
  return lit;
}

// {"kind": "EntityExists"|"DataVolume"|"MaxCount", "table": ..., "n": ..., "where": "..."}
// {"kind": "Balance", "table": ..., "field": ..., "op": ">=", "threshold": 500 | "<param>",
//  "aggregate": "any"|"sum"|"min"|"max", "where": "..."}
inline Constraint constraint_from_json(const Json& j) {
  if (!j.is_object()) throw ParseError("constraint must be an object");
  const std::string kind = j.value("kind", "");
  Constraint c;
  if (kind == "EntityExists") c.kind = ConstraintKind::entity_exists;
  else if (kind == "DataVolume") c.kind = ConstraintKind::data_volume;
  else if (kind == "MaxCount") c.kind = ConstraintKind::max_count;
  else if (kind == "Balance") c.kind = ConstraintKind::balance;
  else throw ParseError("unknown constraint kind '" + kind + "'");
  c.table = j.value("table", "");
  if (!detail::is_ident(c.table)) throw ParseError("constraint needs a table name");
  if (j.contains("where")) c.filter = parse_conditions(j.at("where").get<std::string>());
  if (c.kind == ConstraintKind::balance) {
    c.field = j.value("field", "");
    if (!detail::is_ident(c.field)) throw ParseError("Balance constraint needs a field");
    const auto op = parse_op(j.value("op", ">="));
    if (!op) throw ParseError("bad comparison '" + j.value("op", "") + "'");
    c.op = *op;
    if (!j.contains("threshold")) throw ParseError("Balance constraint needs a threshold");
    const Json& t = j.at("threshold");
    if (t.is_string() && detail::is_ident(t.get<std::string>())) {
      c.threshold.kind = Literal::Kind::param;
      c.threshold.name = t.get<std::string>();
    } else {
      c.threshold = literal_from_json(t);
    }
    const std::string agg = j.value("aggregate", "any");
    if (agg == "any") c.aggregate = Aggregate::any;
    else if (agg == "sum") c.aggregate = Aggregate::sum;
    else if (agg == "min") c.aggregate = Aggregate::min;
    else if (agg == "max") c.aggregate = Aggregate::max;
    else throw ParseError("unknown aggregate '" + agg + "'");
  } else {
    const Json n = j.value("n", Json(1));
    if (!n.is_number_integer() || n.get<long long>() < 0)
      throw DomainError("constraint n must be a non-negative integer");
    c.n = n.get<std::size_t>();
  }
  return c;
}

// One EntityExists(table, 1) per distinct table named by a relational or
// positioning template, sorted by table.
inline std::vector<Constraint> derive_constraints(const Json& mockdata) {
  std::set<std::string> tables;
  detail::walk_strings(mockdata, [&](const std::string& s) {
    detail::for_each_token(s, [&](std::string_view token, std::size_t, std::size_t) {
      const auto t = parse_template(token);
      if (t.kind != TemplateKind::identity) tables.insert(t.table);
    });
  });
  std::vector<Constraint> out;
  for (const auto& table : tables) out.push_back(Constraint::entity_exists(table, 1));
  return out;
}

// A missing table makes the constraint false (with a warning); a missing
// instance parameter throws ResolutionError.
inline bool eval_constraint(const Constraint& c, const ProfileStore& store,
                            const Json& params = Json::object(),
                            std::vector<std::string>* warnings = nullptr) {
  const Json threshold = c.kind == ConstraintKind::balance
                             ? detail::literal_value(c.threshold, store, params)
                             : Json(nullptr);
  const auto* rows = store.table(c.table);
  if (rows == nullptr) {
    if (warnings)
      warnings->push_back("profile '" + store.profile_id + "': table '" + c.table +
                          "' is absent; " + c.to_string() + " is false");
    return false;
  }
  const auto matched = detail::matching_rows(*rows, c.filter, store, params);
  switch (c.kind) {
    case ConstraintKind::entity_exists:
    case ConstraintKind::data_volume: return matched.size() >= c.n;
    case ConstraintKind::max_count: return matched.size() <= c.n;
    case ConstraintKind::balance: {
      if (c.aggregate == Aggregate::any) {
        return std::any_of(matched.begin(), matched.end(), [&](const Json* row) {
          return row->contains(c.field) && compare_values(row->at(c.field), c.op, threshold);
        });
      }
      std::vector<double> values;
      for (const Json* row : matched)
        if (row->contains(c.field) && row->at(c.field).is_number()) values.push_back(row->at(c.field).get<double>());
      if (values.empty()) return c.aggregate == Aggregate::sum && compare_values(Json(0.0), c.op, threshold);
      double agg = 0.0;
      if (c.aggregate == Aggregate::sum) for (const double v : values) agg += v;
      if (c.aggregate == Aggregate::min) agg = *std::min_element(values.begin(), values.end());
      if (c.aggregate == Aggregate::max) agg = *std::max_element(values.begin(), values.end());
      return compare_values(Json(agg), c.op, threshold);
    }
  }
  return false;
}

// ---------------------------------------------------------------------------
// Predicate language
//
//   pred      := "count(" table [where] ")" cmp int
//              | "field(" table "." field [where] ")" cmp literal
//   where     := "where" cond { "and" cond }
//   cond      := field cmp literal
//   cmp       := ">=" | "<=" | "=" | ">" | "<"
//   literal   := 'string' | "string" | number | true | false | {{template}} | <param>

struct Predicate {
  enum class Kind { count, field };
  Kind kind = Kind::count;
  std::string table;
  std::string field;
  std::vector<Condition> where;
  CompareOp op = CompareOp::ge;
  Literal rhs;

  std::string to_string() const {
    std::string out = kind == Kind::count ? "count(" + table : "field(" + table + "." + field;
    if (!where.empty()) out += " where " + conditions_to_string(where);
    return out + ") " + op_symbol(op) + " " + rhs.to_string();
  }
};

namespace detail {

class PredicateParser {
 public:
  PredicateParser(std::string_view text, bool allow_templates)
      : text_(text), allow_templates_(allow_templates) {}

  Predicate predicate() {
    Predicate p;
    skip();
    const auto head = ident("'count' or 'field'");
    if (head == "count") p.kind = Predicate::Kind::count;
    else if (head == "field") p.kind = Predicate::Kind::field;
    else fail("expected 'count' or 'field'", pos_ - head.size());
    expect('(');
    p.table = ident("table name");
    if (p.kind == Predicate::Kind::field) {
      expect('.');
      p.field = ident("field name");
    }
    skip();
    if (peek_word("where")) {
      pos_ += 5;
      p.where = conditions('\0');
    }
    expect(')');
    p.op = cmp();
    const std::size_t at = pos_;
    p.rhs = literal();
    if (p.kind == Predicate::Kind::count) {
      const Json& v = p.rhs.value;
      if (p.rhs.kind == Literal::Kind::value && !(v.is_number_integer() && v.get<long long>() >= 0))
        fail("count must be compared with a non-negative integer", at);
      if (p.rhs.kind == Literal::Kind::template_token)
        fail("count must be compared with a non-negative integer", at);
    }
    end();
    return p;
  }

  std::vector<Condition> conditions(char separator) {
    std::vector<Condition> out;
    out.push_back(condition());
    for (;;) {
      skip();
      if (separator != '\0' && pos_ < text_.size() && text_[pos_] == separator) {
        ++pos_;
      } else if (separator == '\0' && peek_word("and")) {
        pos_ += 3;
      } else {
        break;
      }
      out.push_back(condition());
    }
    return out;
  }

  void end() {
    skip();
    if (pos_ != text_.size()) fail("unexpected trailing text", pos_);
  }

 private:
  [[noreturn]] void fail(const std::string& what, std::size_t at) const {
    throw ParseError(what + " in '" + std::string(text_) + "'", 1, at + 1);
  }

  void skip() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool peek_word(std::string_view word) const {
    if (text_.substr(pos_, word.size()) != word) return false;
    const std::size_t after = pos_ + word.size();
    return after >= text_.size() || !(std::isalnum(static_cast<unsigned char>(text_[after])) || text_[after] == '_');
  }

  void expect(char c) {
    skip();
    if (pos_ >= text_.size() || text_[pos_] != c) fail(std::string("expected '") + c + "'", pos_);
    ++pos_;
  }

  std::string ident(const char* what) {
    skip();
    const std::size_t start = pos_;
    if (pos_ < text_.size() && (std::isalpha(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) {
      while (pos_ < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) ++pos_;
    }
    if (start == pos_) fail(std::string("expected ") + what, start);
    return std::string(text_.substr(start, pos_ - start));
  }

  CompareOp cmp() {
    skip();
    const std::size_t start = pos_;
    for (const std::string_view sym : {">=", "<=", "==", "=", ">", "<"}) {
      if (text_.substr(pos_, sym.size()) == sym) {
        pos_ += sym.size();
        return *parse_op(sym);
      }
    }
    fail("expected a comparison (>=, <=, =, >, <)", start);
  }

  Condition condition() {
    Condition c;
    c.field = ident("field name");
    c.op = cmp();
    c.value = literal();
    return c;
  }

  Literal literal() {
    skip();
    const std::size_t start = pos_;
    if (pos_ >= text_.size()) fail("expected a literal", start);
    Literal lit;
    const char c = text_[pos_];
    if (c == '\'' || c == '"') {
      std::string s;
      ++pos_;
      for (;;) {
        if (pos_ >= text_.size()) fail("unterminated string", start);
        const char ch = text_[pos_++];
        if (ch == c) break;
        if (ch == '\\' && pos_ < text_.size()) {
          s += text_[pos_++];
        } else {
          s += ch;
        }
      }
      lit.value = s;
      return lit;
    }
    if (text_.substr(pos_, 2) == "{{") {
      if (!allow_templates_) fail("templates are not allowed here", start);
      const auto close = text_.find("}}", pos_);
      if (close == std::string_view::npos) fail("unterminated template", start);
      lit.kind = Literal::Kind::template_token;
      lit.name = std::string(text_.substr(pos_, close + 2 - pos_));
      try {
        parse_template(lit.name);
      } catch (const ParseError& e) {
        fail(e.what(), start);
      }
      pos_ = close + 2;
      return lit;
    }
    if (c == '<') {
      ++pos_;
      lit.kind = Literal::Kind::param;
      lit.name = ident("parameter name");
      if (pos_ >= text_.size() || text_[pos_] != '>') fail("expected '>'", pos_);
      ++pos_;
      return lit;
    }
    if (peek_word("true") || peek_word("false")) {
      lit.value = text_[pos_] == 't';
      pos_ += lit.value.get<bool>() ? 4 : 5;
      return lit;
    }
    std::size_t end = pos_;
    if (end < text_.size() && (text_[end] == '-' || text_[end] == '+')) ++end;
    while (end < text_.size() &&
           (std::isdigit(static_cast<unsigned char>(text_[end])) || text_[end] == '.' || text_[end] == 'e' ||
            text_[end] == 'E' || ((text_[end] == '-' || text_[end] == '+') && (text_[end - 1] == 'e' || text_[end - 1] == 'E'))))
      ++end;
    const std::string_view num = text_.substr(pos_, end - pos_);
    if (num.empty()) fail("expected a literal", start);
    const bool integral = num.find_first_of(".eE") == std::string_view::npos;
    if (integral) {
      long long v = 0;
      const auto r = std::from_chars(num.data() + (num[0] == '+'), num.data() + num.size(), v);
      if (r.ec != std::errc{} || r.ptr != num.data() + num.size()) fail("malformed number", start);
      lit.value = v;
    } else {
      double v = 0.0;
      const auto r = std::from_chars(num.data() + (num[0] == '+'), num.data() + num.size(), v);
      if (r.ec != std::errc{} || r.ptr != num.data() + num.size()) fail("malformed number", start);
      lit.value = v;
    }
    pos_ = end;
    return lit;
  }

  std::string_view text_;
  bool allow_templates_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline Predicate parse_predicate(std::string_view text) {
  return detail::PredicateParser(text, true).predicate();
}

// `cond and cond ...`, or `cond<sep>cond...` when a separator is given.
inline std::vector<Condition> parse_conditions(std::string_view text, char separator, bool allow_templates) {
  detail::PredicateParser p(text, allow_templates);
  auto out = p.conditions(separator);
  p.end();
  return out;
}

// count: rows matching `where`, compared with the integer. field: true when
// any matching row's field satisfies the comparison. A missing table counts
// as zero rows.
inline bool eval_predicate(const Predicate& p, const ProfileStore& store, const Json& params = Json::object()) {
  const Json rhs = detail::literal_value(p.rhs, store, params);
  const auto* rows = store.table(p.table);
  const auto matched = rows ? detail::matching_rows(*rows, p.where, store, params) : std::vector<const Json*>{};
  if (p.kind == Predicate::Kind::count)
    return compare_values(Json(static_cast<long long>(matched.size())), p.op, rhs);
  return std::any_of(matched.begin(), matched.end(), [&](const Json* row) {
    return row->contains(p.field) && compare_values(row->at(p.field), p.op, rhs);
  });
}

// ---------------------------------------------------------------------------
// Instances, feasibility and triviality

struct TaskInstance {
  std::string id;
  Json params = Json::object();
  std::vector<Constraint> constraints;
  Json mockdata;
  std::optional<Predicate> predicate;
};

inline TaskInstance instance_from_json(const Json& j) {
  if (!j.is_object()) throw ParseError("instance must be an object");
  TaskInstance inst;
  inst.id = j.value("id", "");
  if (inst.id.empty()) throw ParseError("instance has no id");
  if (j.contains("params")) {
    if (!j["params"].is_object()) throw ParseError("instance '" + inst.id + "': params must be an object");
    inst.params = j["params"];
  }
  if (j.contains("constraints"))
    for (const Json& c : j["constraints"]) inst.constraints.push_back(constraint_from_json(c));
  if (j.contains("mockdata")) inst.mockdata = j["mockdata"];
  if (j.contains("predicate")) inst.predicate = parse_predicate(j["predicate"].get<std::string>());
  return inst;
}

// {"instances": [...]} or a bare array.
inline std::vector<TaskInstance> load_instances(const Json& doc) {
  const Json& list = doc.is_object() ? doc.at("instances") : doc;
  if (!list.is_array()) throw ParseError("instances must be an array");
  std::vector<TaskInstance> out;
  std::set<std::string> seen;
  for (const Json& j : list) {
    out.push_back(instance_from_json(j));
    if (!seen.insert(out.back().id).second) throw IntegrityError("duplicate instance id '" + out.back().id + "'");
  }
  return out;
}

// Explicit constraints followed by derived ones not already listed.
inline std::vector<Constraint> effective_constraints(const TaskInstance& inst) {
  std::vector<Constraint> out = inst.constraints;
  for (auto& c : derive_constraints(inst.mockdata))
    if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(std::move(c));
  return out;
}

struct FeasibilityMatrix {
  std::vector<std::string> instances;
  std::vector<std::string> profiles;
  std::vector<std::vector<bool>> cells;  // [instance][profile]
  std::vector<std::string> warnings;

  bool at(std::size_t i, std::size_t p) const { return cells.at(i).at(p); }
  std::vector<std::string> compatible_profiles(std::size_t i) const {
    std::vector<std::string> out;
    for (std::size_t p = 0; p < profiles.size(); ++p)
      if (cells[i][p]) out.push_back(profiles[p]);
    return out;
  }
};

inline FeasibilityMatrix feasibility_matrix(const std::vector<TaskInstance>& instances,
                                            const std::vector<ProfileStore>& profiles, unsigned threads = 0) {
  FeasibilityMatrix m;
  for (const auto& i : instances) m.instances.push_back(i.id);
  for (const auto& p : profiles) m.profiles.push_back(p.profile_id);
  std::vector<std::vector<Constraint>> constraints;
  for (const auto& i : instances) constraints.push_back(effective_constraints(i));
  const std::size_t n_p = profiles.size();
  std::vector<char> cells(instances.size() * n_p, 0);
  std::vector<std::vector<std::string>> warnings(cells.size());
  parallel_for(cells.size(), threads, [&](std::size_t cell) {
    const std::size_t i = cell / n_p, p = cell % n_p;
    bool ok = true;
    for (const auto& c : constraints[i])
      ok = eval_constraint(c, profiles[p], instances[i].params, &warnings[cell]) && ok;
    cells[cell] = ok ? 1 : 0;
  });
  m.cells.assign(instances.size(), std::vector<bool>(n_p));
  for (std::size_t cell = 0; cell < cells.size(); ++cell) {
    m.cells[cell / n_p][cell % n_p] = cells[cell] != 0;
    for (auto& w : warnings[cell]) m.warnings.push_back(instances[cell / n_p].id + ": " + w);
  }
  return m;
}

struct TaskConfig {
  std::string instance_id;
  std::string profile_id;
  Json params = Json::object();
};

struct TrivialityResult {
  std::vector<TaskConfig> survivors;
  std::vector<TaskConfig> excluded;
  std::vector<std::string> log;
};

// A configuration survives iff the predicate is false on its initial store.
inline TrivialityResult triviality_filter(const std::vector<TaskConfig>& configs, const Predicate& predicate,
                                          const std::map<std::string, ProfileStore>& stores) {
  TrivialityResult out;
  for (const auto& cfg : configs) {
    const auto it = stores.find(cfg.profile_id);
    if (it == stores.end()) throw LookupError("unknown profile '" + cfg.profile_id + "'");
    if (eval_predicate(predicate, it->second, cfg.params)) {
      out.excluded.push_back(cfg);
      out.log.push_back(cfg.instance_id + "/" + cfg.profile_id + ": excluded, " + predicate.to_string() +
                        " already holds on the initial state");
    } else {
      out.survivors.push_back(cfg);
    }
  }
  return out;
}

struct IntegrityReport {
  FeasibilityMatrix matrix;
  std::vector<TaskConfig> survivors;
  std::vector<std::string> exclusions;
};

// Feasible cells, then triviality filtering with each instance's predicate.
inline IntegrityReport integrity_check(const std::vector<TaskInstance>& instances,
                                       const std::vector<ProfileStore>& profiles, unsigned threads = 0) {
  IntegrityReport report;
  report.matrix = feasibility_matrix(instances, profiles, threads);
  std::map<std::string, ProfileStore> stores;
  for (const auto& p : profiles) stores.emplace(p.profile_id, p);
  for (std::size_t i = 0; i < instances.size(); ++i) {
    std::vector<TaskConfig> feasible;
    for (std::size_t p = 0; p < profiles.size(); ++p) {
      if (report.matrix.cells[i][p]) {
        feasible.push_back({instances[i].id, profiles[p].profile_id, instances[i].params});
      } else {
        report.exclusions.push_back(instances[i].id + "/" + profiles[p].profile_id + ": infeasible");
      }
    }
    if (!instances[i].predicate) {
      report.survivors.insert(report.survivors.end(), feasible.begin(), feasible.end());
      continue;
    }
    for (const auto& cfg : feasible) {
      try {
        auto r = triviality_filter({cfg}, *instances[i].predicate, stores);
        report.survivors.insert(report.survivors.end(), r.survivors.begin(), r.survivors.end());
        report.exclusions.insert(report.exclusions.end(), r.log.begin(), r.log.end());
      } catch (const ResolutionError& e) {
        report.exclusions.push_back(cfg.instance_id + "/" + cfg.profile_id + ": excluded, " + e.what());
      }
    }
  }
  return report;
}

}  // namespace hbeval
