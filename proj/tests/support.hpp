#pragma once
// Test helpers and independent oracles. Nothing here calls into the code
// under test except to build inputs.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/multiprecision/cpp_dec_float.hpp>
#include <json.hpp>

#include "hbeval/core_model.hpp"

namespace testing {

inline std::string fixture(const std::string& rel) { return std::string(FIXTURE_DIR) + "/" + rel; }

inline std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

// Runs the built executable through the shell.
inline CliResult run_binary(const std::string& args) {
  namespace fs = std::filesystem;
  static int counter = 0;
  const fs::path dir = fs::temp_directory_path() / ("hbeval_cli_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const auto out = dir / ("out" + std::to_string(counter) + ".txt");
  const auto err = dir / ("err" + std::to_string(counter++) + ".txt");
  const std::string cmd =
      std::string(HBEVAL_BINARY) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out.string());
  r.err = slurp(err.string());
  return r;
}

// A tree with one leaf per (app, scenario, theme) holding `outcomes`.
inline hbeval::BenchmarkTree make_tree(
    const std::map<std::string, std::map<std::string, std::vector<std::vector<bool>>>>& spec,
    hbeval::AxisMask mask = hbeval::AxisMask::all()) {
  hbeval::TreeBuilder b(mask);
  for (const auto& [app, scenarios] : spec)
    for (const auto& [scenario, leaves] : scenarios)
      for (std::size_t i = 0; i < leaves.size(); ++i) {
        hbeval::ConfigKey key;
        key.theme = "t" + std::to_string(i);
        b.add_leaf(app, scenario, key, leaves[i]);
      }
  return std::move(b).build();
}

// ---------------------------------------------------------------------------
// Wilson endpoints at 50 decimal digits.

using Big = boost::multiprecision::cpp_dec_float_50;

inline std::array<double, 2> wilson_bigfloat(unsigned k, unsigned n, double alpha) {
  const Big z = boost::math::quantile(boost::math::complement(boost::math::normal_distribution<Big>(),
                                                              Big(alpha) / 2));
  const Big p = Big(k) / n;
  const Big z2 = z * z;
  const Big denom = 1 + z2 / n;
  const Big center = (p + z2 / (2 * Big(n))) / denom;
  const Big half = z / denom * boost::multiprecision::sqrt(p * (1 - p) / n + z2 / (4 * Big(n) * n));
  Big lo = center - half, hi = center + half;
  if (lo < 0) lo = 0;
  if (hi > 1) hi = 1;
  return {static_cast<double>(lo), static_cast<double>(hi)};
}

// Exact coverage of an interval procedure for fixed p: sum over k of
// Binomial(k; n, p) * [p in CI(k)].
template <class Interval>
double exact_coverage(double p, unsigned n, Interval ci) {
  double cov = 0.0;
  for (unsigned k = 0; k <= n; ++k) {
    const double pmf = std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) +
                                (k ? k * std::log(p) : 0.0) + (n - k ? (n - k) * std::log1p(-p) : 0.0));
    const auto [lo, hi] = ci(k, n);
    if (lo <= p && p <= hi) cov += pmf;
  }
  return cov;
}

// ---------------------------------------------------------------------------
// Bootstrap distribution of a 3-rollout leaf by exhaustive enumeration of
// the 27 ordered resamples. Index = resampled success count.

inline std::array<double, 4> enumerate_rollout_resamples(const std::array<bool, 3>& leaf) {
  std::array<double, 4> dist{};
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      for (int c = 0; c < 3; ++c) dist[leaf[a] + leaf[b] + leaf[c]] += 1.0 / 27.0;
  return dist;
}

// ---------------------------------------------------------------------------
// E[clip(clip(mu + e1) + e2)], e1 ~ N(0, s1), e2 ~ N(0, s2), by quadrature.
// The inner expectation is int_0^1 Phi((y - t) / s2) dt.

inline double nested_clip_mean(double mu, double s1, double s2) {
  using boost::math::quadrature::gauss_kronrod;
  const boost::math::normal_distribution<double> std_normal;
  auto inner = [&](double y) {
    if (s2 == 0.0) return std::clamp(y, 0.0, 1.0);
    return gauss_kronrod<double, 31>::integrate(
        [&](double t) { return boost::math::cdf(std_normal, (y - t) / s2); }, 0.0, 1.0, 8, 1e-12);
  };
  if (s1 == 0.0) return inner(std::clamp(mu, 0.0, 1.0));
  auto outer = [&](double x) {
    const double y = std::clamp(mu + s1 * x, 0.0, 1.0);
    return boost::math::pdf(std_normal, x) * inner(y);
  };
  return gauss_kronrod<double, 61>::integrate(outer, -9.0, 9.0, 12, 1e-11);
}

// ---------------------------------------------------------------------------
// Brute-force integrity evaluation straight from the fixture JSON.
// Supports what the bundled fixtures use: equality and ordering filters on
// scalar fields, <param> thresholds, row-count and Balance constraints,
// first_<entity>_<field> and <pos>_<entity>_time templates whose table is
// entity + "s", and the two predicate shapes.

namespace brute {

using nlohmann::json;

inline json literal(std::string s, const json& params, const json& profile);

inline bool cmp(const json& a, const std::string& op, const json& b) {
  if (a.is_number() && b.is_number()) {
    const double x = a.get<double>(), y = b.get<double>();
    if (op == ">=") return x >= y;
    if (op == "<=") return x <= y;
    if (op == ">") return x > y;
    if (op == "<") return x < y;
    return x == y;
  }
  if (a.is_string() && b.is_string()) {
    const auto x = a.get<std::string>(), y = b.get<std::string>();
    if (op == ">=") return x >= y;
    if (op == "<=") return x <= y;
    if (op == ">") return x > y;
    if (op == "<") return x < y;
    return x == y;
  }
  return false;
}

inline std::vector<json> rows(const json& profile, const std::string& table, const std::string& where,
                              const json& params) {
  std::vector<json> out;
  if (!profile["tables"].contains(table)) return out;
  static const std::regex cond(R"(\s*([a-z_]+)\s*(>=|<=|=|>|<)\s*(\S+)\s*)");
  std::vector<std::smatch> conds;
  std::vector<std::string> parts;
  std::string rest = where;
  for (std::size_t at; (at = rest.find(" and ")) != std::string::npos; rest = rest.substr(at + 5))
    parts.push_back(rest.substr(0, at));
  if (!rest.empty()) parts.push_back(rest);
  for (const json& row : profile["tables"][table]) {
    bool ok = true;
    for (const auto& part : parts) {
      std::smatch m;
      if (!std::regex_match(part, m, cond)) throw std::runtime_error("oracle cannot read: " + part);
      ok = ok && row.contains(m[1].str()) && cmp(row[m[1].str()], m[2].str(), literal(m[3].str(), params, profile));
    }
    if (ok) out.push_back(row);
  }
  return out;
}

inline json literal(std::string s, const json& params, const json& profile) {
  if (s.size() > 1 && s.front() == '\'') return s.substr(1, s.size() - 2);
  if (s.size() > 1 && s.front() == '<') return params.at(s.substr(1, s.size() - 2));
  if (s.rfind("{{first_", 0) == 0) {
    const auto body = s.substr(8, s.size() - 10);
    const auto us = body.rfind('_');
    const auto r = rows(profile, body.substr(0, us) + "s", "", params);
    return r.at(0).at(body.substr(us + 1));
  }
  return json::parse(s);
}

inline std::set<std::string> template_tables(const json& node) {
  std::set<std::string> out;
  if (node.is_string()) {
    static const std::regex first(R"(\{\{first_([a-z]+)_[a-z]+\}\})");
    static const std::regex pos(R"(\{\{(?:beginning|middle|end)_([a-z]+)_time\}\})");
    const auto s = node.get<std::string>();
    std::smatch m;
    if (std::regex_search(s, m, first)) out.insert(m[1].str() + "s");
    if (std::regex_search(s, m, pos)) out.insert(m[1].str() + "s");
  } else if (node.is_structured()) {
    for (const auto& c : node) {
      auto sub = template_tables(c);
      out.insert(sub.begin(), sub.end());
    }
  }
  return out;
}

inline bool feasible(const json& inst, const json& profile) {
  const json params = inst.value("params", json::object());
  for (const auto& table : template_tables(inst.value("mockdata", json())))
    if (rows(profile, table, "", params).empty()) return false;
  for (const json& c : inst.value("constraints", json::array())) {
    const std::string table = c["table"];
    if (!profile["tables"].contains(table)) return false;
    const auto r = rows(profile, table, c.value("where", ""), params);
    const std::string kind = c["kind"];
    if (kind == "EntityExists" || kind == "DataVolume") {
      if (r.size() < c.value("n", 1u)) return false;
    } else if (kind == "MaxCount") {
      if (r.size() > c.value("n", 1u)) return false;
    } else {
      const json thr = c["threshold"].is_string() ? params.at(c["threshold"].get<std::string>().substr(
                                                        1, c["threshold"].get<std::string>().size() - 2))
                                                  : c["threshold"];
      bool any = false;
      for (const auto& row : r) any = any || cmp(row[c["field"].get<std::string>()], c.value("op", ">="), thr);
      if (!any) return false;
    }
  }
  return true;
}

// count(table [where ...]) op n  |  field(table.f [where ...]) op literal
inline bool predicate_holds(const std::string& pred, const json& params, const json& profile) {
  static const std::regex count_re(R"(count\((\w+)(?: where (.*))?\)\s*(>=|<=|=|>|<)\s*(\d+))");
  static const std::regex field_re(R"(field\((\w+)\.(\w+)(?: where (.*))?\)\s*(>=|<=|=|>|<)\s*(.+))");
  std::smatch m;
  if (std::regex_match(pred, m, count_re)) {
    const auto r = rows(profile, m[1].str(), m[2].str(), params);
    return cmp(json(r.size()), m[3].str(), json(std::stoll(m[4].str())));
  }
  if (std::regex_match(pred, m, field_re)) {
    const auto r = rows(profile, m[1].str(), m[3].str(), params);
    const json rhs = literal(m[5].str(), params, profile);
    for (const auto& row : r)
      if (row.contains(m[2].str()) && cmp(row[m[2].str()], m[4].str(), rhs)) return true;
    return false;
  }
  throw std::runtime_error("oracle cannot read predicate: " + pred);
}

}  // namespace brute

}  // namespace testing
