#pragma once
// Command-line front end. run() parses argv-style arguments, dispatches to
// one subcommand, and renders a Report. Exit codes: 0 success, 1 data or
// validation error, 2 usage error.

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hbeval/analysis.hpp"
#include "hbeval/bootstrap.hpp"
#include "hbeval/core_model.hpp"
#include "hbeval/errors.hpp"
#include "hbeval/estimators.hpp"
#include "hbeval/integrity.hpp"
#include "hbeval/report.hpp"
#include "hbeval/simlab.hpp"
#include "hbeval/variability.hpp"

namespace hbeval::cli {

// Protocol defaults.
inline constexpr std::size_t kDefaultReplicates = 1000;
inline constexpr std::size_t kDefaultSimReplicates = 500;
inline constexpr std::size_t kDefaultExperiments = 200;
inline constexpr std::size_t kExpectedRollouts = 20;

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CommonOptions {
  std::string seed_text;
  unsigned threads = 0;
  std::string format = "text";
  std::string output_dir;
  std::string config;
};

struct DataOptions {
  std::string input;
  std::string axes = "all";
  std::string input_format = "auto";
  std::string model;
};

struct BootstrapOptions {
  bool scenarios = false;
  bool axes = false;
  bool rollouts = false;
  std::size_t replicates = kDefaultReplicates;
  double alpha = 0.05;
  std::string axis_mode = "values";
  std::string pooling = "rollout";
  double trim = 0.0;
};

namespace detail {

inline std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

inline std::string trim_copy(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

// Flat key=value file; '#' and ';' start comments; [sections] are ignored.
inline std::vector<std::pair<std::string, std::string>> read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim_copy(line);
    if (t.empty() || t[0] == '#' || t[0] == ';' || t[0] == '[') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ParseError(path + ": expected key=value", line_no);
    std::string key = trim_copy(t.substr(0, eq));
    std::string value = trim_copy(t.substr(eq + 1));
    if (value.size() >= 2 && (value.front() == '"' || value.front() == '\'') && value.back() == value.front())
      value = value.substr(1, value.size() - 2);
    std::replace(key.begin(), key.end(), '_', '-');
    out.emplace_back(key, value);
  }
  return out;
}

// Appends "--key=value" for config entries whose flag is not already given.
inline std::vector<std::string> apply_config(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  for (const auto& [key, value] : read_config(path)) {
    if (key == "config") continue;
    const std::string flag = "--" + key;
    const bool given = std::any_of(args.begin(), args.end(), [&](const std::string& a) {
      return a == flag || a.rfind(flag + "=", 0) == 0;
    });
    if (!given) args.push_back(flag + "=" + value);
  }
  return args;
}

inline AxisMask parse_mask(const std::string& text) {
  try {
    return AxisMask::parse(text);
  } catch (const ParseError& e) {
    throw CLI::ValidationError("--axes", e.what());
  }
}

inline Dataset load_dataset(const DataOptions& opt) {
  std::ifstream in(opt.input);
  if (!in) throw IoError("cannot read input file " + opt.input);
  InputFormat fmt = InputFormat::automatic;
  if (opt.input_format == "jsonl") fmt = InputFormat::jsonl;
  else if (opt.input_format == "csv") fmt = InputFormat::csv;
  Dataset data = ingest_records(in, parse_mask(opt.axes), fmt);
  if (!opt.model.empty()) {
    const auto it = data.models.find(opt.model);
    if (it == data.models.end()) throw LookupError("model '" + opt.model + "' not found in input");
    BenchmarkTree keep = it->second;
    data.models.clear();
    data.models.emplace(opt.model, std::move(keep));
  }
  return data;
}

inline void add_warnings(Report& r, const std::vector<Diagnostic>& ws) {
  for (const auto& w : ws) r.warnings.push_back(w.location + ": " + w.message);
}

inline void finish_warnings(Report& r) {
  OrderedJson w = OrderedJson::array();
  for (const auto& s : r.warnings) w.push_back(s);
  r.metrics["warnings"] = w;
}

inline Pooling parse_pooling(const std::string& s) {
  return s == "leaf" ? Pooling::leaf_weighted : Pooling::rollout_weighted;
}

inline BootstrapConfig make_bootstrap(const BootstrapOptions& b, std::uint64_t seed) {
  BootstrapConfig cfg;
  if (b.scenarios || b.axes || b.rollouts) cfg.ladder = {b.scenarios, b.axes, b.rollouts};
  cfg.replicates = b.replicates;
  cfg.level = ConfidenceLevel(b.alpha);
  cfg.seed = seed;
  cfg.axis_mode = b.axis_mode == "cells" ? AxisResampling::flat_cells : AxisResampling::axis_values;
  cfg.pooling = parse_pooling(b.pooling);
  if (b.trim > 0.0) cfg.statistic = SuiteStatistic::trimmed(b.trim);
  cfg.validate();
  return cfg;
}

inline OrderedJson bootstrap_params(const BootstrapConfig& cfg) {
  OrderedJson p;
  p["ladder"] = cfg.ladder.label();
  p["replicates"] = cfg.replicates;
  p["alpha"] = cfg.level.alpha();
  p["axis_mode"] = cfg.axis_mode == AxisResampling::flat_cells ? "cells" : "values";
  p["pooling"] = cfg.pooling == Pooling::leaf_weighted ? "leaf" : "rollout";
  p["statistic"] = cfg.statistic.label();
  return p;
}

inline OrderedJson interval_json(const ConfidenceInterval& ci) {
  OrderedJson j;
  j["estimate"] = ci.estimate;
  j["lower"] = ci.lower;
  j["upper"] = ci.upper;
  j["width"] = ci.width();
  j["method"] = method_name(ci.method);
  j["confidence"] = ci.level.confidence();
  return j;
}

inline std::vector<double> parse_doubles(const std::string& text, const char* flag) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim_copy(item);
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw CLI::ValidationError(flag, "not a number: '" + item + "'");
    }
  }
  return out;
}

inline std::vector<double> default_thresholds() {
  std::vector<double> t;
  for (int i = 0; i <= 20; ++i) t.push_back(i * 0.05);
  return t;
}

inline SuiteCalibration calibration_for(const std::string& name) {
  if (name == "homogeneous") return SuiteCalibration::homogeneous();
  if (name == "heterogeneous") return SuiteCalibration::heterogeneous();
  return SuiteCalibration::main_text();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands. Each returns a Report; exceptions propagate to run().

inline Report cmd_ingest(const DataOptions& d, const std::string& write_canonical) {
  const Dataset data = detail::load_dataset(d);
  Report r;
  r.command = "ingest";
  r.params["input"] = std::filesystem::path(d.input).filename().string();
  r.params["axes"] = detail::parse_mask(d.axes).to_string();
  r.metrics["records"] = data.records;
  Table t{"models", {"model", "apps", "scenarios", "leaves", "rollouts", "balanced", "errors", "warnings"}, {}};
  detail::add_warnings(r, data.warnings);
  OrderedJson models = OrderedJson::object();
  for (const auto& [name, tree] : data.models) {
    const auto v = validate_tree(tree);
    std::size_t scenarios = 0;
    for (const auto& [app, _] : tree.apps()) scenarios += tree.scenario_count(app);
    OrderedJson m;
    m["apps"] = tree.app_count();
    m["scenarios"] = scenarios;
    m["leaves"] = tree.leaf_count();
    m["rollouts"] = tree.rollout_count();
    m["balanced"] = v.is_balanced;
    m["errors"] = v.errors.size();
    m["warnings"] = v.warnings.size();
    models[name] = m;
    t.add({name, std::to_string(tree.app_count()), std::to_string(scenarios), std::to_string(tree.leaf_count()),
           std::to_string(tree.rollout_count()), v.is_balanced ? "yes" : "no", std::to_string(v.errors.size()),
           std::to_string(v.warnings.size())});
    for (const auto& e : v.errors) r.warnings.push_back(name + ": error: " + e.location + ": " + e.message);
    for (const auto& w : v.warnings) r.warnings.push_back(name + ": " + w.location + ": " + w.message);
    const double mean_r = tree.leaf_count() ? double(tree.rollout_count()) / double(tree.leaf_count()) : 0.0;
    if (tree.leaf_count() && mean_r < double(kExpectedRollouts))
      r.warnings.push_back(name + ": mean R per leaf " + fmt(mean_r, 2) + " is below the protocol's " +
                           std::to_string(kExpectedRollouts));
  }
  r.metrics["models"] = models;
  r.tables.push_back(std::move(t));
  if (!write_canonical.empty()) {
    std::ofstream out(write_canonical);
    if (!out) throw IoError("cannot write " + write_canonical);
    for (const auto& [name, tree] : data.models) write_records(out, name, tree);
  }
  detail::finish_warnings(r);
  return r;
}

inline Report cmd_report(const DataOptions& d, const std::string& pooling, double trim, double alpha) {
  const Dataset data = detail::load_dataset(d);
  const ConfidenceLevel level(alpha);
  Report r;
  r.command = "report";
  r.params["input"] = std::filesystem::path(d.input).filename().string();
  r.params["axes"] = detail::parse_mask(d.axes).to_string();
  r.params["pooling"] = pooling;
  r.params["trim"] = trim;
  r.params["alpha"] = alpha;
  detail::add_warnings(r, data.warnings);
  Table suite{"suite", {"model", "apps", "suite_mean", "trimmed_mean"}, {}};
  Table apps{"per-app", {"model", "app", "k", "R", "rate", "wilson_lower", "wilson_upper"}, {}};
  OrderedJson models = OrderedJson::object();
  const Pooling pool = detail::parse_pooling(pooling);
  for (const auto& [name, tree] : data.models) {
    const auto est = suite_mean(tree, pool);
    const double tm = trim > 0.0 ? trimmed_suite_mean(tree, trim, pool).theta_hat : est.theta_hat;
    OrderedJson m;
    m["suite_mean"] = est.theta_hat;
    m["trimmed_mean"] = tm;
    OrderedJson per_app = OrderedJson::object();
    for (const auto& [app, kn] : pooled_counts(tree)) {
      const auto w = wilson_interval(kn.first, kn.second, level);
      OrderedJson a;
      a["k"] = kn.first;
      a["R"] = kn.second;
      a["rate"] = est.per_app.at(app);
      a["wilson"] = detail::interval_json(w);
      per_app[app] = a;
      apps.add({name, app, std::to_string(kn.first), std::to_string(kn.second), fmt(est.per_app.at(app)),
                fmt(w.lower), fmt(w.upper)});
    }
    m["per_app"] = per_app;
    models[name] = m;
    suite.add({name, std::to_string(tree.app_count()), fmt(est.theta_hat), fmt(tm)});
  }
  r.metrics["models"] = models;
  r.tables.push_back(std::move(suite));
  r.tables.push_back(std::move(apps));
  detail::finish_warnings(r);
  return r;
}

inline Report cmd_ci(const DataOptions& d, const BootstrapOptions& b, std::uint64_t seed, unsigned threads,
                     bool per_app) {
  const Dataset data = detail::load_dataset(d);
  const BootstrapConfig cfg = detail::make_bootstrap(b, seed);
  Report r;
  r.command = per_app ? "per-app-ci" : "ci";
  r.seed = seed;
  r.params["input"] = std::filesystem::path(d.input).filename().string();
  r.params["axes"] = detail::parse_mask(d.axes).to_string();
  r.params["bootstrap"] = detail::bootstrap_params(cfg);
  detail::add_warnings(r, data.warnings);
  OrderedJson models = OrderedJson::object();
  Table t = per_app ? Table{"per-app bootstrap intervals", {"model", "app", "estimate", "lower", "upper", "width"}, {}}
                    : Table{"suite bootstrap interval", {"model", "estimate", "lower", "upper", "width"}, {}};
  for (const auto& [name, tree] : data.models) {
    if (per_app) {
      OrderedJson m = OrderedJson::object();
      for (const auto& [app, ci] : per_app_bootstrap(tree, cfg, threads)) {
        m[app] = detail::interval_json(ci);
        t.add({name, app, fmt(ci.estimate), fmt(ci.lower), fmt(ci.upper), fmt(ci.width())});
      }
      models[name] = m;
    } else {
      const auto res = hierarchical_bootstrap(tree, cfg, threads);
      models[name] = detail::interval_json(res.interval);
      const auto& ci = res.interval;
      t.add({name, fmt(ci.estimate), fmt(ci.lower), fmt(ci.upper), fmt(ci.width())});
    }
  }
  r.metrics["models"] = models;
  r.tables.push_back(std::move(t));
  detail::finish_warnings(r);
  return r;
}

inline Report cmd_decompose(const DataOptions& d, const std::string& axis_text, const std::string& thresholds_text) {
  const Dataset data = detail::load_dataset(d);
  const auto thresholds = thresholds_text.empty() ? std::vector<double>{0.0, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.40, 0.50}
                                                  : detail::parse_doubles(thresholds_text, "--thresholds");
  std::vector<Axis> axes;
  if (axis_text == "all") {
    axes.assign(kAxes.begin(), kAxes.end());
  } else {
    const auto a = parse_axis(axis_text);
    if (!a) throw CLI::ValidationError("--axis", "unknown axis '" + axis_text + "'");
    axes.push_back(*a);
  }
  Report r;
  r.command = "decompose";
  r.params["input"] = std::filesystem::path(d.input).filename().string();
  r.params["axes"] = detail::parse_mask(d.axes).to_string();
  r.params["axis"] = axis_text;
  r.params["thresholds"] = thresholds;
  detail::add_warnings(r, data.warnings);
  OrderedJson models = OrderedJson::object();
  for (const auto& [name, tree] : data.models) {
    OrderedJson m;
    // App x axis MAD grid.
    Table grid{name + ": MAD by app and axis", {"app"}, {}};
    std::vector<Axis> enabled;
    for (const Axis a : axes)
      if (tree.axis_mask().enabled(a)) enabled.push_back(a);
    for (const Axis a : enabled) grid.columns.emplace_back(axis_name(a));
    OrderedJson gj = OrderedJson::object();
    for (const auto& [app, cells] : mad_grid(tree)) {
      std::vector<std::string> row{app};
      OrderedJson aj = OrderedJson::object();
      for (const Axis a : enabled) {
        const auto& v = cells.at(a);
        row.push_back(v ? fmt(*v) : "");
        aj[std::string(axis_name(a))] = v ? OrderedJson(*v) : OrderedJson(nullptr);
      }
      gj[app] = aj;
      grid.add(std::move(row));
    }
    m["mad_grid"] = gj;
    Table prof{name + ": sensitivity by axis", {"axis", "pairs", "mad", "q90_abs_delta"}, {}};
    OrderedJson pj = OrderedJson::object();
    OrderedJson curves = OrderedJson::object();
    for (const Axis a : enabled) {
      const auto mp = matched_pairs(tree, a);
      if (mp.pairs.empty()) {
        r.warnings.push_back(name + ": no matched pairs along axis '" + std::string(axis_name(a)) + "'");
        continue;
      }
      const auto sp = sensitivity_profile(tree, a);
      prof.add({std::string(axis_name(a)), std::to_string(sp.n_pairs), fmt(sp.mad), fmt(sp.q90_abs_delta)});
      OrderedJson s;
      s["pairs"] = sp.n_pairs;
      s["mad"] = sp.mad;
      s["q90_abs_delta"] = sp.q90_abs_delta;
      pj[std::string(axis_name(a))] = s;
      const auto deltas = marginal_abs_deltas(tree, a);
      if (!deltas.empty()) {
        const auto curve = exceedance_curve(deltas, thresholds, a);
        OrderedJson c;
        c["x"] = curve.thresholds;
        c["y"] = curve.fractions;
        c["pairs"] = curve.n_pairs;
        curves[std::string(axis_name(a))] = c;
      }
    }
    m["sensitivity"] = pj;
    m["exceedance"] = curves;
    models[name] = m;
    r.tables.push_back(std::move(grid));
    r.tables.push_back(std::move(prof));
    Table ex{name + ": exceedance (share of |delta| > tau)", {"tau"}, {}};
    for (const auto& [axis, _] : curves.items()) ex.columns.push_back(axis);
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
      std::vector<std::string> row{fmt(thresholds[i], 2)};
      for (const auto& [_, c] : curves.items()) row.push_back(fmt(c["y"][i].get<double>()));
      ex.add(std::move(row));
    }
    if (!curves.empty()) r.tables.push_back(std::move(ex));
  }
  r.metrics["models"] = models;
  detail::finish_warnings(r);
  return r;
}

inline Report cmd_profile(const DataOptions& d, const std::string& thresholds_text, const std::string& pooling) {
  const Dataset data = detail::load_dataset(d);
  const auto thresholds = thresholds_text.empty() ? detail::default_thresholds()
                                                  : detail::parse_doubles(thresholds_text, "--thresholds");
  std::map<std::string, PerAppMeans> means;
  for (const auto& [name, tree] : data.models) means[name] = per_app_means(tree, detail::parse_pooling(pooling));
  const auto prof = performance_profile(means, thresholds);
  Report r;
  r.command = "profile";
  r.params["input"] = std::filesystem::path(d.input).filename().string();
  r.params["thresholds"] = thresholds;
  r.params["pooling"] = pooling;
  detail::add_warnings(r, data.warnings);
  Table t{"performance profile (share of apps with rate >= tau)", {"tau"}, {}};
  OrderedJson series = OrderedJson::object();
  for (const auto& [model, ys] : prof.fractions) {
    t.columns.push_back(model);
    OrderedJson s;
    s["x"] = prof.thresholds;
    s["y"] = ys;
    series[model] = s;
  }
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    std::vector<std::string> row{fmt(thresholds[i], 2)};
    for (const auto& [_, ys] : prof.fractions) row.push_back(fmt(ys[i]));
    t.add(std::move(row));
  }
  r.metrics["series"] = series;
  r.tables.push_back(std::move(t));
  detail::finish_warnings(r);
  return r;
}

inline Report cmd_regret(const DataOptions& d, const std::string& model_a, const std::string& model_b,
                         std::size_t sims, const BootstrapOptions& b, std::uint64_t seed, unsigned threads) {
  DataOptions all = d;
  all.model.clear();
  const Dataset data = detail::load_dataset(all);
  std::string m1 = model_a, m2 = model_b;
  if (m1.empty() || m2.empty()) {
    if (data.models.size() < 2) throw DomainError("regret needs two models in the input");
    auto it = data.models.begin();
    if (m1.empty()) m1 = (it++)->first;
    if (m2.empty()) {
      while (it != data.models.end() && it->first == m1) ++it;
      if (it == data.models.end()) throw DomainError("regret needs two distinct models");
      m2 = it->first;
    }
  }
  for (const auto& m : {m1, m2})
    if (!data.models.contains(m)) throw LookupError("model '" + m + "' not found in input");
  const auto& t1 = data.models.at(m1);
  const auto& t2 = data.models.at(m2);
  BootstrapConfig cfg = detail::make_bootstrap(b, seed);

  const auto sh = split_half_regret(t1, t2, sims, seed, threads);
  const auto wald_flags = significance_flags(t1, t2, SignificanceMethod::wald, cfg, threads);
  const auto boot_flags = significance_flags(t1, t2, SignificanceMethod::bootstrap, cfg, threads);
  const auto wald = decision_regret(sh, wald_flags, RegretMethod::wald_decision);
  const auto boot = decision_regret(sh, boot_flags, RegretMethod::bootstrap_decision);

  Report r;
  r.command = "regret";
  r.seed = seed;
  r.params["input"] = std::filesystem::path(d.input).filename().string();
  r.params["model_a"] = m1;
  r.params["model_b"] = m2;
  r.params["sims"] = sims;
  r.params["bootstrap"] = detail::bootstrap_params(cfg);
  detail::add_warnings(r, data.warnings);
  r.warnings.insert(r.warnings.end(), sh.warnings.begin(), sh.warnings.end());
  Table t{"per-app regret", {"app", "gap", "p_wrong", "regret", "wald_significant", "bootstrap_significant"}, {}};
  OrderedJson per_app = OrderedJson::object();
  for (const auto& [app, reg] : sh.per_app) {
    OrderedJson a;
    a["gap"] = reg.gap;
    a["p_wrong"] = reg.p_wrong;
    a["regret"] = reg.regret;
    a["wald_significant"] = wald_flags.at(app);
    a["bootstrap_significant"] = boot_flags.at(app);
    per_app[app] = a;
    t.add({app, fmt(reg.gap), fmt(reg.p_wrong), fmt(reg.regret), wald_flags.at(app) ? "yes" : "no",
           boot_flags.at(app) ? "yes" : "no"});
  }
  Table tot{"total regret", {"method", "total"}, {}};
  OrderedJson totals;
  for (const auto* rep : {&sh, &wald, &boot}) {
    totals[regret_method_name(rep->method)] = rep->total;
    tot.add({regret_method_name(rep->method), fmt(rep->total)});
  }
  r.metrics["per_app"] = per_app;
  r.metrics["totals"] = totals;
  r.tables.push_back(std::move(t));
  r.tables.push_back(std::move(tot));
  detail::finish_warnings(r);
  return r;
}

inline Report cmd_coverage_base(const std::string& r_text, std::size_t trials, double alpha, double mass_zero,
                                std::uint32_t r_base, std::uint64_t seed, unsigned threads) {
  std::vector<std::uint32_t> rs;
  for (const double v : detail::parse_doubles(r_text, "--r")) {
    if (v < 1 || v != std::floor(v)) throw CLI::ValidationError("--r", "R values must be positive integers");
    rs.push_back(static_cast<std::uint32_t>(v));
  }
  BaseCalibration base;
  base.mass_zero = mass_zero;
  base.mass_full = 1.0 - mass_zero;
  base.r_base = r_base;
  const auto rows = coverage_study_base(rs, trials, ConfidenceLevel(alpha), seed, base, threads);
  Report r;
  r.command = "simulate-coverage-base";
  r.seed = seed;
  r.params["r_values"] = rs;
  r.params["trials"] = trials;
  r.params["alpha"] = alpha;
  r.params["mass_zero"] = base.mass_zero;
  r.params["mass_full"] = base.mass_full;
  r.params["r_base"] = r_base;
  Table t{"coverage by estimator and R", {"estimator", "R", "coverage", "se", "mean_width"}, {}};
  OrderedJson j = OrderedJson::array();
  for (const auto& row : rows) {
    t.add({row.method, std::to_string(row.rollouts), fmt(row.coverage), fmt(row.coverage_se), fmt(row.mean_width)});
    OrderedJson o;
    o["estimator"] = row.method;
    o["R"] = row.rollouts;
    o["coverage"] = row.coverage;
    o["se"] = row.coverage_se;
    o["mean_width"] = row.mean_width;
    j.push_back(o);
  }
  r.metrics["rows"] = j;
  r.tables.push_back(std::move(t));
  detail::finish_warnings(r);
  return r;
}

struct SuiteStudyArgs {
  std::string condition = "main";
  std::string variants = "table";
  std::size_t experiments = kDefaultExperiments;
  std::size_t replicates = kDefaultSimReplicates;
  double alpha = 0.05;
  std::string estimand = "super";
  bool pooled_wald = false;
  bool flat_cells = false;
  std::size_t calibration_draws = 1'000'000;
};

inline Report cmd_coverage_suite(const SuiteStudyArgs& a, std::uint64_t seed, unsigned threads) {
  auto cal = build_calibration(detail::calibration_for(a.condition), seed, a.calibration_draws, threads);
  std::vector<CoverageVariant> variants =
      a.variants == "ladder" ? ladder_variants() : table_variants();
  if (a.variants == "all") {
    for (const auto& v : ladder_variants())
      if (std::none_of(variants.begin(), variants.end(), [&](const auto& x) { return x.label == v.label; }))
        variants.push_back(v);
  }
  if (a.flat_cells) {
    std::vector<CoverageVariant> extra;
    for (const auto& v : variants)
      if (v.ladder && v.ladder->config_axes) extra.push_back(CoverageVariant::rung(*v.ladder, AxisResampling::flat_cells));
    variants.insert(variants.end(), extra.begin(), extra.end());
  }
  if (a.pooled_wald) variants.push_back(CoverageVariant::pooled_wald());
  SuiteStudyOptions opt;
  opt.n_experiments = a.experiments;
  opt.replicates = a.replicates;
  opt.level = ConfidenceLevel(a.alpha);
  opt.estimand = a.estimand == "realized" ? Estimand::realized_sample : Estimand::super_population;
  const auto rows = coverage_study_suite(cal, variants, opt, seed, threads);

  Report r;
  r.command = "simulate-coverage-suite";
  r.seed = seed;
  r.params["condition"] = cal.name;
  r.params["apps"] = cal.app_rates.size();
  r.params["scenarios_per_app"] = cal.scenarios_per_app;
  r.params["axis_levels"] = cal.axis_levels;
  r.params["rollouts"] = cal.rollouts;
  r.params["sigma_scen"] = cal.sigma_scen;
  r.params["sigma_config"] = cal.sigma_config;
  r.params["experiments"] = a.experiments;
  r.params["replicates"] = a.replicates;
  r.params["alpha"] = a.alpha;
  r.params["estimand"] = a.estimand == "realized" ? "realized-sample" : "super-population";
  r.metrics["theta_true"] = cal.theta_true;
  r.metrics["theta_true_se"] = cal.theta_true_se;
  Table t{"coverage study", {"condition", "resampling", "coverage", "se", "width"}, {}};
  OrderedJson j = OrderedJson::array();
  for (const auto& row : rows) {
    t.add({row.condition, row.method, fmt(row.coverage), fmt(row.coverage_se), fmt(row.mean_width)});
    OrderedJson o;
    o["condition"] = row.condition;
    o["resampling"] = row.method;
    o["coverage"] = row.coverage;
    o["se"] = row.coverage_se;
    o["width"] = row.mean_width;
    j.push_back(o);
  }
  r.metrics["rows"] = j;
  r.tables.push_back(std::move(t));
  detail::finish_warnings(r);
  return r;
}

inline Report cmd_b_sensitivity(const std::string& condition, const std::string& b_text, std::size_t experiments,
                                double alpha, std::size_t calibration_draws, std::uint64_t seed, unsigned threads) {
  std::vector<std::size_t> bs;
  for (const double v : detail::parse_doubles(b_text, "--b-list")) {
    if (v < 1 || v != std::floor(v)) throw CLI::ValidationError("--b-list", "B values must be positive integers");
    bs.push_back(static_cast<std::size_t>(v));
  }
  std::sort(bs.begin(), bs.end());
  bs.erase(std::unique(bs.begin(), bs.end()), bs.end());
  const auto cal = build_calibration(detail::calibration_for(condition), seed, calibration_draws, threads);
  const auto rows = bootstrap_B_sensitivity(cal, bs, experiments, seed, threads, ResampleLadder::full(),
                                            ConfidenceLevel(alpha));
  Report r;
  r.command = "simulate-b-sensitivity";
  r.seed = seed;
  r.params["condition"] = cal.name;
  r.params["b_list"] = bs;
  r.params["experiments"] = experiments;
  r.params["alpha"] = alpha;
  r.metrics["theta_true"] = cal.theta_true;
  Table t{"B sensitivity (full ladder)", {"B", "coverage", "se", "width", "width_change"}, {}};
  OrderedJson j = OrderedJson::array();
  for (const auto& row : rows) {
    t.add({std::to_string(row.replicates), fmt(row.coverage), fmt(row.coverage_se), fmt(row.mean_width),
           fmt(row.width_change, 5)});
    OrderedJson o;
    o["B"] = row.replicates;
    o["coverage"] = row.coverage;
    o["se"] = row.coverage_se;
    o["width"] = row.mean_width;
    o["width_change"] = row.width_change;
    j.push_back(o);
  }
  r.metrics["rows"] = j;
  r.tables.push_back(std::move(t));
  detail::finish_warnings(r);
  return r;
}

inline Report cmd_replay(const std::vector<double>& p, std::size_t k, std::size_t mc,
                         std::optional<double> match_prob, std::uint64_t seed, unsigned threads) {
  ReplaySimSpec spec;
  spec.task_probs = p;
  spec.k = k;
  spec.n_mc = mc;
  if (match_prob) {
    spec.env = ReplayEnvironment::multifactorial;
    spec.match_prob = *match_prob;
  }
  const auto res = match_prob ? replay_transfer_sim(spec, seed, threads) : replay_equivalence_sim(spec, seed, threads);
  Report r;
  r.command = "simulate-replay";
  r.seed = seed;
  r.params["p"] = p;
  r.params["k"] = k;
  r.params["mc"] = mc;
  r.params["environment"] = match_prob ? "multifactorial" : "static";
  if (match_prob) r.params["match_prob"] = *match_prob;
  r.metrics["empirical_sr"] = res.empirical_sr;
  r.metrics["analytic"] = res.analytic;
  r.metrics["abs_error"] = res.abs_error;
  r.metrics["mc_se"] = res.mc_se;
  r.metrics["within_3se"] = res.abs_error <= 3.0 * res.mc_se;
  r.metrics["source_sr"] = res.source_sr;
  Table t{"replay simulation", {"quantity", "value"}, {}};
  t.add({"policy SR (mean p)", fmt(res.source_sr, 5)});
  t.add({match_prob ? "analytic match_prob * pass@k" : "analytic pass@k", fmt(res.analytic, 5)});
  t.add({"replay SR (empirical)", fmt(res.empirical_sr, 5)});
  t.add({"abs error", fmt(res.abs_error, 5)});
  t.add({"mc se", fmt(res.mc_se, 5)});
  r.tables.push_back(std::move(t));
  detail::finish_warnings(r);
  return r;
}

inline Report cmd_integrity(const std::string& profiles_path, const std::string& instances_path, unsigned threads) {
  const auto profiles = load_profiles(profiles_path);
  const auto instances = load_instances(read_json_file(instances_path));
  const auto report = integrity_check(instances, profiles, threads);
  Report r;
  r.command = "integrity-check";
  r.params["profiles"] = profiles.size();
  r.params["instances"] = instances.size();
  Table m{"feasibility matrix", {"instance"}, {}};
  for (const auto& p : report.matrix.profiles) m.columns.push_back(p);
  OrderedJson mj = OrderedJson::object();
  for (std::size_t i = 0; i < report.matrix.instances.size(); ++i) {
    std::vector<std::string> row{report.matrix.instances[i]};
    OrderedJson ij = OrderedJson::object();
    for (std::size_t p = 0; p < report.matrix.profiles.size(); ++p) {
      row.push_back(report.matrix.cells[i][p] ? "yes" : "no");
      ij[report.matrix.profiles[p]] = static_cast<bool>(report.matrix.cells[i][p]);
    }
    mj[report.matrix.instances[i]] = ij;
    m.add(std::move(row));
  }
  OrderedJson constraints = OrderedJson::object();
  for (const auto& inst : instances) {
    OrderedJson list = OrderedJson::array();
    for (const auto& c : effective_constraints(inst)) list.push_back(c.to_string());
    constraints[inst.id] = list;
  }
  Table s{"surviving configurations", {"instance", "profile"}, {}};
  OrderedJson sj = OrderedJson::array();
  for (const auto& cfg : report.survivors) {
    s.add({cfg.instance_id, cfg.profile_id});
    sj.push_back({{"instance", cfg.instance_id}, {"profile", cfg.profile_id}});
  }
  Table log{"exclusion log", {"entry"}, {}};
  for (const auto& e : report.exclusions) log.add({e});
  r.metrics["matrix"] = mj;
  r.metrics["constraints"] = constraints;
  r.metrics["survivors"] = sj;
  r.metrics["exclusions"] = report.exclusions;
  r.warnings = report.matrix.warnings;
  r.tables.push_back(std::move(m));
  r.tables.push_back(std::move(s));
  r.tables.push_back(std::move(log));
  detail::finish_warnings(r);
  return r;
}

// ---------------------------------------------------------------------------

inline void write_outputs(const Report& r, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  const std::filesystem::path base = std::filesystem::path(dir) / r.command;
  std::ofstream json(base.string() + ".json");
  std::ofstream csv(base.string() + ".csv");
  if (!json || !csv) throw IoError("cannot write outputs under " + dir);
  emit_report(json, r, OutputFormat::json);
  emit_report(csv, r, OutputFormat::delimited);
  if (!json || !csv) throw IoError("write failed under " + dir);
}

inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Statistical evaluation toolkit for hierarchical agent-benchmark results", "hbeval"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  CommonOptions common;
  app.add_option("--seed", common.seed_text, "Master seed (default: generated and reported)")->envname("HBEVAL_SEED");
  app.add_option("--threads", common.threads, "Worker cap; 0 = all cores; never changes results")
      ->envname("HBEVAL_THREADS");
  app.add_option("--format", common.format, "Output format")->check(CLI::IsMember({"text", "delimited", "json"}));
  app.add_option("--output-dir", common.output_dir, "Also write <command>.json and <command>.csv here");
  app.add_option("--config", common.config, "Flat key=value file; command-line flags take precedence");

  DataOptions data;
  auto add_data = [&](CLI::App* sub) {
    sub->add_option("--input", data.input, "Results file (JSON Lines or CSV)")->required();
    sub->add_option("--axes", data.axes, "Enabled axes: all, none, or a comma list");
    sub->add_option("--input-format", data.input_format, "auto, jsonl or csv")
        ->check(CLI::IsMember({"auto", "jsonl", "csv"}));
  };
  auto add_model = [&](CLI::App* sub) { sub->add_option("--model", data.model, "Restrict to one model"); };

  BootstrapOptions boot;
  auto add_boot = [&](CLI::App* sub) {
    sub->add_flag("--resample-scenarios", boot.scenarios, "Resample scenarios within each app");
    sub->add_flag("--resample-axes", boot.axes, "Resample configuration-axis values");
    sub->add_flag("--resample-rollouts", boot.rollouts, "Resample rollouts within each leaf");
    sub->add_option("--replicates", boot.replicates, "Bootstrap replicates B")->check(CLI::PositiveNumber);
    sub->add_option("--alpha", boot.alpha, "Two-sided level 1 - alpha")->check(CLI::Range(1e-9, 1.0 - 1e-9));
    sub->add_option("--axis-mode", boot.axis_mode, "values or cells")->check(CLI::IsMember({"values", "cells"}));
    sub->add_option("--pooling", boot.pooling, "rollout or leaf")->check(CLI::IsMember({"rollout", "leaf"}));
    sub->add_option("--trim", boot.trim, "Trimmed-mean fraction per tail")->check(CLI::Range(0.0, 0.4999));
  };

  auto* ingest = app.add_subcommand("ingest", "Parse results and validate the tree");
  std::string write_canonical;
  add_data(ingest);
  add_model(ingest);
  ingest->add_option("--write-canonical", write_canonical, "Write canonical JSON Lines to this path");

  auto* report = app.add_subcommand("report", "Suite means and per-app Wilson intervals");
  std::string pooling = "rollout";
  double trim = 0.0, alpha = 0.05;
  add_data(report);
  add_model(report);
  report->add_option("--pooling", pooling)->check(CLI::IsMember({"rollout", "leaf"}));
  report->add_option("--trim", trim)->check(CLI::Range(0.0, 0.4999));
  report->add_option("--alpha", alpha)->check(CLI::Range(1e-9, 1.0 - 1e-9));

  auto* ci = app.add_subcommand("ci", "Hierarchical bootstrap interval for the suite mean");
  add_data(ci);
  add_model(ci);
  add_boot(ci);
  auto* per_app_ci = app.add_subcommand("per-app-ci", "Hierarchical bootstrap interval per app");
  add_data(per_app_ci);
  add_model(per_app_ci);
  add_boot(per_app_ci);

  auto* decompose = app.add_subcommand("decompose", "Matched-pair sensitivity by axis");
  std::string axis = "all", thresholds;
  add_data(decompose);
  add_model(decompose);
  decompose->add_option("--axis", axis, "Axis name or all");
  decompose->add_option("--thresholds", thresholds, "Comma-separated exceedance thresholds");

  auto* profile = app.add_subcommand("profile", "Performance profiles across models");
  add_data(profile);
  profile->add_option("--thresholds", thresholds, "Comma-separated thresholds");
  profile->add_option("--pooling", pooling)->check(CLI::IsMember({"rollout", "leaf"}));

  auto* regret = app.add_subcommand("regret", "Split-half expected regret and decision regret");
  std::string model_a, model_b;
  std::size_t sims = 500;
  add_data(regret);
  add_boot(regret);
  regret->add_option("--model-a", model_a);
  regret->add_option("--model-b", model_b);
  regret->add_option("--sims", sims, "Split-half simulations")->check(CLI::PositiveNumber);

  auto* cov_base = app.add_subcommand("simulate-coverage-base", "Wald vs. Wilson coverage under the bimodal model");
  std::string r_values = "1,3,5,10";
  std::size_t trials = 10'000;
  double mass_zero = 0.68;
  std::uint32_t r_base = 3;
  cov_base->add_option("--r", r_values, "Comma-separated R values");
  cov_base->add_option("--trials", trials);
  cov_base->add_option("--alpha", alpha)->check(CLI::Range(1e-9, 1.0 - 1e-9));
  cov_base->add_option("--mass-zero", mass_zero, "Mass at observed k=0")->check(CLI::Range(0.0, 1.0));
  cov_base->add_option("--r-base", r_base)->check(CLI::PositiveNumber);

  auto* cov_suite = app.add_subcommand("simulate-coverage-suite", "Bootstrap ladder coverage on synthetic suites");
  SuiteStudyArgs suite_args;
  cov_suite->add_option("--condition", suite_args.condition)
      ->check(CLI::IsMember({"main", "homogeneous", "heterogeneous"}));
  cov_suite->add_option("--variants", suite_args.variants)->check(CLI::IsMember({"table", "ladder", "all"}));
  cov_suite->add_option("--experiments", suite_args.experiments)->check(CLI::PositiveNumber);
  cov_suite->add_option("--replicates", suite_args.replicates)->check(CLI::PositiveNumber);
  cov_suite->add_option("--alpha", suite_args.alpha)->check(CLI::Range(1e-9, 1.0 - 1e-9));
  cov_suite->add_option("--estimand", suite_args.estimand)->check(CLI::IsMember({"super", "realized"}));
  cov_suite->add_flag("--pooled-wald", suite_args.pooled_wald, "Add the naive pooled Wald row");
  cov_suite->add_flag("--flat-cells", suite_args.flat_cells, "Add flat-cell variants of axis rungs");
  cov_suite->add_option("--calibration-draws", suite_args.calibration_draws)->check(CLI::PositiveNumber);

  auto* bsens = app.add_subcommand("simulate-b-sensitivity", "Coverage and width as a function of B");
  std::string condition = "homogeneous", b_list = "100,200,300,500,600,1000,2000";
  std::size_t experiments = kDefaultExperiments, cal_draws = 1'000'000;
  bsens->add_option("--condition", condition)->check(CLI::IsMember({"main", "homogeneous", "heterogeneous"}));
  bsens->add_option("--b-list", b_list);
  bsens->add_option("--experiments", experiments)->check(CLI::PositiveNumber);
  bsens->add_option("--alpha", alpha)->check(CLI::Range(1e-9, 1.0 - 1e-9));
  bsens->add_option("--calibration-draws", cal_draws)->check(CLI::PositiveNumber);

  auto* replay = app.add_subcommand("simulate-replay", "Replay-policy success rate vs. pass@k");
  std::vector<double> p;
  std::size_t k = 1, mc = 100'000;
  std::optional<double> match_prob;
  double match_value = 1.0;
  replay->add_option("--p", p, "Per-task success probabilities")->required()->delimiter(',');
  replay->add_option("--k", k, "Recording attempts")->check(CLI::PositiveNumber);
  replay->add_option("--mc", mc, "Monte Carlo trials");
  auto* match_opt = replay->add_option("--match-prob", match_value, "Multifactorial environment")
                        ->check(CLI::Range(0.0, 1.0));

  auto* integ = app.add_subcommand("integrity-check", "Feasibility matrix and triviality filtering");
  std::string profiles_path, instances_path;
  integ->add_option("--profiles", profiles_path, "Profile file or directory")->required();
  integ->add_option("--instances", instances_path, "Instances JSON")->required();

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    args = detail::apply_config(std::move(args));
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, err, err);
    err << app.help();
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }

  std::uint64_t seed = 0;
  bool seeded = false;
  if (!common.seed_text.empty()) {
    try {
      std::size_t used = 0;
      seed = std::stoull(common.seed_text, &used, 0);
      if (used != common.seed_text.size()) throw std::invalid_argument("seed");
      seeded = true;
    } catch (const std::exception&) {
      err << "error: --seed must be a non-negative integer\n";
      return 2;
    }
  }
  if (!seeded) seed = (std::uint64_t{std::random_device{}()} << 32) | std::random_device{}();
  if (*match_opt) match_prob = match_value;

  OutputFormat format = OutputFormat::text;
  if (common.format == "json") format = OutputFormat::json;
  if (common.format == "delimited") format = OutputFormat::delimited;

  try {
    Report r;
    if (ingest->parsed()) r = cmd_ingest(data, write_canonical);
    else if (report->parsed()) r = cmd_report(data, pooling, trim, alpha);
    else if (ci->parsed()) r = cmd_ci(data, boot, seed, common.threads, false);
    else if (per_app_ci->parsed()) r = cmd_ci(data, boot, seed, common.threads, true);
    else if (decompose->parsed()) r = cmd_decompose(data, axis, thresholds);
    else if (profile->parsed()) r = cmd_profile(data, thresholds, pooling);
    else if (regret->parsed()) r = cmd_regret(data, model_a, model_b, sims, boot, seed, common.threads);
    else if (cov_base->parsed()) r = cmd_coverage_base(r_values, trials, alpha, mass_zero, r_base, seed, common.threads);
    else if (cov_suite->parsed()) r = cmd_coverage_suite(suite_args, seed, common.threads);
    else if (bsens->parsed()) r = cmd_b_sensitivity(condition, b_list, experiments, alpha, cal_draws, seed, common.threads);
    else if (replay->parsed()) r = cmd_replay(p, k, mc, match_prob, seed, common.threads);
    else if (integ->parsed()) r = cmd_integrity(profiles_path, instances_path, common.threads);
    emit_report(out, r, format);
    if (!common.output_dir.empty()) write_outputs(r, common.output_dir);
  } catch (const CLI::ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(std::move(args), out, err);
}

}  // namespace hbeval::cli
