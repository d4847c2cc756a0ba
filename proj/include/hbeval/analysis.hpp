#pragma once
// Cross-model comparisons: performance profiles, split-half selection
// regret, and CI-disjointness significance decisions.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "hbeval/bootstrap.hpp"
#include "hbeval/core_model.hpp"
#include "hbeval/errors.hpp"
#include "hbeval/estimators.hpp"
#include "hbeval/parallel.hpp"
#include "hbeval/rng.hpp"

namespace hbeval {

using PerAppMeans = std::map<std::string, double>;

struct PerformanceProfile {
  std::vector<double> thresholds;
  std::map<std::string, std::vector<double>> fractions;  // model -> share of apps with p̄_a >= τ
};

inline PerformanceProfile performance_profile(const std::map<std::string, PerAppMeans>& models,
                                              std::span<const double> thresholds) {
  if (!std::is_sorted(thresholds.begin(), thresholds.end()))
    throw DomainError("profile thresholds must be sorted");
  PerformanceProfile out;
  out.thresholds.assign(thresholds.begin(), thresholds.end());
  const PerAppMeans* reference = nullptr;
  for (const auto& [model, means] : models) {
    if (means.empty()) throw DomainError("model '" + model + "' has no apps");
    if (reference == nullptr) {
      reference = &means;
    } else {
      const bool same = std::equal(means.begin(), means.end(), reference->begin(), reference->end(),
                                   [](const auto& a, const auto& b) { return a.first == b.first; });
      if (!same) throw DomainError("model '" + model + "' covers a different app set");
    }
    auto& row = out.fractions[model];
    for (const double tau : thresholds) {
      std::size_t hit = 0;
      for (const auto& [_, m] : means) hit += m >= tau ? 1 : 0;
      row.push_back(static_cast<double>(hit) / static_cast<double>(means.size()));
    }
  }
  return out;
}

enum class RegretMethod { split_half, wald_decision, bootstrap_decision };

constexpr const char* regret_method_name(RegretMethod m) noexcept {
  switch (m) {
    case RegretMethod::split_half: return "split-half";
    case RegretMethod::wald_decision: return "wald-decision";
    case RegretMethod::bootstrap_decision: return "bootstrap-decision";
  }
  return "?";
}

struct AppRegret {
  double p_wrong = 0.0;  // probability of selecting the inferior model
  double gap = 0.0;      // |p̄_a(model1) - p̄_a(model2)| on the full data
  double regret = 0.0;   // p_wrong * gap
};

struct RegretReport {
  std::map<std::string, AppRegret> per_app;
  double total = 0.0;
  RegretMethod method = RegretMethod::split_half;
  std::vector<std::string> warnings;
};

// Per simulation and app: one uniformly drawn configuration per scenario for
// each model, a random floor(S/2)-subset of the shared scenarios, and the
// model with the higher mean over that half wins (fair coin on ties).
// p_wrong is the share of simulations whose winner differs from the
// full-data winner. Apps with identical full-data means have gap 0 and
// p_wrong 0.
inline RegretReport split_half_regret(const BenchmarkTree& model1, const BenchmarkTree& model2,
                                      std::size_t n_sims = 500, std::uint64_t seed = 0,
                                      unsigned threads = 0) {
  if (n_sims == 0) throw DomainError("split-half regret needs at least one simulation");
  if (model1.empty() || model2.empty()) throw DomainError("both trees must contain apps");
  {
    std::vector<std::string> a1, a2;
    for (const auto& [n, _] : model1.apps()) a1.push_back(n);
    for (const auto& [n, _] : model2.apps()) a2.push_back(n);
    if (a1 != a2) throw DomainError("models cover different app sets");
  }

  struct AppData {
    std::string name;
    // [scenario][model] -> leaf rates of that model's configurations
    std::vector<std::array<std::vector<double>, 2>> scenarios;
    double full[2] = {0.0, 0.0};
  };

  RegretReport report;
  std::vector<AppData> apps;
  for (const auto& [name, app1] : model1.apps()) {
    const auto& app2 = model2.app(name);
    AppData data;
    data.name = name;
    data.full[0] = app_mean(app1);
    data.full[1] = app_mean(app2);
    std::size_t unmatched = 0;
    for (const auto& [scenario, configs1] : app1) {
      const auto it = app2.find(scenario);
      if (it == app2.end()) {
        ++unmatched;
        continue;
      }
      std::array<std::vector<double>, 2> rates;
      for (const auto& [_, leaf] : configs1)
        if (!leaf.empty()) rates[0].push_back(rate_of(leaf));
      for (const auto& [_, leaf] : it->second)
        if (!leaf.empty()) rates[1].push_back(rate_of(leaf));
      if (rates[0].empty() || rates[1].empty()) {
        ++unmatched;
        continue;
      }
      data.scenarios.push_back(std::move(rates));
    }
    for (const auto& [scenario, _] : app2) unmatched += app1.contains(scenario) ? 0 : 1;
    if (unmatched > 0)
      report.warnings.push_back(name + ": " + std::to_string(unmatched) +
                                " scenario(s) not shared by both models ignored");
    if (data.scenarios.size() < 2) {
      report.warnings.push_back(name + ": fewer than 2 shared scenarios; app skipped");
      continue;
    }
    apps.push_back(std::move(data));
  }

  const std::size_t n_apps = apps.size();
  std::vector<std::uint8_t> wrong(n_sims * n_apps, 0);
  parallel_for(n_sims, threads, [&](std::size_t sim) {
    thread_local std::vector<std::size_t> order;
    for (std::size_t a = 0; a < n_apps; ++a) {
      const auto& data = apps[a];
      if (data.full[0] == data.full[1]) continue;
      auto gen = substream(seed, StreamDomain::split_half, {sim, a});
      const std::size_t n_scen = data.scenarios.size();
      const std::size_t half = n_scen / 2;
      order.resize(n_scen);
      std::iota(order.begin(), order.end(), std::size_t{0});
      for (std::size_t i = 0; i < half; ++i)
        std::swap(order[i], order[i + uniform_index(gen, n_scen - i)]);
      double score[2] = {0.0, 0.0};
      for (std::size_t i = 0; i < half; ++i) {
        const auto& sc = data.scenarios[order[i]];
        for (int m = 0; m < 2; ++m) score[m] += sc[m][uniform_index(gen, sc[m].size())];
      }
      int winner = score[0] > score[1] ? 0 : (score[1] > score[0] ? 1 : -1);
      if (winner < 0) winner = bernoulli(gen, 0.5) ? 0 : 1;
      const int truth = data.full[0] > data.full[1] ? 0 : 1;
      wrong[sim * n_apps + a] = winner != truth ? 1 : 0;
    }
  });

  for (std::size_t a = 0; a < n_apps; ++a) {
    std::size_t w = 0;
    for (std::size_t sim = 0; sim < n_sims; ++sim) w += wrong[sim * n_apps + a];
    AppRegret r;
    r.gap = std::abs(apps[a].full[0] - apps[a].full[1]);
    r.p_wrong = static_cast<double>(w) / static_cast<double>(n_sims);
    r.regret = r.p_wrong * r.gap;
    report.total += r.regret;
    report.per_app.emplace(apps[a].name, r);
  }
  return report;
}

enum class SignificanceMethod { wald, bootstrap };

// Pooled per-app counts (k, R) of one tree.
inline std::map<std::string, std::pair<std::size_t, std::size_t>> pooled_counts(
    const BenchmarkTree& tree) {
  std::map<std::string, std::pair<std::size_t, std::size_t>> out;
  for (const auto& [name, app] : tree.apps()) {
    auto& [k, n] = out[name];
    for (const auto& [_, configs] : app)
      for (const auto& [__, leaf] : configs) {
        k += successes(leaf);
        n += leaf.size();
      }
  }
  return out;
}

inline bool disjoint(const ConfidenceInterval& a, const ConfidenceInterval& b) noexcept {
  return a.upper < b.lower || b.upper < a.lower;
}

// Significant iff the two models' per-app intervals are disjoint.
inline std::map<std::string, bool> significance_flags(const BenchmarkTree& model1,
                                                      const BenchmarkTree& model2,
                                                      SignificanceMethod method,
                                                      const BootstrapConfig& cfg = {},
                                                      unsigned threads = 0) {
  std::map<std::string, bool> flags;
  if (method == SignificanceMethod::wald) {
    const auto c1 = pooled_counts(model1);
    const auto c2 = pooled_counts(model2);
    for (const auto& [name, kn1] : c1) {
      const auto it = c2.find(name);
      if (it == c2.end()) throw DomainError("app '" + name + "' missing from second model");
      flags[name] = disjoint(wald_interval(kn1.first, kn1.second, cfg.level),
                             wald_interval(it->second.first, it->second.second, cfg.level));
    }
    return flags;
  }
  const auto ci1 = per_app_bootstrap(model1, cfg, threads);
  const auto ci2 = per_app_bootstrap(model2, cfg, threads);
  for (const auto& [name, a] : ci1) {
    const auto it = ci2.find(name);
    if (it == ci2.end()) throw DomainError("app '" + name + "' missing from second model");
    flags[name] = disjoint(a, it->second);
  }
  return flags;
}

// Regret incurred by acting on a significance decision: only apps flagged
// significant contribute.
inline RegretReport decision_regret(const RegretReport& split_half,
                                    const std::map<std::string, bool>& flags, RegretMethod method) {
  RegretReport out;
  out.method = method;
  out.warnings = split_half.warnings;
  for (const auto& [app, r] : split_half.per_app) {
    const auto it = flags.find(app);
    if (it == flags.end() || !it->second) continue;
    out.per_app.emplace(app, r);
    out.total += r.regret;
  }
  return out;
}

}  // namespace hbeval
