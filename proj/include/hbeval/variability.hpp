#pragma once
// Per-axis sensitivity from matched configuration pairs.
//
// Two pairings are provided and never mixed:
//  * matched_pairs: configurations identical on every axis but one, inside
//    one scenario (Δ = p̂_{c1} - p̂_{c2} of two leaves).
//  * exceedance_curve: per scenario, the rate under each value of the axis
//    averaged over all other axes, then all pairs of values.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "hbeval/core_model.hpp"
#include "hbeval/errors.hpp"

namespace hbeval {

struct MatchedPair {
  std::string app;
  std::string scenario;
  Axis axis = Axis::theme;
  ConfigKey context;    // held-fixed values; the varied axis reads "*"
  std::string value_a;  // lexicographically smaller value
  std::string value_b;
  double delta = 0.0;   // p̂(value_a) - p̂(value_b)
};

struct MatchedPairs {
  std::vector<MatchedPair> pairs;
  std::vector<std::string> warnings;
};

struct SensitivityProfile {
  Axis axis = Axis::theme;
  double mad = 0.0;
  double q90_abs_delta = 0.0;
  std::size_t n_pairs = 0;
};

struct ExceedanceCurve {
  Axis axis = Axis::theme;
  std::vector<double> thresholds;
  std::vector<double> fractions;  // share of pairs with |Δ| > τ
  std::size_t n_pairs = 0;
};

namespace detail {

inline void require_axis(const BenchmarkTree& tree, Axis axis) {
  if (!tree.axis_mask().enabled(axis))
    throw DomainError("axis '" + std::string(axis_name(axis)) + "' is disabled in this tree");
}

}  // namespace detail

inline MatchedPairs matched_pairs(const BenchmarkTree& tree, Axis axis,
                                  const std::string& only_app = {}) {
  detail::require_axis(tree, axis);
  MatchedPairs out;
  for (const auto& [app, scenarios] : tree.apps()) {
    if (!only_app.empty() && app != only_app) continue;
    for (const auto& [scenario, configs] : scenarios) {
      // context -> (axis value -> leaf rate), both sorted
      std::map<ConfigKey, std::map<std::string, double>> groups;
      for (const auto& [config, leaf] : configs) {
        if (leaf.empty()) continue;
        ConfigKey context = config;
        context.get(axis) = "*";
        groups[context][config.get(axis)] = rate_of(leaf);
      }
      for (const auto& [context, values] : groups) {
        for (auto i = values.begin(); i != values.end(); ++i)
          for (auto j = std::next(i); j != values.end(); ++j)
            out.pairs.push_back({app, scenario, axis, context, i->first, j->first,
                                 i->second - j->second});
      }
    }
  }
  if (out.pairs.empty())
    out.warnings.push_back("no matched pairs along axis '" + std::string(axis_name(axis)) + "'");
  return out;
}

inline double mad(std::span<const double> deltas) {
  if (deltas.empty()) throw DomainError("MAD of an empty pair set");
  double s = 0.0;
  for (const double d : deltas) s += std::abs(d);
  return s / static_cast<double>(deltas.size());
}

inline double mad(std::span<const MatchedPair> pairs) {
  std::vector<double> deltas;
  deltas.reserve(pairs.size());
  for (const auto& p : pairs) deltas.push_back(p.delta);
  return mad(deltas);
}

// Rank-based percentile: the value at 1-based rank floor(q * n) + 1 (capped
// at n) of the sorted data. For q = 0.9 and ten values this is the largest.
inline double rank_percentile(std::vector<double> values, double q) {
  if (values.empty()) throw DomainError("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  const auto rank = std::min<std::size_t>(
      n, static_cast<std::size_t>(std::floor(q * static_cast<double>(n) + 1e-9)) + 1);
  return values[rank - 1];
}

inline SensitivityProfile sensitivity_profile(const BenchmarkTree& tree, Axis axis) {
  const auto mp = matched_pairs(tree, axis);
  if (mp.pairs.empty())
    throw DomainError("no matched pairs along axis '" + std::string(axis_name(axis)) + "'");
  std::vector<double> abs_deltas;
  for (const auto& p : mp.pairs) abs_deltas.push_back(std::abs(p.delta));
  return {axis, mad(abs_deltas), rank_percentile(abs_deltas, 0.9), mp.pairs.size()};
}

// App x axis MAD grid; cells without pairs (or with the axis disabled) are
// empty.
inline std::map<std::string, std::map<Axis, std::optional<double>>> mad_grid(
    const BenchmarkTree& tree) {
  std::map<std::string, std::map<Axis, std::optional<double>>> grid;
  for (const auto& [app, _] : tree.apps()) {
    for (const Axis axis : kAxes) {
      std::optional<double> cell;
      if (tree.axis_mask().enabled(axis)) {
        const auto mp = matched_pairs(tree, axis, app);
        if (!mp.pairs.empty()) cell = mad(std::span<const MatchedPair>(mp.pairs));
      }
      grid[app][axis] = cell;
    }
  }
  return grid;
}

// |Δ| between axis-marginal scenario rates (each value's rate is the mean of
// the leaf rates carrying it).
inline std::vector<double> marginal_abs_deltas(const BenchmarkTree& tree, Axis axis) {
  detail::require_axis(tree, axis);
  std::vector<double> out;
  for (const auto& [_, scenarios] : tree.apps())
    for (const auto& [__, configs] : scenarios) {
      std::map<std::string, std::pair<double, std::size_t>> by_value;
      for (const auto& [config, leaf] : configs) {
        if (leaf.empty()) continue;
        auto& [sum, n] = by_value[config.get(axis)];
        sum += rate_of(leaf);
        ++n;
      }
      std::vector<double> rates;
      for (const auto& [___, sn] : by_value) rates.push_back(sn.first / static_cast<double>(sn.second));
      for (std::size_t i = 0; i < rates.size(); ++i)
        for (std::size_t j = i + 1; j < rates.size(); ++j) out.push_back(std::abs(rates[i] - rates[j]));
    }
  return out;
}

inline ExceedanceCurve exceedance_curve(std::span<const double> abs_deltas,
                                        std::span<const double> thresholds, Axis axis = Axis::theme) {
  if (thresholds.empty()) throw DomainError("exceedance curve needs at least one threshold");
  if (!std::is_sorted(thresholds.begin(), thresholds.end()))
    throw DomainError("exceedance thresholds must be sorted");
  if (abs_deltas.empty()) throw DomainError("exceedance curve needs at least one pair");
  ExceedanceCurve curve;
  curve.axis = axis;
  curve.n_pairs = abs_deltas.size();
  curve.thresholds.assign(thresholds.begin(), thresholds.end());
  for (const double tau : thresholds) {
    std::size_t above = 0;
    for (const double d : abs_deltas) above += d > tau ? 1 : 0;
    curve.fractions.push_back(static_cast<double>(above) / static_cast<double>(abs_deltas.size()));
  }
  return curve;
}

inline ExceedanceCurve exceedance_curve(const BenchmarkTree& tree, Axis axis,
                                        std::span<const double> thresholds) {
  if (thresholds.empty()) throw DomainError("exceedance curve needs at least one threshold");
  const auto deltas = marginal_abs_deltas(tree, axis);
  if (deltas.empty())
    throw DomainError("no scenario observes two values of axis '" + std::string(axis_name(axis)) +
                      "'");
  return exceedance_curve(deltas, thresholds, axis);
}

}  // namespace hbeval
