#pragma once
// Hierarchical bootstrap over a BenchmarkTree.
//
// Apps are fixed strata and are never resampled. Within each app, every
// replicate may resample (1) scenarios with replacement, (2) the observed
// values of each environmental axis within a scenario, keeping the product
// of the drawn values as the surviving configuration cells, and (3) the
// rollouts of each surviving leaf. The suite statistic (mean or trimmed
// mean of the per-app means) is recomputed per replicate and the interval
// is read off the replicate quantiles.
//
// Replicate b of app a always draws from substream (seed, b, a), so the
// replicate vector does not depend on how many threads computed it.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hbeval/core_model.hpp"
#include "hbeval/errors.hpp"
#include "hbeval/estimators.hpp"
#include "hbeval/parallel.hpp"
#include "hbeval/rng.hpp"

namespace hbeval {

struct ResampleLadder {
  bool scenarios = true;
  bool config_axes = true;
  bool rollouts = true;

  static constexpr ResampleLadder full() { return {true, true, true}; }
  static constexpr ResampleLadder rollouts_only() { return {false, false, true}; }
  static constexpr ResampleLadder axes_and_rollouts() { return {false, true, true}; }
  static constexpr ResampleLadder scenarios_and_rollouts() { return {true, false, true}; }
  static constexpr ResampleLadder scenarios_and_axes() { return {true, true, false}; }

  void validate() const {
    if (!scenarios && !config_axes && !rollouts)
      throw DomainError("resample ladder must enable at least one level");
  }

  // Row labels in the style of the coverage tables.
  std::string label() const {
    std::string out;
    auto add = [&](bool on, const char* name) {
      if (!on) return;
      if (!out.empty()) out += " + ";
      out += name;
    };
    add(scenarios, "Scen");
    add(config_axes, "Config");
    add(rollouts, "Roll");
    if (out == "Roll") return "Roll only";
    return out.empty() ? "none" : out;
  }

  friend bool operator==(const ResampleLadder&, const ResampleLadder&) = default;
};

// axis_values: resample each axis's observed values and take the product.
// flat_cells: resample the scenario's configuration cells directly.
enum class AxisResampling { axis_values, flat_cells };

struct SuiteStatistic {
  enum class Kind { mean, trimmed_mean };
  Kind kind = Kind::mean;
  double trim = 0.0;

  static SuiteStatistic mean() { return {}; }
  static SuiteStatistic trimmed(double fraction) { return {Kind::trimmed_mean, fraction}; }

  double operator()(std::span<const double> app_means) const {
    return kind == Kind::mean ? mean_of(app_means) : trimmed_mean(app_means, trim);
  }

  std::string label() const {
    if (kind == Kind::mean) return "mean";
    return "trimmed-mean(" + std::to_string(trim) + ")";
  }
};

struct BootstrapConfig {
  ResampleLadder ladder = ResampleLadder::full();
  std::size_t replicates = 1000;
  ConfidenceLevel level{0.05};
  std::uint64_t seed = 0;
  SuiteStatistic statistic{};
  AxisResampling axis_mode = AxisResampling::axis_values;
  Pooling pooling = Pooling::rollout_weighted;

  void validate() const {
    ladder.validate();
    if (replicates == 0) throw DomainError("bootstrap needs at least one replicate");
  }
};

struct BootstrapResult {
  ConfidenceInterval interval;
  std::vector<double> replicates;
  std::optional<std::map<std::string, ConfidenceInterval>> per_app_intervals;
};

// ---------------------------------------------------------------------------
// Packed representation used by the resampling loop.

class PackedApp {
 public:
  static constexpr std::uint32_t kNoDraw = std::numeric_limits<std::uint32_t>::max();

  struct Cell {
    std::array<std::uint16_t, 4> value{};  // index into the scenario's axis values
    std::uint32_t successes = 0;
    std::uint32_t trials = 0;
    std::uint32_t cdf = kNoDraw;  // Binomial(R, k/R) table; kNoDraw when k in {0, R}
  };
  struct Scenario {
    std::array<std::uint16_t, 4> levels{1, 1, 1, 1};  // observed values per axis
    std::vector<Cell> cells;
  };

  explicit PackedApp(const BenchmarkTree::App& app) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> tables;
    for (const auto& [_, configs] : app) {
      Scenario sc;
      std::array<std::map<std::string, std::uint16_t>, 4> values;
      for (const auto& [config, __] : configs)
        for (std::size_t a = 0; a < 4; ++a) values[a].emplace(config.get(kAxes[a]), 0);
      for (std::size_t a = 0; a < 4; ++a) {
        std::uint16_t i = 0;
        for (auto& [___, idx] : values[a]) idx = i++;
        sc.levels[a] = static_cast<std::uint16_t>(values[a].size());
      }
      for (const auto& [config, leaf] : configs) {
        if (leaf.empty()) continue;
        Cell cell;
        for (std::size_t a = 0; a < 4; ++a) cell.value[a] = values[a].at(config.get(kAxes[a]));
        cell.trials = static_cast<std::uint32_t>(leaf.size());
        cell.successes = static_cast<std::uint32_t>(successes(leaf));
        if (cell.successes != 0 && cell.successes != cell.trials) {
          const auto key = std::make_pair(cell.successes, cell.trials);
          auto it = tables.find(key);
          if (it == tables.end()) {
            it = tables.emplace(key, static_cast<std::uint32_t>(cdfs_.size())).first;
            cdfs_.push_back(binomial_cdf(cell.trials, static_cast<double>(cell.successes) /
                                                         static_cast<double>(cell.trials)));
          }
          cell.cdf = it->second;
        }
        total_successes_ += cell.successes;
        total_trials_ += cell.trials;
        rate_sum_ += static_cast<double>(cell.successes) / static_cast<double>(cell.trials);
        ++leaves_;
        sc.cells.push_back(cell);
      }
      if (sc.cells.empty()) continue;
      scenarios_.push_back(std::move(sc));
    }
    if (scenarios_.empty()) throw DomainError("app has no rollouts");
  }

  const std::vector<Scenario>& scenarios() const noexcept { return scenarios_; }
  const std::vector<double>& cdf(std::uint32_t i) const { return cdfs_[i]; }

  double mean(Pooling pooling) const noexcept {
    return pooling == Pooling::rollout_weighted
               ? static_cast<double>(total_successes_) / static_cast<double>(total_trials_)
               : rate_sum_ / static_cast<double>(leaves_);
  }

 private:
  static std::vector<double> binomial_cdf(std::uint32_t n, double p) {
    std::vector<double> cdf(n + 1);
    double acc = 0.0;
    for (std::uint32_t j = 0; j <= n; ++j) {
      const double log_pmf = std::lgamma(n + 1.0) - std::lgamma(j + 1.0) - std::lgamma(n - j + 1.0) +
                             j * std::log(p) + (n - j) * std::log1p(-p);
      acc += std::exp(log_pmf);
      cdf[j] = acc;
    }
    cdf[n] = 1.0;
    return cdf;
  }

  std::vector<Scenario> scenarios_;
  std::vector<std::vector<double>> cdfs_;
  std::uint64_t total_successes_ = 0;
  std::uint64_t total_trials_ = 0;
  double rate_sum_ = 0.0;
  std::size_t leaves_ = 0;
};

class PackedTree {
 public:
  explicit PackedTree(const BenchmarkTree& tree) {
    if (tree.empty()) throw DomainError("tree has no apps");
    for (const auto& [name, app] : tree.apps()) {
      names_.push_back(name);
      try {
        apps_.emplace_back(app);
      } catch (const DomainError&) {
        throw DomainError("app '" + name + "' has no rollouts");
      }
    }
  }

  const std::vector<std::string>& names() const noexcept { return names_; }
  const std::vector<PackedApp>& apps() const noexcept { return apps_; }
  std::size_t size() const noexcept { return apps_.size(); }

  std::size_t index_of(const std::string& app) const {
    const auto it = std::lower_bound(names_.begin(), names_.end(), app);
    if (it == names_.end() || *it != app) throw LookupError("unknown app '" + app + "'");
    return static_cast<std::size_t>(it - names_.begin());
  }

 private:
  std::vector<std::string> names_;
  std::vector<PackedApp> apps_;
};

struct ResampleOptions {
  ResampleLadder ladder = ResampleLadder::full();
  AxisResampling axis_mode = AxisResampling::axis_values;
  Pooling pooling = Pooling::rollout_weighted;
};

// Scratch buffers reused across calls on one thread.
struct ResampleWorkspace {
  std::array<std::vector<std::uint32_t>, 4> axis_counts;
  std::vector<std::uint32_t> weights;
};

// One resampled app mean p̄_a*.
template <class Gen>
double resample_app(const PackedApp& app, const ResampleOptions& opt, Gen& gen,
                    ResampleWorkspace& ws) {
  const auto& scenarios = app.scenarios();
  const std::size_t n_scen = scenarios.size();
  double k_sum = 0.0, n_sum = 0.0, rate_sum = 0.0, leaf_copies = 0.0;

  for (std::size_t i = 0; i < n_scen; ++i) {
    const auto& sc = scenarios[opt.ladder.scenarios ? uniform_index(gen, n_scen) : i];
    const std::size_t n_cells = sc.cells.size();
    bool weighted = false;

    if (opt.ladder.config_axes && n_cells > 1) {
      weighted = true;
      ws.weights.assign(n_cells, 0);
      if (opt.axis_mode == AxisResampling::flat_cells) {
        for (std::size_t j = 0; j < n_cells; ++j) ++ws.weights[uniform_index(gen, n_cells)];
      } else {
        // Product of resampled axis values; redrawn if it misses every
        // observed cell (only possible for non-factorial designs).
        std::uint64_t total = 0;
        do {
          for (std::size_t a = 0; a < 4; ++a) {
            const std::size_t levels = sc.levels[a];
            if (levels <= 1) continue;
            auto& counts = ws.axis_counts[a];
            counts.assign(levels, 0);
            for (std::size_t j = 0; j < levels; ++j) ++counts[uniform_index(gen, levels)];
          }
          total = 0;
          for (std::size_t c = 0; c < n_cells; ++c) {
            std::uint32_t w = 1;
            for (std::size_t a = 0; a < 4 && w > 0; ++a)
              if (sc.levels[a] > 1) w *= ws.axis_counts[a][sc.cells[c].value[a]];
            ws.weights[c] = w;
            total += w;
          }
        } while (total == 0);
      }
    }

    for (std::size_t c = 0; c < n_cells; ++c) {
      const auto& cell = sc.cells[c];
      const std::uint32_t copies = weighted ? ws.weights[c] : 1;
      for (std::uint32_t copy = 0; copy < copies; ++copy) {
        std::uint32_t k = cell.successes;
        if (opt.ladder.rollouts && cell.cdf != PackedApp::kNoDraw) {
          const auto& cdf = app.cdf(cell.cdf);
          const double u = uniform01(gen);
          k = 0;
          while (u >= cdf[k]) ++k;
        }
        k_sum += k;
        n_sum += cell.trials;
        rate_sum += static_cast<double>(k) / static_cast<double>(cell.trials);
        leaf_copies += 1.0;
      }
    }
  }
  return opt.pooling == Pooling::rollout_weighted ? k_sum / n_sum : rate_sum / leaf_copies;
}

template <class Gen>
double resample_app(const PackedApp& app, const ResampleOptions& opt, Gen& gen) {
  ResampleWorkspace ws;
  return resample_app(app, opt, gen, ws);
}

template <class Gen>
double resample_app(const BenchmarkTree::App& app, const ResampleLadder& ladder, Gen& gen) {
  ladder.validate();
  return resample_app(PackedApp(app), ResampleOptions{ladder}, gen);
}

// ---------------------------------------------------------------------------
// Percentile intervals

// Type-7 (linear interpolation) sample quantile of sorted data.
inline double sorted_quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw DomainError("quantile of an empty set");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline ConfidenceInterval percentile_interval(std::vector<double> replicates, double estimate,
                                              const ConfidenceLevel& level) {
  std::sort(replicates.begin(), replicates.end());
  return {estimate, sorted_quantile(replicates, level.alpha() / 2.0),
          sorted_quantile(replicates, 1.0 - level.alpha() / 2.0),
          IntervalMethod::bootstrap_percentile, level};
}

// ---------------------------------------------------------------------------
// Drivers

namespace detail {

struct ReplicateMatrix {
  std::vector<double> suite;    // B
  std::vector<double> per_app;  // B x A, row-major; empty unless requested
};

inline ReplicateMatrix run_replicates(const PackedTree& tree, const BootstrapConfig& cfg,
                                      unsigned threads, bool keep_per_app) {
  cfg.validate();
  const std::size_t n_apps = tree.size();
  const std::size_t n_rep = cfg.replicates;
  ReplicateMatrix out;
  out.suite.assign(n_rep, 0.0);
  if (keep_per_app) out.per_app.assign(n_rep * n_apps, 0.0);
  const ResampleOptions opt{cfg.ladder, cfg.axis_mode, cfg.pooling};

  parallel_for(n_rep, threads, [&](std::size_t b) {
    thread_local ResampleWorkspace ws;
    thread_local std::vector<double> means;
    means.resize(n_apps);
    for (std::size_t a = 0; a < n_apps; ++a) {
      auto gen = substream(cfg.seed, StreamDomain::bootstrap, {b, a});
      means[a] = resample_app(tree.apps()[a], opt, gen, ws);
    }
    out.suite[b] = cfg.statistic(means);
    if (keep_per_app) std::copy(means.begin(), means.end(), out.per_app.begin() + b * n_apps);
  });
  return out;
}

inline std::vector<double> point_means(const PackedTree& tree, Pooling pooling) {
  std::vector<double> means;
  for (const auto& app : tree.apps()) means.push_back(app.mean(pooling));
  return means;
}

}  // namespace detail

inline BootstrapResult hierarchical_bootstrap(const PackedTree& tree, const BootstrapConfig& cfg,
                                              unsigned threads = 0, bool with_per_app = false) {
  auto reps = detail::run_replicates(tree, cfg, threads, with_per_app);
  const auto means = detail::point_means(tree, cfg.pooling);
  BootstrapResult result;
  result.interval = percentile_interval(reps.suite, cfg.statistic(means), cfg.level);
  if (with_per_app) {
    std::map<std::string, ConfidenceInterval> per_app;
    std::vector<double> column(cfg.replicates);
    for (std::size_t a = 0; a < tree.size(); ++a) {
      for (std::size_t b = 0; b < cfg.replicates; ++b) column[b] = reps.per_app[b * tree.size() + a];
      per_app.emplace(tree.names()[a], percentile_interval(column, means[a], cfg.level));
    }
    result.per_app_intervals = std::move(per_app);
  }
  result.replicates = std::move(reps.suite);
  return result;
}

inline BootstrapResult hierarchical_bootstrap(const BenchmarkTree& tree, const BootstrapConfig& cfg,
                                              unsigned threads = 0, bool with_per_app = false) {
  cfg.validate();
  return hierarchical_bootstrap(PackedTree(tree), cfg, threads, with_per_app);
}

// Per-app percentile intervals. Uses the same substreams as
// hierarchical_bootstrap, so the two agree replicate for replicate.
inline std::map<std::string, ConfidenceInterval> per_app_bootstrap(const BenchmarkTree& tree,
                                                                   const BootstrapConfig& cfg,
                                                                   unsigned threads = 0) {
  return *hierarchical_bootstrap(tree, cfg, threads, true).per_app_intervals;
}

inline ConfidenceInterval per_app_bootstrap(const BenchmarkTree& tree, const std::string& app,
                                            const BootstrapConfig& cfg, unsigned threads = 0) {
  cfg.validate();
  const PackedTree packed(tree);
  const std::size_t a = packed.index_of(app);
  const ResampleOptions opt{cfg.ladder, cfg.axis_mode, cfg.pooling};
  std::vector<double> reps(cfg.replicates);
  parallel_for(cfg.replicates, threads, [&](std::size_t b) {
    thread_local ResampleWorkspace ws;
    auto gen = substream(cfg.seed, StreamDomain::bootstrap, {b, a});
    reps[b] = resample_app(packed.apps()[a], opt, gen, ws);
  });
  return percentile_interval(std::move(reps), packed.apps()[a].mean(cfg.pooling), cfg.level);
}

}  // namespace hbeval
