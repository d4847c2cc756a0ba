#pragma once
// Calibrated generative models and Monte Carlo studies for the estimators.
//
// Suite model (probability scale, clipped to [0, 1]):
//   p_{a,s}   = clip(mu_a + eps_s),      eps_s ~ Normal(0, sigma_scen)
//   p_{a,s,c} = clip(p_{a,s} + eps_c),   eps_c ~ Normal(0, sigma_config), iid per cell
//   Y         ~ Bernoulli(p_{a,s,c}),    R rollouts per cell
// The target theta_true is the super-population mean (1/A) sum_a E[p_{a,s,c}].

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <utility>
#include <random>
#include <string>
#include <vector>

#include "hbeval/bootstrap.hpp"
#include "hbeval/core_model.hpp"
#include "hbeval/errors.hpp"
#include "hbeval/estimators.hpp"
#include "hbeval/parallel.hpp"
#include "hbeval/rng.hpp"

namespace hbeval {

// Observed k at R_base is 0 with mass_zero and R_base with mass_full.
struct BaseCalibration {
  double mass_zero = 0.68;
  double mass_full = 0.32;
  std::uint32_t r_base = 3;

  void validate() const {
    if (!(mass_zero >= 0.0 && mass_full >= 0.0) || std::abs(mass_zero + mass_full - 1.0) > 1e-12)
      throw DomainError("bimodal masses must be non-negative and sum to 1");
    if (r_base == 0) throw DomainError("R_base must be at least 1");
  }
};

// Fifteen per-app rates spanning 0.16-0.62 with mean 0.41.
inline std::vector<double> default_app_rates() {
  return {0.16, 0.22, 0.27, 0.31, 0.34, 0.37, 0.40, 0.42,
          0.44, 0.47, 0.49, 0.52, 0.55, 0.57, 0.62};
}

struct SuiteCalibration {
  std::string name = "main";
  std::vector<double> app_rates = default_app_rates();
  double sigma_scen = 0.25;
  double sigma_config = 0.05;
  std::size_t scenarios_per_app = 8;
  std::array<std::size_t, 3> axis_levels{3, 3, 3};  // profile x theme x ui_state
  std::uint32_t rollouts = 3;
  double theta_true = std::numeric_limits<double>::quiet_NaN();
  double theta_true_se = std::numeric_limits<double>::quiet_NaN();

  // Main-text heterogeneous calibration: S=8, sigma_scen 0.25, sigma_config 0.05.
  static SuiteCalibration main_text() { return {}; }

  // Extended-table conditions, S=10. Homogeneous has no within-app noise.
  static SuiteCalibration homogeneous() {
    SuiteCalibration c;
    c.name = "homogeneous";
    c.sigma_scen = 0.0;
    c.sigma_config = 0.0;
    c.scenarios_per_app = 10;
    return c;
  }
  static SuiteCalibration heterogeneous() {
    SuiteCalibration c;
    c.name = "heterogeneous";
    c.sigma_scen = 0.08;
    c.sigma_config = 0.03;
    c.scenarios_per_app = 10;
    return c;
  }

  std::size_t cells_per_scenario() const {
    return axis_levels[0] * axis_levels[1] * axis_levels[2];
  }

  void validate() const {
    if (app_rates.empty()) throw DomainError("calibration needs at least one app rate");
    for (const double mu : app_rates)
      if (!(mu >= 0.0 && mu <= 1.0)) throw DomainError("app rate outside [0, 1]");
    if (!(sigma_scen >= 0.0) || !std::isfinite(sigma_scen))
      throw DomainError("sigma_scen must be finite and non-negative");
    if (!(sigma_config >= 0.0) || !std::isfinite(sigma_config))
      throw DomainError("sigma_config must be finite and non-negative");
    if (scenarios_per_app == 0) throw DomainError("need at least one scenario per app");
    for (const auto levels : axis_levels)
      if (levels == 0 || levels > 1000) throw DomainError("axis levels must lie in [1, 1000]");
    if (rollouts == 0) throw DomainError("need at least one rollout per cell");
  }
};

namespace detail {

inline double clip01d(double x) noexcept { return std::clamp(x, 0.0, 1.0); }

template <class Gen>
double normal_draw(Gen& gen, double sigma) {
  if (sigma == 0.0) return 0.0;
  std::normal_distribution<double> n(0.0, sigma);
  return n(gen);
}

}  // namespace detail

// Fixes theta_true by Monte Carlo over the noise model (draws_per_app draws
// per app). With both sigmas zero the value is exact.
inline SuiteCalibration build_calibration(SuiteCalibration cal, std::uint64_t seed = 0,
                                          std::size_t draws_per_app = 1'000'000,
                                          unsigned threads = 0) {
  cal.validate();
  const std::size_t n_apps = cal.app_rates.size();
  if (cal.sigma_scen == 0.0 && cal.sigma_config == 0.0) {
    double s = 0.0;
    for (const double mu : cal.app_rates) s += mu;
    cal.theta_true = s / static_cast<double>(n_apps);
    cal.theta_true_se = 0.0;
    return cal;
  }
  if (draws_per_app < 2) throw DomainError("need at least two calibration draws per app");
  std::vector<double> mean(n_apps), var(n_apps);
  parallel_for(n_apps, threads, [&](std::size_t a) {
    auto gen = substream(seed, StreamDomain::calibration, {a});
    std::normal_distribution<double> scen(0.0, std::max(cal.sigma_scen, 1e-300));
    std::normal_distribution<double> cell(0.0, std::max(cal.sigma_config, 1e-300));
    double s = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < draws_per_app; ++i) {
      const double ps = detail::clip01d(cal.app_rates[a] + (cal.sigma_scen > 0 ? scen(gen) : 0.0));
      const double pc = detail::clip01d(ps + (cal.sigma_config > 0 ? cell(gen) : 0.0));
      s += pc;
      s2 += pc * pc;
    }
    const double n = static_cast<double>(draws_per_app);
    mean[a] = s / n;
    var[a] = std::max(0.0, (s2 - s * s / n) / (n - 1.0)) / n;
  });
  double theta = 0.0, v = 0.0;
  for (std::size_t a = 0; a < n_apps; ++a) {
    theta += mean[a];
    v += var[a];
  }
  cal.theta_true = theta / static_cast<double>(n_apps);
  cal.theta_true_se = std::sqrt(v) / static_cast<double>(n_apps);
  return cal;
}

struct SyntheticSuite {
  BenchmarkTree tree;
  double realized_theta = 0.0;  // mean over apps of the realized cell probabilities
};

namespace detail {
inline std::string indexed(const std::string& prefix, std::size_t i, std::size_t width) {
  std::string digits = std::to_string(i);
  if (digits.size() < width) digits.insert(0, width - digits.size(), '0');
  return prefix + digits;
}

inline std::pair<std::size_t, std::size_t> pooled_counts_of(const BenchmarkTree& tree) {
  std::size_t k = 0, n = 0;
  for (const auto& [_, app] : tree.apps())
    for (const auto& [__, configs] : app)
      for (const auto& [___, leaf] : configs) {
        k += successes(leaf);
        n += leaf.size();
      }
  return {k, n};
}
}  // namespace detail

inline AxisMask synthetic_axis_mask() {
  return AxisMask::none().set(Axis::profile).set(Axis::theme).set(Axis::ui_state);
}

template <class Gen>
SyntheticSuite sample_synthetic_suite(const SuiteCalibration& cal, Gen& gen) {
  cal.validate();
  TreeBuilder builder(synthetic_axis_mask());
  double theta = 0.0;
  std::vector<bool> outcomes(cal.rollouts);
  for (std::size_t a = 0; a < cal.app_rates.size(); ++a) {
    const std::string app = detail::indexed("app", a, 2);
    double app_sum = 0.0;
    for (std::size_t s = 0; s < cal.scenarios_per_app; ++s) {
      const std::string scenario = detail::indexed("s", s, 2);
      const double ps = detail::clip01d(cal.app_rates[a] + detail::normal_draw(gen, cal.sigma_scen));
      for (std::size_t i = 0; i < cal.axis_levels[0]; ++i)
        for (std::size_t j = 0; j < cal.axis_levels[1]; ++j)
          for (std::size_t k = 0; k < cal.axis_levels[2]; ++k) {
            const double pc = detail::clip01d(ps + detail::normal_draw(gen, cal.sigma_config));
            app_sum += pc;
            for (std::uint32_t r = 0; r < cal.rollouts; ++r) outcomes[r] = bernoulli(gen, pc);
            ConfigKey key;
            key.profile = detail::indexed("p", i, 1);
            key.theme = detail::indexed("t", j, 1);
            key.ui_state = detail::indexed("u", k, 1);
            builder.add_leaf(app, scenario, key, outcomes);
          }
    }
    theta += app_sum / static_cast<double>(cal.scenarios_per_app * cal.cells_per_scenario());
  }
  return {std::move(builder).build(), theta / static_cast<double>(cal.app_rates.size())};
}

template <class Gen>
BenchmarkTree sample_synthetic_tree(const SuiteCalibration& cal, Gen& gen) {
  return sample_synthetic_suite(cal, gen).tree;
}

// ---------------------------------------------------------------------------
// Studies

struct CoverageRow {
  std::string condition;
  std::string method;  // estimator or resampling variant
  std::uint32_t rollouts = 0;
  double coverage = 0.0;
  double coverage_se = 0.0;
  double mean_width = 0.0;
  std::size_t trials = 0;
};

inline double binomial_se(double p, std::size_t n) {
  return n == 0 ? 0.0 : std::sqrt(p * (1.0 - p) / static_cast<double>(n));
}

// Per trial: observed k from the bimodal mixture at R_base, p_true from the
// Jeffreys posterior, R fresh rollouts, then Wald and Wilson containment of
// p_true. Rows come out as (wald, R) then (wilson, R) for each R.
inline std::vector<CoverageRow> coverage_study_base(const std::vector<std::uint32_t>& r_values,
                                                    std::size_t n_trials = 10'000,
                                                    const ConfidenceLevel& level = ConfidenceLevel{},
                                                    std::uint64_t seed = 0,
                                                    const BaseCalibration& base = {},
                                                    unsigned threads = 0) {
  base.validate();
  if (n_trials < 1000) throw DomainError("coverage study needs at least 1,000 trials");
  std::vector<CoverageRow> rows;
  for (std::size_t ri = 0; ri < r_values.size(); ++ri) {
    const std::uint32_t R = r_values[ri];
    if (R == 0) throw DomainError("R must be at least 1");
    std::vector<std::array<double, 4>> per_trial(n_trials);  // wald hit, wald width, wilson hit, width
    parallel_for(n_trials, threads, [&](std::size_t t) {
      auto truth = substream(seed, StreamDomain::coverage_base, {0, t});
      const std::uint32_t k_obs = bernoulli(truth, base.mass_zero) ? 0 : base.r_base;
      const double p_true = jeffreys_draw(k_obs, base.r_base, truth);
      auto roll = substream(seed, StreamDomain::coverage_base, {1 + ri, t});
      std::size_t k = 0;
      for (std::uint32_t r = 0; r < R; ++r) k += bernoulli(roll, p_true) ? 1 : 0;
      const auto wald = wald_interval(k, R, level);
      const auto wilson = wilson_interval(k, R, level);
      per_trial[t] = {wald.contains(p_true) ? 1.0 : 0.0, wald.width(),
                      wilson.contains(p_true) ? 1.0 : 0.0, wilson.width()};
    });
    for (int m = 0; m < 2; ++m) {
      double hit = 0.0, width = 0.0;
      for (const auto& row : per_trial) {
        hit += row[2 * m];
        width += row[2 * m + 1];
      }
      const double cov = hit / static_cast<double>(n_trials);
      rows.push_back({"base", m == 0 ? "wald" : "wilson", R, cov, binomial_se(cov, n_trials),
                      width / static_cast<double>(n_trials), n_trials});
    }
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const CoverageRow& a, const CoverageRow& b) { return a.method > b.method; });
  return rows;
}

enum class Estimand { super_population, realized_sample };

// A bootstrap ladder rung, or (no ladder) the naive Wald interval on all
// rollouts pooled as independent coin flips.
struct CoverageVariant {
  std::string label;
  std::optional<ResampleLadder> ladder;
  AxisResampling axis_mode = AxisResampling::axis_values;

  static CoverageVariant rung(const ResampleLadder& l,
                              AxisResampling mode = AxisResampling::axis_values) {
    std::string label = l.label();
    if (mode == AxisResampling::flat_cells && l.config_axes) label += " [flat cells]";
    return {label, l, mode};
  }
  static CoverageVariant pooled_wald() { return {"Wald (pooled)", std::nullopt}; }
};

// Four rungs of the extended coverage table.
inline std::vector<CoverageVariant> table_variants() {
  return {CoverageVariant::rung(ResampleLadder::full()),
          CoverageVariant::rung(ResampleLadder::scenarios_and_axes()),
          CoverageVariant::rung(ResampleLadder::scenarios_and_rollouts()),
          CoverageVariant::rung(ResampleLadder::rollouts_only())};
}

// Cumulative ladder: rollouts, + configuration axes, + scenarios.
inline std::vector<CoverageVariant> ladder_variants() {
  return {CoverageVariant::rung(ResampleLadder::rollouts_only()),
          CoverageVariant::rung(ResampleLadder::axes_and_rollouts()),
          CoverageVariant::rung(ResampleLadder::full())};
}

struct SuiteStudyOptions {
  std::size_t n_experiments = 200;
  std::size_t replicates = 500;
  ConfidenceLevel level{0.05};
  Estimand estimand = Estimand::super_population;
};

// Per experiment: a fresh synthetic suite, every variant's interval, and a
// containment check against the estimand. `cal` must carry theta_true.
inline std::vector<CoverageRow> coverage_study_suite(const SuiteCalibration& cal,
                                                     const std::vector<CoverageVariant>& variants,
                                                     const SuiteStudyOptions& opt = {},
                                                     std::uint64_t seed = 0, unsigned threads = 0) {
  cal.validate();
  if (opt.estimand == Estimand::super_population && std::isnan(cal.theta_true))
    throw DomainError("calibration has no theta_true; call build_calibration first");
  if (opt.n_experiments == 0) throw DomainError("need at least one experiment");
  for (const auto& v : variants)
    if (v.ladder) v.ladder->validate();
  const std::size_t n_var = variants.size();
  std::vector<double> hits(opt.n_experiments * n_var), widths(opt.n_experiments * n_var);

  parallel_for(opt.n_experiments, threads, [&](std::size_t e) {
    auto gen = substream(seed, StreamDomain::simulation_tree, {e});
    const auto suite = sample_synthetic_suite(cal, gen);
    const double target =
        opt.estimand == Estimand::super_population ? cal.theta_true : suite.realized_theta;
    const PackedTree packed(suite.tree);
    for (std::size_t v = 0; v < n_var; ++v) {
      ConfidenceInterval ci;
      if (variants[v].ladder) {
        BootstrapConfig bc;
        bc.ladder = *variants[v].ladder;
        bc.axis_mode = variants[v].axis_mode;
        bc.replicates = opt.replicates;
        bc.level = opt.level;
        bc.seed = derive_seed(seed, {static_cast<std::uint64_t>(StreamDomain::simulation_bootstrap), e});
        ci = hierarchical_bootstrap(packed, bc, 1).interval;
      } else {
        const auto counts = detail::pooled_counts_of(suite.tree);
        ci = wald_interval(counts.first, counts.second, opt.level);
      }
      hits[e * n_var + v] = ci.contains(target) ? 1.0 : 0.0;
      widths[e * n_var + v] = ci.width();
    }
  });

  std::vector<CoverageRow> rows;
  for (std::size_t v = 0; v < n_var; ++v) {
    double h = 0.0, w = 0.0;
    for (std::size_t e = 0; e < opt.n_experiments; ++e) {
      h += hits[e * n_var + v];
      w += widths[e * n_var + v];
    }
    const double cov = h / static_cast<double>(opt.n_experiments);
    rows.push_back({cal.name, variants[v].label, cal.rollouts, cov,
                    binomial_se(cov, opt.n_experiments), w / static_cast<double>(opt.n_experiments),
                    opt.n_experiments});
  }
  return rows;
}

struct BSensitivityRow {
  std::size_t replicates = 0;
  double coverage = 0.0;
  double coverage_se = 0.0;
  double mean_width = 0.0;
  double width_change = 0.0;  // vs. the previous B in the list; 0 for the first
};

// Replicate sets are nested: the first B replicates of a run with B_max are
// exactly a B-replicate bootstrap with the same seed, so one B_max run per
// experiment serves every B in the list.
inline std::vector<BSensitivityRow> bootstrap_B_sensitivity(
    const SuiteCalibration& cal, const std::vector<std::size_t>& b_list,
    std::size_t n_experiments = 200, std::uint64_t seed = 0, unsigned threads = 0,
    const ResampleLadder& ladder = ResampleLadder::full(), const ConfidenceLevel& level = ConfidenceLevel{}) {
  cal.validate();
  if (std::isnan(cal.theta_true)) throw DomainError("calibration has no theta_true");
  if (b_list.empty()) throw DomainError("B list is empty");
  if (!std::is_sorted(b_list.begin(), b_list.end())) throw DomainError("B list must be sorted");
  if (b_list.front() == 0) throw DomainError("B must be at least 1");
  if (n_experiments == 0) throw DomainError("need at least one experiment");
  const std::size_t b_max = b_list.back();
  const std::size_t n_b = b_list.size();
  std::vector<double> hits(n_experiments * n_b), widths(n_experiments * n_b);

  parallel_for(n_experiments, threads, [&](std::size_t e) {
    auto gen = substream(seed, StreamDomain::simulation_tree, {e});
    const auto suite = sample_synthetic_suite(cal, gen);
    BootstrapConfig bc;
    bc.ladder = ladder;
    bc.replicates = b_max;
    bc.level = level;
    bc.seed = derive_seed(seed, {static_cast<std::uint64_t>(StreamDomain::simulation_bootstrap), e});
    const auto result = hierarchical_bootstrap(PackedTree(suite.tree), bc, 1);
    for (std::size_t i = 0; i < n_b; ++i) {
      std::vector<double> prefix(result.replicates.begin(),
                                 result.replicates.begin() + static_cast<std::ptrdiff_t>(b_list[i]));
      const auto ci = percentile_interval(std::move(prefix), result.interval.estimate, level);
      hits[e * n_b + i] = ci.contains(cal.theta_true) ? 1.0 : 0.0;
      widths[e * n_b + i] = ci.width();
    }
  });

  std::vector<BSensitivityRow> rows;
  for (std::size_t i = 0; i < n_b; ++i) {
    double h = 0.0, w = 0.0;
    for (std::size_t e = 0; e < n_experiments; ++e) {
      h += hits[e * n_b + i];
      w += widths[e * n_b + i];
    }
    BSensitivityRow row;
    row.replicates = b_list[i];
    row.coverage = h / static_cast<double>(n_experiments);
    row.coverage_se = binomial_se(row.coverage, n_experiments);
    row.mean_width = w / static_cast<double>(n_experiments);
    row.width_change = rows.empty() ? 0.0 : row.mean_width - rows.back().mean_width;
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Replay

enum class ReplayEnvironment { static_env, multifactorial };

struct ReplaySimSpec {
  std::vector<double> task_probs;
  std::size_t k = 1;           // recording rollouts per task
  std::size_t n_mc = 10'000;   // Monte Carlo trials
  ReplayEnvironment env = ReplayEnvironment::static_env;
  double match_prob = 1.0;     // multifactorial only

  void validate() const {
    if (task_probs.empty()) throw DomainError("replay simulation needs at least one task");
    for (const double p : task_probs)
      if (!(p >= 0.0 && p <= 1.0)) throw DomainError("task probability outside [0, 1]");
    if (k == 0) throw DomainError("k must be at least 1");
    if (n_mc < 10'000) throw DomainError("replay simulation needs n_mc >= 10,000");
    if (!(match_prob >= 0.0 && match_prob <= 1.0)) throw DomainError("match_prob outside [0, 1]");
  }
};

struct ReplayResult {
  double empirical_sr = 0.0;
  double analytic = 0.0;   // pass@k, times match_prob in a multifactorial environment
  double abs_error = 0.0;
  double mc_se = 0.0;
  double source_sr = 0.0;  // mean(p): the recording policy's own success rate
};

namespace detail {

// Replay succeeds on a task iff one of k recording rollouts succeeded (and,
// in a multifactorial environment, the configuration matches).
inline ReplayResult run_replay(const ReplaySimSpec& spec, bool multifactorial, std::uint64_t seed,
                               unsigned threads) {
  spec.validate();
  const double match = multifactorial ? spec.match_prob : 1.0;
  const std::size_t n_tasks = spec.task_probs.size();
  std::vector<double> sr(spec.n_mc);
  parallel_for(spec.n_mc, threads, [&](std::size_t t) {
    auto rec = substream(seed, StreamDomain::replay_record, {t});
    auto env = substream(seed, StreamDomain::replay_match, {t});
    std::size_t solved = 0;
    for (const double p : spec.task_probs) {
      bool recorded = false;
      for (std::size_t j = 0; j < spec.k && !recorded; ++j) recorded = bernoulli(rec, p);
      const bool matched = bernoulli(env, match) || match >= 1.0;
      solved += recorded && matched ? 1 : 0;
    }
    sr[t] = static_cast<double>(solved) / static_cast<double>(n_tasks);
  });
  double s = 0.0, s2 = 0.0;
  for (const double v : sr) {
    s += v;
    s2 += v * v;
  }
  const double n = static_cast<double>(spec.n_mc);
  ReplayResult out;
  out.empirical_sr = s / n;
  out.mc_se = std::sqrt(std::max(0.0, (s2 - s * s / n) / (n - 1.0)) / n);
  out.analytic = match * pass_at_k(spec.task_probs, spec.k);
  out.abs_error = std::abs(out.empirical_sr - out.analytic);
  out.source_sr = mean_of(spec.task_probs);
  return out;
}

}  // namespace detail

inline ReplayResult replay_equivalence_sim(const ReplaySimSpec& spec, std::uint64_t seed = 0,
                                           unsigned threads = 0) {
  return detail::run_replay(spec, false, seed, threads);
}

inline ReplayResult replay_transfer_sim(const ReplaySimSpec& spec, std::uint64_t seed = 0,
                                        unsigned threads = 0) {
  return detail::run_replay(spec, spec.env == ReplayEnvironment::multifactorial, seed, threads);
}

}  // namespace hbeval
