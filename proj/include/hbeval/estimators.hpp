#pragma once
// Leaf- and suite-level estimators for binary rollout outcomes.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "hbeval/core_model.hpp"
#include "hbeval/errors.hpp"

namespace hbeval {

// Two-sided level 1 - alpha. z = z_{alpha/2} is always derived from alpha.
class ConfidenceLevel {
 public:
  explicit ConfidenceLevel(double alpha = 0.05) : alpha_(alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("alpha must lie in (0, 1)");
    z_ = boost::math::quantile(boost::math::complement(boost::math::normal_distribution<double>(),
                                                       alpha / 2.0));
  }

  double alpha() const noexcept { return alpha_; }
  double z() const noexcept { return z_; }
  double confidence() const noexcept { return 1.0 - alpha_; }

  friend bool operator==(const ConfidenceLevel& a, const ConfidenceLevel& b) {
    return a.alpha_ == b.alpha_;
  }

 private:
  double alpha_;
  double z_;
};

enum class IntervalMethod { wilson, wald, bootstrap_percentile };

constexpr const char* method_name(IntervalMethod m) noexcept {
  switch (m) {
    case IntervalMethod::wilson: return "wilson";
    case IntervalMethod::wald: return "wald";
    case IntervalMethod::bootstrap_percentile: return "bootstrap-percentile";
  }
  return "?";
}

struct ConfidenceInterval {
  double estimate = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  IntervalMethod method = IntervalMethod::wilson;
  ConfidenceLevel level{};

  double width() const noexcept { return upper - lower; }
  bool contains(double x) const noexcept { return lower <= x && x <= upper; }
};

// Unclipped Wilson score center and half-width.
struct WilsonScore {
  double center = 0.0;
  double half_width = 0.0;
};

namespace detail {
inline void check_counts(std::size_t k, std::size_t trials) {
  if (trials == 0) throw DomainError("trial count R must be at least 1");
  if (k > trials) throw DomainError("success count k exceeds trial count R");
}
inline double clip01(double x) noexcept { return std::clamp(x, 0.0, 1.0); }
}  // namespace detail

inline WilsonScore wilson_score(std::size_t k, std::size_t trials, const ConfidenceLevel& level) {
  detail::check_counts(k, trials);
  const double n = static_cast<double>(trials);
  const double p = static_cast<double>(k) / n;
  const double z = level.z();
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  WilsonScore s;
  s.center = (p + z2 / (2.0 * n)) / denom;
  s.half_width = z / denom * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n));
  return s;
}

// [center - W, center + W] clipped to [0, 1]; estimate is p̂ = k / R.
inline ConfidenceInterval wilson_interval(std::size_t k, std::size_t trials,
                                          const ConfidenceLevel& level = ConfidenceLevel{}) {
  const WilsonScore s = wilson_score(k, trials, level);
  const double p = static_cast<double>(k) / static_cast<double>(trials);
  // Endpoints are exactly 0 at k = 0 and exactly 1 at k = R.
  const double lo = k == 0 ? 0.0 : detail::clip01(s.center - s.half_width);
  const double hi = k == trials ? 1.0 : detail::clip01(s.center + s.half_width);
  return {p, lo, hi, IntervalMethod::wilson, level};
}

// p̂ ± z sqrt(p̂(1-p̂)/R), clipped. Zero width at p̂ in {0, 1}.
inline ConfidenceInterval wald_interval(std::size_t k, std::size_t trials,
                                        const ConfidenceLevel& level = ConfidenceLevel{}) {
  detail::check_counts(k, trials);
  const double n = static_cast<double>(trials);
  const double p = static_cast<double>(k) / n;
  const double w = level.z() * std::sqrt(p * (1.0 - p) / n);
  return {p, detail::clip01(p - w), detail::clip01(p + w), IntervalMethod::wald, level};
}

// One draw from the Jeffreys posterior Beta(k + 1/2, R - k + 1/2).
template <class Gen>
double jeffreys_draw(std::size_t k, std::size_t trials, Gen& gen) {
  detail::check_counts(k, trials);
  std::gamma_distribution<double> ga(static_cast<double>(k) + 0.5, 1.0);
  std::gamma_distribution<double> gb(static_cast<double>(trials - k) + 0.5, 1.0);
  const double x = ga(gen);
  const double y = gb(gen);
  return x / (x + y);
}

// (1/N) sum_i [1 - (1 - p_i)^k].
inline double pass_at_k(std::span<const double> probs, std::size_t k) {
  if (probs.empty()) throw DomainError("pass@k needs at least one task");
  if (k == 0) throw DomainError("pass@k needs k >= 1");
  double total = 0.0;
  for (const double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError("task probability outside [0, 1]");
    total += 1.0 - std::pow(1.0 - p, static_cast<double>(k));
  }
  return total / static_cast<double>(probs.size());
}

// ---------------------------------------------------------------------------
// Suite aggregation

// How leaves are combined into an app mean. rollout_weighted pools counts
// (sum k / sum R); leaf_weighted averages leaf rates.
enum class Pooling { rollout_weighted, leaf_weighted };

struct SuiteEstimate {
  double theta_hat = 0.0;
  std::map<std::string, double> per_app;
};

inline double app_mean(const BenchmarkTree::App& app, Pooling pooling = Pooling::rollout_weighted) {
  double k = 0.0, n = 0.0, rate_sum = 0.0;
  std::size_t leaves = 0;
  for (const auto& [_, configs] : app)
    for (const auto& [__, leaf] : configs) {
      if (leaf.empty()) continue;
      const double s = static_cast<double>(successes(leaf));
      k += s;
      n += static_cast<double>(leaf.size());
      rate_sum += s / static_cast<double>(leaf.size());
      ++leaves;
    }
  if (leaves == 0) throw DomainError("app has no rollouts");
  return pooling == Pooling::rollout_weighted ? k / n : rate_sum / static_cast<double>(leaves);
}

inline std::map<std::string, double> per_app_means(const BenchmarkTree& tree,
                                                   Pooling pooling = Pooling::rollout_weighted) {
  std::map<std::string, double> out;
  for (const auto& [name, app] : tree.apps()) {
    try {
      out.emplace(name, app_mean(app, pooling));
    } catch (const DomainError&) {
      throw DomainError("app '" + name + "' has no rollouts");
    }
  }
  return out;
}

inline double mean_of(std::span<const double> values) {
  if (values.empty()) throw DomainError("mean of an empty set");
  double s = 0.0;
  for (const double v : values) s += v;
  return s / static_cast<double>(values.size());
}

// Symmetric trimmed mean; floor(trim * n) values removed from each tail.
inline double trimmed_mean(std::span<const double> values, double trim) {
  if (!(trim >= 0.0 && trim < 0.5)) throw DomainError("trim fraction must lie in [0, 0.5)");
  const std::size_t n = values.size();
  const auto cut = static_cast<std::size_t>(std::floor(trim * static_cast<double>(n)));
  if (n == 0 || 2 * cut >= n) throw DomainError("trimming would remove every value");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  return mean_of(std::span<const double>(sorted).subspan(cut, n - 2 * cut));
}

inline SuiteEstimate suite_mean(const BenchmarkTree& tree, Pooling pooling = Pooling::rollout_weighted) {
  if (tree.empty()) throw DomainError("tree has no apps");
  SuiteEstimate out;
  out.per_app = per_app_means(tree, pooling);
  std::vector<double> means;
  for (const auto& [_, m] : out.per_app) means.push_back(m);
  out.theta_hat = mean_of(means);
  return out;
}

inline SuiteEstimate trimmed_suite_mean(const BenchmarkTree& tree, double trim_fraction,
                                        Pooling pooling = Pooling::rollout_weighted) {
  if (tree.empty()) throw DomainError("tree has no apps");
  SuiteEstimate out;
  out.per_app = per_app_means(tree, pooling);
  std::vector<double> means;
  for (const auto& [_, m] : out.per_app) means.push_back(m);
  out.theta_hat = trimmed_mean(means, trim_fraction);
  return out;
}

}  // namespace hbeval
