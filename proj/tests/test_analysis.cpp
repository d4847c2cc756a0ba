#include <catch_amalgamated.hpp>

#include "hbeval/analysis.hpp"
#include "support.hpp"

using namespace hbeval;
using Catch::Approx;

namespace {

std::vector<bool> outcomes(int k, int n) {
  std::vector<bool> v(n, false);
  for (int i = 0; i < k; ++i) v[i] = true;
  return v;
}

// Exact p_wrong for an app whose scenarios each hold two configurations:
// enumerate the chosen half (one of S scenarios when S = 2 or 3) and both
// models' configuration draws.
double exact_p_wrong(const std::vector<std::array<std::array<double, 2>, 2>>& sc, int truth) {
  double wrong = 0.0;
  const double n = static_cast<double>(sc.size());
  for (const auto& s : sc)
    for (int c1 = 0; c1 < 2; ++c1)
      for (int c2 = 0; c2 < 2; ++c2) {
        const double a = s[0][c1], b = s[1][c2];
        const double w = a == b ? 0.5 : ((a > b ? 0 : 1) != truth ? 1.0 : 0.0);
        wrong += w / (4.0 * n);
      }
  return wrong;
}

}  // namespace

TEST_CASE("performance profile fractions", "[analysis]") {
  const std::map<std::string, PerAppMeans> models{{"m1", {{"a", 0.2}, {"b", 0.5}, {"c", 0.9}}},
                                                  {"m2", {{"a", 0.0}, {"b", 0.6}, {"c", 0.6}}}};
  const std::vector<double> tau{0.0, 0.5, 0.6, 1.0};
  const auto p = performance_profile(models, tau);
  CHECK(p.fractions.at("m1") == std::vector<double>{1.0, 2.0 / 3, 1.0 / 3, 0.0});
  CHECK(p.fractions.at("m2") == std::vector<double>{1.0, 2.0 / 3, 2.0 / 3, 0.0});
  for (const auto& [_, row] : p.fractions)
    for (std::size_t i = 1; i < row.size(); ++i) CHECK(row[i] <= row[i - 1]);
  const std::map<std::string, PerAppMeans> mismatched{{"m1", {{"a", 0.2}}}, {"m2", {{"b", 0.2}}}};
  CHECK_THROWS_AS(performance_profile(mismatched, tau), DomainError);
}

TEST_CASE("split-half regret matches exact enumeration", "[analysis]") {
  // model 1 is better on the full data for app "x".
  const auto m1 = testing::make_tree({{"x", {{"s1", {outcomes(4, 4), outcomes(2, 4)}},
                                             {"s2", {outcomes(3, 4), outcomes(1, 4)}}}}});
  const auto m2 = testing::make_tree({{"x", {{"s1", {outcomes(1, 4), outcomes(3, 4)}},
                                             {"s2", {outcomes(2, 4), outcomes(0, 4)}}}}});
  const std::vector<std::array<std::array<double, 2>, 2>> sc{{{{1.0, 0.5}, {0.25, 0.75}}},
                                                             {{{0.75, 0.25}, {0.5, 0.0}}}};
  const double exact = exact_p_wrong(sc, 0);
  const std::size_t n = 40000;
  const auto r = split_half_regret(m1, m2, n, 8, 1);
  const auto& x = r.per_app.at("x");
  CHECK(x.gap == Approx(10.0 / 16 - 6.0 / 16));
  CHECK(std::abs(x.p_wrong - exact) < 4 * std::sqrt(exact * (1 - exact) / n));
  CHECK(x.regret == Approx(x.p_wrong * x.gap));
  CHECK(r.total == Approx(x.regret));
}

TEST_CASE("split-half regret is deterministic across threads", "[analysis]") {
  const auto d = ingest_records(testing::slurp(testing::fixture("results_small.jsonl")), AxisMask::all());
  const auto a = split_half_regret(d.models.at("alpha"), d.models.at("beta"), 300, 4, 1);
  const auto b = split_half_regret(d.models.at("alpha"), d.models.at("beta"), 300, 4, 3);
  REQUIRE(a.per_app.size() == b.per_app.size());
  for (const auto& [app, r] : a.per_app) CHECK(r.p_wrong == b.per_app.at(app).p_wrong);
  CHECK(a.total == b.total);
}

TEST_CASE("equal apps carry no regret, thin apps are skipped", "[analysis]") {
  const auto m1 = testing::make_tree({{"eq", {{"s1", {outcomes(1, 2)}}, {"s2", {outcomes(2, 2)}}}},
                                      {"thin", {{"s1", {outcomes(1, 2)}}}}});
  const auto m2 = testing::make_tree({{"eq", {{"s1", {outcomes(2, 2)}}, {"s2", {outcomes(1, 2)}}}},
                                      {"thin", {{"s1", {outcomes(0, 2)}}}}});
  const auto r = split_half_regret(m1, m2, 100, 1, 1);
  CHECK(r.per_app.at("eq").p_wrong == 0.0);
  CHECK(r.per_app.at("eq").regret == 0.0);
  CHECK_FALSE(r.per_app.contains("thin"));
  CHECK(r.warnings.size() == 1);
}

TEST_CASE("regret input validation", "[analysis]") {
  const auto m1 = testing::make_tree({{"a", {{"s", {outcomes(1, 2)}}}}});
  const auto m2 = testing::make_tree({{"b", {{"s", {outcomes(1, 2)}}}}});
  CHECK_THROWS_AS(split_half_regret(m1, m2), DomainError);
  CHECK_THROWS_AS(split_half_regret(m1, m1, 0), DomainError);
}

TEST_CASE("significance by interval disjointness", "[analysis]") {
  const auto m1 = testing::make_tree({{"far", {{"s", {outcomes(20, 20), outcomes(20, 20)}}}},
                                      {"near", {{"s", {outcomes(10, 20), outcomes(10, 20)}}}}});
  const auto m2 = testing::make_tree({{"far", {{"s", {outcomes(0, 20), outcomes(1, 20)}}}},
                                      {"near", {{"s", {outcomes(11, 20), outcomes(9, 20)}}}}});
  const auto wald = significance_flags(m1, m2, SignificanceMethod::wald);
  CHECK(wald.at("far"));
  CHECK_FALSE(wald.at("near"));
  BootstrapConfig cfg;
  cfg.replicates = 500;
  const auto boot = significance_flags(m1, m2, SignificanceMethod::bootstrap, cfg, 1);
  CHECK(boot.at("far"));
  CHECK_FALSE(boot.at("near"));

  // Hand check of the Wald decision from the pooled counts.
  const auto c = pooled_counts(m1);
  CHECK(c.at("near") == std::pair<std::size_t, std::size_t>{20, 40});
}

TEST_CASE("decision regret counts only flagged apps", "[analysis]") {
  RegretReport sh;
  sh.per_app["a"] = {0.5, 0.2, 0.1};
  sh.per_app["b"] = {0.25, 0.4, 0.1};
  sh.per_app["c"] = {0.1, 0.1, 0.01};
  sh.total = 0.21;
  const auto r = decision_regret(sh, {{"a", true}, {"b", false}}, RegretMethod::wald_decision);
  CHECK(r.per_app.size() == 1);
  CHECK(r.total == Approx(0.1));
  CHECK(r.method == RegretMethod::wald_decision);
  CHECK(std::string(regret_method_name(r.method)) == "wald-decision");
}

TEST_CASE("disjoint intervals", "[analysis]") {
  ConfidenceInterval a{0.5, 0.1, 0.3}, b{0.5, 0.3, 0.6}, c{0.5, 0.31, 0.6};
  CHECK_FALSE(disjoint(a, b));
  CHECK(disjoint(a, c));
  CHECK(disjoint(c, a));
}
