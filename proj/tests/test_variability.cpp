#include <catch_amalgamated.hpp>

#include "hbeval/rng.hpp"
#include "hbeval/variability.hpp"
#include "support.hpp"

using namespace hbeval;
using Catch::Approx;

namespace {

std::vector<bool> outcomes(int k, int n) {
  std::vector<bool> v(n, false);
  for (int i = 0; i < k; ++i) v[i] = true;
  return v;
}

}  // namespace

TEST_CASE("MAD of signed deltas", "[variability]") {
  const std::vector<double> d{0.2, -0.1, 0.1};
  CHECK(mad(d) == Approx(0.4 / 3).margin(1e-12));
  CHECK(std::abs(mad(d) - 0.1333) < 1e-4);
  CHECK_THROWS_AS(mad(std::vector<double>{}), DomainError);
}

TEST_CASE("matched pairs: v values give v choose 2 pairs per context", "[variability]") {
  for (int v = 2; v <= 6; ++v) {
    std::vector<std::vector<bool>> leaves;
    for (int i = 0; i < v; ++i) leaves.push_back(outcomes(i % 4, 4));
    const auto tree = testing::make_tree({{"a", {{"s1", leaves}, {"s2", leaves}}}, {"b", {{"s", leaves}}}});
    const auto mp = matched_pairs(tree, Axis::theme);
    CHECK(mp.pairs.size() == static_cast<std::size_t>(3 * v * (v - 1) / 2));
    CHECK(mp.warnings.empty());
  }
}

TEST_CASE("matched pair contents", "[variability]") {
  const auto tree = testing::make_tree({{"a", {{"s", {outcomes(3, 4), outcomes(1, 4)}}}}});
  const auto mp = matched_pairs(tree, Axis::theme);
  REQUIRE(mp.pairs.size() == 1);
  const auto& p = mp.pairs[0];
  CHECK(p.value_a == "t0");
  CHECK(p.value_b == "t1");
  CHECK(p.delta == Approx(0.5));
  CHECK(p.context.theme == "*");

  const auto none = matched_pairs(tree, Axis::profile);
  CHECK(none.pairs.empty());
  CHECK(none.warnings.size() == 1);
}

TEST_CASE("pairs hold the other axes fixed", "[variability]") {
  const auto d = ingest_records(testing::slurp(testing::fixture("results_small.jsonl")), AxisMask::all());
  const auto& tree = d.models.at("alpha");
  const auto theme = matched_pairs(tree, Axis::theme);
  CHECK(theme.pairs.size() == 7 * 2);  // 7 scenarios x 2 profiles x C(2,2)
  for (const auto& p : theme.pairs) {
    CHECK(p.context.profile != "*");
    ConfigKey ka = p.context, kb = p.context;
    ka.theme = p.value_a;
    kb.theme = p.value_b;
    CHECK(p.delta == Approx(rate_of(tree.leaf(p.app, p.scenario, ka)) - rate_of(tree.leaf(p.app, p.scenario, kb))));
  }
}

TEST_CASE("disabled axis is rejected", "[variability]") {
  const auto tree = testing::make_tree({{"a", {{"s", {outcomes(1, 2), outcomes(0, 2)}}}}},
                                       AxisMask::none().set(Axis::theme));
  CHECK_THROWS_AS(matched_pairs(tree, Axis::profile), DomainError);
  CHECK_NOTHROW(matched_pairs(tree, Axis::theme));
}

TEST_CASE("rank percentile", "[variability]") {
  std::vector<double> v;
  for (int i = 1; i <= 10; ++i) v.push_back(i);
  CHECK(rank_percentile(v, 0.9) == 10.0);
  CHECK(rank_percentile(v, 0.5) == 6.0);
  CHECK(rank_percentile(v, 0.0) == 1.0);
  v.resize(20);
  for (int i = 0; i < 20; ++i) v[i] = 20 - i;
  CHECK(rank_percentile(v, 0.9) == 19.0);
}

TEST_CASE("sensitivity profile", "[variability]") {
  const auto tree = testing::make_tree({{"a", {{"s", {outcomes(4, 4), outcomes(2, 4), outcomes(3, 4)}}}}});
  const auto sp = sensitivity_profile(tree, Axis::theme);
  CHECK(sp.n_pairs == 3);
  CHECK(sp.mad == Approx((0.5 + 0.25 + 0.25) / 3));
  CHECK(sp.q90_abs_delta == Approx(0.5));
}

TEST_CASE("MAD grid leaves empty cells empty", "[variability]") {
  const auto tree = testing::make_tree({{"a", {{"s", {outcomes(1, 2), outcomes(0, 2)}}}}, {"b", {{"s", {outcomes(1, 2)}}}}});
  const auto grid = mad_grid(tree);
  CHECK(grid.at("a").at(Axis::theme).value() == Approx(0.5));
  CHECK_FALSE(grid.at("b").at(Axis::theme).has_value());
  CHECK_FALSE(grid.at("a").at(Axis::profile).has_value());
}

TEST_CASE("exceedance fractions", "[variability]") {
  const std::vector<double> d{0.05, 0.15};
  const std::vector<double> tau{0.1};
  const auto c = exceedance_curve(d, tau);
  CHECK(c.fractions == std::vector<double>{0.5});
  const std::vector<double> at{0.15};
  CHECK(exceedance_curve(d, at).fractions == std::vector<double>{0.0});
  const std::vector<double> unsorted{0.2, 0.1};
  CHECK_THROWS_AS(exceedance_curve(d, unsorted), DomainError);
}

TEST_CASE("exceedance curves are nonincreasing", "[variability]") {
  auto g = substream(17, StreamDomain::fixture);
  std::vector<double> tau;
  for (int i = 0; i <= 20; ++i) tau.push_back(i * 0.05);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> d(1 + uniform_index(g, 50));
    for (auto& x : d) x = uniform01(g);
    const auto c = exceedance_curve(d, tau);
    for (std::size_t i = 1; i < c.fractions.size(); ++i) CHECK(c.fractions[i] <= c.fractions[i - 1]);
  }
}

TEST_CASE("tree exceedance uses axis-marginal rates", "[variability]") {
  TreeBuilder b;
  auto put = [&](const char* theme, const char* profile, int k) {
    ConfigKey key;
    key.theme = theme;
    key.profile = profile;
    b.add_leaf("a", "s", key, outcomes(k, 4));
  };
  put("dark", "p1", 4);
  put("dark", "p2", 2);
  put("light", "p1", 1);
  put("light", "p2", 1);
  const auto tree = std::move(b).build();
  const auto d = marginal_abs_deltas(tree, Axis::theme);
  REQUIRE(d.size() == 1);
  CHECK(d[0] == Approx(0.75 - 0.25));
  const std::vector<double> tau{0.25, 0.5};
  CHECK(exceedance_curve(tree, Axis::theme, tau).fractions == std::vector<double>{1.0, 0.0});
}

TEST_CASE("worked pair and profile cases", "[variability]") {
  TreeBuilder b;
  ConfigKey light, dark;
  light.theme = "light";
  dark.theme = "dark";
  b.add_leaf("a", "s", light, outcomes(4, 5));
  b.add_leaf("a", "s", dark, outcomes(3, 5));
  const auto mp = matched_pairs(std::move(b).build(), Axis::theme);
  REQUIRE(mp.pairs.size() == 1);
  CHECK(mp.pairs[0].value_a == "dark");
  CHECK(mp.pairs[0].delta == Approx(-0.2));

  const std::vector<double> zeros{0.0, 0.0, 0.0};
  CHECK(mad(zeros) == 0.0);
  const std::vector<double> tau{0.01, 0.1, 0.5};
  CHECK(exceedance_curve(zeros, tau).fractions == std::vector<double>{0.0, 0.0, 0.0});

  std::vector<double> tail(9, 0.0);
  tail.push_back(1.0);
  CHECK(rank_percentile(tail, 0.9) == 1.0);
  const std::vector<double> one{0.3};
  CHECK(rank_percentile(one, 0.9) == 0.3);
  CHECK(mad(one) == Approx(0.3));
  CHECK_THROWS_AS(exceedance_curve(one, std::vector<double>{}), DomainError);
}
