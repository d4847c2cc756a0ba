#include <catch_amalgamated.hpp>

#include <set>

#include "hbeval/parallel.hpp"
#include "hbeval/rng.hpp"

using namespace hbeval;

TEST_CASE("philox known-answer vectors", "[rng]") {
  using P = Philox4x32;
  CHECK(P::generate({0, 0, 0, 0}, {0, 0}) == P::Block{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
  CHECK(P::generate({~0u, ~0u, ~0u, ~0u}, {~0u, ~0u}) ==
        P::Block{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
  CHECK(P::generate({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}) ==
        P::Block{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("engine output walks counter blocks", "[rng]") {
  Philox4x32 g(0x1234, 77);
  const auto b0 = Philox4x32::generate({0, 0, 77, 0}, {0x1234, 0});
  const auto b1 = Philox4x32::generate({1, 0, 77, 0}, {0x1234, 0});
  CHECK(g() == ((std::uint64_t{b0[1]} << 32) | b0[0]));
  CHECK(g() == ((std::uint64_t{b0[3]} << 32) | b0[2]));
  CHECK(g() == ((std::uint64_t{b1[1]} << 32) | b1[0]));
}

TEST_CASE("discard matches stepping", "[rng]") {
  for (std::uint64_t skip : {0u, 1u, 2u, 3u, 7u, 100u}) {
    Philox4x32 a(9, 3), b(9, 3);
    a();
    b();
    for (std::uint64_t i = 0; i < skip; ++i) a();
    b.discard(skip);
    CHECK(a() == b());
  }
}

TEST_CASE("substreams are reproducible and distinct", "[rng]") {
  auto a = substream(42, StreamDomain::bootstrap, {3, 1});
  auto b = substream(42, StreamDomain::bootstrap, {3, 1});
  auto c = substream(42, StreamDomain::bootstrap, {1, 3});
  auto d = substream(42, StreamDomain::simulation_tree, {3, 1});
  auto e = substream(43, StreamDomain::bootstrap, {3, 1});
  const auto x = a();
  CHECK(x == b());
  std::set<std::uint64_t> firsts{x, c(), d(), e()};
  CHECK(firsts.size() == 4);
}

TEST_CASE("uniform01 range and mean", "[rng]") {
  auto g = substream(5, StreamDomain::fixture);
  double s = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = uniform01(g);
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    s += u;
  }
  CHECK(std::abs(s / n - 0.5) < 4.0 * std::sqrt(1.0 / 12.0 / n));
}

TEST_CASE("uniform_index stays in range and covers it", "[rng]") {
  auto g = substream(6, StreamDomain::fixture);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 7000; ++i) ++hits[uniform_index(g, 7)];
  for (const int h : hits) CHECK(h > 800);
}

TEST_CASE("parallel_for result is independent of worker count", "[rng]") {
  std::vector<std::uint64_t> one(1000), many(1000);
  parallel_for(one.size(), 1, [&](std::size_t i) { one[i] = substream(1, StreamDomain::fixture, {i})(); });
  parallel_for(many.size(), 8, [&](std::size_t i) { many[i] = substream(1, StreamDomain::fixture, {i})(); });
  CHECK(one == many);
}

TEST_CASE("parallel_for rethrows worker exceptions", "[rng]") {
  CHECK_THROWS_AS(parallel_for(100, 4,
                               [](std::size_t i) {
                                 if (i == 57) throw std::runtime_error("boom");
                               }),
                  std::runtime_error);
}
