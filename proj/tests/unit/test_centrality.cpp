#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "cf/centrality.hpp"
#include "cf/error.hpp"
#include "oracles.hpp"

namespace {

cf::SimilarityMatrix matrix(std::size_t n, std::initializer_list<std::tuple<std::size_t, std::size_t, double>> entries) {
  cf::SimilarityMatrix s;
  s.layer = "m";
  s.n = n;
  s.sample_count = 1;
  s.values.assign(n * n, 0.0);
  s.channel_means.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) s.values[i * n + i] = 1.0;
  for (auto [x, y, v] : entries) s.values[x * n + y] = s.values[y * n + x] = v;
  return s;
}

std::size_t raw_count(const cf::SimilarityMatrix& s, double theta,
                      cf::EdgePolicy edges = cf::EdgePolicy::positive_only) {
  return cf::select_central_filters(s, cf::build_graph(s, std::min(theta, 1.0), edges)).centrals.size();
}

// Distinct positive off-diagonal values, descending.
std::vector<double> candidates(const cf::SimilarityMatrix& s) {
  std::set<double, std::greater<>> c;
  for (std::size_t x = 0; x < s.n; ++x)
    for (std::size_t y = x + 1; y < s.n; ++y)
      if (s(x, y) > 0) c.insert(s(x, y));
  return {c.begin(), c.end()};
}

// Every filter is central or pruned to a central that is adjacent at theta.
void check_assignment(const cf::SimilarityMatrix& s, const cf::CentralAssignment& a) {
  std::set<std::size_t> centrals(a.centrals.begin(), a.centrals.end());
  REQUIRE(centrals.size() == a.centrals.size());
  CHECK(centrals.size() + a.assignment.size() == s.n);
  for (const auto& [idx, rec] : a.assignment) {
    CHECK(!centrals.count(idx));
    if (!rec.central) {
      CHECK(s.is_dead(idx));
      continue;
    }
    CHECK(centrals.count(*rec.central));
    CHECK(rec.similarity == s(idx, *rec.central));
  }
}

}  // namespace

TEST_CASE("graph thresholds") {
  const auto s = matrix(4, {{0, 1, 0.95}, {0, 2, 0.92}, {1, 2, 0.91}, {2, 3, 0.4}, {0, 3, -0.97}});
  CHECK(cf::build_graph(s, 1.0).edge_count() == 0);
  const auto top = cf::build_graph(s, std::nextafter(0.95, 0.0));
  CHECK(top.edge_count() == 1);
  CHECK(top.has_edge(0, 1));
  const auto tri = cf::build_graph(s, 0.9);
  CHECK(tri.edge_count() == 3);
  CHECK(tri.adjacency[3].empty());
  const auto abs = cf::build_graph(s, 0.9, cf::EdgePolicy::absolute);
  CHECK(abs.has_edge(0, 3));
  CHECK(abs.edge_count() == 4);
  CHECK_THROWS_AS(cf::build_graph(s, 0.0), cf::Error);
  CHECK_THROWS_AS(cf::build_graph(s, 1.5), cf::Error);
  CHECK_THROWS_AS(cf::build_graph(s, -0.2), cf::Error);
}

TEST_CASE("closeness closed forms") {
  const auto s = matrix(3, {{0, 1, 0.8}});
  const auto g = cf::build_graph(s, 0.5);
  CHECK(cf::closeness(g, s, 2) == 0.0);
  CHECK(cf::closeness(g, s, 0) == doctest::Approx(1.0 / 0.2));
  CHECK(cf::closeness(g, s, 0, cf::ClosenessFormula::literal) == doctest::Approx(1.0 / 0.8));
  // Exact duplicates hit the distance floor.
  const auto d = matrix(2, {{0, 1, 1.0}});
  CHECK(cf::closeness(cf::build_graph(d, 0.9), d, 0) == doctest::Approx(1e8));
  CHECK_THROWS_AS(cf::closeness(g, s, 3), cf::Error);
}

TEST_CASE("closeness matches the brute-force formula") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    cf::Rng rng(seed);
    const std::size_t n = 2 + rng.below(15);
    const auto s = oracle::random_matrix(seed, n);
    const double theta = rng.uniform(0.05, 0.95);
    const auto g = cf::build_graph(s, theta);
    const auto adj = oracle::adjacency(s, theta);
    for (std::size_t j = 0; j < n; ++j) CHECK(std::abs(cf::closeness(g, s, j) - oracle::closeness(s, adj, j)) <= 1e-12);
  }
}

TEST_CASE("the most central node of a triangle absorbs the others") {
  // A is closest to both B and C.
  const auto s = matrix(3, {{0, 1, 0.95}, {0, 2, 0.93}, {1, 2, 0.9}});
  const auto a = cf::select_central_filters(s, cf::build_graph(s, 0.9));
  CHECK(a.centrals == std::vector<std::size_t>{0});
  CHECK(a.assignment.at(1).central == 0u);
  CHECK(a.assignment.at(2).central == 0u);
  CHECK(a.assignment.at(1).similarity == 0.95);
  CHECK(cf::surrogate_cost(s, a) == doctest::Approx(0.05 + 0.07));
}

TEST_CASE("an edgeless graph keeps every filter") {
  const auto s = oracle::random_matrix(3, 7, -1.0);
  const auto a = cf::select_central_filters(s, cf::build_graph(s, 1.0));
  CHECK(a.keep() == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6});
  CHECK(a.assignment.empty());
  CHECK(cf::surrogate_cost(s, a) == 0.0);
}

TEST_CASE("ties go to the lower index") {
  const auto s = matrix(4, {{0, 1, 0.9}, {2, 3, 0.9}});
  const auto a = cf::select_central_filters(s, cf::build_graph(s, 0.5));
  CHECK(a.centrals == std::vector<std::size_t>{0, 2});
}

TEST_CASE("dead channels are pruned without a central") {
  auto s = matrix(4, {{0, 1, 0.9}});
  s.dead_channels = {3};
  const auto a = cf::select_central_filters(s, cf::build_graph(s, 0.5));
  CHECK(!a.assignment.at(3).central);
  CHECK(a.keep() == std::vector<std::size_t>{0, 2});
  check_assignment(s, a);
}

TEST_CASE("incremental selection equals the from-scratch greedy") {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    cf::Rng rng(seed + 1000);
    const std::size_t n = 1 + rng.below(20);
    const auto s = oracle::random_matrix(seed, n, -0.5);
    const double theta = rng.uniform(0.05, 0.99);
    const auto g = cf::build_graph(s, theta);
    const auto a = cf::select_central_filters(s, g);
    CHECK(a.centrals == oracle::greedy_centrals(s, theta, true));
    const auto r = cf::select_central_filters(s, g, cf::SelectionOrder::least_central_first);
    CHECK(r.centrals == oracle::greedy_centrals(s, theta, false));
    check_assignment(s, a);
    check_assignment(s, r);
    for (const auto& [idx, rec] : a.assignment) CHECK(g.has_edge(idx, *rec.central));
  }
}

TEST_CASE("keep count") {
  CHECK(cf::keep_count(10, 0.0) == 10);
  CHECK(cf::keep_count(10, 0.3) == 7);
  CHECK(cf::keep_count(64, 0.5) == 32);
  CHECK(cf::keep_count(3, 0.5) == 2);
  CHECK(cf::keep_count(512, 0.65) == 180);
  CHECK_THROWS_AS(cf::keep_count(10, 1.0), cf::Error);
  CHECK_THROWS_AS(cf::keep_count(10, -0.1), cf::Error);
  CHECK(cf::keep_count(1, 0.99) == 1);
  CHECK_THROWS_AS(cf::keep_count(0, 0.5), cf::Error);
}

TEST_CASE("threshold search at rate zero keeps everything") {
  const auto s = oracle::random_matrix(8, 9);
  const auto a = cf::threshold_for_rate(s, 0.0);
  CHECK(a.centrals.size() == 9);
  CHECK(a.assignment.empty());
}

TEST_CASE("two similar pairs at half rate") {
  const auto s = matrix(4, {{0, 1, 0.9}, {2, 3, 0.8}, {0, 2, 0.1}});
  const auto a = cf::threshold_for_rate(s, 0.5);
  CHECK(a.keep() == std::vector<std::size_t>{0, 2});
  CHECK(a.theta == 0.8);
  CHECK(a.promoted == 0);
  CHECK(a.forced_merges == 0);
}

TEST_CASE("threshold search stops at the largest theta meeting the target") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto s = oracle::random_matrix(seed, 10);
    const auto a = cf::threshold_for_rate(s, 0.3);
    CHECK(a.centrals.size() == 7);
    check_assignment(s, a);
    if (a.forced_merges > 0) continue;
    CHECK(raw_count(s, a.theta) <= 7);
    const auto c = candidates(s);
    const auto it = std::find(c.begin(), c.end(), a.theta);
    if (it != c.begin() && it != c.end()) CHECK(raw_count(s, *std::prev(it)) > 7);
  }
}

TEST_CASE("threshold search keeps exactly the requested count") {
  std::size_t merged = 0, promoted = 0;
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    cf::Rng rng(seed * 7 + 1);
    const std::size_t n = 2 + rng.below(40);
    const double rate = rng.uniform(0.0, 0.9);
    auto s = oracle::random_matrix(seed, n, rng.uniform(-1.0, 0.5));
    if (rng.below(5) == 0) s.dead_channels = {rng.below(n)};
    std::size_t k = 0;
    try {
      k = cf::keep_count(n, rate);
    } catch (const cf::Error&) {
      continue;
    }
    for (auto edges : {cf::EdgePolicy::positive_only, cf::EdgePolicy::absolute}) {
      const auto a = cf::threshold_for_rate(s, rate, {edges});
      CHECK(a.centrals.size() == k);
      CHECK(a.centrals.size() + a.assignment.size() == n);
      merged += a.forced_merges > 0;
      promoted += a.promoted > 0;
      for (const auto& [idx, rec] : a.assignment) {
        if (rec.sign < 0) CHECK(edges == cf::EdgePolicy::absolute);
        if (rec.central) CHECK(rec.sign * rec.similarity >= a.theta);
      }
    }
  }
  MESSAGE("instances needing forced merges: " << merged << ", promotion: " << promoted);
}

TEST_CASE("forced merges join the most similar centrals") {
  // No positive similarity at all: every filter is its own central at any theta.
  const auto s = matrix(3, {{0, 1, -0.2}, {0, 2, -0.5}, {1, 2, -0.9}});
  const auto a = cf::threshold_for_rate(s, 0.5);
  CHECK(a.centrals.size() == 2);
  CHECK(a.forced_merges == 1);
  REQUIRE(a.assignment.size() == 1);
  const auto& [idx, rec] = *a.assignment.begin();
  // The pair (0, 1) has the largest similarity; ties in score keep index 0.
  CHECK(idx == 1);
  CHECK(rec.central == 0u);
  CHECK(a.theta == -0.2);
}

TEST_CASE("greedy selection costs no more than reverse selection") {
  std::size_t wins = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto s = oracle::random_matrix(seed, 12, 0.0);
    const auto cf_a = cf::threshold_for_rate(s, 0.5);
    const auto rev = cf::threshold_for_rate(s, 0.5, {cf::EdgePolicy::positive_only, cf::ClosenessFormula::distance,
                                                     cf::SelectionOrder::least_central_first});
    wins += cf::surrogate_cost(s, cf_a) <= cf::surrogate_cost(s, rev) + 1e-12;
  }
  MESSAGE("greedy <= reverse on " << wins << "/100 seeds");
  CHECK(wins >= 95);
}

TEST_CASE("kept count as a function of theta") {
  // Greedy selection need not be monotone in theta; record how often it is.
  std::size_t monotone = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    cf::Rng rng(seed);
    const auto s = oracle::random_matrix(seed, 3 + rng.below(10), -0.2);
    const auto c = candidates(s);
    bool ok = true;
    std::size_t prev = raw_count(s, 1.0);
    for (double t : c) {
      const std::size_t k = raw_count(s, t);
      ok = ok && k <= prev;
      prev = k;
    }
    monotone += ok;
    ++total;
  }
  MESSAGE("monotone in theta on " << monotone << "/" << total << " matrices");
  CHECK(monotone > 0);
}
