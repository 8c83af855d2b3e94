#include <doctest.h>

#include "oracles.hpp"
#include "test_helpers.hpp"
#include "transit/rng.hpp"
#include "transit/shortest_paths.hpp"

using namespace transit;
using testutil::make_city;

TEST_SUITE("shortest_paths") {
  TEST_CASE("two-node city") {
    CityGraph c = make_city(2, {{0, 1, 120.0}});
    ShortestPathData sp = all_pairs_shortest_paths(c);
    CHECK(sp.t(0, 1) == 120.0);
    CHECK(sp.t(1, 0) == 120.0);
    CHECK(sp.t(0, 0) == 0.0);
    CHECK(sp.p(0, 1) == std::vector<int>{0, 1});
    CHECK(sp.p(1, 0) == std::vector<int>{1, 0});
    CHECK(sp.p(1, 1) == std::vector<int>{1});
    CHECK(max_pair_time(sp) == 120.0);
  }

  TEST_CASE("fewer-node tie break") {
    // Direct 0-3 edge ties with the 0-1-3 path; the two-node path wins.
    CityGraph c = make_city(4, {{0, 1, 60.0}, {1, 3, 60.0}, {0, 3, 120.0}, {2, 3, 30.0}});
    ShortestPathData sp = all_pairs_shortest_paths(c);
    CHECK(sp.t(0, 3) == 120.0);
    CHECK(sp.p(0, 3) == std::vector<int>{0, 3});
  }

  TEST_CASE("lexicographic tie break") {
    // Diamond: 0-1-3 and 0-2-3 have equal time and length; [0,1,3] is smaller.
    CityGraph c = make_city(4, {{0, 1, 60.0}, {1, 3, 60.0}, {0, 2, 60.0}, {2, 3, 60.0}});
    ShortestPathData sp = all_pairs_shortest_paths(c);
    CHECK(sp.p(0, 3) == std::vector<int>{0, 1, 3});
    // Mirror entry is the reverse of the canonical orientation.
    CHECK(sp.p(3, 0) == std::vector<int>{3, 1, 0});
  }

  TEST_CASE("path endpoints and times are consistent") {
    Rng rng(77);
    for (int trial = 0; trial < 30; ++trial) {
      CityGraph c = oracle::random_city(rng, 4 + rng.index(6), rng.index(6));
      ShortestPathData sp = all_pairs_shortest_paths(c);
      for (int i = 0; i < c.n; ++i) {
        for (int j = 0; j < c.n; ++j) {
          const auto& p = sp.p(i, j);
          REQUIRE(!p.empty());
          CHECK(p.front() == i);
          CHECK(p.back() == j);
          double t = 0.0;
          for (size_t k = 0; k + 1 < p.size(); ++k) t += c.tau(p[k], p[k + 1]);
          CHECK(t == doctest::Approx(sp.t(i, j)).epsilon(1e-12));
        }
      }
    }
  }

  TEST_CASE("times match iterated-relaxation oracle on random cities") {
    Rng rng(1234);
    for (int trial = 0; trial < 50; ++trial) {
      CityGraph c = oracle::random_city(rng, 3 + rng.index(8), rng.index(8));
      ShortestPathData sp = all_pairs_shortest_paths(c);
      std::vector<double> want = oracle::bellman_ford_times(c);
      for (size_t k = 0; k < want.size(); ++k) CHECK(sp.time[k] == want[k]);
    }
  }
}
