#include "transit/mdp.hpp"

#include <algorithm>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "test_helpers.hpp"
#include "transit/common.hpp"

using namespace transit;
using testutil::E;

namespace {

// Extension set by direct restatement of its three conditions, checked over every
// stored path: first node street-adjacent to a terminal, fits the stop budget,
// shares no node with the route.
std::vector<std::pair<int, Route>> brute_force_extensions(const CityGraph& city,
                                                          const ShortestPathData& sp,
                                                          const Route& r, int max_stops) {
  std::vector<std::pair<int, Route>> out;  // (0 = tail, 1 = head)
  int budget = max_stops - static_cast<int>(r.size());
  for (int f = 0; f < city.n; ++f) {
    for (int l = 0; l < city.n; ++l) {
      const Route& a = sp.p(f, l);
      if (a.empty() || static_cast<int>(a.size()) > budget) continue;
      bool overlap = false;
      for (int v : a)
        if (std::find(r.begin(), r.end(), v) != r.end()) overlap = true;
      if (overlap) continue;
      if (city.has_edge(f, r.back())) out.push_back({0, a});
      if (r.size() >= 2 && city.has_edge(f, r.front())) out.push_back({1, a});
    }
  }
  return out;
}

std::vector<std::pair<int, Route>> as_end_path_set(const std::vector<MdpAction>& actions) {
  std::vector<std::pair<int, Route>> out;
  for (auto& a : actions) {
    REQUIRE(a.kind == MdpAction::Kind::Extend);
    out.push_back({a.attach_end == AttachEnd::Tail ? 0 : 1, a.path});
  }
  return out;
}

CostWeights weights_for(const CityGraph&, int S, int lo, int hi) {
  CostWeights w;
  w.num_routes = S;
  w.min_stops = lo;
  w.max_stops = hi;
  return w;
}

}  // namespace

TEST_SUITE("mdp") {
  TEST_CASE("reset yields an empty start state") {
    auto city = testutil::make_city(4, {{0, 1, 60}, {1, 2, 60}, {2, 3, 60}});
    auto sp = all_pairs_shortest_paths(city);
    auto w = weights_for(city, 2, 2, 4);
    auto st = mdp_reset(city, sp, w);
    CHECK(st.finished_routes.routes.empty());
    CHECK(st.current_route.empty());
    CHECK(st.t == 1);
    CHECK_FALSE(st.done());
    auto st2 = mdp_reset(city, sp, w);
    CHECK(st2.t == st.t);
    CHECK(st2.reward_cost == st.reward_cost);
    CHECK_FALSE(action_space(st).empty());
  }

  TEST_CASE("fresh-route actions list one bounded path per pair") {
    auto city = testutil::make_city(3, {{0, 1, 60}, {1, 2, 60}});
    auto sp = all_pairs_shortest_paths(city);
    auto st = mdp_reset(city, sp, weights_for(city, 1, 2, 8));
    auto actions = action_space(st);
    REQUIRE(actions.size() == 3);
    CHECK(actions[0].path == Route{0, 1});
    CHECK(actions[1].path == Route{0, 1, 2});
    CHECK(actions[2].path == Route{1, 2});
    for (auto& a : actions) CHECK(a.attach_end == AttachEnd::Tail);

    // A stop limit of 2 drops the three-node path.
    auto st2 = mdp_reset(city, sp, weights_for(city, 1, 2, 2));
    CHECK(action_space(st2).size() == 2);
  }

  TEST_CASE("extensions around a blocked start terminal") {
    // Route 0-1-2 where node 3 is the only off-route neighbor of the start, and every
    // longer path from 3 re-enters the route; the far end has a small tree to grow into.
    auto city = testutil::make_city(9, {{0, 1, 60},
                                        {1, 2, 60},
                                        {0, 3, 60},
                                        {3, 1, 60},
                                        {2, 4, 60},
                                        {2, 5, 60},
                                        {4, 6, 60},
                                        {5, 7, 60},
                                        {6, 8, 60}});
    auto sp = all_pairs_shortest_paths(city);
    auto st = mdp_reset(city, sp, weights_for(city, 1, 2, 8));
    st.current_route = {0, 1, 2};
    st.t = 3;
    auto actions = action_space(st);
    int head_count = 0, tail_count = 0;
    for (auto& a : actions)
      (a.attach_end == AttachEnd::Head ? head_count : tail_count)++;
    CHECK(head_count == 1);
    CHECK(tail_count == 5);
    std::set<Route> tail_paths, head_paths;
    for (auto& a : actions)
      (a.attach_end == AttachEnd::Head ? head_paths : tail_paths).insert(a.path);
    CHECK(head_paths == std::set<Route>{{3}});
    CHECK(tail_paths == std::set<Route>{{4}, {4, 6}, {4, 6, 8}, {5}, {5, 7}});
  }

  TEST_CASE("extension set matches the brute-force condition filter") {
    Rng rng(404);
    for (int trial = 0; trial < 40; ++trial) {
      auto city = oracle::random_city(rng, 6, 3);
      auto sp = all_pairs_shortest_paths(city);
      auto net = oracle::random_network(rng, city, 1, 4);
      const Route& r = net.routes[0];
      int max_stops = static_cast<int>(r.size()) + 1 + rng.index(3);
      auto st = mdp_reset(city, sp, weights_for(city, 1, 2, max_stops));
      st.current_route = r;
      st.t = 3;

      auto expect = brute_force_extensions(city, sp, r, max_stops);
      std::vector<MdpAction> got_actions;
      if (!expect.empty()) {
        got_actions = action_space(st);
      } else {
        // Odd steps require a nonempty action set; verify via the even-step rule.
        st.t = 4;
        auto even = action_space(st);
        REQUIRE(even.size() == 1);
        CHECK(even[0].kind == MdpAction::Kind::Halt);
        continue;
      }
      auto got = as_end_path_set(got_actions);
      std::sort(expect.begin(), expect.end());
      std::sort(got.begin(), got.end());
      CHECK(got == expect);
    }
  }

  TEST_CASE("halt-or-continue follows the stop bounds") {
    auto city = testutil::make_city(4, {{0, 1, 60}, {1, 2, 60}, {2, 3, 60}});
    auto sp = all_pairs_shortest_paths(city);

    auto st = mdp_reset(city, sp, weights_for(city, 1, 2, 4));
    st.current_route = {1, 2};
    st.t = 2;
    auto both = action_space(st);
    REQUIRE(both.size() == 2);
    CHECK(both[0].kind == MdpAction::Kind::Halt);
    CHECK(both[1].kind == MdpAction::Kind::Continue);

    auto st_min = mdp_reset(city, sp, weights_for(city, 1, 3, 4));
    st_min.current_route = {1, 2};
    st_min.t = 2;
    auto only_cont = action_space(st_min);
    REQUIRE(only_cont.size() == 1);
    CHECK(only_cont[0].kind == MdpAction::Kind::Continue);

    auto st_max = mdp_reset(city, sp, weights_for(city, 1, 2, 4));
    st_max.current_route = {0, 1, 2, 3};
    st_max.t = 2;
    auto only_halt = action_space(st_max);
    REQUIRE(only_halt.size() == 1);
    CHECK(only_halt[0].kind == MdpAction::Kind::Halt);

    // No extension available: the whole graph is on the route even below max stops.
    auto tiny = testutil::make_city(2, {{0, 1, 60}});
    auto tiny_sp = all_pairs_shortest_paths(tiny);
    auto st_stuck = mdp_reset(tiny, tiny_sp, weights_for(tiny, 1, 2, 8));
    st_stuck.current_route = {0, 1};
    st_stuck.t = 2;
    auto stuck = action_space(st_stuck);
    REQUIRE(stuck.size() == 1);
    CHECK(stuck[0].kind == MdpAction::Kind::Halt);
  }

  TEST_CASE("step applies extensions at the named end") {
    auto city = testutil::make_city(5, {{0, 1, 60}, {1, 2, 60}, {2, 3, 60}, {3, 4, 60}});
    auto sp = all_pairs_shortest_paths(city);
    auto st = mdp_reset(city, sp, weights_for(city, 2, 2, 5));
    st.current_route = {2, 3};
    st.t = 3;
    st.reward_cost = evaluate_reward_cost(city, sp, {{ {2, 3} }}, st.weights);

    auto tail = mdp_step(st, MdpAction::extend({4}, AttachEnd::Tail));
    CHECK(tail.next_state.current_route == Route{2, 3, 4});

    auto head = mdp_step(st, MdpAction::extend({1, 0}, AttachEnd::Head));
    CHECK(head.next_state.current_route == Route{0, 1, 2, 3});
    CHECK(head.next_state.t == st.t + 1);
  }

  TEST_CASE("extension rewards equal the drop in reward cost") {
    Rng rng(77);
    for (int trial = 0; trial < 10; ++trial) {
      auto city = oracle::random_city(rng, 7, 4, 0.0);
      auto sp = all_pairs_shortest_paths(city);
      auto w = weights_for(city, 2, 2, 6);
      auto st = mdp_reset(city, sp, w);
      auto actions = action_space(st);
      auto& a = actions[rng.index(actions.size())];
      auto out = mdp_step(st, a);
      double before = evaluate_reward_cost(city, sp, TransitNetwork{}, w);
      double after = evaluate_reward_cost(city, sp, {{a.path}}, w);
      CHECK(out.reward == doctest::Approx(before - after).epsilon(1e-12));
      // With no operator weight, newly connected demand always pays off.
      auto w1 = w;
      w1.alpha = 1.0;
      auto st1 = mdp_reset(city, sp, w1);
      CHECK(mdp_step(st1, a).reward > 0.0);
    }
  }

  TEST_CASE("trace rewards match cost drops recomputed from scratch") {
    Rng rng(123);
    UniformRandomPolicy policy;
    for (int trial = 0; trial < 5; ++trial) {
      auto city = oracle::random_city(rng, 8, 4);
      auto sp = all_pairs_shortest_paths(city);
      CostWeights w;
      w.num_routes = 3;
      w.max_stops = 6;
      auto res = rollout(city, sp, w, policy, RolloutMode::Stochastic, {}, 1000 + trial);

      // Replay the trace, recomputing the reward of every step from whole networks.
      auto st = mdp_reset(city, sp, w);
      for (auto& step : res.trace) {
        TransitNetwork before = st.finished_routes;
        if (!st.current_route.empty()) before.routes.push_back(st.current_route);
        auto out = mdp_step(st, step.action);
        TransitNetwork after = out.next_state.finished_routes;
        if (!out.next_state.current_route.empty())
          after.routes.push_back(out.next_state.current_route);
        double want = evaluate_reward_cost(city, sp, before, w) -
                      evaluate_reward_cost(city, sp, after, w);
        CHECK(step.reward == doctest::Approx(want).epsilon(1e-12));
        st = std::move(out.next_state);
      }
      CHECK(st.finished_routes.routes.size() == 3);
    }
  }

  TEST_CASE("halt and continue earn exactly zero") {
    auto city = testutil::make_city(4, {{0, 1, 60}, {1, 2, 60}, {2, 3, 60}});
    auto sp = all_pairs_shortest_paths(city);
    auto st = mdp_reset(city, sp, weights_for(city, 2, 2, 4));
    st.current_route = {1, 2};
    st.t = 2;
    st.reward_cost = evaluate_reward_cost(city, sp, {{ {1, 2} }}, st.weights);

    auto cont = mdp_step(st, MdpAction::cont());
    CHECK(cont.reward == 0.0);
    CHECK(cont.next_state.current_route == st.current_route);
    CHECK(cont.next_state.finished_routes.routes.empty());
    CHECK(cont.next_state.t == 3);

    auto halt = mdp_step(st, MdpAction::halt());
    CHECK(halt.reward == 0.0);
    CHECK(halt.next_state.current_route.empty());
    REQUIRE(halt.next_state.finished_routes.routes.size() == 1);
    CHECK(halt.next_state.finished_routes.routes[0] == Route{1, 2});
    CHECK(halt.next_state.reward_cost == st.reward_cost);
    CHECK_FALSE(halt.done);
  }

  TEST_CASE("halting the final route ends the episode") {
    auto city = testutil::make_city(4, {{0, 1, 60}, {1, 2, 60}, {2, 3, 60}});
    auto sp = all_pairs_shortest_paths(city);
    auto st = mdp_reset(city, sp, weights_for(city, 1, 2, 4));
    st.current_route = {0, 1, 2};
    st.t = 2;
    auto out = mdp_step(st, MdpAction::halt());
    CHECK(out.done);
    CHECK(out.next_state.done());
    CHECK(out.next_state.finished_routes.routes.size() == 1);
    CHECK_THROWS_AS(action_space(out.next_state), TransitError);
    CHECK_THROWS_AS(mdp_step(out.next_state, MdpAction::halt()), TransitError);
  }

  TEST_CASE("illegal actions name the violated condition") {
    auto city = testutil::make_city(5, {{0, 1, 60}, {1, 2, 60}, {2, 3, 60}, {3, 4, 60}});
    auto sp = all_pairs_shortest_paths(city);
    auto st = mdp_reset(city, sp, weights_for(city, 2, 2, 4));
    st.current_route = {2, 3};
    st.t = 3;
    st.reward_cost = evaluate_reward_cost(city, sp, {{ {2, 3} }}, st.weights);

    CHECK_THROWS_WITH_AS(mdp_step(st, MdpAction::halt()),
                         doctest::Contains("extension step"), TransitError);
    CHECK_THROWS_WITH_AS(mdp_step(st, MdpAction::extend({2}, AttachEnd::Tail)),
                         doctest::Contains("shares a node"), TransitError);
    CHECK_THROWS_WITH_AS(mdp_step(st, MdpAction::extend({0}, AttachEnd::Tail)),
                         doctest::Contains("adjoin"), TransitError);

    auto st_tight = mdp_reset(city, sp, weights_for(city, 2, 2, 3));
    st_tight.current_route = {2, 3};
    st_tight.t = 3;
    CHECK_THROWS_WITH_AS(mdp_step(st_tight, MdpAction::extend({1, 0}, AttachEnd::Head)),
                         doctest::Contains("stop limit"), TransitError);

    auto st_min = mdp_reset(city, sp, weights_for(city, 2, 3, 4));
    st_min.current_route = {2, 3};
    st_min.t = 2;
    CHECK_THROWS_WITH_AS(mdp_step(st_min, MdpAction::halt()),
                         doctest::Contains("minimum stop count"), TransitError);
    CHECK_THROWS_WITH_AS(mdp_step(st_min, MdpAction::extend({4}, AttachEnd::Tail)),
                         doctest::Contains("halt-or-continue step"), TransitError);

    auto st_full = mdp_reset(city, sp, weights_for(city, 2, 2, 3));
    st_full.current_route = {1, 2, 3};
    st_full.t = 2;
    CHECK_THROWS_WITH_AS(mdp_step(st_full, MdpAction::cont()),
                         doctest::Contains("no extension possible"), TransitError);

    auto fresh = mdp_reset(city, sp, weights_for(city, 2, 2, 4));
    CHECK_THROWS_WITH_AS(mdp_step(fresh, MdpAction::extend({0, 2}, AttachEnd::Tail)),
                         doctest::Contains("stored shortest path"), TransitError);
  }

  TEST_CASE("rollout with a uniform policy builds a full network") {
    Rng rng(5);
    auto city = oracle::random_city(rng, 10, 5, 0.0);
    auto sp = all_pairs_shortest_paths(city);
    CostWeights w;
    w.num_routes = 6;
    w.min_stops = 2;
    w.max_stops = 8;
    UniformRandomPolicy policy;
    auto res = rollout(city, sp, w, policy, RolloutMode::Stochastic, {}, 99);
    CHECK(res.network.routes.size() == 6);
    for (auto& r : res.network.routes) {
      CHECK(r.size() >= 2);  // routes start from two-node paths
      CHECK(static_cast<int>(r.size()) <= w.max_stops);
      CHECK(is_simple_street_path(city, r));
    }
    for (auto& step : res.trace) {
      CHECK(step.action_count >= 1);
      CHECK(step.chosen_index < step.action_count);
      if (step.t % 2 == 0) CHECK(step.reward == 0.0);
    }
    // Timesteps advance one at a time from 1.
    for (size_t k = 0; k < res.trace.size(); ++k)
      CHECK(res.trace[k].t == static_cast<int>(k) + 1);
  }

  TEST_CASE("rewards telescope from empty to final reward cost") {
    Rng rng(31);
    UniformRandomPolicy policy;
    for (int trial = 0; trial < 25; ++trial) {
      auto city = oracle::random_city(rng, 8, 4);
      auto sp = all_pairs_shortest_paths(city);
      CostWeights w;
      w.num_routes = 3;
      w.min_stops = 2;
      w.max_stops = 7;
      w.alpha = rng.uniform();
      auto res = rollout(city, sp, w, policy, RolloutMode::Stochastic, {}, trial);
      double start = evaluate_reward_cost(city, sp, TransitNetwork{}, w);
      double final_cost = evaluate_reward_cost(city, sp, res.network, w);
      CHECK(res.total_reward == doctest::Approx(start - final_cost).epsilon(1e-9));
    }
  }

  TEST_CASE("greedy rollouts repeat and stochastic rollouts follow their seed") {
    Rng rng(8);
    auto city = oracle::random_city(rng, 9, 4, 0.0);
    auto sp = all_pairs_shortest_paths(city);
    CostWeights w;
    w.num_routes = 4;
    w.max_stops = 6;
    UniformRandomPolicy policy;
    auto g1 = rollout(city, sp, w, policy, RolloutMode::Greedy, {}, 1);
    auto g2 = rollout(city, sp, w, policy, RolloutMode::Greedy, {}, 2);
    CHECK(g1.network.routes == g2.network.routes);

    auto s1 = rollout(city, sp, w, policy, RolloutMode::Stochastic, {}, 7);
    auto s2 = rollout(city, sp, w, policy, RolloutMode::Stochastic, {}, 7);
    CHECK(s1.network.routes == s2.network.routes);
    CHECK(s1.total_reward == s2.total_reward);
  }

  TEST_CASE("connectedness enforcement covers a line city completely") {
    auto city = testutil::make_city(5, {{0, 1, 60}, {1, 2, 60}, {2, 3, 60}, {3, 4, 60}});
    auto sp = all_pairs_shortest_paths(city);
    CostWeights w;
    w.num_routes = 2;
    w.min_stops = 2;
    w.max_stops = 5;
    MdpOptions opt;
    opt.enforce_connectedness = true;
    UniformRandomPolicy policy;
    for (uint64_t seed = 0; seed < 10; ++seed) {
      auto res = rollout(city, sp, w, policy, RolloutMode::Stochastic, opt, seed);
      auto cost = evaluate_cost(city, sp, res.network, w);
      CHECK(cost.f_un == 0.0);
    }
  }

  TEST_CASE("connectedness enforcement drops halt while demand is unserved") {
    auto city = testutil::make_city(5, {{0, 1, 60}, {1, 2, 60}, {2, 3, 60}, {3, 4, 60}});
    auto sp = all_pairs_shortest_paths(city);
    auto st = mdp_reset(city, sp, weights_for(city, 2, 2, 5));
    st.current_route = {1, 2};
    st.t = 2;
    MdpOptions opt;
    opt.enforce_connectedness = true;
    auto plain = action_space(st);
    CHECK(plain.size() == 2);
    auto forced = action_space(st, opt);
    REQUIRE(forced.size() == 1);
    CHECK(forced[0].kind == MdpAction::Kind::Continue);

    // On the extension step every candidate connects new demand, so all remain.
    st.t = 3;
    auto exts = action_space(st, opt);
    CHECK(exts == action_space(st));
  }
}
