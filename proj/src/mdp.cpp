#include "transit/mdp.hpp"

#include <algorithm>
#include <numeric>

#include "transit/common.hpp"
#include "transit/rng.hpp"

namespace transit {

namespace {

TransitNetwork with_current(const MdpState& st) {
  TransitNetwork net = st.finished_routes;
  if (!st.current_route.empty()) net.routes.push_back(st.current_route);
  return net;
}

// Component label per node over the union of routes (routes sharing a node merge);
// -1 marks nodes no route stops at.
std::vector<int> coverage_components(const MdpState& st, const Route& extra) {
  int n = st.city->n;
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  std::vector<uint8_t> covered(n, 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  auto add_route = [&](const Route& r) {
    if (r.empty()) return;
    covered[r[0]] = 1;
    for (size_t k = 1; k < r.size(); ++k) {
      covered[r[k]] = 1;
      parent[find(r[0])] = find(r[k]);
    }
  };
  for (auto& r : st.finished_routes.routes) add_route(r);
  add_route(st.current_route);
  add_route(extra);
  std::vector<int> comp(n, -1);
  for (int v = 0; v < n; ++v)
    if (covered[v]) comp[v] = find(v);
  return comp;
}

// Positive-demand pairs with no transit trip under the given component labels.
int unserved_pairs(const CityGraph& city, const std::vector<int>& comp) {
  int count = 0;
  for (int i = 0; i < city.n; ++i)
    for (int j = i + 1; j < city.n; ++j)
      if (city.d(i, j) > 0.0 && (comp[i] < 0 || comp[j] < 0 || comp[i] != comp[j]))
        ++count;
  return count;
}

Route apply_extension(const Route& r, const MdpAction& a) {
  Route out;
  if (a.attach_end == AttachEnd::Tail) {
    out = r;
    out.insert(out.end(), a.path.begin(), a.path.end());
  } else {
    out.assign(a.path.rbegin(), a.path.rend());
    out.insert(out.end(), r.begin(), r.end());
  }
  return out;
}

// Extension set for a nonempty in-progress route: paths starting at a street
// neighbor of a terminal, within the stop budget, node-disjoint from the route.
std::vector<MdpAction> extension_candidates(const MdpState& st) {
  const Route& r = st.current_route;
  const CityGraph& city = *st.city;
  int n = city.n;
  int budget = st.weights.max_stops - static_cast<int>(r.size());
  std::vector<MdpAction> out;
  if (budget <= 0) return out;
  std::vector<uint8_t> on_route(n, 0);
  for (int v : r) on_route[v] = 1;
  auto add_for_terminal = [&](int terminal, AttachEnd end) {
    for (auto& [first, tau] : city.adj[terminal]) {
      (void)tau;
      if (on_route[first]) continue;
      for (int last = 0; last < n; ++last) {
        const auto& path = st.sp->p(first, last);
        if (path.empty() || static_cast<int>(path.size()) > budget) continue;
        bool clash = false;
        for (int v : path)
          if (on_route[v]) {
            clash = true;
            break;
          }
        if (!clash) out.push_back(MdpAction::extend(path, end));
      }
    }
  };
  add_for_terminal(r.back(), AttachEnd::Tail);
  if (r.size() >= 2) add_for_terminal(r.front(), AttachEnd::Head);
  return out;
}

std::vector<MdpAction> fresh_route_candidates(const MdpState& st) {
  int n = st.city->n;
  std::vector<MdpAction> out;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const auto& path = st.sp->p(i, j);
      if (path.size() >= 2 && static_cast<int>(path.size()) <= st.weights.max_stops)
        out.push_back(MdpAction::extend(path, AttachEnd::Tail));
    }
  return out;
}

// Keeps only extensions that connect previously unserved demand, when any does.
void filter_for_connectedness(const MdpState& st, int base_unserved,
                              std::vector<MdpAction>& actions) {
  std::vector<uint8_t> reduces(actions.size(), 0);
  bool any = false;
  for (size_t k = 0; k < actions.size(); ++k) {
    // The grown route contains every current-route node, so unioning it on top of
    // the unmodified state yields the candidate network's components.
    Route grown = apply_extension(st.current_route, actions[k]);
    auto comp = coverage_components(st, grown);
    if (unserved_pairs(*st.city, comp) < base_unserved) {
      reduces[k] = 1;
      any = true;
    }
  }
  if (!any) return;
  std::vector<MdpAction> kept;
  for (size_t k = 0; k < actions.size(); ++k)
    if (reduces[k]) kept.push_back(std::move(actions[k]));
  actions = std::move(kept);
}

std::string describe_illegal(const MdpState& st, const MdpAction& a,
                             const MdpOptions& options) {
  const Route& r = st.current_route;
  if (st.extend_step() && a.kind != MdpAction::Kind::Extend)
    return "halt/continue chosen on an extension step";
  if (!st.extend_step() && a.kind == MdpAction::Kind::Extend)
    return "extension chosen on a halt-or-continue step";
  if (a.kind == MdpAction::Kind::Extend) {
    if (a.path.empty()) return "extension path is empty";
    if (r.empty()) {
      if (a.path.size() < 2) return "a route's first path needs at least two stops";
      if (static_cast<int>(a.path.size()) > st.weights.max_stops)
        return "extension exceeds the stop limit";
      const auto& canon = st.sp->p(a.path.front(), a.path.back());
      if (canon != a.path) return "path is not the stored shortest path for its endpoints";
      if (a.path.front() > a.path.back())
        return "a route's first path is listed once per pair, from its lower endpoint";
      return "extension ignores reachable unserved demand";
    }
    if (static_cast<int>(a.path.size() + r.size()) > st.weights.max_stops)
      return "extension exceeds the stop limit";
    if (r.size() == 1 && a.attach_end == AttachEnd::Head)
      return "a single-stop route extends from its only terminal as tail";
    int terminal = a.attach_end == AttachEnd::Tail ? r.back() : r.front();
    if (!st.city->has_edge(a.path.front(), terminal))
      return "path does not adjoin the route terminal";
    for (int v : a.path)
      if (std::find(r.begin(), r.end(), v) != r.end())
        return "extension shares a node with the route";
    const auto& canon = st.sp->p(a.path.front(), a.path.back());
    if (canon != a.path) return "path is not the stored shortest path for its endpoints";
    return "extension ignores reachable unserved demand";
  }
  auto ex = extension_candidates(st);
  if (a.kind == MdpAction::Kind::Halt) {
    if (static_cast<int>(r.size()) < st.weights.min_stops && !ex.empty())
      return "halting below the minimum stop count";
    if (options.enforce_connectedness)
      return "halting while unserved demand is reachable by extension";
    return "halt is not available here";
  }
  if (ex.empty()) return "continuing with no extension possible";
  return "continuing at the stop limit";
}

}  // namespace

MdpState mdp_reset(const CityGraph& city, const ShortestPathData& sp,
                   const CostWeights& weights) {
  require(weights.num_routes >= 1, "network needs at least one route");
  MdpState st;
  st.city = &city;
  st.sp = &sp;
  st.weights = weights;
  st.t = 1;
  st.reward_cost = evaluate_reward_cost(city, sp, TransitNetwork{}, weights);
  return st;
}

std::vector<MdpAction> action_space(const MdpState& state, const MdpOptions& options) {
  require(!state.done(), "action_space called on a finished episode");
  int base_unserved = 0;
  bool connect = options.enforce_connectedness;
  if (connect) {
    base_unserved = unserved_pairs(*state.city, coverage_components(state, {}));
    connect = base_unserved > 0;
  }

  if (state.extend_step()) {
    auto actions = state.current_route.empty() ? fresh_route_candidates(state)
                                               : extension_candidates(state);
    require(!actions.empty(), "no legal extension for a live episode");
    if (connect) filter_for_connectedness(state, base_unserved, actions);
    return actions;
  }

  auto ex = extension_candidates(state);
  int len = static_cast<int>(state.current_route.size());
  std::vector<MdpAction> out;
  if (len >= state.weights.max_stops || ex.empty()) {
    out.push_back(MdpAction::halt());
  } else if (len < state.weights.min_stops) {
    out.push_back(MdpAction::cont());
  } else if (connect) {
    out.push_back(MdpAction::cont());
  } else {
    out.push_back(MdpAction::halt());
    out.push_back(MdpAction::cont());
  }
  return out;
}

StepOutcome mdp_step(const MdpState& state, const MdpAction& action,
                     const MdpOptions& options) {
  require(!state.done(), "step called on a finished episode");
  auto legal = action_space(state, options);
  if (std::find(legal.begin(), legal.end(), action) == legal.end())
    fail("illegal action: " + describe_illegal(state, action, options));
  return mdp_step_unchecked(state, action);
}

StepOutcome mdp_step_unchecked(const MdpState& state, const MdpAction& action) {
  StepOutcome out;
  out.next_state = state;
  out.next_state.t = state.t + 1;
  if (action.kind == MdpAction::Kind::Extend) {
    out.next_state.current_route = apply_extension(state.current_route, action);
    out.next_state.reward_cost = evaluate_reward_cost(
        *state.city, *state.sp, with_current(out.next_state), state.weights);
    out.reward = state.reward_cost - out.next_state.reward_cost;
  } else if (action.kind == MdpAction::Kind::Halt) {
    out.next_state.finished_routes.routes.push_back(state.current_route);
    out.next_state.current_route.clear();
    // The union of finished and in-progress routes is unchanged, so the reward is
    // exactly zero, as it is for continue.
  }
  out.done = out.next_state.done();
  return out;
}

std::vector<double> UniformRandomPolicy::act(const MdpState&,
                                             const std::vector<MdpAction>& actions) {
  require(!actions.empty(), "policy asked to act on an empty action set");
  return std::vector<double>(actions.size(), 1.0 / actions.size());
}

RolloutResult rollout(const CityGraph& city, const ShortestPathData& sp,
                      const CostWeights& weights, Policy& policy, RolloutMode mode,
                      const MdpOptions& options, uint64_t seed) {
  Rng rng(seed);
  MdpState st = mdp_reset(city, sp, weights);
  RolloutResult res;
  while (!st.done()) {
    auto actions = action_space(st, options);
    auto probs = policy.act(st, actions);
    require(probs.size() == actions.size(),
            "policy returned the wrong number of probabilities");
    int pick = 0;
    if (mode == RolloutMode::Greedy) {
      for (size_t k = 1; k < probs.size(); ++k)
        if (probs[k] > probs[pick]) pick = static_cast<int>(k);
    } else {
      double u = rng.uniform();
      double acc = 0.0;
      pick = static_cast<int>(probs.size()) - 1;
      for (size_t k = 0; k < probs.size(); ++k) {
        acc += probs[k];
        if (u < acc) {
          pick = static_cast<int>(k);
          break;
        }
      }
    }
    auto step = mdp_step_unchecked(st, actions[pick]);
    res.trace.push_back({st.t, actions[pick], step.reward,
                         static_cast<int>(actions.size()), pick});
    res.total_reward += step.reward;
    st = std::move(step.next_state);
  }
  res.network = st.finished_routes;
  return res;
}

}  // namespace transit
