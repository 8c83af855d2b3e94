#include "transit/metaheuristics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>
#include <utility>

#include "transit/common.hpp"
#include "transit/parallel.hpp"

namespace transit {

namespace {

// Demand directly covered by a route: sum over unordered node pairs on it.
double direct_demand(const CityGraph& city, const std::vector<int>& path) {
  double total = 0.0;
  for (size_t a = 0; a < path.size(); ++a)
    for (size_t b = a + 1; b < path.size(); ++b) total += city.d(path[a], path[b]);
  return total;
}

bool contains(const Route& r, int node) {
  return std::find(r.begin(), r.end(), node) != r.end();
}

void format_double(char* buf, size_t cap, double v) { std::snprintf(buf, cap, "%.17g", v); }

}  // namespace

// ---------------------------------------------------------------------------
// Mutators.
// ---------------------------------------------------------------------------

TransitNetwork type1_mutate(const TransitNetwork& net, const CityGraph& city,
                            const ShortestPathData& sp, Rng& rng) {
  require(!net.routes.empty(), "type1_mutate: network has no routes");
  require(city.n >= 2, "type1_mutate: city needs at least two nodes");
  TransitNetwork out = net;
  int ri = rng.index(out.routes.size());
  const Route& r = out.routes[ri];
  require(!r.empty(), "type1_mutate: route " + std::to_string(ri) + " is empty");
  int side = rng.index(2);
  int i = side == 0 ? r.front() : r.back();

  std::vector<int> others;
  std::vector<double> weight;
  others.reserve(city.n - 1);
  weight.reserve(city.n - 1);
  for (int j = 0; j < city.n; ++j) {
    if (j == i) continue;
    others.push_back(j);
    weight.push_back(direct_demand(city, sp.p(i, j)));
  }
  int j = others[rng.weighted_index(weight)];
  out.routes[ri] = sp.p(i, j);
  return out;
}

TransitNetwork type2_mutate(const TransitNetwork& net, const CityGraph& city, double p_d,
                            Rng& rng) {
  require(!net.routes.empty(), "type2_mutate: network has no routes");
  require(p_d >= 0.0 && p_d <= 1.0, "type2_mutate: p_d must lie in [0, 1]");
  TransitNetwork out = net;
  Route& r = out.routes[rng.index(out.routes.size())];
  require(!r.empty(), "type2_mutate: selected route is empty");
  int side = rng.index(2);
  bool want_delete = rng.bernoulli(p_d);
  int terminal = side == 0 ? r.front() : r.back();

  std::vector<int> extensions;
  for (const auto& [nbr, tau] : city.adj[terminal]) {
    (void)tau;
    if (!contains(r, nbr)) extensions.push_back(nbr);
  }
  auto erase_terminal = [&] {
    if (side == 0)
      r.erase(r.begin());
    else
      r.pop_back();
  };
  auto append = [&] {
    int nbr = extensions[rng.index(extensions.size())];
    if (side == 0)
      r.insert(r.begin(), nbr);
    else
      r.push_back(nbr);
  };

  if (want_delete) {
    if (r.size() > 1)
      erase_terminal();
    else if (!extensions.empty())
      append();
  } else {
    if (!extensions.empty())
      append();
    else if (r.size() > 1)
      erase_terminal();
  }
  return out;
}

TransitNetwork neural_mutate(const TransitNetwork& net, const CityGraph& city,
                             const ShortestPathData& sp, const CostWeights& weights,
                             Policy& policy, Rng& rng, const MdpOptions& options) {
  int S = weights.num_routes;
  require(S >= 1, "neural_mutate: num_routes must be at least 1");
  require(static_cast<int>(net.routes.size()) == S,
          "neural_mutate: network must have exactly num_routes routes");
  int idx = rng.index(net.routes.size());

  MdpState state;
  state.city = &city;
  state.sp = &sp;
  state.weights = weights;
  state.finished_routes.routes.reserve(net.routes.size() - 1);
  for (int k = 0; k < S; ++k)
    if (k != idx) state.finished_routes.routes.push_back(net.routes[k]);
  state.t = 1;
  state.reward_cost = evaluate_reward_cost(city, sp, state.finished_routes, weights);

  while (!state.done()) {
    std::vector<MdpAction> actions = action_space(state, options);
    require(!actions.empty(), "neural_mutate: empty action space");
    std::vector<double> probs = policy.act(state, actions);
    int pick = rng.weighted_index(probs);
    state = mdp_step_unchecked(state, actions[pick]).next_state;
  }

  TransitNetwork out = net;
  out.routes[idx] = state.finished_routes.routes.back();
  return out;
}

// ---------------------------------------------------------------------------
// Evolutionary algorithm.
// ---------------------------------------------------------------------------

std::vector<int> selection_assignment(const std::vector<double>& costs, Rng& rng) {
  size_t B = costs.size();
  require(B >= 2, "selection_assignment: population must have at least 2 members");
  double cmax = costs[0], cmin = costs[0];
  for (double c : costs) {
    require(std::isfinite(c), "selection_assignment: costs must be finite");
    cmax = std::max(cmax, c);
    cmin = std::min(cmin, c);
  }
  std::vector<double> overlap(B, 0.0);
  if (cmax > cmin)
    for (size_t b = 0; b < B; ++b) overlap[b] = (cmax - costs[b]) / (cmax - cmin);

  // One survival draw per slot, in slot order, even for sure deaths.
  std::vector<uint8_t> alive(B, 0);
  bool any = false;
  for (size_t b = 0; b < B; ++b) {
    alive[b] = rng.bernoulli(1.0 - std::exp(-overlap[b])) ? 1 : 0;
    any = any || alive[b];
  }
  std::vector<int> assign(B);
  std::iota(assign.begin(), assign.end(), 0);
  if (!any) return assign;

  std::vector<double> weight(B, 0.0);
  for (size_t b = 0; b < B; ++b)
    if (alive[b]) weight[b] = overlap[b];
  for (size_t b = 0; b < B; ++b)
    if (!alive[b]) assign[b] = rng.weighted_index(weight);
  return assign;
}

void selection_stage(std::vector<TransitNetwork>& population, std::vector<double>& costs,
                     Rng& rng) {
  require(population.size() == costs.size(),
          "selection_stage: population and cost sizes differ");
  std::vector<int> assign = selection_assignment(costs, rng);
  std::vector<TransitNetwork> next(population.size());
  std::vector<double> next_costs(population.size());
  for (size_t b = 0; b < population.size(); ++b) {
    next[b] = population[assign[b]];
    next_costs[b] = costs[assign[b]];
  }
  population = std::move(next);
  costs = std::move(next_costs);
}

EaResult run_ea(const CityGraph& city, const ShortestPathData& sp, const CostWeights& weights,
                const EaConfig& cfg, const Mutator& mutator_a, const Mutator& mutator_b,
                const Initializer& initializer) {
  require(cfg.population >= 2 && cfg.population % 2 == 0,
          "run_ea: population must be even and at least 2");
  require(cfg.iterations >= 0, "run_ea: iterations must be nonnegative");
  require(cfg.mutations_per_stage >= 1, "run_ea: mutations_per_stage must be at least 1");
  require(static_cast<bool>(mutator_a) && static_cast<bool>(mutator_b),
          "run_ea: both mutators must be set");
  require(static_cast<bool>(initializer), "run_ea: initializer must be set");
  unsigned workers = cfg.workers == 0 ? default_workers() : cfg.workers;

  Rng master(cfg.seed);
  TransitNetwork seed_net = initializer(master);
  require(static_cast<int>(seed_net.routes.size()) == weights.num_routes,
          "run_ea: initializer produced " + std::to_string(seed_net.routes.size()) +
              " routes, expected " + std::to_string(weights.num_routes));
  double seed_cost = evaluate_cost(city, sp, seed_net, weights).total;

  int B = cfg.population;
  std::vector<TransitNetwork> pop(B, seed_net);
  std::vector<double> cost(B, seed_cost);
  EaResult res;
  res.best = std::move(seed_net);
  res.best_cost = seed_cost;

  std::vector<uint64_t> seeds(B);
  std::vector<TransitNetwork> mutant(B);
  std::vector<double> mutant_cost(B);
  std::vector<int> perm(B);

  for (int it = 0; it < cfg.iterations; ++it) {
    for (int pass = 0; pass < cfg.mutations_per_stage; ++pass) {
      // Per-member rng streams are seeded sequentially so the parallel pass
      // cannot depend on worker count or scheduling.
      for (int b = 0; b < B; ++b) seeds[b] = master.raw();
      parallel_for(static_cast<size_t>(B), workers, [&](size_t b, unsigned) {
        Rng member_rng(seeds[b]);
        const Mutator& m = static_cast<int>(b) < B / 2 ? mutator_a : mutator_b;
        mutant[b] = m(pop[b], member_rng);
        mutant_cost[b] = evaluate_cost(city, sp, mutant[b], weights).total;
      });
      res.history.candidate_evaluations += B;
      for (int b = 0; b < B; ++b) {
        if (mutant_cost[b] < cost[b]) {
          pop[b] = std::move(mutant[b]);
          cost[b] = mutant_cost[b];
        }
        if (cost[b] < res.best_cost) {
          res.best = pop[b];
          res.best_cost = cost[b];
        }
      }
      std::iota(perm.begin(), perm.end(), 0);
      master.shuffle(perm);
      std::vector<TransitNetwork> shuffled(B);
      std::vector<double> shuffled_cost(B);
      for (int b = 0; b < B; ++b) {
        shuffled[b] = std::move(pop[perm[b]]);
        shuffled_cost[b] = cost[perm[b]];
      }
      pop = std::move(shuffled);
      cost = std::move(shuffled_cost);
    }
    selection_stage(pop, cost, master);
    res.history.best_cost.push_back(res.best_cost);
    res.history.mean_cost.push_back(std::accumulate(cost.begin(), cost.end(), 0.0) / B);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Hyper-heuristic.
// ---------------------------------------------------------------------------

namespace {

TransitNetwork hh_delete_node(const TransitNetwork& net, const CityGraph& city,
                              const ShortestPathData& sp, Rng& rng) {
  (void)city;
  (void)sp;
  TransitNetwork out = net;
  if (out.routes.empty()) return out;
  Route& r = out.routes[rng.index(out.routes.size())];
  if (r.size() < 2) return out;
  r.erase(r.begin() + rng.index(r.size()));
  return out;
}

TransitNetwork hh_insert_node(const TransitNetwork& net, const CityGraph& city,
                              const ShortestPathData& sp, Rng& rng) {
  (void)sp;
  TransitNetwork out = net;
  if (out.routes.empty()) return out;
  Route& r = out.routes[rng.index(out.routes.size())];
  int node = rng.index(city.n);
  int pos = rng.index(r.size() + 1);
  r.insert(r.begin() + pos, node);
  return out;
}

TransitNetwork hh_swap_nodes(const TransitNetwork& net, const CityGraph& city,
                             const ShortestPathData& sp, Rng& rng) {
  (void)city;
  (void)sp;
  TransitNetwork out = net;
  if (out.routes.size() < 2) return out;
  int a = rng.index(out.routes.size());
  int b = rng.index(out.routes.size() - 1);
  if (b >= a) ++b;
  Route& ra = out.routes[a];
  Route& rb = out.routes[b];
  if (ra.empty() || rb.empty()) return out;
  std::swap(ra[rng.index(ra.size())], rb[rng.index(rb.size())]);
  return out;
}

TransitNetwork hh_move_node(const TransitNetwork& net, const CityGraph& city,
                            const ShortestPathData& sp, Rng& rng) {
  (void)city;
  (void)sp;
  TransitNetwork out = net;
  if (out.routes.size() < 2) return out;
  int a = rng.index(out.routes.size());
  int b = rng.index(out.routes.size() - 1);
  if (b >= a) ++b;
  Route& ra = out.routes[a];
  Route& rb = out.routes[b];
  if (ra.size() < 2) return out;
  int pa = rng.index(ra.size());
  int node = ra[pa];
  ra.erase(ra.begin() + pa);
  rb.insert(rb.begin() + rng.index(rb.size() + 1), node);
  return out;
}

TransitNetwork hh_replace_terminal(const TransitNetwork& net, const CityGraph& city,
                                   const ShortestPathData& sp, Rng& rng) {
  (void)sp;
  TransitNetwork out = net;
  if (out.routes.empty()) return out;
  Route& r = out.routes[rng.index(out.routes.size())];
  if (r.empty()) return out;
  int side = rng.index(2);
  int node = rng.index(city.n);
  if (side == 0)
    r.front() = node;
  else
    r.back() = node;
  return out;
}

TransitNetwork hh_reverse_section(const TransitNetwork& net, const CityGraph& city,
                                  const ShortestPathData& sp, Rng& rng) {
  (void)city;
  (void)sp;
  TransitNetwork out = net;
  if (out.routes.empty()) return out;
  Route& r = out.routes[rng.index(out.routes.size())];
  if (r.size() < 2) return out;
  int i = rng.index(r.size());
  int j = rng.index(r.size());
  if (i > j) std::swap(i, j);
  std::reverse(r.begin() + i, r.begin() + j + 1);
  return out;
}

TransitNetwork hh_replace_with_sp(const TransitNetwork& net, const CityGraph& city,
                                  const ShortestPathData& sp, Rng& rng) {
  TransitNetwork out = net;
  if (out.routes.empty() || city.n < 2) return out;
  int ri = rng.index(out.routes.size());
  int i = rng.index(city.n);
  int j = rng.index(city.n - 1);
  if (j >= i) ++j;
  out.routes[ri] = sp.p(i, j);
  return out;
}

}  // namespace

std::vector<HhHeuristic> default_hh_heuristics() {
  return {hh_delete_node,      hh_insert_node,     hh_swap_nodes,     hh_move_node,
          hh_replace_terminal, hh_reverse_section, hh_replace_with_sp};
}

double hh_cost(const CostBreakdown& cb, double alpha) {
  require(alpha >= 0.0 && alpha <= 1.0, "hh_cost: alpha must lie in [0, 1]");
  return alpha * cb.cp_minutes + (1.0 - alpha) * cb.co_minutes;
}

bool deluge_accept(double candidate_cost, double current_cost, long long iteration,
                   const DelugeConfig& cfg) {
  require(cfg.delta_f.has_value(), "deluge_accept: delta_f must be resolved");
  require(*cfg.delta_f >= 0.0, "deluge_accept: delta_f must be nonnegative");
  require(cfg.limit >= 1, "deluge_accept: limit must be at least 1");
  require(std::isfinite(candidate_cost) && std::isfinite(current_cost),
          "deluge_accept: costs must be finite");
  if (candidate_cost < current_cost) return true;
  double threshold =
      cfg.f0 + *cfg.delta_f * (1.0 - static_cast<double>(iteration) / static_cast<double>(cfg.limit));
  return candidate_cost <= threshold;
}

HhState hh_run(const CityGraph& city, const ShortestPathData& sp, const CostWeights& weights,
               const TransitNetwork& r0, const DelugeConfig& deluge,
               const std::vector<HhHeuristic>& heuristics, uint64_t seed) {
  require(!heuristics.empty(), "hh_run: needs at least one heuristic");
  require(deluge.limit >= 0, "hh_run: limit must be nonnegative");
  std::vector<std::string> violations = validate_network(city, r0, weights);
  require(violations.empty(), "hh_run: initial network invalid: " + violations.front());

  int H = static_cast<int>(heuristics.size());
  HhState st;
  st.heuristic_count = H;
  st.tran.assign(static_cast<size_t>(H) * H, 1.0);
  st.seq.assign(static_cast<size_t>(H) * 2, 1.0);
  st.current = r0;
  st.current_cost = hh_cost(evaluate_cost(city, sp, r0, weights), weights.alpha);
  st.best = st.current;
  st.best_cost = st.current_cost;

  DelugeConfig cfg = deluge;
  if (!cfg.delta_f.has_value()) cfg.delta_f = st.current_cost;

  Rng rng(seed);
  std::vector<int> steps;
  while (st.iteration < cfg.limit) {
    steps.clear();
    bool complete = false;
    while (st.iteration < cfg.limit) {
      int h;
      if (steps.empty()) {
        h = rng.index(H);
      } else {
        const double* row = &st.tran[static_cast<size_t>(steps.back()) * H];
        std::vector<double> w(row, row + H);
        h = rng.weighted_index(w);
      }
      steps.push_back(h);
      ++st.iteration;
      double end_odds = st.seq_at(h, 0) / (st.seq_at(h, 0) + st.seq_at(h, 1));
      if (rng.bernoulli(end_odds)) {
        complete = true;
        break;
      }
    }
    // A sequence still open when the budget runs out is never applied.
    if (!complete) break;

    TransitNetwork candidate = st.current;
    for (int h : steps) candidate = heuristics[h](candidate, city, sp, rng);
    if (!validate_network(city, candidate, weights).empty()) continue;
    double candidate_cost = hh_cost(evaluate_cost(city, sp, candidate, weights), weights.alpha);
    if (!deluge_accept(candidate_cost, st.current_cost, st.iteration, cfg)) continue;

    st.current = std::move(candidate);
    st.current_cost = candidate_cost;
    if (candidate_cost < st.best_cost) {
      st.best = st.current;
      st.best_cost = candidate_cost;
    }
    for (size_t q = 1; q < steps.size(); ++q)
      st.tran[static_cast<size_t>(steps[q - 1]) * H + steps[q]] += 1.0;
    for (size_t q = 0; q + 1 < steps.size(); ++q) st.seq[static_cast<size_t>(steps[q]) * 2 + 1] += 1.0;
    st.seq[static_cast<size_t>(steps.back()) * 2 + 0] += 1.0;
  }
  return st;
}

// ---------------------------------------------------------------------------
// Initializers.
// ---------------------------------------------------------------------------

TransitNetwork init_nikolic(const CityGraph& city, const ShortestPathData& sp,
                            const CostWeights& weights) {
  require(weights.num_routes >= 1, "init_nikolic: num_routes must be at least 1");
  require(city.n >= 2, "init_nikolic: city needs at least two nodes");

  std::vector<const std::vector<int>*> pool;
  for (int i = 0; i < city.n; ++i)
    for (int j = i + 1; j < city.n; ++j) {
      const std::vector<int>& p = sp.p(i, j);
      if (!p.empty() && static_cast<int>(p.size()) <= weights.max_stops) pool.push_back(&p);
    }
  require(!pool.empty(), "init_nikolic: no shortest path fits the stop bound");

  std::vector<double> dem = city.demand;
  auto at = [&](int a, int b) -> double& { return dem[static_cast<size_t>(a) * city.n + b]; };

  TransitNetwork out;
  for (int s = 0; s < weights.num_routes; ++s) {
    const std::vector<int>* best = nullptr;
    double best_weight = -1.0;
    for (const std::vector<int>* p : pool) {
      double w = 0.0;
      for (size_t a = 0; a < p->size(); ++a)
        for (size_t b = a + 1; b < p->size(); ++b) w += at((*p)[a], (*p)[b]);
      if (w > best_weight) {
        best_weight = w;
        best = p;
      }
    }
    out.routes.push_back(*best);
    for (size_t a = 0; a < best->size(); ++a)
      for (size_t b = a + 1; b < best->size(); ++b) {
        at((*best)[a], (*best)[b]) = 0.0;
        at((*best)[b], (*best)[a]) = 0.0;
      }
  }
  return out;
}

double constraint_cost(const CityGraph& city, const TransitNetwork& net, const CostWeights& w) {
  for (const Route& r : net.routes)
    if (!is_simple_street_path(city, r)) return kInf;

  // Two stops can reach each other iff their routes overlap transitively, so
  // connectivity reduces to components over shared-route membership.
  std::vector<int> parent(city.n);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  for (const Route& r : net.routes)
    for (size_t k = 1; k < r.size(); ++k) {
      int a = find(r[0]), b = find(r[k]);
      if (a != b) parent[a] = b;
    }

  long long pairs_demand = 0, pairs_unconnected = 0;
  for (int i = 0; i < city.n; ++i)
    for (int j = i + 1; j < city.n; ++j) {
      if (city.d(i, j) <= 0.0) continue;
      ++pairs_demand;
      if (find(i) != find(j)) ++pairs_unconnected;
    }
  double f_un =
      pairs_demand > 0 ? static_cast<double>(pairs_unconnected) / pairs_demand : 0.0;

  double stop_viol = 0.0;
  for (const Route& r : net.routes) {
    double len = static_cast<double>(r.size());
    stop_viol += std::max({0.0, w.min_stops - len, len - w.max_stops});
  }
  double f_s = stop_viol / (static_cast<double>(w.num_routes) * w.max_stops);
  double delta_v = (f_un > 0.0 || f_s > 0.0) ? 1.0 : 0.0;
  return f_un + f_s + 0.1 * delta_v;
}

TransitNetwork ahmed_repair(const CityGraph& city, const ShortestPathData& sp,
                            const CostWeights& weights,
                            const std::vector<HhHeuristic>& heuristics, TransitNetwork start,
                            Rng& rng) {
  require(!heuristics.empty(), "ahmed_repair: needs at least one heuristic");
  double current = constraint_cost(city, start, weights);
  require(std::isfinite(current), "ahmed_repair: start network breaks the simple-path rule");
  const long long cap = 1000000;
  long long used = 0;
  while (current > 0.0) {
    require(used < cap,
            "ahmed_repair: exceeded " + std::to_string(cap) + " heuristic applications");
    ++used;
    int h = rng.index(heuristics.size());
    TransitNetwork candidate = heuristics[h](start, city, sp, rng);
    double c = constraint_cost(city, candidate, weights);
    if (c <= current) {
      start = std::move(candidate);
      current = c;
    }
  }
  return start;
}

TransitNetwork init_ahmed(const CityGraph& city, const ShortestPathData& sp,
                          const CostWeights& weights,
                          const std::vector<HhHeuristic>& heuristics, uint64_t seed) {
  require(!heuristics.empty(), "init_ahmed: needs at least one heuristic");
  require(weights.num_routes >= 1, "init_ahmed: num_routes must be at least 1");

  std::vector<const std::vector<int>*> pool;
  for (int i = 0; i < city.n; ++i)
    for (int j = i + 1; j < city.n; ++j) {
      const std::vector<int>& p = sp.p(i, j);
      int len = static_cast<int>(p.size());
      if (len >= weights.min_stops && len <= weights.max_stops) pool.push_back(&p);
    }
  require(!pool.empty(), "init_ahmed: no shortest path fits the stop bounds");

  TransitNetwork net;
  for (int s = 0; s < weights.num_routes; ++s) {
    net.routes.emplace_back();
    const std::vector<int>* best = nullptr;
    double best_cost = kInf;
    for (const std::vector<int>* p : pool) {
      net.routes.back() = *p;
      double c = constraint_cost(city, net, weights);
      if (c < best_cost) {
        best_cost = c;
        best = p;
      }
    }
    net.routes.back() = *best;
  }

  Rng rng(seed);
  return ahmed_repair(city, sp, weights, heuristics, std::move(net), rng);
}

std::vector<double> john_edge_weights(const CityGraph& city, double lambda1, double lambda2) {
  require(!city.edges.empty(), "john_edge_weights: city has no edges");
  require(lambda1 >= 0.0 && lambda2 >= 0.0, "john_edge_weights: weights must be nonnegative");
  double max_tau = 0.0;
  for (const CityGraph::Edge& e : city.edges) max_tau = std::max(max_tau, e.tau);
  double max_d = 0.0;
  for (int i = 0; i < city.n; ++i)
    for (int j = i + 1; j < city.n; ++j) max_d = std::max(max_d, city.d(i, j));

  std::vector<double> w(city.edges.size());
  for (size_t k = 0; k < city.edges.size(); ++k) {
    const CityGraph::Edge& e = city.edges[k];
    double demand_term = max_d > 0.0 ? 1.0 - city.d(e.u, e.v) / max_d : 1.0;
    w[k] = lambda1 * e.tau / max_tau + lambda2 * demand_term;
  }
  return w;
}

std::vector<std::vector<int>> yen_k_shortest(const CityGraph& city,
                                             const std::vector<double>& edge_weights, int i,
                                             int j, int k) {
  require(i >= 0 && i < city.n && j >= 0 && j < city.n, "yen_k_shortest: endpoint out of range");
  require(i != j, "yen_k_shortest: endpoints must differ");
  require(k >= 1, "yen_k_shortest: k must be at least 1");
  require(edge_weights.size() == city.edges.size(),
          "yen_k_shortest: weights must align with city edges");
  for (double w : edge_weights)
    require(w >= 0.0 && std::isfinite(w), "yen_k_shortest: weights must be finite and nonnegative");

  std::vector<std::vector<std::pair<int, double>>> adj(city.n);
  std::vector<double> wmat(static_cast<size_t>(city.n) * city.n, 0.0);
  for (size_t e = 0; e < city.edges.size(); ++e) {
    int u = city.edges[e].u, v = city.edges[e].v;
    adj[u].push_back({v, edge_weights[e]});
    adj[v].push_back({u, edge_weights[e]});
    wmat[static_cast<size_t>(u) * city.n + v] = edge_weights[e];
    wmat[static_cast<size_t>(v) * city.n + u] = edge_weights[e];
  }
  auto path_weight = [&](const std::vector<int>& p) {
    double s = 0.0;
    for (size_t q = 1; q < p.size(); ++q)
      s += wmat[static_cast<size_t>(p[q - 1]) * city.n + p[q]];
    return s;
  };

  std::vector<std::vector<int>> found;
  SingleSource first = dijkstra_paths(city.n, adj, i);
  if (first.path[j].empty()) return found;
  found.push_back(first.path[j]);

  std::set<std::vector<int>> known{found[0]};
  std::set<std::pair<double, std::vector<int>>> candidates;

  while (static_cast<int>(found.size()) < k) {
    const std::vector<int> prev = found.back();
    for (size_t spur_idx = 0; spur_idx + 1 < prev.size(); ++spur_idx) {
      int spur = prev[spur_idx];
      std::vector<uint8_t> banned_nodes(city.n, 0);
      for (size_t q = 0; q < spur_idx; ++q) banned_nodes[prev[q]] = 1;

      std::set<int> banned_next;
      for (const std::vector<int>& p : found)
        if (p.size() > spur_idx + 1 &&
            std::equal(prev.begin(), prev.begin() + spur_idx + 1, p.begin()))
          banned_next.insert(p[spur_idx + 1]);

      std::vector<std::vector<std::pair<int, double>>> adj2 = adj;
      adj2[spur].erase(std::remove_if(adj2[spur].begin(), adj2[spur].end(),
                                      [&](const std::pair<int, double>& nb) {
                                        return banned_next.count(nb.first) > 0;
                                      }),
                       adj2[spur].end());

      SingleSource spur_run = dijkstra_paths(city.n, adj2, spur, &banned_nodes);
      if (spur_run.path[j].empty()) continue;

      std::vector<int> total(prev.begin(), prev.begin() + spur_idx);
      total.insert(total.end(), spur_run.path[j].begin(), spur_run.path[j].end());
      if (known.count(total)) continue;
      candidates.insert({path_weight(total), total});
    }
    if (candidates.empty()) break;
    auto it = candidates.begin();
    found.push_back(it->second);
    known.insert(it->second);
    candidates.erase(it);
  }
  return found;
}

TransitNetwork init_john(const CityGraph& city, const JohnConfig& cfg, const CostWeights& weights,
                         uint64_t seed) {
  require(city.n >= 2, "init_john: city needs at least two nodes");
  require(cfg.k >= 1, "init_john: k must be at least 1");
  require(weights.num_routes >= 1, "init_john: num_routes must be at least 1");
  const int n = city.n;
  const int m_min = weights.min_stops, m_max = weights.max_stops;
  const int S = weights.num_routes;

  Rng rng(seed);
  std::vector<double> W = john_edge_weights(city, cfg.lambda1, cfg.lambda2);
  std::vector<double> wmat(static_cast<size_t>(n) * n, kInf);
  for (size_t e = 0; e < city.edges.size(); ++e) {
    int u = city.edges[e].u, v = city.edges[e].v;
    wmat[static_cast<size_t>(u) * n + v] = W[e];
    wmat[static_cast<size_t>(v) * n + u] = W[e];
  }

  // A uniform draw among minimal-weight candidates; no draw is spent when the
  // minimum is unique, so fully deterministic inputs use no randomness at all.
  auto pick_min = [&](const std::vector<double>& ws) {
    double best = *std::min_element(ws.begin(), ws.end());
    std::vector<int> mins;
    for (size_t q = 0; q < ws.size(); ++q)
      if (ws[q] == best) mins.push_back(static_cast<int>(q));
    return mins.size() == 1 ? mins[0] : mins[rng.index(mins.size())];
  };

  std::vector<uint8_t> served(n, 0);
  int served_count = 0;
  TransitNetwork net;

  // Stage one: grow minimum-weight routes until every node is served.
  while (served_count < n) {
    Route r;
    int resets = 0;
    while (true) {
      if (r.empty()) {
        std::vector<std::pair<int, int>> starts;
        std::vector<double> ws;
        for (size_t e = 0; e < city.edges.size(); ++e) {
          int u = city.edges[e].u, v = city.edges[e].v;
          if (net.routes.empty()) {
            starts.push_back({u, v});
            ws.push_back(W[e]);
          } else if (served[u] != served[v]) {
            // Fresh routes beyond the first must bridge into unserved territory.
            starts.push_back(served[u] ? std::make_pair(u, v) : std::make_pair(v, u));
            ws.push_back(W[e]);
          }
        }
        require(!starts.empty(), "init_john: no start edge available");
        auto [a, b] = starts[pick_min(ws)];
        r = {a, b};
      } else {
        std::vector<std::pair<int, int>> exts;  // (node, side 0=front 1=back)
        std::vector<double> ws;
        bool any_unserved = false;
        for (int side = 0; side < 2; ++side) {
          int terminal = side == 0 ? r.front() : r.back();
          for (const auto& [nbr, tau] : city.adj[terminal]) {
            (void)tau;
            if (contains(r, nbr)) continue;
            exts.push_back({nbr, side});
            ws.push_back(wmat[static_cast<size_t>(terminal) * n + nbr]);
            any_unserved = any_unserved || !served[nbr];
          }
        }
        if (any_unserved) {
          std::vector<std::pair<int, int>> fe;
          std::vector<double> fw;
          for (size_t q = 0; q < exts.size(); ++q)
            if (!served[exts[q].first]) {
              fe.push_back(exts[q]);
              fw.push_back(ws[q]);
            }
          exts = std::move(fe);
          ws = std::move(fw);
        }
        if (exts.empty()) {
          if (static_cast<int>(r.size()) >= m_min) break;
          ++resets;
          require(resets <= 50, "init_john: route construction reset more than 50 times");
          r.clear();
          continue;
        }
        auto [node, side] = exts[pick_min(ws)];
        if (side == 0)
          r.insert(r.begin(), node);
        else
          r.push_back(node);
      }
      if (static_cast<int>(r.size()) >= m_max) break;
    }
    net.routes.push_back(r);
    for (int node : r)
      if (!served[node]) {
        served[node] = 1;
        ++served_count;
      }
  }
  require(static_cast<int>(net.routes.size()) <= S,
          "init_john: covering every node needed " + std::to_string(net.routes.size()) +
              " routes, more than num_routes = " + std::to_string(S));

  // Stage two: top up to S routes along high-demand pairs no route serves yet.
  if (static_cast<int>(net.routes.size()) < S) {
    std::vector<uint8_t> together(static_cast<size_t>(n) * n, 0);
    for (const Route& r : net.routes)
      for (size_t a = 0; a < r.size(); ++a)
        for (size_t b = a + 1; b < r.size(); ++b) {
          together[static_cast<size_t>(r[a]) * n + r[b]] = 1;
          together[static_cast<size_t>(r[b]) * n + r[a]] = 1;
        }
    std::vector<std::tuple<double, int, int>> pairs;
    for (int a = 0; a < n; ++a)
      for (int b = a + 1; b < n; ++b)
        if (!together[static_cast<size_t>(a) * n + b]) pairs.push_back({city.d(a, b), a, b});
    std::sort(pairs.begin(), pairs.end(), [](const auto& x, const auto& y) {
      if (std::get<0>(x) != std::get<0>(y)) return std::get<0>(x) > std::get<0>(y);
      if (std::get<1>(x) != std::get<1>(y)) return std::get<1>(x) < std::get<1>(y);
      return std::get<2>(x) < std::get<2>(y);
    });

    bool stale = true;
    TransitAssignment ta;
    for (const auto& [dem, a, b] : pairs) {
      (void)dem;
      if (static_cast<int>(net.routes.size()) >= S) break;
      if (stale) {
        RouteGraph rg = build_route_graph(city, net);
        ta = transit_assignment(rg, weights.transfer_penalty);
        stale = false;
      }
      double current = ta.connected(a, b)
                           ? ta.t(a, b) + weights.transfer_penalty * ta.x(a, b)
                           : kInf;
      for (const std::vector<int>& p : yen_k_shortest(city, W, a, b, cfg.k)) {
        int len = static_cast<int>(p.size());
        if (len < m_min || len > m_max) continue;
        if (route_drive_time(city, p) < current) {
          net.routes.push_back(p);
          stale = true;
          break;
        }
      }
    }
    require(static_cast<int>(net.routes.size()) == S,
            "init_john: pairs exhausted with " + std::to_string(net.routes.size()) +
                " of " + std::to_string(S) + " routes");
  }
  return net;
}

// ---------------------------------------------------------------------------
// Artifacts.
// ---------------------------------------------------------------------------

void save_network_file(const std::string& path, const TransitNetwork& net) {
  std::ofstream f(path);
  require(f.good(), "save_network_file: cannot open " + path);
  for (const Route& r : net.routes) {
    for (size_t k = 0; k < r.size(); ++k) f << r[k] << (k + 1 < r.size() ? ' ' : '\n');
    require(!r.empty(), "save_network_file: empty route");
  }
  f.flush();
  require(f.good(), "save_network_file: write failed for " + path);
}

TransitNetwork load_network_file(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), "load_network_file: cannot open " + path);
  TransitNetwork net;
  std::string line;
  while (std::getline(f, line)) {
    std::istringstream ss(line);
    Route r;
    int x;
    while (ss >> x) r.push_back(x);
    if (!r.empty()) net.routes.push_back(std::move(r));
  }
  return net;
}

void write_ea_history_csv(const std::string& path, const EaHistory& history) {
  require(history.best_cost.size() == history.mean_cost.size(),
          "write_ea_history_csv: history columns differ in length");
  std::ofstream f(path);
  require(f.good(), "write_ea_history_csv: cannot open " + path);
  f << "iteration,best_cost,mean_cost\n";
  char buf[64];
  for (size_t i = 0; i < history.best_cost.size(); ++i) {
    f << (i + 1) << ',';
    format_double(buf, sizeof buf, history.best_cost[i]);
    f << buf << ',';
    format_double(buf, sizeof buf, history.mean_cost[i]);
    f << buf << '\n';
  }
  f.flush();
  require(f.good(), "write_ea_history_csv: write failed for " + path);
}

}  // namespace transit
