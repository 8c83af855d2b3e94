#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "transit/city.hpp"
#include "transit/costs.hpp"
#include "transit/mdp.hpp"
#include "transit/rng.hpp"
#include "transit/shortest_paths.hpp"

namespace transit {

// ---------------------------------------------------------------------------
// Low-level mutators. Each returns a modified copy and leaves the input alone.
// ---------------------------------------------------------------------------

// Replaces one uniformly chosen route with a stored shortest path: one of the
// route's terminals is kept as an endpoint i, and the other endpoint j != i is
// sampled with probability proportional to the demand directly covered by the
// path from i to j (uniform fallback when every such weight is zero).
TransitNetwork type1_mutate(const TransitNetwork& net, const CityGraph& city,
                            const ShortestPathData& sp, Rng& rng);

// Picks a uniform route and terminal, then with probability p_d deletes the
// terminal (legal only while the route keeps at least one stop), otherwise
// appends a uniformly chosen street neighbor of the terminal that is not yet
// on the route. When the drawn branch is illegal the other branch is tried;
// when neither is legal the network is returned unchanged.
TransitNetwork type2_mutate(const TransitNetwork& net, const CityGraph& city, double p_d,
                            Rng& rng);

// Deletes one uniformly chosen route and rebuilds it by resuming the
// construction process from the remaining routes with the given policy,
// sampling stochastically until the replacement route is finished. The new
// route takes the deleted route's slot. Requires net to have exactly
// weights.num_routes routes.
TransitNetwork neural_mutate(const TransitNetwork& net, const CityGraph& city,
                             const ShortestPathData& sp, const CostWeights& weights,
                             Policy& policy, Rng& rng, const MdpOptions& options = {});

// ---------------------------------------------------------------------------
// Evolutionary algorithm.
// ---------------------------------------------------------------------------

// Survival-and-reproduction step over a population with per-member costs.
// With C_max/C_min the extreme costs, each member's overlap is
// O_b = (C_max - C_b)/(C_max - C_min) (0 for everyone when all costs tie),
// survival is Bernoulli(1 - exp(-O_b)), and each dead slot is refilled by a
// survivor drawn with probability proportional to O_b. No survivors leaves
// the population unchanged. Returns the slot -> source index map; slot b kept
// its member iff result[b] == b.
std::vector<int> selection_assignment(const std::vector<double>& costs, Rng& rng);

// Applies selection_assignment in place to the population and its costs.
void selection_stage(std::vector<TransitNetwork>& population, std::vector<double>& costs,
                     Rng& rng);

struct EaConfig {
  int population = 10;          // |B|, must be even and >= 2
  int iterations = 400;         // I
  int mutations_per_stage = 10; // F
  double deletion_prob = 0.2;   // p_d for type-2 mutation
  uint64_t seed = 0;
  unsigned workers = 0;         // 0 = hardware concurrency
};

using Mutator = std::function<TransitNetwork(const TransitNetwork&, Rng&)>;
using Initializer = std::function<TransitNetwork(Rng&)>;

struct EaHistory {
  std::vector<double> best_cost;  // global best after each iteration
  std::vector<double> mean_cost;  // population mean after each iteration
  long long candidate_evaluations = 0;  // mutant cost evaluations, |B|*I*F in total
};

struct EaResult {
  TransitNetwork best;
  double best_cost = 0.0;
  EaHistory history;
};

// Population search: |B| clones of the initializer's network, then I rounds of
// F mutation passes followed by one selection stage. In each pass the first
// half of the population (in current order) goes through mutator_a and the
// second half through mutator_b, a mutant replaces its parent only on strictly
// lower cost, and the population order is reshuffled. The best network ever
// held by a slot is returned. Mutations within a pass run in parallel on
// per-member RNG streams, so results do not depend on the worker count.
EaResult run_ea(const CityGraph& city, const ShortestPathData& sp, const CostWeights& weights,
                const EaConfig& cfg, const Mutator& mutator_a, const Mutator& mutator_b,
                const Initializer& initializer);

// ---------------------------------------------------------------------------
// Sequence-based hyper-heuristic with a Great Deluge acceptance rule.
// ---------------------------------------------------------------------------

// One small random modification of a network. Heuristics may freely break
// network constraints; the acceptance step rejects invalid results.
using HhHeuristic = std::function<TransitNetwork(const TransitNetwork&, const CityGraph&,
                                                 const ShortestPathData&, Rng&)>;

// The seven stock heuristics: (0) delete a node from a route, (1) insert a
// node at a position, (2) swap one node between two routes, (3) move a node
// from one route to another, (4) replace a terminal, (5) reverse a route
// subsection, (6) replace a route with a stored shortest path. All choices
// are uniform; structurally impossible picks return the network unchanged.
std::vector<HhHeuristic> default_hh_heuristics();

// Objective used by the hyper-heuristic: alpha*C_p + (1-alpha)*C_o in minutes,
// with no normalisation. Constraints are handled by rejecting violators
// outright rather than through a penalty term.
double hh_cost(const CostBreakdown& cb, double alpha);

struct DelugeConfig {
  double f0 = 0.0;
  std::optional<double> delta_f;  // unset: resolved to the initial network's cost
  long long limit = 500000;       // appended-heuristic budget
};

// Accepts a candidate iff it strictly improves on the current cost or lies at
// or below the threshold f0 + delta_f*(1 - iteration/limit). Requires a
// resolved delta_f >= 0 and limit >= 1.
bool deluge_accept(double candidate_cost, double current_cost, long long iteration,
                   const DelugeConfig& cfg);

struct HhState {
  int heuristic_count = 0;
  std::vector<double> tran;  // H x H transition counts, row-major, starts all ones
  std::vector<double> seq;   // H x 2 counts (col 0 = end, col 1 = continue), starts all ones
  TransitNetwork current;
  TransitNetwork best;
  double current_cost = 0.0;
  double best_cost = 0.0;
  long long iteration = 0;

  double tran_at(int from, int to) const {
    return tran[static_cast<size_t>(from) * heuristic_count + to];
  }
  double seq_at(int h, int col) const { return seq[static_cast<size_t>(h) * 2 + col]; }
};

// Single-network improvement: repeatedly assembles a heuristic sequence (first
// pick uniform, later picks from the Tran row of the previous heuristic, stop
// odds from the Seq row), applies it to the current network, and accepts the
// result when it is fully valid and passes the deluge rule. Accepted sequences
// increment the Tran/Seq cells they used; rejected ones change nothing. Each
// appended heuristic costs one iteration, and a sequence still open when the
// limit hits is discarded. r0 must be fully valid.
HhState hh_run(const CityGraph& city, const ShortestPathData& sp, const CostWeights& weights,
               const TransitNetwork& r0, const DelugeConfig& deluge,
               const std::vector<HhHeuristic>& heuristics, uint64_t seed);

// ---------------------------------------------------------------------------
// Initializers.
// ---------------------------------------------------------------------------

// Greedy demand cover: num_routes rounds each picking the stored shortest path
// (at most max_stops long) that directly covers the most remaining demand,
// then zeroing the covered entries. Deterministic, ties to the first candidate
// in pair order. The result need not be valid.
TransitNetwork init_nikolic(const CityGraph& city, const ShortestPathData& sp,
                            const CostWeights& weights);

// Repair loop: applies random heuristics to start, keeping a result iff its
// constraint cost does not increase, until the cost reaches zero. Errors after
// 10^6 applications without success.
TransitNetwork ahmed_repair(const CityGraph& city, const ShortestPathData& sp,
                            const CostWeights& weights,
                            const std::vector<HhHeuristic>& heuristics, TransitNetwork start,
                            Rng& rng);

// Constraint-minimizing build: from the pool of stored shortest paths within
// the stop bounds, greedily adds the route minimizing the constraint cost of
// the grown network until num_routes are placed, then runs ahmed_repair on the
// result. Errors when the pool is empty or the repair cap is exceeded.
TransitNetwork init_ahmed(const CityGraph& city, const ShortestPathData& sp,
                          const CostWeights& weights,
                          const std::vector<HhHeuristic>& heuristics, uint64_t seed);

// Constraint term of the cost function, computed without a full assignment:
// unconnected demand fraction via route-overlap components, the stop-bound
// measure, and the 0.1 violation indicator. Returns +inf when some route is
// not a simple street path. Agrees with evaluate_cost(...).c_c elsewhere.
double constraint_cost(const CityGraph& city, const TransitNetwork& net, const CostWeights& w);

struct JohnConfig {
  double lambda1 = 1.0;  // weight of normalised drive time
  double lambda2 = 0.0;  // weight of inverted normalised demand
  int k = 10;            // alternatives examined per pair in the second stage
};

// Per-edge weights lambda1*tau/max_tau + lambda2*(1 - D/max_D), aligned with
// city.edges. A city with no demand drops the demand term to lambda2.
std::vector<double> john_edge_weights(const CityGraph& city, double lambda1, double lambda2);

// Weighted route growing: stage one extends routes edge by edge, always taking
// a minimum-weight candidate edge (ties uniform), preferring edges that reach
// unserved nodes, resetting a route that gets stuck below min_stops and
// finishing it at max_stops or when no extension exists, until every node is
// served. Stage two tops the network up to num_routes by walking node pairs
// that share no route in descending demand order and adding the first of k
// loopless alternatives that fits the stop bounds and beats the pair's current
// transit time. Errors when stage one needs more than num_routes routes, a
// route resets more than 50 times, or the pairs run out before num_routes.
TransitNetwork init_john(const CityGraph& city, const JohnConfig& cfg, const CostWeights& weights,
                         uint64_t seed);

// Up to k loopless paths from i to j, cheapest first, under nonnegative
// per-edge weights aligned with city.edges. Paths are distinct and listed in
// nondecreasing total weight, ties resolved deterministically. Fewer than k
// exist: returns all of them.
std::vector<std::vector<int>> yen_k_shortest(const CityGraph& city,
                                             const std::vector<double>& edge_weights, int i,
                                             int j, int k);

// ---------------------------------------------------------------------------
// Artifacts.
// ---------------------------------------------------------------------------

// Plain text routes, one per line as space-separated node indices.
void save_network_file(const std::string& path, const TransitNetwork& net);
TransitNetwork load_network_file(const std::string& path);

// CSV with header iteration,best_cost,mean_cost; one row per iteration.
void write_ea_history_csv(const std::string& path, const EaHistory& history);

}  // namespace transit
