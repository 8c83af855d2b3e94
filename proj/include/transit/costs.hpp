#pragma once

#include <string>
#include <vector>

#include "transit/city.hpp"
#include "transit/shortest_paths.hpp"

namespace transit {

struct CostWeights {
  double alpha = 0.5;             // passenger vs operator trade-off, in [0, 1]
  double beta = 5.0;              // constraint penalty weight
  double transfer_penalty = 300;  // seconds added per transfer
  int num_routes = 10;            // required route count S
  int min_stops = 2;              // per-route stop bounds
  int max_stops = 12;
};

// Direct (no-transfer) trips offered by a network. direct is n*n drive seconds along the
// best single route serving the pair (+inf when no route covers both stops); route_of is
// the index of that route (-1 when none; ties go to the lowest route index).
struct RouteGraph {
  int n = 0;
  std::vector<double> direct;
  std::vector<int> route_of;

  double at(int i, int j) const { return direct[static_cast<size_t>(i) * n + j]; }
};

// Best transit trips allowing transfers. Trips minimize riding time plus
// transfer_penalty per transfer; ties prefer fewer transfers. time is riding seconds
// only (the penalty is excluded); transfers is -1 where no trip exists.
struct TransitAssignment {
  int n = 0;
  std::vector<double> time;
  std::vector<int> transfers;

  double t(int i, int j) const { return time[static_cast<size_t>(i) * n + j]; }
  int x(int i, int j) const { return transfers[static_cast<size_t>(i) * n + j]; }
  bool connected(int i, int j) const { return x(i, j) >= 0; }
};

struct CostBreakdown {
  double cp_minutes = 0.0;  // mean perceived passenger trip time over served demand
  double co_minutes = 0.0;  // total one-direction route drive time
  double f_un = 0.0;        // fraction of demand-positive pairs with no trip
  double f_s = 0.0;         // per-stop-bound violation measure
  double delta_v = 0.0;     // 1 when any constraint term is positive
  double c_c = 0.0;         // f_un + f_s + 0.1 * delta_v
  double total = 0.0;       // alpha*w_p*C_p + (1-alpha)*w_o*C_o + beta*C_c, seconds scale
  double d0 = 0.0, d1 = 0.0, d2 = 0.0, d_un = 0.0;  // demand % by transfer count
};

// Errors when a route is not a simple path over street edges.
RouteGraph build_route_graph(const CityGraph& city, const TransitNetwork& net);

TransitAssignment transit_assignment(const RouteGraph& rg, double transfer_penalty);

// Full cost of a (possibly partial) network. Stop-bound and route-count normalisation
// use weights.num_routes, so networks with fewer routes than S evaluate sensibly.
CostBreakdown evaluate_cost(const CityGraph& city, const ShortestPathData& sp,
                            const TransitNetwork& net, const CostWeights& w);

// Same, reusing a precomputed route graph and assignment for the network.
CostBreakdown cost_from_assignment(const CityGraph& city, const ShortestPathData& sp,
                                   const TransitNetwork& net, const CostWeights& w,
                                   const RouteGraph& rg, const TransitAssignment& ta);

// Markov-reward variant: unserved demand rides a virtual trip of twice the largest
// street shortest-path time, and the constraint term drops the stop-bound component.
// Defined for any partial network, including an empty one.
double evaluate_reward_cost(const CityGraph& city, const ShortestPathData& sp,
                            const TransitNetwork& net, const CostWeights& w);

// Human-readable violations of the four network constraints: connects all demand
// pairs, has exactly S routes, respects stop bounds, and every route is a simple
// street path. Empty result means the network is feasible.
std::vector<std::string> validate_network(const CityGraph& city, const TransitNetwork& net,
                                          const CostWeights& w);

}  // namespace transit
