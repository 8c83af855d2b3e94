#pragma once

#include <cstdint>
#include <vector>

#include "transit/city.hpp"
#include "transit/costs.hpp"
#include "transit/shortest_paths.hpp"

namespace transit {

enum class AttachEnd { Tail, Head };

// One decision in the construction process. Extend carries a path in attachment
// order: its first node adjoins the route terminal named by attach_end (for the
// first path of a route the orientation is as stored and attach_end is Tail).
struct MdpAction {
  enum class Kind { Extend, Halt, Continue };

  Kind kind = Kind::Halt;
  std::vector<int> path;
  AttachEnd attach_end = AttachEnd::Tail;

  static MdpAction extend(std::vector<int> p, AttachEnd end) {
    MdpAction a;
    a.kind = Kind::Extend;
    a.path = std::move(p);
    a.attach_end = end;
    return a;
  }
  static MdpAction halt() { return MdpAction{Kind::Halt, {}, AttachEnd::Tail}; }
  static MdpAction cont() { return MdpAction{Kind::Continue, {}, AttachEnd::Tail}; }

  bool operator==(const MdpAction& o) const {
    if (kind != o.kind) return false;
    if (kind != Kind::Extend) return true;
    return attach_end == o.attach_end && path == o.path;
  }
};

struct MdpOptions {
  // When true and some positive-demand pair still lacks a trip: halting is dropped
  // wherever the route could instead be extended, and extensions that newly connect
  // demand displace all others whenever at least one exists.
  bool enforce_connectedness = false;
};

// Construction episode state. Value-like: copies evolve independently. city and sp
// must outlive the state. Odd timesteps extend the in-progress route, even timesteps
// decide halt-or-continue; the episode ends when the S-th route is finished.
struct MdpState {
  const CityGraph* city = nullptr;
  const ShortestPathData* sp = nullptr;
  CostWeights weights;
  TransitNetwork finished_routes;
  Route current_route;
  int t = 1;
  double reward_cost = 0.0;  // cached reward cost of finished_routes plus current_route

  bool done() const {
    return static_cast<int>(finished_routes.routes.size()) >= weights.num_routes;
  }
  bool extend_step() const { return t % 2 == 1; }
};

struct StepOutcome {
  MdpState next_state;
  double reward = 0.0;
  bool done = false;
};

MdpState mdp_reset(const CityGraph& city, const ShortestPathData& sp,
                   const CostWeights& weights);

// Legal actions for a live episode, in a fixed deterministic order. Odd steps with an
// empty route list every stored shortest path with 2..max_stops nodes, one per node
// pair. Odd steps with a route in progress list every path whose first node is a
// street neighbor of a terminal, that fits the stop budget and shares no node with
// the route; tail attachments come first, then head attachments (a single-stop route
// only has tail attachments). Even steps offer halt and/or continue per the stop
// bounds and extension availability.
std::vector<MdpAction> action_space(const MdpState& state, const MdpOptions& options = {});

// Applies one legal action. Rewards are the drop in reward cost, so they telescope to
// initial-minus-final over an episode; halt and continue earn exactly 0. Illegal
// actions raise TransitError naming the violated condition.
StepOutcome mdp_step(const MdpState& state, const MdpAction& action,
                     const MdpOptions& options = {});

// Same transition without the legality check; the action must come from
// action_space(state, options) of the same state. Rollout loops that already hold
// the action list use this to avoid rebuilding it.
StepOutcome mdp_step_unchecked(const MdpState& state, const MdpAction& action);

// Rollout policy: maps a state and its legal actions to a probability per action.
struct Policy {
  virtual ~Policy() = default;
  virtual std::vector<double> act(const MdpState& state,
                                  const std::vector<MdpAction>& actions) = 0;
};

// Equal probability on every legal action.
struct UniformRandomPolicy final : Policy {
  std::vector<double> act(const MdpState& state,
                          const std::vector<MdpAction>& actions) override;
};

enum class RolloutMode { Stochastic, Greedy };

struct TraceStep {
  int t = 0;
  MdpAction action;
  double reward = 0.0;
  int action_count = 0;  // size of the action space the choice was made from
  int chosen_index = 0;
};

struct RolloutResult {
  TransitNetwork network;
  std::vector<TraceStep> trace;
  double total_reward = 0.0;
};

// Runs one full episode. Stochastic mode samples from the policy's distribution with
// the given seed; greedy mode takes the highest-probability action (lowest index on
// ties) and is deterministic.
RolloutResult rollout(const CityGraph& city, const ShortestPathData& sp,
                      const CostWeights& weights, Policy& policy, RolloutMode mode,
                      const MdpOptions& options, uint64_t seed);

}  // namespace transit
