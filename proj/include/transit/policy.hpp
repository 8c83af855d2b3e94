#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "transit/autodiff.hpp"
#include "transit/costs.hpp"
#include "transit/mdp.hpp"
#include "transit/nn.hpp"
#include "transit/rng.hpp"

namespace transit {

// Raw (unnormalized) network inputs for one decision state.
struct FeatureBundle {
  int n = 0;
  nn::Mat X;  // n x 4 node features: x, y, in-degree, out-degree
  nn::Mat E;  // n^2 x 13 pair features, row i*n + j
  nn::Mat s;  // 1 x 7 global summary
};

// Column meanings of E. Boolean channels (street, linked, direct, one-transfer,
// two-transfers, self) bypass normalization.
enum EdgeChannel : int {
  kEdgeDemand = 0,
  kEdgeStreet = 1,
  kEdgeStreetTime = 2,
  kEdgeLinked = 3,
  kEdgeDirect = 4,
  kEdgeOneTransfer = 5,
  kEdgeTwoTransfers = 6,
  kEdgeSelf = 7,
  kEdgeTransitTime = 8,
  kEdgeDirectTime = 9,
  kEdgeShortestTime = 10,
  kEdgeAlpha = 11,
  kEdgeAlphaBar = 12,
};

inline bool edge_channel_is_boolean(int c) {
  return c == kEdgeStreet || c == kEdgeLinked || c == kEdgeDirect ||
         c == kEdgeOneTransfer || c == kEdgeTwoTransfers || c == kEdgeSelf;
}

// Pair channels describe the routes built so far plus the in-progress route; the
// transfer-class channels come from the transit assignment of that partial network
// and are zero on the diagonal. Global channels: passenger cost, operator cost,
// routes finished, routes left, unconnected demand-pair fraction, alpha, 1 - alpha.
FeatureBundle compute_features(const MdpState& state);

// Inputs of the state-value head: mean node features (4), total demand, mean and
// std of the demand entries, mean and std of the street shortest-path times, alpha,
// 1 - alpha, then the 7 global summary channels. 1 x 18, raw.
nn::Mat value_features(const MdpState& state);

// Same, reusing an already-computed feature bundle for the state.
nn::Mat value_features_from(const MdpState& state, const FeatureBundle& fb);

// Per-channel affine normalization (x - mu) / sigma. Defaults are the identity, so
// an unfitted network still runs end to end.
struct NormStats {
  nn::Mat x_mu, x_sigma;  // 1 x 4
  nn::Mat e_mu, e_sigma;  // 1 x 13; boolean channels stay at (0, 1)
  nn::Mat s_mu, s_sigma;  // 1 x 7
  double pair_mu = 0.0, pair_sigma = 1.0;    // pair-score time inputs
  double route_mu = 0.0, route_sigma = 1.0;  // route and candidate drive times
  nn::Mat v_mu, v_sigma;  // 1 x 11 value-head scalars; its tail reuses s stats
  bool fitted = false;
  std::vector<std::string> warnings;  // zero-variance channels found while fitting

  NormStats();

  nn::Mat apply_x(const nn::Mat& raw) const;
  nn::Mat apply_e(const nn::Mat& raw) const;
  nn::Mat apply_s(const nn::Mat& raw) const;
  double apply_pair_time(double t) const;
  double apply_route_time(double t) const;
  nn::Mat apply_value(const nn::Mat& raw) const;  // 1 x 18
};

void save_norm_stats(std::ostream& out, const NormStats& norm);
void load_norm_stats(std::istream& in, NormStats& norm);

struct PolicyConfig {
  int layers = 5;
  int heads = 4;
  int head_dim = 16;
  int node_feat = 4;
  int edge_feat = 13;
  int global_feat = 7;
  double leak = 0.2;  // attention nonlinearity slope

  int embed() const { return heads * head_dim; }
};

// Graph-attention policy over construction states: a shared node-embedding
// backbone, a halt head for even steps and a pair-score extension head for odd
// steps. Parameters live in a flat named store; norm holds the input scalers.
struct PolicyNet {
  PolicyConfig cfg;
  nn::ParamStore params;
  NormStats norm;

  explicit PolicyNet(PolicyConfig cfg = {});
  void init(uint64_t seed);  // seeded uniform fill of every tensor
};

// Separate small state-value head used by the trainer.
struct ValueNet {
  nn::ParamStore params;

  ValueNet();
  void init(uint64_t seed);
};

// One decision point reduced to normalized network inputs. Produced from a live
// state and its legal actions; batched forwards consume several at once.
struct DecisionInput {
  int n = 0;
  bool extend = false;
  nn::Mat X, E, s;  // normalized

  // Halt-or-continue inputs.
  int first = -1, last = -1;  // route endpoints; -1 selects the learned placeholder
  double route_time = 0.0;    // normalized drive time of the in-progress route
  bool halt_in_front = true;  // actions[0] is Halt
  int action_count = 1;

  // Extension inputs. Table rows cover all n^2 ordered pairs with shortest-path
  // times; bridge rows add route-to-candidate pairs with composite times.
  nn::Mat pair_time;  // n^2 x 1, normalized
  std::vector<double> bridge_time;
  std::vector<int> bridge_i, bridge_j;
  std::vector<std::vector<int>> cand_table_rows;   // per candidate, ids i*n + j
  std::vector<std::vector<int>> cand_bridge_rows;  // per candidate, bridge row ids
  std::vector<double> cand_time;                   // normalized candidate drive times
};

DecisionInput prepare_decision(const PolicyNet& net, const MdpState& state,
                               const std::vector<MdpAction>& actions);

// Same, reusing an already-computed raw feature bundle for the state.
DecisionInput prepare_decision(const PolicyNet& net, const MdpState& state,
                               const std::vector<MdpAction>& actions,
                               const FeatureBundle& fb);

// Node embeddings for one state from raw features; rows follow node ids.
nn::Mat backbone_forward(const PolicyNet& net, const FeatureBundle& raw);

// Differentiable batched forward. All inputs must share n; parities may mix. Returns
// a B x 1 column of log-probabilities of the chosen action indices. States with a
// single legal action contribute an exact 0 row and no gradient.
ad::Var policy_logprobs(ad::Tape& tape, nn::ParamBinder& bind, const PolicyConfig& cfg,
                        const std::vector<const DecisionInput*>& inputs,
                        const std::vector<int>& chosen);

// Value-free forward: per-state probability over its action list.
std::vector<std::vector<double>> policy_probs(const PolicyNet& net,
                                              const std::vector<const DecisionInput*>& inputs);

// Probability of halting for a halt-or-continue state.
double halt_probability(const PolicyNet& net, const MdpState& state);

// Extension-head diagnostics: per-candidate pair-score priors, final scores, and
// the softmax distribution, aligned with the action list.
struct ExtensionScores {
  std::vector<double> prior;
  std::vector<double> final_score;
  std::vector<double> probs;
};

ExtensionScores extension_scores(const PolicyNet& net, const MdpState& state,
                                 const std::vector<MdpAction>& actions);

std::vector<double> extension_distribution(const PolicyNet& net, const MdpState& state,
                                           const std::vector<MdpAction>& actions);

struct ActResult {
  int index = 0;
  double log_prob = 0.0;
  std::vector<double> probs;
};

// Samples (or greedily picks) an action for the state. Single-action states skip
// the network and return probability 1 with log-probability 0.
ActResult act(const PolicyNet& net, const MdpState& state,
              const std::vector<MdpAction>& actions, RolloutMode mode, Rng& rng);

// Policy adapter for rollout(): forwards the network's action distribution.
struct NeuralPolicy final : Policy {
  const PolicyNet* net;

  explicit NeuralPolicy(const PolicyNet& n) : net(&n) {}
  std::vector<double> act(const MdpState& state,
                          const std::vector<MdpAction>& actions) override;
};

// Differentiable value head over normalized 18-channel inputs (B x 18 -> B x 1).
ad::Var value_forward(ad::Tape& tape, nn::ParamBinder& bind, ad::Var input);

double value_estimate(const ValueNet& net, const NormStats& norm, const MdpState& state);

// Streams raw features from stochastic self-play episodes (normalization bypassed)
// and fits per-channel statistics. weights[k] pairs with cities[k]/sps[k]. Boolean
// pair channels keep the identity transform; zero-variance channels get sigma
// floored at 1e-6 and a warning recorded on the result. Episode ep of city c draws
// its actions from Rng(seed, c * 1000003 + ep), so runs are replayable.
void fit_normalization(PolicyNet& net, const std::vector<const CityGraph*>& cities,
                       const std::vector<const ShortestPathData*>& sps,
                       const std::vector<CostWeights>& weights, int episodes_per_city,
                       uint64_t seed);

// Checkpoint: parameters plus normalization, restored bit for bit.
void save_policy(std::ostream& out, const PolicyNet& net);
void load_policy(std::istream& in, PolicyNet& net);
void save_policy_file(const std::string& path, const PolicyNet& net);
void load_policy_file(const std::string& path, PolicyNet& net);

}  // namespace transit
