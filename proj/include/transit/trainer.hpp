#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "transit/citygen.hpp"
#include "transit/costs.hpp"
#include "transit/nn.hpp"
#include "transit/policy.hpp"
#include "transit/rng.hpp"

namespace transit {

// Episode cost-weight draw: one third exactly 0, one third exactly 1, one third
// uniform in (0, 1). fixed pins every draw to fixed_value.
struct AlphaSampler {
  bool fixed = false;
  double fixed_value = 1.0;
};

double sample_alpha(const AlphaSampler& sampler, Rng& rng);

struct TrainConfig {
  int iterations = 200;
  int batch_size = 256;      // cities rolled out per iteration
  int horizon = 120;         // steps recorded per (city, alpha) stream
  int epochs_per_batch = 1;  // update passes over each iteration's step pool
  double gamma = 0.95;
  double clip_eps = 0.2;
  double policy_lr = 0.0016;
  double policy_weight_decay = 8.4e-4;
  double value_lr = 5e-4;
  double value_weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  int minibatch_size = 1024;  // transitions per optimizer step
  double beta = 5.0;          // constraint weight of the cost function
  int num_routes = 10;
  int min_stops = 2;
  int max_stops = 12;
  double transfer_penalty = 300.0;
  AlphaSampler alpha_sampler;
  AugmentConfig augment{0.3, 0.3, 0.5};
  PolicyConfig policy_cfg;
  int validate_every = 10;    // iterations between validation passes
  int norm_fit_cities = 256;  // cap on cities streamed when fitting input scalers
  int update_chunk = 32;      // decision states rebuilt per tape during updates
  unsigned workers = 0;       // rollout threads; 0 picks hardware concurrency
  uint64_t seed = 0;
  bool verbose = false;        // per-iteration progress lines on stderr
  std::string curve_csv;       // when set, per-iteration curve rows land here
  std::string checkpoint_dir;  // when set, checkpoints and abort snapshots land here
};

// One uninterrupted run of recorded steps from a single episode. values[k] is the
// collection-time estimate V(s_k); bootstrap_value is V of the first state after
// the recorded window, zero when the episode terminated there.
struct TraceSegment {
  std::vector<double> rewards;
  std::vector<double> values;
  double bootstrap_value = 0.0;
};

// Per-step targets, flattened in segment order.
struct StepTargets {
  std::vector<double> returns;     // discounted reward sum plus discounted bootstrap
  std::vector<double> advantages;  // returns minus the recorded value estimates
};

// Exact discounted sums: within a segment, step k earns
// sum_j gamma^(j-k) * reward[j] + gamma^(len-k) * bootstrap_value. Segments must not
// exceed the horizon.
StepTargets compute_returns_and_advantages(const std::vector<TraceSegment>& segments,
                                           double gamma, int horizon);

// Mean over samples of min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A) with
// ratio = exp(logp_new - logp_old). Training maximizes this, so updates descend on
// its negation. Throws when any ratio is non-finite.
double ppo_clip_objective(const std::vector<double>& logp_new,
                          const std::vector<double>& logp_old,
                          const std::vector<double>& advantages, double eps);

// Per-sample derivative of the negated objective with respect to logp_new, already
// scaled by 1/M: rows where the unclipped term attains the min (ties included) get
// -ratio * A / M, rows pinned at a clip boundary get 0. Feeding these as the
// backward seed of the stacked log-probability column yields the full parameter
// gradient of the negated objective.
std::vector<double> ppo_clip_grad_seeds(const std::vector<double>& logp_new,
                                        const std::vector<double>& logp_old,
                                        const std::vector<double>& advantages,
                                        double eps);

// Mean squared error of the value head over normalized 18-channel input rows.
double value_loss(const ValueNet& net, const nn::Mat& inputs,
                  const std::vector<double>& targets);

struct TrainReport {
  std::vector<double> mean_reward;        // per iteration, completed-episode mean
  std::vector<int> checkpoint_iteration;  // validation points, starting at 0
  std::vector<double> validation_cost;    // C_v aligned with checkpoint_iteration
  int best_index = -1;                    // checkpoint with the lowest C_v

  int best_iteration() const {
    return best_index < 0 ? -1 : checkpoint_iteration[static_cast<size_t>(best_index)];
  }
  double best_validation_cost() const {
    return best_index < 0 ? std::numeric_limits<double>::quiet_NaN()
                          : validation_cost[static_cast<size_t>(best_index)];
  }
};

struct TrainResult {
  PolicyNet policy;  // parameters of the lowest-C_v checkpoint, input scalers included
  ValueNet value;
  TrainReport report;
};

// Clipped policy-gradient training over a city dataset. The dataset is split 90/10
// into train/validation; input scalers are fitted from self-play on the training
// side. Each iteration samples a batch of training cities, augments them, draws one
// alpha per city, and rolls each out for horizon steps (finished episodes restart
// with the same city and alpha); the policy then takes minibatch updates on the
// clipped objective and the value net on squared error against the bootstrapped
// returns. Validation cost C_v is the mean total network cost of one stochastic
// rollout per validation city, measured before training, every validate_every
// iterations, and at the final iteration; the returned nets carry the parameters of
// the lowest-C_v checkpoint. Runs are deterministic for a fixed config. Non-finite
// losses abort with TransitError after writing an abort snapshot to checkpoint_dir
// (when set). With iterations == 0 the freshly initialized nets return untouched and
// the report is empty.
TrainResult train(const std::vector<CityGraph>& dataset, const TrainConfig& cfg);

// Value-net checkpoint files; loading restores tensors bit for bit.
void save_value_net_file(const std::string& path, const ValueNet& net);
void load_value_net_file(const std::string& path, ValueNet& net);

}  // namespace transit
