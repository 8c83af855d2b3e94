#include "transit/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <utility>

#include "transit/common.hpp"
#include "transit/mdp.hpp"
#include "transit/parallel.hpp"
#include "transit/shortest_paths.hpp"

namespace transit {

double sample_alpha(const AlphaSampler& sampler, Rng& rng) {
  if (sampler.fixed) return sampler.fixed_value;
  double u = rng.uniform();
  if (u < 1.0 / 3.0) return 0.0;
  if (u < 2.0 / 3.0) return 1.0;
  return rng.uniform_open();
}

StepTargets compute_returns_and_advantages(const std::vector<TraceSegment>& segments,
                                           double gamma, int horizon) {
  require(horizon >= 1, "horizon must be positive");
  StepTargets out;
  for (const TraceSegment& seg : segments) {
    require(seg.rewards.size() == seg.values.size(),
            "segment rewards and values must align");
    require(static_cast<int>(seg.rewards.size()) <= horizon,
            "segment longer than the horizon");
    size_t base = out.returns.size();
    out.returns.resize(base + seg.rewards.size());
    out.advantages.resize(base + seg.rewards.size());
    double g = seg.bootstrap_value;
    for (size_t k = seg.rewards.size(); k-- > 0;) {
      g = seg.rewards[k] + gamma * g;
      out.returns[base + k] = g;
      out.advantages[base + k] = g - seg.values[k];
    }
  }
  return out;
}

namespace {

void check_clip_inputs(const std::vector<double>& logp_new,
                       const std::vector<double>& logp_old,
                       const std::vector<double>& advantages, double eps) {
  require(!logp_new.empty(), "clip objective needs at least one sample");
  require(logp_old.size() == logp_new.size() && advantages.size() == logp_new.size(),
          "clip objective inputs must align");
  require(eps > 0.0, "clip threshold must be positive");
}

double finite_ratio(double lp_new, double lp_old) {
  double ratio = std::exp(lp_new - lp_old);
  require(std::isfinite(ratio), "non-finite probability ratio in clip objective");
  return ratio;
}

}  // namespace

double ppo_clip_objective(const std::vector<double>& logp_new,
                          const std::vector<double>& logp_old,
                          const std::vector<double>& advantages, double eps) {
  check_clip_inputs(logp_new, logp_old, advantages, eps);
  double sum = 0.0;
  for (size_t i = 0; i < logp_new.size(); ++i) {
    double ratio = finite_ratio(logp_new[i], logp_old[i]);
    double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
    sum += std::min(ratio * advantages[i], clipped * advantages[i]);
  }
  return sum / static_cast<double>(logp_new.size());
}

std::vector<double> ppo_clip_grad_seeds(const std::vector<double>& logp_new,
                                        const std::vector<double>& logp_old,
                                        const std::vector<double>& advantages,
                                        double eps) {
  check_clip_inputs(logp_new, logp_old, advantages, eps);
  double m = static_cast<double>(logp_new.size());
  std::vector<double> seeds(logp_new.size(), 0.0);
  for (size_t i = 0; i < logp_new.size(); ++i) {
    double ratio = finite_ratio(logp_new[i], logp_old[i]);
    double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
    double a = advantages[i];
    if (ratio * a <= clipped * a) seeds[i] = -ratio * a / m;
  }
  return seeds;
}

double value_loss(const ValueNet& net, const nn::Mat& inputs,
                  const std::vector<double>& targets) {
  require(inputs.rows() > 0, "value loss needs at least one sample");
  require(inputs.rows() == static_cast<Eigen::Index>(targets.size()),
          "value loss inputs and targets must align");
  ad::Tape tape;
  nn::ParamBinder bind(tape, net.params);
  ad::Var v = value_forward(tape, bind, tape.constant(inputs));
  const nn::Mat& vals = tape.val(v);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < vals.rows(); ++i) {
    double d = targets[static_cast<size_t>(i)] - vals(i, 0);
    sum += d * d;
  }
  return sum / static_cast<double>(vals.rows());
}

void save_value_net_file(const std::string& path, const ValueNet& net) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot open " + path + " for writing");
  nn::save_params(out, net.params);
  require(out.good(), "failed writing " + path);
}

void load_value_net_file(const std::string& path, ValueNet& net) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open " + path);
  nn::load_params(in, net.params);
}

namespace {

// Fixed salts for the independent random streams of one training run.
constexpr uint64_t kSaltSplit = 1;
constexpr uint64_t kSaltPolicyInit = 2;
constexpr uint64_t kSaltValueInit = 3;
constexpr uint64_t kSaltNormFit = 4;
constexpr uint64_t kSaltNormAlpha = 5;
constexpr uint64_t kSaltValAlpha = 6;
constexpr uint64_t kSaltValSeeds = 7;
constexpr uint64_t kSaltIteration = 1ull << 32;  // + iteration number

struct StreamEnv {
  CityGraph city;
  ShortestPathData sp;
  CostWeights weights;
};

// One recorded decision. state points into the owning stream's env.
struct StepRec {
  MdpState state;
  nn::Mat value_row;  // raw 1 x 18 value-head inputs
  int chosen = 0;
  double logp_old = 0.0;
  double reward = 0.0;
  double value = 0.0;
  double ret = 0.0;
  double adv = 0.0;
  bool forced = false;
  bool ends_episode = false;
};

struct StreamTrace {
  std::unique_ptr<StreamEnv> env;
  std::vector<StepRec> steps;
  std::vector<double> episode_rewards;  // totals of episodes completed in-window
  double partial_reward = 0.0;          // trailing unfinished episode
};

int sample_index(const std::vector<double>& probs, Rng& rng) {
  double u = rng.uniform();
  double acc = 0.0;
  for (size_t k = 0; k < probs.size(); ++k) {
    acc += probs[k];
    if (u < acc) return static_cast<int>(k);
  }
  return static_cast<int>(probs.size()) - 1;
}

// policy_probs batches must share one node count; regroup arbitrary requests.
std::vector<std::vector<double>> grouped_policy_probs(
    const PolicyNet& net, const std::vector<const DecisionInput*>& batch) {
  std::map<int, std::vector<size_t>> by_n;
  for (size_t k = 0; k < batch.size(); ++k) by_n[batch[k]->n].push_back(k);
  std::vector<std::vector<double>> out(batch.size());
  for (const auto& [n, ids] : by_n) {
    std::vector<const DecisionInput*> sub;
    sub.reserve(ids.size());
    for (size_t id : ids) sub.push_back(batch[id]);
    std::vector<std::vector<double>> res = policy_probs(net, sub);
    for (size_t i = 0; i < ids.size(); ++i) out[ids[i]] = std::move(res[i]);
  }
  return out;
}

std::vector<double> value_batch(const ValueNet& net, const NormStats& norm,
                                const nn::Mat& raw_rows) {
  ad::Tape tape;
  nn::ParamBinder bind(tape, net.params);
  ad::Var v = value_forward(tape, bind, tape.constant(norm.apply_value(raw_rows)));
  const nn::Mat& vals = tape.val(v);
  std::vector<double> out(static_cast<size_t>(vals.rows()));
  for (Eigen::Index i = 0; i < vals.rows(); ++i) out[static_cast<size_t>(i)] = vals(i, 0);
  return out;
}

CostWeights base_weights(const TrainConfig& cfg) {
  CostWeights w;
  w.beta = cfg.beta;
  w.transfer_penalty = cfg.transfer_penalty;
  w.num_routes = cfg.num_routes;
  w.min_stops = cfg.min_stops;
  w.max_stops = cfg.max_stops;
  return w;
}

std::vector<int> sample_batch(const std::vector<int>& train_idx, int batch, Rng& rng) {
  int n = static_cast<int>(train_idx.size());
  std::vector<int> out;
  out.reserve(static_cast<size_t>(batch));
  if (batch <= n) {
    std::vector<int> pool = train_idx;
    for (int k = 0; k < batch; ++k) {
      int j = k + rng.index(static_cast<size_t>(n - k));
      std::swap(pool[static_cast<size_t>(k)], pool[static_cast<size_t>(j)]);
      out.push_back(pool[static_cast<size_t>(k)]);
    }
  } else {
    for (int k = 0; k < batch; ++k)
      out.push_back(train_idx[static_cast<size_t>(rng.index(static_cast<size_t>(n)))]);
  }
  return out;
}

struct Prep {
  std::vector<MdpAction> actions;
  DecisionInput input;  // filled only when actions.size() > 1
  nn::Mat value_row;
};

// Rolls every stream for exactly horizon steps, restarting finished episodes with
// the same city and alpha, and records the per-step targets.
void collect_iteration(const PolicyNet& policy, const ValueNet& value,
                       std::vector<StreamTrace>& streams, const TrainConfig& cfg,
                       unsigned workers, Rng& iter_rng) {
  size_t b_count = streams.size();
  std::vector<MdpState> cur;
  cur.reserve(b_count);
  std::vector<Rng> rngs;
  rngs.reserve(b_count);
  for (StreamTrace& s : streams) {
    cur.push_back(mdp_reset(s.env->city, s.env->sp, s.env->weights));
    rngs.emplace_back(iter_rng.raw());
    s.steps.reserve(static_cast<size_t>(cfg.horizon));
  }

  std::vector<Prep> prep(b_count);
  for (int step = 0; step < cfg.horizon; ++step) {
    parallel_for(b_count, workers, [&](size_t b, unsigned) {
      prep[b].actions = action_space(cur[b]);
      FeatureBundle fb = compute_features(cur[b]);
      prep[b].value_row = value_features_from(cur[b], fb);
      if (prep[b].actions.size() > 1)
        prep[b].input = prepare_decision(policy, cur[b], prep[b].actions, fb);
    });

    std::vector<const DecisionInput*> batch;
    std::vector<size_t> batch_stream;
    for (size_t b = 0; b < b_count; ++b) {
      if (prep[b].actions.size() > 1) {
        batch.push_back(&prep[b].input);
        batch_stream.push_back(b);
      }
    }
    std::vector<std::vector<double>> probs;
    if (!batch.empty()) probs = grouped_policy_probs(policy, batch);

    nn::Mat vraw(static_cast<Eigen::Index>(b_count), 18);
    for (size_t b = 0; b < b_count; ++b) vraw.row(static_cast<Eigen::Index>(b)) = prep[b].value_row;
    std::vector<double> vs = value_batch(value, policy.norm, vraw);

    size_t bi = 0;
    for (size_t b = 0; b < b_count; ++b) {
      int idx = 0;
      double logp = 0.0;
      if (prep[b].actions.size() > 1) {
        const std::vector<double>& p = probs[bi++];
        idx = sample_index(p, rngs[b]);
        logp = std::log(p[static_cast<size_t>(idx)]);
      }
      StepOutcome out = mdp_step_unchecked(cur[b], prep[b].actions[static_cast<size_t>(idx)]);
      StepRec rec;
      rec.state = std::move(cur[b]);
      rec.value_row = std::move(prep[b].value_row);
      rec.chosen = idx;
      rec.logp_old = logp;
      rec.reward = out.reward;
      rec.value = vs[b];
      rec.forced = prep[b].actions.size() == 1;
      rec.ends_episode = out.done;
      streams[b].steps.push_back(std::move(rec));
      streams[b].partial_reward += out.reward;
      if (out.done) {
        streams[b].episode_rewards.push_back(streams[b].partial_reward);
        streams[b].partial_reward = 0.0;
        cur[b] = mdp_reset(streams[b].env->city, streams[b].env->sp, streams[b].env->weights);
      } else {
        cur[b] = std::move(out.next_state);
      }
    }
  }

  // Horizon-cut streams bootstrap from the value of the first unrecorded state.
  std::vector<size_t> open;
  for (size_t b = 0; b < b_count; ++b)
    if (!streams[b].steps.back().ends_episode) open.push_back(b);
  std::vector<double> boot(b_count, 0.0);
  if (!open.empty()) {
    nn::Mat rows(static_cast<Eigen::Index>(open.size()), 18);
    parallel_for(open.size(), workers, [&](size_t k, unsigned) {
      rows.row(static_cast<Eigen::Index>(k)) = value_features(cur[open[k]]);
    });
    std::vector<double> vb = value_batch(value, policy.norm, rows);
    for (size_t k = 0; k < open.size(); ++k) boot[open[k]] = vb[k];
  }

  for (size_t b = 0; b < b_count; ++b) {
    StreamTrace& s = streams[b];
    std::vector<TraceSegment> segments;
    TraceSegment seg;
    for (const StepRec& rec : s.steps) {
      seg.rewards.push_back(rec.reward);
      seg.values.push_back(rec.value);
      if (rec.ends_episode) {
        segments.push_back(std::move(seg));
        seg = TraceSegment{};
      }
    }
    if (!seg.rewards.empty()) {
      seg.bootstrap_value = boot[b];
      segments.push_back(std::move(seg));
    }
    StepTargets targets = compute_returns_and_advantages(segments, cfg.gamma, cfg.horizon);
    for (size_t k = 0; k < s.steps.size(); ++k) {
      s.steps[k].ret = targets.returns[k];
      s.steps[k].adv = targets.advantages[k];
    }
  }
}

struct ValCity {
  const CityGraph* city = nullptr;
  ShortestPathData sp;
  CostWeights weights;
  uint64_t seed = 0;
};

// Mean total network cost of one stochastic rollout per validation city.
double validation_cost(const PolicyNet& policy, std::vector<ValCity>& vals,
                       unsigned workers) {
  std::map<int, std::vector<size_t>> by_n;
  for (size_t k = 0; k < vals.size(); ++k) by_n[vals[k].city->n].push_back(k);

  std::vector<double> costs(vals.size(), 0.0);
  for (const auto& [n, ids] : by_n) {
    size_t live_count = ids.size();
    std::vector<MdpState> cur;
    cur.reserve(ids.size());
    std::vector<Rng> rngs;
    rngs.reserve(ids.size());
    std::vector<bool> live(ids.size(), true);
    for (size_t k : ids) {
      cur.push_back(mdp_reset(*vals[k].city, vals[k].sp, vals[k].weights));
      rngs.emplace_back(vals[k].seed);
    }
    std::vector<Prep> prep(ids.size());
    while (live_count > 0) {
      parallel_for(ids.size(), workers, [&](size_t k, unsigned) {
        if (!live[k]) return;
        prep[k].actions = action_space(cur[k]);
        if (prep[k].actions.size() > 1)
          prep[k].input = prepare_decision(policy, cur[k], prep[k].actions);
      });
      std::vector<const DecisionInput*> batch;
      std::vector<size_t> batch_of;
      for (size_t k = 0; k < ids.size(); ++k) {
        if (live[k] && prep[k].actions.size() > 1) {
          batch.push_back(&prep[k].input);
          batch_of.push_back(k);
        }
      }
      std::vector<std::vector<double>> probs;
      if (!batch.empty()) probs = grouped_policy_probs(policy, batch);
      size_t bi = 0;
      for (size_t k = 0; k < ids.size(); ++k) {
        if (!live[k]) continue;
        int idx = 0;
        if (prep[k].actions.size() > 1) {
          const std::vector<double>& p = probs[bi++];
          idx = sample_index(p, rngs[k]);
        }
        StepOutcome out = mdp_step_unchecked(cur[k], prep[k].actions[static_cast<size_t>(idx)]);
        cur[k] = std::move(out.next_state);
        if (out.done) {
          live[k] = false;
          --live_count;
          size_t v = ids[k];
          costs[v] = evaluate_cost(*vals[v].city, vals[v].sp, cur[k].finished_routes,
                                   vals[v].weights)
                         .total;
        }
      }
    }
  }
  double sum = 0.0;
  for (double c : costs) sum += c;
  return sum / static_cast<double>(costs.size());
}

std::string ckpt_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

void write_checkpoint(const std::string& dir, const std::string& stem,
                      const PolicyNet& policy, const ValueNet& value) {
  save_policy_file(ckpt_path(dir, stem + ".policy"), policy);
  save_value_net_file(ckpt_path(dir, stem + ".value"), value);
}

}  // namespace

TrainResult train(const std::vector<CityGraph>& dataset, const TrainConfig& cfg) {
  require(!dataset.empty(), "training needs at least one city");
  require(cfg.iterations >= 0, "iterations must be non-negative");
  require(cfg.batch_size >= 1 && cfg.horizon >= 1 && cfg.epochs_per_batch >= 1,
          "batch, horizon, and epochs must be positive");
  require(cfg.gamma > 0.0 && cfg.gamma <= 1.0, "gamma must lie in (0, 1]");
  require(cfg.clip_eps > 0.0, "clip threshold must be positive");
  require(cfg.policy_lr > 0.0 && cfg.value_lr > 0.0, "learning rates must be positive");
  require(cfg.minibatch_size >= 1, "minibatch size must be positive");
  require(cfg.num_routes >= 1, "route count must be positive");
  require(cfg.min_stops >= 2 && cfg.min_stops <= cfg.max_stops,
          "stop bounds must satisfy 2 <= min <= max");
  require(cfg.validate_every >= 1, "validation period must be positive");
  require(cfg.norm_fit_cities >= 1, "normalization needs at least one city");
  require(cfg.update_chunk >= 1, "update chunk must be positive");

  unsigned workers = cfg.workers == 0 ? default_workers() : cfg.workers;

  TrainResult result{PolicyNet(cfg.policy_cfg), ValueNet(), TrainReport{}};
  PolicyNet& policy = result.policy;
  ValueNet& value = result.value;
  TrainReport& report = result.report;
  policy.init(Rng(cfg.seed, kSaltPolicyInit).raw());
  value.init(Rng(cfg.seed, kSaltValueInit).raw());
  if (cfg.iterations == 0) return result;

  // 90/10 train/validation split; a degenerate dataset reuses its only city.
  std::vector<int> order(dataset.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  {
    Rng split_rng(cfg.seed, kSaltSplit);
    split_rng.shuffle(order);
  }
  int val_count = std::max(1, static_cast<int>(dataset.size()) / 10);
  int train_count = static_cast<int>(dataset.size()) - val_count;
  std::vector<int> train_idx, val_idx;
  if (train_count <= 0) {
    train_idx = order;
    val_idx = order;
  } else {
    train_idx.assign(order.begin(), order.begin() + train_count);
    val_idx.assign(order.begin() + train_count, order.end());
  }

  // Input scalers from self-play over a training-side sample.
  {
    int fit_n = std::min(cfg.norm_fit_cities, static_cast<int>(train_idx.size()));
    std::vector<ShortestPathData> fit_sps(static_cast<size_t>(fit_n));
    parallel_for(static_cast<size_t>(fit_n), workers, [&](size_t i, unsigned) {
      fit_sps[i] = all_pairs_shortest_paths(dataset[static_cast<size_t>(train_idx[i])]);
    });
    std::vector<const CityGraph*> fit_cities;
    std::vector<const ShortestPathData*> fit_sp_ptrs;
    std::vector<CostWeights> fit_weights;
    Rng alpha_rng(cfg.seed, kSaltNormAlpha);
    for (int i = 0; i < fit_n; ++i) {
      fit_cities.push_back(&dataset[static_cast<size_t>(train_idx[static_cast<size_t>(i)])]);
      fit_sp_ptrs.push_back(&fit_sps[static_cast<size_t>(i)]);
      CostWeights w = base_weights(cfg);
      w.alpha = sample_alpha(cfg.alpha_sampler, alpha_rng);
      fit_weights.push_back(w);
    }
    fit_normalization(policy, fit_cities, fit_sp_ptrs, fit_weights, 1,
                      Rng(cfg.seed, kSaltNormFit).raw());
  }

  // Validation environments: fixed alpha and rollout seed per city, so checkpoint
  // costs are paired across training.
  std::vector<ValCity> vals(val_idx.size());
  {
    Rng alpha_rng(cfg.seed, kSaltValAlpha);
    Rng seed_rng(cfg.seed, kSaltValSeeds);
    for (size_t k = 0; k < val_idx.size(); ++k) {
      vals[k].city = &dataset[static_cast<size_t>(val_idx[k])];
      vals[k].weights = base_weights(cfg);
      vals[k].weights.alpha = sample_alpha(cfg.alpha_sampler, alpha_rng);
      vals[k].seed = seed_rng.raw();
    }
    parallel_for(vals.size(), workers, [&](size_t k, unsigned) {
      vals[k].sp = all_pairs_shortest_paths(*vals[k].city);
    });
  }

  bool snapshot = !cfg.checkpoint_dir.empty();
  if (snapshot) std::filesystem::create_directories(cfg.checkpoint_dir);
  std::ofstream ckpt_meta;
  if (snapshot) {
    ckpt_meta.open(ckpt_path(cfg.checkpoint_dir, "checkpoints.csv"));
    ckpt_meta << "iteration,validation_cost,policy_file,value_file\n";
  }
  std::ofstream curve;
  if (!cfg.curve_csv.empty()) {
    curve.open(cfg.curve_csv);
    require(curve.good(), "cannot open " + cfg.curve_csv + " for writing");
    curve << "iteration,mean_reward,validation_cost\n";
  }

  PolicyNet best_policy = policy;
  ValueNet best_value = value;

  auto abort_training = [&](const std::string& what) {
    if (snapshot) write_checkpoint(cfg.checkpoint_dir, "abort", policy, value);
    fail("training aborted: " + what +
         (snapshot ? " (abort snapshot written to " + cfg.checkpoint_dir + ")" : ""));
  };

  char buf[160];
  auto run_checkpoint = [&](int iter) {
    double cv = validation_cost(policy, vals, workers);
    if (!std::isfinite(cv))
      abort_training("non-finite validation cost at iteration " + std::to_string(iter));
    report.checkpoint_iteration.push_back(iter);
    report.validation_cost.push_back(cv);
    if (report.best_index < 0 || cv < report.best_validation_cost()) {
      report.best_index = static_cast<int>(report.validation_cost.size()) - 1;
      best_policy = policy;
      best_value = value;
    }
    if (snapshot) {
      std::string stem = "ckpt_" + std::to_string(iter);
      write_checkpoint(cfg.checkpoint_dir, stem, policy, value);
      std::snprintf(buf, sizeof(buf), "%d,%.17g,", iter, cv);
      ckpt_meta << buf << stem << ".policy," << stem << ".value\n";
      ckpt_meta.flush();
    }
    if (cfg.verbose) {
      std::fprintf(stderr, "[train] iter %d C_v %.6g%s\n", iter, cv,
                   report.best_index + 1 == static_cast<int>(report.validation_cost.size())
                       ? " (best)"
                       : "");
    }
    return cv;
  };

  double cv0 = run_checkpoint(0);
  if (curve.is_open()) {
    std::snprintf(buf, sizeof(buf), "0,,%.17g\n", cv0);
    curve << buf;
    curve.flush();
  }

  nn::AdamW policy_opt(cfg.policy_lr, cfg.policy_weight_decay, cfg.adam_beta1,
                       cfg.adam_beta2);
  nn::AdamW value_opt(cfg.value_lr, cfg.value_weight_decay, cfg.adam_beta1,
                      cfg.adam_beta2);
  policy_opt.attach(policy.params);
  value_opt.attach(value.params);

  for (int it = 1; it <= cfg.iterations; ++it) {
    Rng iter_rng(cfg.seed, kSaltIteration + static_cast<uint64_t>(it));
    std::vector<int> batch_idx = sample_batch(train_idx, cfg.batch_size, iter_rng);

    std::vector<StreamTrace> streams(batch_idx.size());
    for (size_t b = 0; b < batch_idx.size(); ++b) {
      uint64_t aug_seed = iter_rng.raw();
      double alpha = sample_alpha(cfg.alpha_sampler, iter_rng);
      streams[b].env = std::make_unique<StreamEnv>();
      streams[b].env->city =
          augment_city(dataset[static_cast<size_t>(batch_idx[b])], cfg.augment, aug_seed);
      streams[b].env->weights = base_weights(cfg);
      streams[b].env->weights.alpha = alpha;
    }
    parallel_for(streams.size(), workers, [&](size_t b, unsigned) {
      streams[b].env->sp = all_pairs_shortest_paths(streams[b].env->city);
    });

    collect_iteration(policy, value, streams, cfg, workers, iter_rng);

    double reward_sum = 0.0;
    int episode_count = 0;
    for (const StreamTrace& s : streams) {
      for (double r : s.episode_rewards) {
        reward_sum += r;
        ++episode_count;
      }
    }
    double mean_reward;
    if (episode_count > 0) {
      mean_reward = reward_sum / episode_count;
    } else {
      for (const StreamTrace& s : streams) reward_sum += s.partial_reward;
      mean_reward = reward_sum / static_cast<double>(streams.size());
    }
    report.mean_reward.push_back(mean_reward);

    std::vector<StepRec*> pool;
    for (StreamTrace& s : streams)
      for (StepRec& rec : s.steps) pool.push_back(&rec);

    for (int epoch = 0; epoch < cfg.epochs_per_batch; ++epoch) {
      std::vector<size_t> perm(pool.size());
      for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
      iter_rng.shuffle(perm);

      for (size_t mb_start = 0; mb_start < perm.size(); mb_start += static_cast<size_t>(cfg.minibatch_size)) {
        size_t mb_end = std::min(perm.size(), mb_start + static_cast<size_t>(cfg.minibatch_size));
        size_t m = mb_end - mb_start;
        std::vector<double> lp_new(m, 0.0), lp_old(m), adv(m), ret(m);
        std::vector<size_t> unforced;
        for (size_t r = 0; r < m; ++r) {
          const StepRec& rec = *pool[perm[mb_start + r]];
          lp_old[r] = rec.logp_old;
          adv[r] = rec.adv;
          ret[r] = rec.ret;
          if (!rec.forced) unforced.push_back(r);
        }
        // Chunks share one node count so the batched forward can stack them.
        std::stable_sort(unforced.begin(), unforced.end(), [&](size_t a, size_t b) {
          return pool[perm[mb_start + a]]->state.city->n <
                 pool[perm[mb_start + b]]->state.city->n;
        });

        std::vector<nn::Mat> grads = nn::zero_grads(policy.params);
        size_t c = 0;
        while (c < unforced.size()) {
          size_t c_end = std::min(unforced.size(), c + static_cast<size_t>(cfg.update_chunk));
          int chunk_n = pool[perm[mb_start + unforced[c]]]->state.city->n;
          while (c_end > c + 1 &&
                 pool[perm[mb_start + unforced[c_end - 1]]]->state.city->n != chunk_n)
            --c_end;
          size_t clen = c_end - c;

          std::vector<DecisionInput> inputs(clen);
          std::vector<int> chosen(clen);
          parallel_for(clen, workers, [&](size_t k, unsigned) {
            const StepRec& rec = *pool[perm[mb_start + unforced[c + k]]];
            std::vector<MdpAction> actions = action_space(rec.state);
            inputs[k] = prepare_decision(policy, rec.state, actions);
            chosen[k] = rec.chosen;
          });
          std::vector<const DecisionInput*> ptrs(clen);
          for (size_t k = 0; k < clen; ++k) ptrs[k] = &inputs[k];

          ad::Tape tape;
          nn::ParamBinder bind(tape, policy.params);
          ad::Var lp = policy_logprobs(tape, bind, cfg.policy_cfg, ptrs, chosen);
          const nn::Mat& lpv = tape.val(lp);
          nn::Mat seed(static_cast<Eigen::Index>(clen), 1);
          for (size_t k = 0; k < clen; ++k) {
            size_t r = unforced[c + k];
            lp_new[r] = lpv(static_cast<Eigen::Index>(k), 0);
            double ratio = std::exp(lp_new[r] - lp_old[r]);
            if (!std::isfinite(ratio))
              abort_training("non-finite probability ratio at iteration " +
                             std::to_string(it));
            double clipped = std::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
            seed(static_cast<Eigen::Index>(k), 0) =
                ratio * adv[r] <= clipped * adv[r]
                    ? -ratio * adv[r] / static_cast<double>(m)
                    : 0.0;
          }
          tape.backward(lp, seed);
          bind.accumulate_grads(grads);
          c = c_end;
        }

        double objective = ppo_clip_objective(lp_new, lp_old, adv, cfg.clip_eps);
        if (!std::isfinite(objective))
          abort_training("non-finite clip objective at iteration " + std::to_string(it));
        policy_opt.update(policy.params, grads);

        nn::Mat vraw(static_cast<Eigen::Index>(m), 18);
        for (size_t r = 0; r < m; ++r)
          vraw.row(static_cast<Eigen::Index>(r)) = pool[perm[mb_start + r]]->value_row;
        ad::Tape vtape;
        nn::ParamBinder vbind(vtape, value.params);
        ad::Var vhat = value_forward(vtape, vbind, vtape.constant(policy.norm.apply_value(vraw)));
        const nn::Mat& vv = vtape.val(vhat);
        double vloss = 0.0;
        nn::Mat vseed(static_cast<Eigen::Index>(m), 1);
        for (size_t r = 0; r < m; ++r) {
          double d = vv(static_cast<Eigen::Index>(r), 0) - ret[r];
          vloss += d * d;
          vseed(static_cast<Eigen::Index>(r), 0) = 2.0 * d / static_cast<double>(m);
        }
        vloss /= static_cast<double>(m);
        if (!std::isfinite(vloss))
          abort_training("non-finite value loss at iteration " + std::to_string(it));
        vtape.backward(vhat, vseed);
        std::vector<nn::Mat> vgrads = nn::zero_grads(value.params);
        vbind.accumulate_grads(vgrads);
        value_opt.update(value.params, vgrads);
      }
    }

    double cv = std::numeric_limits<double>::quiet_NaN();
    bool at_checkpoint = it % cfg.validate_every == 0 || it == cfg.iterations;
    if (at_checkpoint) cv = run_checkpoint(it);

    if (curve.is_open()) {
      if (at_checkpoint)
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g\n", it, mean_reward, cv);
      else
        std::snprintf(buf, sizeof(buf), "%d,%.17g,\n", it, mean_reward);
      curve << buf;
      curve.flush();
    }
    if (cfg.verbose) {
      std::fprintf(stderr, "[train] iter %d/%d mean_reward %.6g steps %zu\n", it,
                   cfg.iterations, mean_reward, pool.size());
    }
  }

  policy = best_policy;
  value = best_value;
  if (snapshot) write_checkpoint(cfg.checkpoint_dir, "best", policy, value);
  return result;
}

}  // namespace transit
