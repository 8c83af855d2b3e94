#include "transit/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "transit/common.hpp"

namespace transit {

namespace {

using ad::Mat;
using ad::Tape;
using ad::Var;

}  // namespace

FeatureBundle compute_features(const MdpState& state) {
  require(state.city != nullptr && state.sp != nullptr, "state is not bound to a city");
  const CityGraph& city = *state.city;
  const ShortestPathData& sp = *state.sp;
  int n = city.n;

  TransitNetwork net = state.finished_routes;
  if (!state.current_route.empty()) net.routes.push_back(state.current_route);
  RouteGraph rg = build_route_graph(city, net);
  TransitAssignment ta = transit_assignment(rg, state.weights.transfer_penalty);
  CostBreakdown cb = cost_from_assignment(city, sp, net, state.weights, rg, ta);

  FeatureBundle fb;
  fb.n = n;
  fb.X = Mat::Zero(n, 4);
  for (int i = 0; i < n; ++i) {
    fb.X(i, 0) = city.pos[i][0];
    fb.X(i, 1) = city.pos[i][1];
    double deg = static_cast<double>(city.adj[i].size());
    fb.X(i, 2) = deg;
    fb.X(i, 3) = deg;
  }

  double alpha = state.weights.alpha;
  fb.E = Mat::Zero(static_cast<Eigen::Index>(n) * n, 13);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      Eigen::Index row = static_cast<Eigen::Index>(i) * n + j;
      fb.E(row, kEdgeDemand) = city.d(i, j);
      bool street = i != j && city.has_edge(i, j);
      fb.E(row, kEdgeStreet) = street ? 1.0 : 0.0;
      fb.E(row, kEdgeStreetTime) = street ? city.tau(i, j) : 0.0;
      if (i != j && ta.connected(i, j)) {
        int x = ta.x(i, j);
        fb.E(row, kEdgeLinked) = 1.0;
        fb.E(row, kEdgeDirect) = x == 0 ? 1.0 : 0.0;
        fb.E(row, kEdgeOneTransfer) = x == 1 ? 1.0 : 0.0;
        fb.E(row, kEdgeTwoTransfers) = x == 2 ? 1.0 : 0.0;
        fb.E(row, kEdgeTransitTime) = ta.t(i, j);
        fb.E(row, kEdgeDirectTime) = x == 0 ? rg.at(i, j) : 0.0;
      }
      fb.E(row, kEdgeSelf) = i == j ? 1.0 : 0.0;
      fb.E(row, kEdgeShortestTime) = sp.t(i, j);
      fb.E(row, kEdgeAlpha) = alpha;
      fb.E(row, kEdgeAlphaBar) = 1.0 - alpha;
    }
  }

  fb.s = Mat::Zero(1, 7);
  fb.s(0, 0) = cb.cp_minutes;
  fb.s(0, 1) = cb.co_minutes;
  double planned = static_cast<double>(state.finished_routes.routes.size());
  fb.s(0, 2) = planned;
  fb.s(0, 3) = static_cast<double>(state.weights.num_routes) - planned;
  fb.s(0, 4) = cb.f_un;
  fb.s(0, 5) = alpha;
  fb.s(0, 6) = 1.0 - alpha;
  return fb;
}

nn::Mat value_features_from(const MdpState& state, const FeatureBundle& fb) {
  const CityGraph& city = *state.city;
  const ShortestPathData& sp = *state.sp;
  int n = city.n;
  double nn2 = static_cast<double>(n) * n;

  Mat v = Mat::Zero(1, 18);
  for (int c = 0; c < 4; ++c) v(0, c) = fb.X.col(c).mean();

  double dsum = 0.0, dsq = 0.0;
  for (double d : city.demand) {
    dsum += d;
    dsq += d * d;
  }
  double dmean = dsum / nn2;
  v(0, 4) = dsum;
  v(0, 5) = dmean;
  v(0, 6) = std::sqrt(std::max(0.0, dsq / nn2 - dmean * dmean));

  double tsum = 0.0, tsq = 0.0;
  for (double t : sp.time) {
    tsum += t;
    tsq += t * t;
  }
  double tmean = tsum / nn2;
  v(0, 7) = tmean;
  v(0, 8) = std::sqrt(std::max(0.0, tsq / nn2 - tmean * tmean));

  v(0, 9) = state.weights.alpha;
  v(0, 10) = 1.0 - state.weights.alpha;
  v.block(0, 11, 1, 7) = fb.s;
  return v;
}

nn::Mat value_features(const MdpState& state) {
  return value_features_from(state, compute_features(state));
}

NormStats::NormStats() {
  x_mu = Mat::Zero(1, 4);
  x_sigma = Mat::Ones(1, 4);
  e_mu = Mat::Zero(1, 13);
  e_sigma = Mat::Ones(1, 13);
  s_mu = Mat::Zero(1, 7);
  s_sigma = Mat::Ones(1, 7);
  v_mu = Mat::Zero(1, 11);
  v_sigma = Mat::Ones(1, 11);
}

namespace {

Mat apply_channels(const Mat& raw, const Mat& mu, const Mat& sigma) {
  Mat out(raw.rows(), raw.cols());
  for (Eigen::Index j = 0; j < raw.cols(); ++j)
    out.col(j) = (raw.col(j).array() - mu(0, j)) / sigma(0, j);
  return out;
}

}  // namespace

nn::Mat NormStats::apply_x(const nn::Mat& raw) const {
  return apply_channels(raw, x_mu, x_sigma);
}

nn::Mat NormStats::apply_e(const nn::Mat& raw) const {
  return apply_channels(raw, e_mu, e_sigma);
}

nn::Mat NormStats::apply_s(const nn::Mat& raw) const {
  return apply_channels(raw, s_mu, s_sigma);
}

double NormStats::apply_pair_time(double t) const { return (t - pair_mu) / pair_sigma; }

double NormStats::apply_route_time(double t) const { return (t - route_mu) / route_sigma; }

nn::Mat NormStats::apply_value(const nn::Mat& raw) const {
  require(raw.cols() == 18, "value input must have 18 channels");
  Mat out(raw.rows(), 18);
  out.leftCols(11) = apply_channels(raw.leftCols(11), v_mu, v_sigma);
  out.rightCols(7) = apply_channels(raw.rightCols(7), s_mu, s_sigma);
  return out;
}

void save_norm_stats(std::ostream& out, const NormStats& norm) {
  nn::write_u32(out, 0x544e524d);  // "TNRM"
  nn::write_u32(out, 1);
  nn::write_mat(out, norm.x_mu);
  nn::write_mat(out, norm.x_sigma);
  nn::write_mat(out, norm.e_mu);
  nn::write_mat(out, norm.e_sigma);
  nn::write_mat(out, norm.s_mu);
  nn::write_mat(out, norm.s_sigma);
  nn::write_f64(out, norm.pair_mu);
  nn::write_f64(out, norm.pair_sigma);
  nn::write_f64(out, norm.route_mu);
  nn::write_f64(out, norm.route_sigma);
  nn::write_mat(out, norm.v_mu);
  nn::write_mat(out, norm.v_sigma);
  nn::write_u32(out, norm.fitted ? 1 : 0);
  nn::write_u32(out, static_cast<uint32_t>(norm.warnings.size()));
  for (const std::string& w : norm.warnings) {
    nn::write_u32(out, static_cast<uint32_t>(w.size()));
    out.write(w.data(), static_cast<std::streamsize>(w.size()));
  }
}

void load_norm_stats(std::istream& in, NormStats& norm) {
  if (nn::read_u32(in) != 0x544e524d) throw TransitError("not a normalization stream");
  if (nn::read_u32(in) != 1) throw TransitError("unsupported normalization version");
  nn::read_mat(in, norm.x_mu, "norm.x_mu");
  nn::read_mat(in, norm.x_sigma, "norm.x_sigma");
  nn::read_mat(in, norm.e_mu, "norm.e_mu");
  nn::read_mat(in, norm.e_sigma, "norm.e_sigma");
  nn::read_mat(in, norm.s_mu, "norm.s_mu");
  nn::read_mat(in, norm.s_sigma, "norm.s_sigma");
  norm.pair_mu = nn::read_f64(in);
  norm.pair_sigma = nn::read_f64(in);
  norm.route_mu = nn::read_f64(in);
  norm.route_sigma = nn::read_f64(in);
  nn::read_mat(in, norm.v_mu, "norm.v_mu");
  nn::read_mat(in, norm.v_sigma, "norm.v_sigma");
  norm.fitted = nn::read_u32(in) != 0;
  uint32_t wn = nn::read_u32(in);
  norm.warnings.clear();
  for (uint32_t i = 0; i < wn; ++i) {
    uint32_t len = nn::read_u32(in);
    std::string w(len, '\0');
    in.read(w.data(), len);
    if (!in) throw TransitError("normalization stream truncated");
    norm.warnings.push_back(std::move(w));
  }
}

PolicyNet::PolicyNet(PolicyConfig c) : cfg(c) {
  int embed = cfg.embed();
  for (int l = 0; l < cfg.layers; ++l) {
    int din = l == 0 ? cfg.node_feat : embed;
    std::string lp = "gat" + std::to_string(l);
    for (int h = 0; h < cfg.heads; ++h) {
      std::string hp = lp + ".h" + std::to_string(h);
      params.add(hp + ".wq", din, cfg.head_dim);
      params.add(hp + ".wk", din, cfg.head_dim);
      params.add(hp + ".we", cfg.edge_feat, cfg.head_dim);
      params.add(hp + ".b", 1, cfg.head_dim);
      params.add(hp + ".att", cfg.head_dim, 1);
    }
    params.add(lp + ".mix.w", embed, embed);
    params.add(lp + ".mix.b", 1, embed);
  }
  nn::add_mlp(params, "halt", {3 * embed + cfg.global_feat + 1, embed, embed, 1});
  params.add("halt.placeholder", 1, 2 * embed);
  nn::add_mlp(params, "ext1", {1 + 2 * embed + cfg.global_feat, embed, embed, 1});
  nn::add_mlp(params, "ext2", {cfg.global_feat + 2, 16, 16, 1});
}

void PolicyNet::init(uint64_t seed) {
  Rng rng(seed);
  nn::init_uniform(params, rng);
}

ValueNet::ValueNet() { nn::add_mlp(params, "value", {18, 36, 36, 1}); }

void ValueNet::init(uint64_t seed) {
  Rng rng(seed);
  nn::init_uniform(params, rng);
}

DecisionInput prepare_decision(const PolicyNet& net, const MdpState& state,
                               const std::vector<MdpAction>& actions) {
  return prepare_decision(net, state, actions, compute_features(state));
}

DecisionInput prepare_decision(const PolicyNet& net, const MdpState& state,
                               const std::vector<MdpAction>& actions,
                               const FeatureBundle& fb) {
  require(!actions.empty(), "decision needs at least one action");
  const CityGraph& city = *state.city;
  const ShortestPathData& sp = *state.sp;
  int n = fb.n;

  DecisionInput in;
  in.n = n;
  in.X = net.norm.apply_x(fb.X);
  in.E = net.norm.apply_e(fb.E);
  in.s = net.norm.apply_s(fb.s);
  in.extend = state.extend_step();
  in.action_count = static_cast<int>(actions.size());

  if (!in.extend) {
    in.halt_in_front = actions.front().kind == MdpAction::Kind::Halt;
    double tau_r = 0.0;
    if (!state.current_route.empty()) {
      in.first = state.current_route.front();
      in.last = state.current_route.back();
      tau_r = route_drive_time(city, state.current_route);
    }
    in.route_time = net.norm.apply_route_time(tau_r);
    return in;
  }

  in.pair_time = Mat(static_cast<Eigen::Index>(n) * n, 1);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      in.pair_time(static_cast<Eigen::Index>(i) * n + j, 0) =
          net.norm.apply_pair_time(sp.t(i, j));

  const Route& r = state.current_route;
  std::vector<double> along(r.size(), 0.0);  // drive time from r[0] to r[m]
  for (size_t m = 1; m < r.size(); ++m)
    along[m] = along[m - 1] + city.tau(r[m - 1], r[m]);

  for (const MdpAction& a : actions) {
    require(a.kind == MdpAction::Kind::Extend, "extension step expects extend actions");
    const std::vector<int>& path = a.path;
    std::vector<int> trows;
    trows.reserve(path.size() * (path.size() - 1));
    for (int u : path)
      for (int w : path)
        if (u != w) trows.push_back(u * n + w);
    in.cand_table_rows.push_back(std::move(trows));

    std::vector<int> brows;
    if (!r.empty()) {
      bool tail = a.attach_end == AttachEnd::Tail;
      int junction = tail ? r.back() : r.front();
      double hop = city.tau(junction, path.front());
      brows.reserve(r.size() * path.size());
      for (size_t m = 0; m < r.size(); ++m) {
        double on_route = tail ? along.back() - along[m] : along[m];
        for (int node : path) {
          brows.push_back(static_cast<int>(in.bridge_time.size()));
          in.bridge_time.push_back(
              net.norm.apply_pair_time(on_route + hop + sp.t(path.front(), node)));
          in.bridge_i.push_back(r[m]);
          in.bridge_j.push_back(node);
        }
      }
    }
    in.cand_bridge_rows.push_back(std::move(brows));
    in.cand_time.push_back(net.norm.apply_route_time(sp.t(path.front(), path.back())));
  }
  return in;
}

namespace {

Var backbone_batched(Tape& tape, nn::ParamBinder& bind, const PolicyConfig& cfg, Var x,
                     Var e, int n) {
  Var h = x;
  for (int l = 0; l < cfg.layers; ++l) {
    std::string lp = "gat" + std::to_string(l);
    std::vector<Var> heads;
    heads.reserve(cfg.heads);
    for (int hd = 0; hd < cfg.heads; ++hd) {
      std::string hp = lp + ".h" + std::to_string(hd);
      Var q = tape.matmul(h, bind(hp + ".wq"));
      Var k = tape.matmul(h, bind(hp + ".wk"));
      Var g = tape.matmul(e, bind(hp + ".we"));
      // Pair (i, j) scores its source j against target i plus the pair channel.
      Var zsum = tape.add(tape.add(tape.repeat_rows(q, n), tape.tile_rows_grouped(k, n, n)), g);
      Var z = tape.leaky_relu(tape.add_rowvec(zsum, bind(hp + ".b")), cfg.leak);
      Var scores = tape.matmul(z, bind(hp + ".att"));
      Var attn = tape.softmax_rows(tape.rows_to_matrix(scores, n));
      heads.push_back(tape.bmm_grouped(attn, k, n));
    }
    Var mixed = tape.matmul(tape.concat_cols(heads), bind(lp + ".mix.w"));
    h = tape.relu(tape.add_rowvec(mixed, bind(lp + ".mix.b")));
  }
  return h;
}

struct ForwardOut {
  std::vector<std::vector<double>> probs;
  std::vector<std::vector<double>> ext_prior;
  std::vector<std::vector<double>> ext_final;
  Var logp;  // B x 1, valid when chosen indices were supplied
};

ForwardOut forward_impl(Tape& tape, nn::ParamBinder& bind, const PolicyConfig& cfg,
                        const std::vector<const DecisionInput*>& inputs,
                        const std::vector<int>* chosen) {
  int b_count = static_cast<int>(inputs.size());
  require(b_count > 0, "empty forward batch");
  int n = inputs[0]->n;
  for (const DecisionInput* in : inputs)
    require(in->n == n, "forward batch mixes node counts");
  require(chosen == nullptr || static_cast<int>(chosen->size()) == b_count,
          "chosen indices must align with the batch");
  Eigen::Index nn2 = static_cast<Eigen::Index>(n) * n;

  Mat xs(static_cast<Eigen::Index>(b_count) * n, cfg.node_feat);
  Mat es(static_cast<Eigen::Index>(b_count) * nn2, cfg.edge_feat);
  for (int b = 0; b < b_count; ++b) {
    xs.middleRows(static_cast<Eigen::Index>(b) * n, n) = inputs[b]->X;
    es.middleRows(static_cast<Eigen::Index>(b) * nn2, nn2) = inputs[b]->E;
  }
  Var y = backbone_batched(tape, bind, cfg, tape.constant(std::move(xs)),
                           tape.constant(std::move(es)), n);

  std::vector<int> even_ids, ext_ids;
  for (int b = 0; b < b_count; ++b)
    (inputs[b]->extend ? ext_ids : even_ids).push_back(b);

  ForwardOut out;
  out.probs.resize(b_count);
  out.ext_prior.resize(b_count);
  out.ext_final.resize(b_count);
  std::vector<Var> logp_rows(b_count);

  if (!even_ids.empty()) {
    std::vector<Var> end_rows;
    std::vector<std::vector<int>> mean_groups;
    Mat srows(static_cast<Eigen::Index>(even_ids.size()), cfg.global_feat);
    Mat trows(static_cast<Eigen::Index>(even_ids.size()), 1);
    for (size_t e = 0; e < even_ids.size(); ++e) {
      const DecisionInput& in = *inputs[even_ids[e]];
      int base = even_ids[e] * n;
      if (in.first >= 0) {
        Var yf = tape.gather_rows(y, {base + in.first});
        Var yl = tape.gather_rows(y, {base + in.last});
        end_rows.push_back(tape.concat_cols({yf, yl}));
      } else {
        end_rows.push_back(bind("halt.placeholder"));
      }
      std::vector<int> rows(n);
      for (int i = 0; i < n; ++i) rows[i] = base + i;
      mean_groups.push_back(std::move(rows));
      srows.row(static_cast<Eigen::Index>(e)) = in.s.row(0);
      trows(static_cast<Eigen::Index>(e), 0) = in.route_time;
    }
    Var ends = tape.concat_rows(end_rows);
    Var mean = tape.scale(tape.aggregate_rows(y, std::move(mean_groups)), 1.0 / n);
    Var hin = tape.concat_cols(
        {ends, mean, tape.constant(std::move(srows)), tape.constant(std::move(trows))});
    Var z = nn::mlp_forward(tape, bind, "halt", 3, hin);
    Var p = tape.sigmoid(z);

    for (size_t e = 0; e < even_ids.size(); ++e) {
      int b = even_ids[e];
      const DecisionInput& in = *inputs[b];
      double ph = tape.val(p)(static_cast<Eigen::Index>(e), 0);
      if (in.action_count == 1) {
        out.probs[b] = {1.0};
        logp_rows[b] = tape.constant(Mat::Zero(1, 1));
      } else {
        out.probs[b] = in.halt_in_front ? std::vector<double>{ph, 1.0 - ph}
                                        : std::vector<double>{1.0 - ph, ph};
        if (chosen) {
          int c = (*chosen)[b];
          require(c >= 0 && c < 2, "chosen index out of range");
          bool halt_chosen = in.halt_in_front ? c == 0 : c == 1;
          // log sigmoid(z) = -softplus(-z); log(1 - sigmoid(z)) = -softplus(z).
          Var zb = tape.gather_rows(z, {static_cast<int>(e)});
          Var inner = halt_chosen ? tape.scale(zb, -1.0) : zb;
          logp_rows[b] = tape.scale(tape.softplus(inner), -1.0);
        }
      }
    }
  }

  if (!ext_ids.empty()) {
    Eigen::Index table_rows = static_cast<Eigen::Index>(ext_ids.size()) * nn2;
    Eigen::Index bridge_rows = 0;
    for (int b : ext_ids) bridge_rows += static_cast<Eigen::Index>(inputs[b]->bridge_time.size());
    Eigen::Index rows = table_rows + bridge_rows;

    Mat time_col(rows, 1);
    Mat srows(rows, cfg.global_feat);
    std::vector<int> yi(static_cast<size_t>(rows)), yj(static_cast<size_t>(rows));
    std::vector<Eigen::Index> bridge_base(ext_ids.size());
    Eigen::Index at = 0;
    for (size_t e = 0; e < ext_ids.size(); ++e) {
      const DecisionInput& in = *inputs[ext_ids[e]];
      int base = ext_ids[e] * n;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          time_col(at, 0) = in.pair_time(static_cast<Eigen::Index>(i) * n + j, 0);
          yi[static_cast<size_t>(at)] = base + i;
          yj[static_cast<size_t>(at)] = base + j;
          srows.row(at) = in.s.row(0);
          ++at;
        }
    }
    for (size_t e = 0; e < ext_ids.size(); ++e) {
      const DecisionInput& in = *inputs[ext_ids[e]];
      int base = ext_ids[e] * n;
      bridge_base[e] = at;
      for (size_t q = 0; q < in.bridge_time.size(); ++q) {
        time_col(at, 0) = in.bridge_time[q];
        yi[static_cast<size_t>(at)] = base + in.bridge_i[q];
        yj[static_cast<size_t>(at)] = base + in.bridge_j[q];
        srows.row(at) = in.s.row(0);
        ++at;
      }
    }

    Var in1 = tape.concat_cols({tape.constant(std::move(time_col)), tape.gather_rows(y, yi),
                                tape.gather_rows(y, yj), tape.constant(std::move(srows))});
    Var o = nn::mlp_forward(tape, bind, "ext1", 3, in1);

    std::vector<std::vector<int>> groups;
    std::vector<int> counts;
    counts.reserve(ext_ids.size());
    int total_cands = 0;
    for (int b : ext_ids) total_cands += static_cast<int>(inputs[b]->cand_table_rows.size());
    Mat s2(total_cands, cfg.global_feat);
    Mat tau2(total_cands, 1);
    groups.reserve(static_cast<size_t>(total_cands));
    std::vector<int> cand_base(ext_ids.size());
    int cand_at = 0;
    for (size_t e = 0; e < ext_ids.size(); ++e) {
      const DecisionInput& in = *inputs[ext_ids[e]];
      Eigen::Index tbase = static_cast<Eigen::Index>(e) * nn2;
      cand_base[e] = cand_at;
      int cands = static_cast<int>(in.cand_table_rows.size());
      counts.push_back(cands);
      for (int k = 0; k < cands; ++k) {
        std::vector<int> rows_k;
        rows_k.reserve(in.cand_table_rows[k].size() + in.cand_bridge_rows[k].size());
        for (int rid : in.cand_table_rows[k])
          rows_k.push_back(static_cast<int>(tbase) + rid);
        for (int rid : in.cand_bridge_rows[k])
          rows_k.push_back(static_cast<int>(bridge_base[e]) + rid);
        groups.push_back(std::move(rows_k));
        s2.row(cand_at) = in.s.row(0);
        tau2(cand_at, 0) = in.cand_time[static_cast<size_t>(k)];
        ++cand_at;
      }
    }

    Var prior = tape.aggregate_rows(o, std::move(groups));
    Var in2 = tape.concat_cols(
        {tape.constant(std::move(s2)), tape.constant(std::move(tau2)), prior});
    Var oh = nn::mlp_forward(tape, bind, "ext2", 3, in2);
    Var logsm = tape.log_softmax_grouped(oh, counts);

    for (size_t e = 0; e < ext_ids.size(); ++e) {
      int b = ext_ids[e];
      int cands = counts[e];
      std::vector<double>& probs = out.probs[b];
      probs.resize(static_cast<size_t>(cands));
      out.ext_prior[b].resize(static_cast<size_t>(cands));
      out.ext_final[b].resize(static_cast<size_t>(cands));
      for (int k = 0; k < cands; ++k) {
        Eigen::Index row = cand_base[e] + k;
        probs[static_cast<size_t>(k)] = std::exp(tape.val(logsm)(row, 0));
        out.ext_prior[b][static_cast<size_t>(k)] = tape.val(prior)(row, 0);
        out.ext_final[b][static_cast<size_t>(k)] = tape.val(oh)(row, 0);
      }
      if (chosen) {
        int c = (*chosen)[b];
        require(c >= 0 && c < cands, "chosen index out of range");
        logp_rows[b] = tape.gather_rows(logsm, {cand_base[e] + c});
      }
    }
  }

  if (chosen) {
    std::vector<Var> parts(logp_rows.begin(), logp_rows.end());
    out.logp = tape.concat_rows(parts);
  }
  return out;
}

int sample_index(const std::vector<double>& probs, Rng& rng) {
  double u = rng.uniform();
  double acc = 0.0;
  for (size_t k = 0; k < probs.size(); ++k) {
    acc += probs[k];
    if (u < acc) return static_cast<int>(k);
  }
  return static_cast<int>(probs.size()) - 1;
}

}  // namespace

nn::Mat backbone_forward(const PolicyNet& net, const FeatureBundle& raw) {
  Tape tape;
  nn::ParamBinder bind(tape, net.params);
  Var y = backbone_batched(tape, bind, net.cfg, tape.constant(net.norm.apply_x(raw.X)),
                           tape.constant(net.norm.apply_e(raw.E)), raw.n);
  return tape.val(y);
}

ad::Var policy_logprobs(ad::Tape& tape, nn::ParamBinder& bind, const PolicyConfig& cfg,
                        const std::vector<const DecisionInput*>& inputs,
                        const std::vector<int>& chosen) {
  return forward_impl(tape, bind, cfg, inputs, &chosen).logp;
}

std::vector<std::vector<double>> policy_probs(const PolicyNet& net,
                                              const std::vector<const DecisionInput*>& inputs) {
  Tape tape;
  nn::ParamBinder bind(tape, net.params);
  return forward_impl(tape, bind, net.cfg, inputs, nullptr).probs;
}

double halt_probability(const PolicyNet& net, const MdpState& state) {
  require(!state.extend_step(), "halt probability is defined on halt-or-continue steps");
  std::vector<MdpAction> actions{MdpAction::halt(), MdpAction::cont()};
  DecisionInput in = prepare_decision(net, state, actions);
  std::vector<const DecisionInput*> batch{&in};
  return policy_probs(net, batch)[0][0];
}

ExtensionScores extension_scores(const PolicyNet& net, const MdpState& state,
                                 const std::vector<MdpAction>& actions) {
  require(state.extend_step(), "extension scores are defined on extension steps");
  DecisionInput in = prepare_decision(net, state, actions);
  Tape tape;
  nn::ParamBinder bind(tape, net.params);
  std::vector<const DecisionInput*> batch{&in};
  ForwardOut fo = forward_impl(tape, bind, net.cfg, batch, nullptr);
  ExtensionScores scores;
  scores.prior = fo.ext_prior[0];
  scores.final_score = fo.ext_final[0];
  scores.probs = fo.probs[0];
  return scores;
}

std::vector<double> extension_distribution(const PolicyNet& net, const MdpState& state,
                                           const std::vector<MdpAction>& actions) {
  return extension_scores(net, state, actions).probs;
}

ActResult act(const PolicyNet& net, const MdpState& state,
              const std::vector<MdpAction>& actions, RolloutMode mode, Rng& rng) {
  require(!actions.empty(), "act needs at least one action");
  if (actions.size() == 1) return ActResult{0, 0.0, {1.0}};
  DecisionInput in = prepare_decision(net, state, actions);
  std::vector<const DecisionInput*> batch{&in};
  std::vector<double> probs = policy_probs(net, batch)[0];
  int idx = 0;
  if (mode == RolloutMode::Greedy) {
    for (size_t k = 1; k < probs.size(); ++k)
      if (probs[k] > probs[static_cast<size_t>(idx)]) idx = static_cast<int>(k);
  } else {
    idx = sample_index(probs, rng);
  }
  return ActResult{idx, std::log(probs[static_cast<size_t>(idx)]), std::move(probs)};
}

std::vector<double> NeuralPolicy::act(const MdpState& state,
                                      const std::vector<MdpAction>& actions) {
  if (actions.size() == 1) return {1.0};
  DecisionInput in = prepare_decision(*net, state, actions);
  std::vector<const DecisionInput*> batch{&in};
  return policy_probs(*net, batch)[0];
}

ad::Var value_forward(ad::Tape& tape, nn::ParamBinder& bind, ad::Var input) {
  return nn::mlp_forward(tape, bind, "value", 3, input);
}

double value_estimate(const ValueNet& net, const NormStats& norm, const MdpState& state) {
  Tape tape;
  nn::ParamBinder bind(tape, net.params);
  Var v = value_forward(tape, bind, tape.constant(norm.apply_value(value_features(state))));
  return tape.val(v)(0, 0);
}

namespace {

// Streaming mean/variance per channel (Welford's update).
struct ChannelStats {
  Eigen::ArrayXd mean, m2;
  long count = 0;

  explicit ChannelStats(int channels)
      : mean(Eigen::ArrayXd::Zero(channels)), m2(Eigen::ArrayXd::Zero(channels)) {}

  void add_row(const Eigen::ArrayXd& x) {
    ++count;
    Eigen::ArrayXd delta = x - mean;
    mean += delta / static_cast<double>(count);
    m2 += delta * (x - mean);
  }

  void add_mat(const Mat& rows) {
    for (Eigen::Index i = 0; i < rows.rows(); ++i)
      add_row(rows.row(i).transpose().array());
  }

  void add1(double x) {
    Eigen::ArrayXd v(1);
    v(0) = x;
    add_row(v);
  }

  double sigma(int c) const {
    if (count == 0) return 0.0;
    return std::sqrt(m2(c) / static_cast<double>(count));
  }
};

double floored_sigma(const ChannelStats& st, int c, const std::string& channel_name,
                     std::vector<std::string>& warnings) {
  double s = st.sigma(c);
  if (s < 1e-6) {
    warnings.push_back(channel_name + " has zero variance; sigma floored at 1e-6");
    return 1e-6;
  }
  return s;
}

}  // namespace

void fit_normalization(PolicyNet& net, const std::vector<const CityGraph*>& cities,
                       const std::vector<const ShortestPathData*>& sps,
                       const std::vector<CostWeights>& weights, int episodes_per_city,
                       uint64_t seed) {
  require(!cities.empty() && cities.size() == sps.size() && cities.size() == weights.size(),
          "fit_normalization needs aligned cities, shortest paths, and weights");
  require(episodes_per_city >= 1, "fit_normalization needs at least one episode per city");

  net.norm = NormStats();  // bypass scaling while collecting raw observations

  ChannelStats wx(4), we(13), ws(7), wp(1), wr(1), wv(11);
  for (size_t c = 0; c < cities.size(); ++c) {
    for (int ep = 0; ep < episodes_per_city; ++ep) {
      Rng ep_rng(seed, static_cast<uint64_t>(c) * 1000003ull + static_cast<uint64_t>(ep));
      MdpState state = mdp_reset(*cities[c], *sps[c], weights[c]);
      while (!state.done()) {
        std::vector<MdpAction> actions = action_space(state);
        DecisionInput in = prepare_decision(net, state, actions);
        wx.add_mat(in.X);
        we.add_mat(in.E);
        ws.add_mat(in.s);
        FeatureBundle fb = compute_features(state);
        wv.add_mat(value_features_from(state, fb).leftCols(11));
        if (in.extend) {
          wp.add_mat(in.pair_time);
          for (double t : in.bridge_time) wp.add1(t);
          for (double t : in.cand_time) wr.add1(t);
        } else {
          wr.add1(in.route_time);
        }
        int idx = 0;
        if (actions.size() > 1) {
          std::vector<const DecisionInput*> batch{&in};
          idx = sample_index(policy_probs(net, batch)[0], ep_rng);
        }
        state = mdp_step_unchecked(state, actions[static_cast<size_t>(idx)]).next_state;
      }
    }
  }

  NormStats fitted;
  fitted.fitted = true;
  for (int c = 0; c < 4; ++c) {
    fitted.x_mu(0, c) = wx.mean(c);
    fitted.x_sigma(0, c) = floored_sigma(wx, c, "node channel " + std::to_string(c),
                                         fitted.warnings);
  }
  for (int c = 0; c < 13; ++c) {
    if (edge_channel_is_boolean(c)) continue;  // booleans pass through unscaled
    fitted.e_mu(0, c) = we.mean(c);
    fitted.e_sigma(0, c) = floored_sigma(we, c, "pair channel " + std::to_string(c),
                                         fitted.warnings);
  }
  for (int c = 0; c < 7; ++c) {
    fitted.s_mu(0, c) = ws.mean(c);
    fitted.s_sigma(0, c) = floored_sigma(ws, c, "global channel " + std::to_string(c),
                                         fitted.warnings);
  }
  fitted.pair_mu = wp.mean(0);
  fitted.pair_sigma = floored_sigma(wp, 0, "pair-time input", fitted.warnings);
  fitted.route_mu = wr.mean(0);
  fitted.route_sigma = floored_sigma(wr, 0, "route-time input", fitted.warnings);
  for (int c = 0; c < 11; ++c) {
    fitted.v_mu(0, c) = wv.mean(c);
    fitted.v_sigma(0, c) = floored_sigma(wv, c, "value channel " + std::to_string(c),
                                         fitted.warnings);
  }
  net.norm = fitted;
}

void save_policy(std::ostream& out, const PolicyNet& net) {
  nn::save_params(out, net.params);
  save_norm_stats(out, net.norm);
}

void load_policy(std::istream& in, PolicyNet& net) {
  nn::load_params(in, net.params);
  load_norm_stats(in, net.norm);
}

void save_policy_file(const std::string& path, const PolicyNet& net) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot open " + path + " for writing");
  save_policy(out, net);
  require(out.good(), "failed writing " + path);
}

void load_policy_file(const std::string& path, PolicyNet& net) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open " + path);
  load_policy(in, net);
}

}  // namespace transit
