#include "transit/costs.hpp"

#include <algorithm>
#include <cmath>
#include <queue>

#include "transit/common.hpp"

namespace transit {

RouteGraph build_route_graph(const CityGraph& city, const TransitNetwork& net) {
  int n = city.n;
  RouteGraph rg;
  rg.n = n;
  rg.direct.assign(static_cast<size_t>(n) * n, kInf);
  rg.route_of.assign(static_cast<size_t>(n) * n, -1);
  for (int i = 0; i < n; ++i) rg.direct[static_cast<size_t>(i) * n + i] = 0.0;

  for (size_t r = 0; r < net.routes.size(); ++r) {
    const Route& route = net.routes[r];
    require(is_simple_street_path(city, route),
            "route " + std::to_string(r) + " is not a simple street path");
    // Prefix drive times along the route, then all stop pairs.
    std::vector<double> pre(route.size(), 0.0);
    for (size_t k = 1; k < route.size(); ++k)
      pre[k] = pre[k - 1] + city.tau(route[k - 1], route[k]);
    for (size_t a = 0; a < route.size(); ++a) {
      for (size_t b = a + 1; b < route.size(); ++b) {
        double t = pre[b] - pre[a];
        size_t ij = static_cast<size_t>(route[a]) * n + route[b];
        size_t ji = static_cast<size_t>(route[b]) * n + route[a];
        if (t < rg.direct[ij]) {
          rg.direct[ij] = t;
          rg.direct[ji] = t;
          rg.route_of[ij] = static_cast<int>(r);
          rg.route_of[ji] = static_cast<int>(r);
        }
      }
    }
  }
  return rg;
}

TransitAssignment transit_assignment(const RouteGraph& rg, double transfer_penalty) {
  int n = rg.n;
  TransitAssignment ta;
  ta.n = n;
  ta.time.assign(static_cast<size_t>(n) * n, kInf);
  ta.transfers.assign(static_cast<size_t>(n) * n, -1);

  // Leg adjacency: one leg per served pair, weighted by riding time plus one penalty.
  // Minimizing that sum orders trips exactly like riding + penalty*(legs-1), since the
  // extra penalty is a constant offset per trip.
  std::vector<std::vector<std::pair<int, double>>> legs(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j && rg.at(i, j) < kInf)
        legs[i].push_back({j, rg.at(i, j) + transfer_penalty});

  std::vector<double> dist(n);
  std::vector<int> hops(n);
  std::vector<int> order(n);
  using Item = std::pair<double, int>;
  for (int s = 0; s < n; ++s) {
    std::fill(dist.begin(), dist.end(), kInf);
    std::fill(hops.begin(), hops.end(), -1);
    dist[s] = 0.0;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    heap.push({0.0, s});
    while (!heap.empty()) {
      auto [du, u] = heap.top();
      heap.pop();
      if (du > dist[u]) continue;
      for (auto& [v, w] : legs[u]) {
        if (du + w < dist[v]) {
          dist[v] = du + w;
          heap.push({du + w, v});
        }
      }
    }
    // Fewest legs among minimal-cost trips; legs have positive weight, so processing by
    // distance makes predecessors final first.
    int m = 0;
    for (int v = 0; v < n; ++v)
      if (dist[v] < kInf) order[m++] = v;
    std::sort(order.begin(), order.begin() + m,
              [&](int a, int b) { return dist[a] < dist[b]; });
    hops[s] = 0;
    for (int k = 0; k < m; ++k) {
      int v = order[k];
      if (v == s) continue;
      int best = -1;
      for (auto& [u, w] : legs[v]) {
        if (hops[u] >= 0 && dist[u] + w == dist[v]) {
          if (best < 0 || hops[u] + 1 < best) best = hops[u] + 1;
        }
      }
      hops[v] = best;
    }
    for (int v = 0; v < n; ++v) {
      size_t sv = static_cast<size_t>(s) * n + v;
      if (v == s) {
        ta.time[sv] = 0.0;
        ta.transfers[sv] = 0;
      } else if (dist[v] < kInf) {
        ta.time[sv] = dist[v] - hops[v] * transfer_penalty;
        ta.transfers[sv] = hops[v] - 1;
      }
    }
  }
  return ta;
}

CostBreakdown cost_from_assignment(const CityGraph& city, const ShortestPathData& sp,
                                   const TransitNetwork& net, const CostWeights& w,
                                   const RouteGraph& rg, const TransitAssignment& ta) {
  (void)rg;
  int n = city.n;
  double max_t = max_pair_time(sp);
  require(max_t > 0.0, "degenerate city: zero max pair time");
  double wp = 1.0 / max_t;
  double wo = 1.0 / (w.num_routes * max_t);

  double served_num = 0.0, served_dem = 0.0, total_dem = 0.0;
  double dem_by_transfers[3] = {0.0, 0.0, 0.0};
  int pairs_demand = 0, pairs_unconnected = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      double dem = city.d(i, j);
      if (dem <= 0.0) continue;
      total_dem += dem;
      if (i < j) {
        ++pairs_demand;
        if (!ta.connected(i, j)) ++pairs_unconnected;
      }
      if (ta.connected(i, j)) {
        int x = ta.x(i, j);
        served_num += dem * (ta.t(i, j) + w.transfer_penalty * x);
        served_dem += dem;
        if (x <= 2) dem_by_transfers[x] += dem;
      }
    }
  }

  CostBreakdown out;
  double cp_s = served_dem > 0.0 ? served_num / served_dem : 0.0;
  double co_s = 0.0;
  for (const Route& r : net.routes) co_s += route_drive_time(city, r);

  out.f_un = pairs_demand > 0 ? static_cast<double>(pairs_unconnected) / pairs_demand : 0.0;
  double stop_viol = 0.0;
  for (const Route& r : net.routes) {
    double len = static_cast<double>(r.size());
    stop_viol += std::max({0.0, w.min_stops - len, len - w.max_stops});
  }
  out.f_s = stop_viol / (static_cast<double>(w.num_routes) * w.max_stops);
  out.delta_v = (out.f_un > 0.0 || out.f_s > 0.0) ? 1.0 : 0.0;
  out.c_c = out.f_un + out.f_s + 0.1 * out.delta_v;

  out.total = w.alpha * wp * cp_s + (1.0 - w.alpha) * wo * co_s + w.beta * out.c_c;
  out.cp_minutes = cp_s / 60.0;
  out.co_minutes = co_s / 60.0;
  if (total_dem > 0.0) {
    out.d0 = 100.0 * dem_by_transfers[0] / total_dem;
    out.d1 = 100.0 * dem_by_transfers[1] / total_dem;
    out.d2 = 100.0 * dem_by_transfers[2] / total_dem;
  }
  out.d_un = 100.0 - out.d0 - out.d1 - out.d2;
  return out;
}

CostBreakdown evaluate_cost(const CityGraph& city, const ShortestPathData& sp,
                            const TransitNetwork& net, const CostWeights& w) {
  RouteGraph rg = build_route_graph(city, net);
  TransitAssignment ta = transit_assignment(rg, w.transfer_penalty);
  return cost_from_assignment(city, sp, net, w, rg, ta);
}

double evaluate_reward_cost(const CityGraph& city, const ShortestPathData& sp,
                            const TransitNetwork& net, const CostWeights& w) {
  int n = city.n;
  RouteGraph rg = build_route_graph(city, net);
  TransitAssignment ta = transit_assignment(rg, w.transfer_penalty);

  double max_t = max_pair_time(sp);
  require(max_t > 0.0, "degenerate city: zero max pair time");
  double wp = 1.0 / max_t;
  double wo = 1.0 / (w.num_routes * max_t);

  double num = 0.0, total_dem = 0.0;
  int pairs_demand = 0, pairs_unconnected = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      double dem = city.d(i, j);
      if (dem <= 0.0) continue;
      total_dem += dem;
      if (i < j) {
        ++pairs_demand;
        if (!ta.connected(i, j)) ++pairs_unconnected;
      }
      if (ta.connected(i, j))
        num += dem * (ta.t(i, j) + w.transfer_penalty * ta.x(i, j));
      else
        num += dem * 2.0 * max_t;
    }
  }
  double cp_s = total_dem > 0.0 ? num / total_dem : 0.0;
  double co_s = 0.0;
  for (const Route& r : net.routes) co_s += route_drive_time(city, r);

  double f_un = pairs_demand > 0 ? static_cast<double>(pairs_unconnected) / pairs_demand : 0.0;
  double cc = f_un + (f_un > 0.0 ? 0.1 : 0.0);
  return w.alpha * wp * cp_s + (1.0 - w.alpha) * wo * co_s + w.beta * cc;
}

std::vector<std::string> validate_network(const CityGraph& city, const TransitNetwork& net,
                                          const CostWeights& w) {
  std::vector<std::string> out;
  for (size_t r = 0; r < net.routes.size(); ++r) {
    const Route& route = net.routes[r];
    std::vector<uint8_t> seen(city.n, 0);
    for (size_t k = 0; k < route.size(); ++k) {
      int v = route[k];
      if (v < 0 || v >= city.n) {
        out.push_back("route " + std::to_string(r) + " stop " + std::to_string(k) +
                      " is out of range");
        continue;
      }
      if (seen[v])
        out.push_back("route " + std::to_string(r) + " visits node " + std::to_string(v) +
                      " twice");
      seen[v] = 1;
      if (k + 1 < route.size() && route[k + 1] >= 0 && route[k + 1] < city.n &&
          !city.has_edge(v, route[k + 1]))
        out.push_back("route " + std::to_string(r) + " hops " + std::to_string(v) + "-" +
                      std::to_string(route[k + 1]) + " which is not a street edge");
    }
    if (static_cast<int>(route.size()) < w.min_stops ||
        static_cast<int>(route.size()) > w.max_stops)
      out.push_back("route " + std::to_string(r) + " has " + std::to_string(route.size()) +
                    " stops, outside [" + std::to_string(w.min_stops) + ", " +
                    std::to_string(w.max_stops) + "]");
  }
  if (static_cast<int>(net.routes.size()) != w.num_routes)
    out.push_back("network has " + std::to_string(net.routes.size()) + " routes, expected " +
                  std::to_string(w.num_routes));

  // Connectedness over demand-positive pairs, only meaningful if routes are sound.
  bool structurally_ok = true;
  for (const Route& r : net.routes)
    if (!is_simple_street_path(city, r)) structurally_ok = false;
  if (structurally_ok) {
    RouteGraph rg = build_route_graph(city, net);
    TransitAssignment ta = transit_assignment(rg, w.transfer_penalty);
    int unconnected = 0;
    std::pair<int, int> example{-1, -1};
    for (int i = 0; i < city.n; ++i)
      for (int j = i + 1; j < city.n; ++j)
        if (city.d(i, j) > 0.0 && !ta.connected(i, j)) {
          if (unconnected == 0) example = {i, j};
          ++unconnected;
        }
    if (unconnected > 0)
      out.push_back(std::to_string(unconnected) + " demand pairs have no trip, e.g. " +
                    std::to_string(example.first) + "-" + std::to_string(example.second));
  }
  return out;
}

}  // namespace transit
