#pragma once

// Brute-force reference implementations used to pin down expected values in tests.
// These deliberately share no code with the library: different algorithms, different
// data layouts, so agreement is meaningful.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "transit/city.hpp"
#include "transit/costs.hpp"
#include "transit/rng.hpp"

namespace oracle {

constexpr double kInf = std::numeric_limits<double>::infinity();

// All-pairs shortest path times by iterated edge relaxation (Bellman-Ford sweeps).
inline std::vector<double> bellman_ford_times(const transit::CityGraph& city) {
  int n = city.n;
  std::vector<double> t(static_cast<size_t>(n) * n, kInf);
  for (int i = 0; i < n; ++i) t[static_cast<size_t>(i) * n + i] = 0.0;
  for (int pass = 0; pass < n; ++pass) {
    bool changed = false;
    for (int s = 0; s < n; ++s) {
      for (auto& e : city.edges) {
        size_t su = static_cast<size_t>(s) * n + e.u;
        size_t sv = static_cast<size_t>(s) * n + e.v;
        if (t[su] + e.tau < t[sv]) {
          t[sv] = t[su] + e.tau;
          changed = true;
        }
        if (t[sv] + e.tau < t[su]) {
          t[su] = t[sv] + e.tau;
          changed = true;
        }
      }
    }
    if (!changed) break;
  }
  return t;
}

// Direct trip times by scanning every route position pair, per ordered node pair.
inline std::vector<double> direct_times(const transit::CityGraph& city,
                                        const transit::TransitNetwork& net) {
  int n = city.n;
  std::vector<double> direct(static_cast<size_t>(n) * n, kInf);
  for (int i = 0; i < n; ++i) direct[static_cast<size_t>(i) * n + i] = 0.0;
  for (auto& route : net.routes) {
    for (size_t a = 0; a < route.size(); ++a) {
      for (size_t b = 0; b < route.size(); ++b) {
        if (a == b) continue;
        double time = 0.0;
        for (size_t k = std::min(a, b); k < std::max(a, b); ++k)
          time += city.tau(route[k], route[k + 1]);
        size_t ij = static_cast<size_t>(route[a]) * n + route[b];
        direct[ij] = std::min(direct[ij], time);
      }
    }
  }
  return direct;
}

struct Trip {
  double ride = kInf;  // riding seconds, no penalties
  int transfers = -1;  // -1 when no trip exists
};

// Best trips by exhaustive enumeration of simple leg sequences (DFS over the leg
// graph). Minimizes ride + penalty*(legs-1); ties prefer fewer legs.
inline std::vector<Trip> enumerate_trips(const std::vector<double>& direct, int n,
                                         double penalty) {
  std::vector<Trip> best(static_cast<size_t>(n) * n);
  for (int s = 0; s < n; ++s) {
    best[static_cast<size_t>(s) * n + s] = {0.0, 0};
    std::vector<uint8_t> used(n, 0);
    used[s] = 1;
    std::function<void(int, double, int)> walk = [&](int u, double ride, int legs) {
      for (int v = 0; v < n; ++v) {
        if (used[v] || direct[static_cast<size_t>(u) * n + v] == kInf || u == v) continue;
        double r2 = ride + direct[static_cast<size_t>(u) * n + v];
        int l2 = legs + 1;
        Trip& b = best[static_cast<size_t>(s) * n + v];
        double cand_cost = r2 + penalty * (l2 - 1);
        double best_cost = b.transfers < 0 ? kInf : b.ride + penalty * b.transfers;
        if (cand_cost < best_cost ||
            (cand_cost == best_cost && b.transfers >= 0 && l2 - 1 < b.transfers)) {
          b.ride = r2;
          b.transfers = l2 - 1;
        }
        used[v] = 1;
        walk(v, r2, l2);
        used[v] = 0;
      }
    };
    walk(s, 0.0, 0);
  }
  return best;
}

// Random connected city: spanning tree plus extra edges, integer-ish drive times,
// sparse symmetric demand.
inline transit::CityGraph random_city(transit::Rng& rng, int n, int extra_edges,
                                      double zero_demand_prob = 0.3) {
  transit::CityGraph city;
  city.n = n;
  city.pos.resize(n);
  for (int i = 0; i < n; ++i)
    city.pos[i] = {rng.uniform(0.0, 30000.0), rng.uniform(0.0, 30000.0)};
  for (int v = 1; v < n; ++v) {
    int u = rng.index(v);
    city.edges.push_back({u, v, 60.0 * (1 + rng.index(20))});
  }
  int attempts = 0;
  while (extra_edges > 0 && attempts < 200) {
    ++attempts;
    int u = rng.index(n), v = rng.index(n);
    if (u == v) continue;
    if (u > v) std::swap(u, v);
    bool dup = false;
    for (auto& e : city.edges)
      if (e.u == u && e.v == v) dup = true;
    if (dup) continue;
    city.edges.push_back({u, v, 60.0 * (1 + rng.index(20))});
    --extra_edges;
  }
  city.demand.assign(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double dem = rng.bernoulli(zero_demand_prob) ? 0.0 : std::floor(rng.uniform(60.0, 800.0));
      city.d(i, j) = dem;
      city.d(j, i) = dem;
    }
  city.finalize();
  return city;
}

// Minimum spanning tree length over the complete Euclidean graph (Prim, O(n^2)).
inline double prim_mst_length(const std::vector<std::array<double, 2>>& pts) {
  int n = static_cast<int>(pts.size());
  std::vector<double> key(n, kInf);
  std::vector<uint8_t> in_tree(n, 0);
  key[0] = 0.0;
  double total = 0.0;
  for (int step = 0; step < n; ++step) {
    int u = -1;
    for (int v = 0; v < n; ++v)
      if (!in_tree[v] && (u < 0 || key[v] < key[u])) u = v;
    in_tree[u] = 1;
    total += key[u];
    for (int v = 0; v < n; ++v) {
      if (in_tree[v]) continue;
      double dx = pts[u][0] - pts[v][0], dy = pts[u][1] - pts[v][1];
      double d = std::sqrt(dx * dx + dy * dy);
      if (d < key[v]) key[v] = d;
    }
  }
  return total;
}

// Random network of simple street paths grown by random walk.
inline transit::TransitNetwork random_network(transit::Rng& rng, const transit::CityGraph& city,
                                              int routes, int max_len) {
  transit::TransitNetwork net;
  for (int r = 0; r < routes; ++r) {
    transit::Route route{rng.index(city.n)};
    std::vector<uint8_t> used(city.n, 0);
    used[route[0]] = 1;
    int want = 2 + rng.index(std::max(1, max_len - 1));
    while (static_cast<int>(route.size()) < want) {
      auto& nbrs = city.adj[route.back()];
      std::vector<int> open;
      for (auto& [v, w] : nbrs) {
        (void)w;
        if (!used[v]) open.push_back(v);
      }
      if (open.empty()) break;
      int v = open[rng.index(open.size())];
      used[v] = 1;
      route.push_back(v);
    }
    if (route.size() >= 2) net.routes.push_back(route);
  }
  if (net.routes.empty()) {
    // Guarantee at least one real route: use the first street edge.
    net.routes.push_back({city.edges[0].u, city.edges[0].v});
  }
  return net;
}

}  // namespace oracle
