#include "transit/shortest_paths.hpp"

#include <algorithm>
#include <queue>

#include "transit/common.hpp"

namespace transit {

SingleSource dijkstra_paths(int n, const std::vector<std::vector<std::pair<int, double>>>& adj,
                            int source, const std::vector<uint8_t>* banned_nodes) {
  SingleSource out;
  out.dist.assign(n, kInf);
  out.hops.assign(n, -1);
  out.path.assign(n, {});
  if (banned_nodes) require(!(*banned_nodes)[source], "dijkstra source is banned");

  // Pass 1: plain Dijkstra for distances.
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  out.dist[source] = 0.0;
  heap.push({0.0, source});
  while (!heap.empty()) {
    auto [du, u] = heap.top();
    heap.pop();
    if (du > out.dist[u]) continue;
    for (auto& [v, w] : adj[u]) {
      if (banned_nodes && (*banned_nodes)[v]) continue;
      double cand = du + w;
      if (cand < out.dist[v]) {
        out.dist[v] = cand;
        heap.push({cand, v});
      }
    }
  }

  // Pass 2: fewest hops over the tight-edge DAG. Edges have positive weight, so every
  // predecessor on a shortest path has strictly smaller distance; processing nodes in
  // distance order makes each hop count final before it is read.
  std::vector<int> order;
  order.reserve(n);
  for (int v = 0; v < n; ++v)
    if (out.dist[v] < kInf) order.push_back(v);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return out.dist[a] < out.dist[b]; });
  out.hops[source] = 0;
  for (int v : order) {
    if (v == source) continue;
    int best = -1;
    for (auto& [u, w] : adj[v]) {
      if (banned_nodes && (*banned_nodes)[u]) continue;
      if (out.dist[u] + w == out.dist[v] && out.hops[u] >= 0) {
        if (best < 0 || out.hops[u] + 1 < best) best = out.hops[u] + 1;
      }
    }
    out.hops[v] = best;
  }

  // Pass 3: lexicographically smallest node sequence among (min dist, min hops) paths.
  // Since all candidate paths to v share the prefix-compare structure path(u) + [v],
  // picking the predecessor with the smallest stored path is enough.
  out.path[source] = {source};
  for (int v : order) {
    if (v == source) continue;
    const std::vector<int>* bestPath = nullptr;
    for (auto& [u, w] : adj[v]) {
      if (banned_nodes && (*banned_nodes)[u]) continue;
      if (out.dist[u] + w == out.dist[v] && out.hops[u] + 1 == out.hops[v] &&
          !out.path[u].empty()) {
        if (!bestPath || out.path[u] < *bestPath) bestPath = &out.path[u];
      }
    }
    if (bestPath) {
      out.path[v] = *bestPath;
      out.path[v].push_back(v);
    }
  }
  return out;
}

ShortestPathData all_pairs_shortest_paths(const CityGraph& city) {
  int n = city.n;
  ShortestPathData sp;
  sp.n = n;
  sp.time.assign(static_cast<size_t>(n) * n, kInf);
  sp.path.assign(static_cast<size_t>(n) * n, {});

  for (int i = 0; i < n; ++i) {
    SingleSource ss = dijkstra_paths(n, city.adj, i);
    for (int j = 0; j < n; ++j) {
      sp.time[static_cast<size_t>(i) * n + j] = ss.dist[j];
      sp.path[static_cast<size_t>(i) * n + j] = std::move(ss.path[j]);
    }
  }
  // Canonical orientation: the i < j entry keeps its tie-broken path, the mirror entry
  // is its reverse. This keeps both orientations describing one physical path.
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      auto& fwd = sp.path[static_cast<size_t>(i) * n + j];
      auto& bwd = sp.path[static_cast<size_t>(j) * n + i];
      bwd.assign(fwd.rbegin(), fwd.rend());
      sp.time[static_cast<size_t>(j) * n + i] = sp.time[static_cast<size_t>(i) * n + j];
    }
    sp.time[static_cast<size_t>(i) * n + i] = 0.0;
    sp.path[static_cast<size_t>(i) * n + i] = {i};
  }
  return sp;
}

double max_pair_time(const ShortestPathData& sp) {
  double best = 0.0;
  for (double t : sp.time)
    if (t < kInf && t > best) best = t;
  return best;
}

}  // namespace transit
