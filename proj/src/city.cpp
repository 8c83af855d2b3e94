#include "transit/city.hpp"

#include <algorithm>
#include <cstdint>

#include "transit/common.hpp"

namespace transit {

void CityGraph::finalize() {
  require(n > 0, "city must have at least one node");
  require(pos.size() == static_cast<size_t>(n), "position count does not match n");
  require(demand.size() == static_cast<size_t>(n) * n, "demand matrix must be n*n");

  adj.assign(n, {});
  edge_time.assign(static_cast<size_t>(n) * n, kInf);
  for (auto& e : edges) {
    require(e.u >= 0 && e.u < n && e.v >= 0 && e.v < n, "edge endpoint out of range");
    require(e.u != e.v, "self loop edge");
    require(e.tau > 0.0, "edge drive time must be positive");
    if (e.u > e.v) std::swap(e.u, e.v);
    size_t a = static_cast<size_t>(e.u) * n + e.v;
    size_t b = static_cast<size_t>(e.v) * n + e.u;
    require(edge_time[a] == kInf, "duplicate street edge");
    edge_time[a] = e.tau;
    edge_time[b] = e.tau;
    adj[e.u].push_back({e.v, e.tau});
    adj[e.v].push_back({e.u, e.tau});
  }
  for (auto& nb : adj) std::sort(nb.begin(), nb.end());

  for (int i = 0; i < n; ++i) {
    require(d(i, i) == 0.0, "demand diagonal must be zero");
    for (int j = 0; j < n; ++j) {
      require(d(i, j) >= 0.0, "demand must be non-negative");
      require(d(i, j) == d(j, i), "demand matrix must be symmetric");
    }
  }
  require(street_connected(), "street graph must be connected");
}

bool CityGraph::street_connected() const {
  if (n == 0) return false;
  std::vector<uint8_t> seen(n, 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  int count = 1;
  while (!stack.empty()) {
    int u = stack.back();
    stack.pop_back();
    for (auto& [v, w] : adj[u]) {
      (void)w;
      if (!seen[v]) {
        seen[v] = 1;
        ++count;
        stack.push_back(v);
      }
    }
  }
  return count == n;
}

double route_drive_time(const CityGraph& city, const Route& r) {
  double total = 0.0;
  for (size_t k = 0; k + 1 < r.size(); ++k) {
    double t = city.tau(r[k], r[k + 1]);
    require(t < kInf, "route hops a non-edge: " + std::to_string(r[k]) + "-" +
                          std::to_string(r[k + 1]));
    total += t;
  }
  return total;
}

bool is_simple_street_path(const CityGraph& city, const Route& r) {
  std::vector<uint8_t> seen(city.n, 0);
  for (size_t k = 0; k < r.size(); ++k) {
    if (r[k] < 0 || r[k] >= city.n) return false;
    if (seen[r[k]]) return false;
    seen[r[k]] = 1;
    if (k + 1 < r.size() && !city.has_edge(r[k], r[k + 1])) return false;
  }
  return true;
}

}  // namespace transit
