#include "transit/citygen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "transit/common.hpp"
#include "transit/rng.hpp"

namespace transit {

namespace {

double dist2(const std::array<double, 2>& a, const std::array<double, 2>& b) {
  double dx = a[0] - b[0], dy = a[1] - b[1];
  return dx * dx + dy * dy;
}

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  bool unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[a] = b;
    return true;
  }
};

bool edges_connect(int n, const std::vector<std::pair<int, int>>& edges) {
  UnionFind uf(n);
  int comps = n;
  for (auto& [u, v] : edges)
    if (uf.unite(u, v)) --comps;
  return comps == 1;
}

std::vector<std::array<double, 2>> uniform_points(Rng& rng, int n, double side) {
  std::vector<std::array<double, 2>> pts(n);
  for (int i = 0; i < n; ++i) {
    pts[i][0] = rng.uniform(0.0, side);
    pts[i][1] = rng.uniform(0.0, side);
  }
  return pts;
}

void grid_layout(int n, double side, bool diagonals,
                 std::vector<std::array<double, 2>>& pos,
                 std::vector<std::pair<int, int>>& edges) {
  int rows = 1;
  for (int r = static_cast<int>(std::sqrt(static_cast<double>(n))); r >= 1; --r)
    if (n % r == 0) {
      rows = r;
      break;
    }
  int cols = n / rows;
  pos.resize(n);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      pos[r * cols + c] = {(c + 0.5) * side / cols, (r + 0.5) * side / rows};
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      int id = r * cols + c;
      if (c + 1 < cols) edges.push_back({id, id + 1});
      if (r + 1 < rows) edges.push_back({id, id + cols});
      if (diagonals && r + 1 < rows) {
        if (c + 1 < cols) edges.push_back({id, id + cols + 1});
        if (c > 0) edges.push_back({id, id + cols - 1});
      }
    }
}

void nearest_neighbor_edges(const std::vector<std::array<double, 2>>& pos,
                            std::vector<std::pair<int, int>>& edges) {
  int n = static_cast<int>(pos.size());
  std::vector<std::vector<uint8_t>> have(n, std::vector<uint8_t>(n, 0));
  std::vector<std::pair<double, int>> order;
  for (int i = 0; i < n; ++i) {
    order.clear();
    for (int j = 0; j < n; ++j)
      if (j != i) order.push_back({dist2(pos[i], pos[j]), j});
    std::sort(order.begin(), order.end());
    int take = std::min<size_t>(4, order.size());
    for (int k = 0; k < take; ++k) {
      int j = order[k].second;
      int a = std::min(i, j), b = std::max(i, j);
      if (!have[a][b]) {
        have[a][b] = 1;
        edges.push_back({a, b});
      }
    }
  }
}

void mst_plus_edges(const std::vector<std::array<double, 2>>& pos, int target,
                    std::vector<std::pair<int, int>>& edges) {
  int n = static_cast<int>(pos.size());
  struct Cand {
    double d2;
    int u, v;
    bool operator<(const Cand& o) const {
      return d2 != o.d2 ? d2 < o.d2 : (u != o.u ? u < o.u : v < o.v);
    }
  };
  std::vector<Cand> all;
  all.reserve(static_cast<size_t>(n) * (n - 1) / 2);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) all.push_back({dist2(pos[i], pos[j]), i, j});
  std::sort(all.begin(), all.end());

  // Kruskal for the spanning tree, then the shortest unused pairs up to the budget.
  UnionFind uf(n);
  std::vector<uint8_t> used(all.size(), 0);
  for (size_t k = 0; k < all.size(); ++k)
    if (uf.unite(all[k].u, all[k].v)) {
      used[k] = 1;
      edges.push_back({all[k].u, all[k].v});
    }
  for (size_t k = 0; k < all.size() && static_cast<int>(edges.size()) < target; ++k)
    if (!used[k]) edges.push_back({all[k].u, all[k].v});
}

// ---- Voronoi via incremental Delaunay (Bowyer-Watson) ----

struct Tri {
  int a, b, c;       // point indices, super-triangle uses m, m+1, m+2
  double cx, cy, r2; // circumcircle
};

bool circumcircle(const std::vector<std::array<double, 2>>& p, int ia, int ib, int ic,
                  double& cx, double& cy, double& r2) {
  double ax = p[ia][0], ay = p[ia][1];
  double bx = p[ib][0], by = p[ib][1];
  double cx0 = p[ic][0], cy0 = p[ic][1];
  double d = 2.0 * (ax * (by - cy0) + bx * (cy0 - ay) + cx0 * (ay - by));
  if (std::abs(d) < 1e-12) return false;
  double a2 = ax * ax + ay * ay, b2 = bx * bx + by * by, c2 = cx0 * cx0 + cy0 * cy0;
  cx = (a2 * (by - cy0) + b2 * (cy0 - ay) + c2 * (ay - by)) / d;
  cy = (a2 * (cx0 - bx) + b2 * (ax - cx0) + c2 * (bx - ax)) / d;
  double dx = ax - cx, dy = ay - cy;
  r2 = dx * dx + dy * dy;
  return true;
}

struct VoronoiGraph {
  std::vector<std::array<double, 2>> verts;
  std::vector<std::pair<int, int>> edges;
};

VoronoiGraph voronoi_of(const std::vector<std::array<double, 2>>& seeds, double side) {
  int m = static_cast<int>(seeds.size());
  std::vector<std::array<double, 2>> p = seeds;
  // Super-triangle well outside the area square.
  p.push_back({-10.0 * side, -10.0 * side});
  p.push_back({11.0 * side, -10.0 * side});
  p.push_back({0.5 * side, 12.0 * side});

  std::vector<Tri> tris;
  {
    Tri t{m, m + 1, m + 2, 0, 0, 0};
    circumcircle(p, t.a, t.b, t.c, t.cx, t.cy, t.r2);
    tris.push_back(t);
  }
  for (int i = 0; i < m; ++i) {
    std::vector<size_t> bad;
    for (size_t k = 0; k < tris.size(); ++k) {
      double dx = p[i][0] - tris[k].cx, dy = p[i][1] - tris[k].cy;
      if (dx * dx + dy * dy <= tris[k].r2 * (1.0 + 1e-12)) bad.push_back(k);
    }
    // Boundary edges appear exactly once among the bad triangles.
    std::vector<std::pair<int, int>> boundary;
    auto push_edge = [&](int u, int v) {
      auto it = std::find(boundary.begin(), boundary.end(), std::make_pair(v, u));
      if (it != boundary.end())
        boundary.erase(it);
      else
        boundary.push_back({u, v});
    };
    for (size_t k : bad) {
      push_edge(tris[k].a, tris[k].b);
      push_edge(tris[k].b, tris[k].c);
      push_edge(tris[k].c, tris[k].a);
    }
    for (auto it = bad.rbegin(); it != bad.rend(); ++it) tris.erase(tris.begin() + *it);
    for (auto& [u, v] : boundary) {
      Tri t{u, v, i, 0, 0, 0};
      if (circumcircle(p, t.a, t.b, t.c, t.cx, t.cy, t.r2)) tris.push_back(t);
    }
  }
  tris.erase(std::remove_if(tris.begin(), tris.end(),
                            [&](const Tri& t) { return t.a >= m || t.b >= m || t.c >= m; }),
             tris.end());

  // Voronoi vertices are circumcenters; merge near-coincident ones (cocircular seeds).
  VoronoiGraph g;
  std::vector<int> vert_of(tris.size(), -1);
  double eps = 1e-9 * side;
  for (size_t k = 0; k < tris.size(); ++k) {
    int found = -1;
    for (size_t q = 0; q < g.verts.size(); ++q) {
      if (std::abs(g.verts[q][0] - tris[k].cx) < eps &&
          std::abs(g.verts[q][1] - tris[k].cy) < eps) {
        found = static_cast<int>(q);
        break;
      }
    }
    if (found < 0) {
      g.verts.push_back({tris[k].cx, tris[k].cy});
      found = static_cast<int>(g.verts.size()) - 1;
    }
    vert_of[k] = found;
  }
  // Two triangles sharing a Delaunay edge are Voronoi neighbors.
  auto key = [](int u, int v) { return std::make_pair(std::min(u, v), std::max(u, v)); };
  std::vector<std::pair<std::pair<int, int>, int>> edge_owner;
  for (size_t k = 0; k < tris.size(); ++k) {
    for (auto [u, v] : {key(tris[k].a, tris[k].b), key(tris[k].b, tris[k].c),
                        key(tris[k].c, tris[k].a)}) {
      bool matched = false;
      for (auto& [e, owner] : edge_owner) {
        if (e == std::make_pair(u, v)) {
          int x = vert_of[owner], y = vert_of[k];
          if (x != y) {
            int a = std::min(x, y), b = std::max(x, y);
            if (std::find(g.edges.begin(), g.edges.end(), std::make_pair(a, b)) ==
                g.edges.end())
              g.edges.push_back({a, b});
          }
          matched = true;
          break;
        }
      }
      if (!matched) edge_owner.push_back({{u, v}, static_cast<int>(k)});
    }
  }
  return g;
}

// Trim a graph with more than n vertices down to n by deleting vertices whose removal
// keeps it connected, lowest index first. Returns false when stuck.
bool trim_to(VoronoiGraph& g, int n) {
  while (static_cast<int>(g.verts.size()) > n) {
    int v_count = static_cast<int>(g.verts.size());
    int removed = -1;
    for (int v = 0; v < v_count; ++v) {
      std::vector<std::pair<int, int>> kept;
      for (auto& [a, b] : g.edges)
        if (a != v && b != v) kept.push_back({a, b});
      // Relabel indices above v down by one.
      for (auto& [a, b] : kept) {
        if (a > v) --a;
        if (b > v) --b;
      }
      if (edges_connect(v_count - 1, kept)) {
        g.verts.erase(g.verts.begin() + v);
        g.edges = std::move(kept);
        removed = v;
        break;
      }
    }
    if (removed < 0) return false;
  }
  return true;
}

}  // namespace

CityGraph generate_city(GenProcess process, const GenConfig& cfg) {
  require(cfg.n >= 2, "city needs at least two nodes");
  require(cfg.rho >= 0.0 && cfg.rho < 1.0, "edge deletion probability must be in [0, 1)");
  require(cfg.demand_low <= cfg.demand_high, "demand range is inverted");

  for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    Rng rng(cfg.seed, static_cast<uint64_t>(attempt));
    std::vector<std::array<double, 2>> pos;
    std::vector<std::pair<int, int>> edges;

    if (process == GenProcess::Grid4 || process == GenProcess::Grid8) {
      grid_layout(cfg.n, cfg.area_side, process == GenProcess::Grid8, pos, edges);
    } else if (process == GenProcess::NearestNeighbor4) {
      pos = uniform_points(rng, cfg.n, cfg.area_side);
      nearest_neighbor_edges(pos, edges);
    } else if (process == GenProcess::MstPlus) {
      pos = uniform_points(rng, cfg.n, cfg.area_side);
      int target = static_cast<int>(std::lround(cfg.mst_edge_slope * cfg.n +
                                                cfg.mst_edge_intercept));
      target = std::clamp(target, cfg.n - 1, cfg.n * (cfg.n - 1) / 2);
      mst_plus_edges(pos, target, edges);
    } else {  // Voronoi
      // Walk the seed count toward a diagram with exactly n vertices; settle for the
      // closest larger diagram and trim if the walk never lands on n.
      int m = std::max(4, cfg.n / 2 + 2);
      VoronoiGraph best;
      bool have_best = false;
      bool exact = false;
      VoronoiGraph g;
      for (int probe = 0; probe < 40 && !exact; ++probe) {
        auto seeds = uniform_points(rng, m, cfg.area_side);
        g = voronoi_of(seeds, cfg.area_side);
        int count = static_cast<int>(g.verts.size());
        if (count == cfg.n && edges_connect(count, g.edges)) {
          best = g;
          have_best = true;
          exact = true;
        } else if (count > cfg.n && edges_connect(count, g.edges)) {
          if (!have_best || count < static_cast<int>(best.verts.size())) {
            best = g;
            have_best = true;
          }
        }
        if (count < cfg.n)
          ++m;
        else if (count > cfg.n)
          --m;
        if (m < 4) m = 4;
      }
      if (!have_best) continue;
      if (!exact && !trim_to(best, cfg.n)) continue;
      pos = best.verts;
      edges = best.edges;
    }

    // Edge deletion draws happen in storage order so the stream is reproducible.
    if (process != GenProcess::Voronoi && cfg.rho > 0.0) {
      std::vector<std::pair<int, int>> kept;
      for (auto& e : edges)
        if (!rng.bernoulli(cfg.rho)) kept.push_back(e);
      edges = std::move(kept);
    }
    if (!edges_connect(cfg.n, edges)) continue;

    CityGraph city;
    city.n = cfg.n;
    city.pos = pos;
    for (auto& [u, v] : edges) {
      double tau = std::sqrt(dist2(pos[u], pos[v])) / cfg.vehicle_speed;
      city.edges.push_back({u, v, tau});
    }
    city.demand.assign(static_cast<size_t>(cfg.n) * cfg.n, 0.0);
    for (int i = 0; i < cfg.n; ++i)
      for (int j = i + 1; j < cfg.n; ++j) {
        double d = rng.uniform(cfg.demand_low, cfg.demand_high);
        city.d(i, j) = d;
        city.d(j, i) = d;
      }
    city.finalize();
    return city;
  }
  fail("city generation kept producing disconnected graphs (" +
       std::to_string(cfg.max_attempts) + " attempts)");
}

CityGraph augment_city(const CityGraph& city, const AugmentConfig& cfg, uint64_t seed) {
  require(cfg.pos_scale_halfwidth >= 0.0 && cfg.pos_scale_halfwidth < 1.0,
          "position scale halfwidth out of range");
  require(cfg.demand_scale_halfwidth >= 0.0 && cfg.demand_scale_halfwidth < 1.0,
          "demand scale halfwidth out of range");
  Rng rng(seed, 0xA06);
  double u_pos = rng.uniform(1.0 - cfg.pos_scale_halfwidth, 1.0 + cfg.pos_scale_halfwidth);
  double u_dem = rng.uniform(1.0 - cfg.demand_scale_halfwidth,
                             1.0 + cfg.demand_scale_halfwidth);
  bool mirror = rng.bernoulli(cfg.mirror_prob);
  double theta = rng.uniform(0.0, 6.283185307179586);

  CityGraph out = city;
  for (auto& p : out.pos) {
    p[0] *= u_pos;
    p[1] *= u_pos;
    if (mirror) p[0] = -p[0];
  }
  double cx = 0.0, cy = 0.0;
  for (auto& p : out.pos) {
    cx += p[0];
    cy += p[1];
  }
  cx /= out.n;
  cy /= out.n;
  double c = std::cos(theta), s = std::sin(theta);
  for (auto& p : out.pos) {
    double dx = p[0] - cx, dy = p[1] - cy;
    p[0] = cx + c * dx - s * dy;
    p[1] = cy + s * dx + c * dy;
  }
  for (auto& e : out.edges) e.tau *= u_pos;
  for (auto& d : out.demand) d *= u_dem;
  out.finalize();
  return out;
}

const char* process_name(GenProcess p) {
  switch (p) {
    case GenProcess::Grid4: return "grid4";
    case GenProcess::Grid8: return "grid8";
    case GenProcess::NearestNeighbor4: return "nearest4";
    case GenProcess::MstPlus: return "mstplus";
    case GenProcess::Voronoi: return "voronoi";
  }
  return "?";
}

GenProcess process_from_name(const std::string& name) {
  if (name == "grid4") return GenProcess::Grid4;
  if (name == "grid8") return GenProcess::Grid8;
  if (name == "nearest4") return GenProcess::NearestNeighbor4;
  if (name == "mstplus") return GenProcess::MstPlus;
  if (name == "voronoi") return GenProcess::Voronoi;
  fail("unknown generation process: " + name);
}

}  // namespace transit
