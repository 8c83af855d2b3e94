#pragma once

#include <array>
#include <limits>
#include <string>
#include <vector>

namespace transit {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Symmetric street network with an origin-destination demand matrix.
// Node positions are in meters, edge drive times in seconds, demand in trips.
struct CityGraph {
  struct Edge {
    int u = 0;
    int v = 0;
    double tau = 0.0;  // drive time, seconds
  };

  int n = 0;
  std::vector<std::array<double, 2>> pos;
  std::vector<Edge> edges;       // each undirected edge stored once, u < v
  std::vector<double> demand;    // n*n row-major, symmetric, zero diagonal

  // Derived by finalize():
  std::vector<std::vector<std::pair<int, double>>> adj;  // neighbor, tau
  std::vector<double> edge_time;                         // n*n, +inf where no street edge

  double d(int i, int j) const { return demand[static_cast<size_t>(i) * n + j]; }
  double& d(int i, int j) { return demand[static_cast<size_t>(i) * n + j]; }
  bool has_edge(int i, int j) const {
    return edge_time[static_cast<size_t>(i) * n + j] < kInf;
  }
  double tau(int i, int j) const { return edge_time[static_cast<size_t>(i) * n + j]; }

  // Builds adjacency structures and checks structural invariants: indices in range,
  // no self loops or duplicate edges, positive drive times, symmetric zero-diagonal
  // non-negative demand, and a connected street graph.
  void finalize();

  bool street_connected() const;
};

// A route is a simple path in the street graph, listed stop by stop.
using Route = std::vector<int>;

struct TransitNetwork {
  std::vector<Route> routes;
};

// Drive time along consecutive stops; errors if some hop is not a street edge.
double route_drive_time(const CityGraph& city, const Route& r);

// True when r has no repeated node and every consecutive pair is a street edge.
bool is_simple_street_path(const CityGraph& city, const Route& r);

}  // namespace transit
