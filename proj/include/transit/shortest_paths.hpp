#pragma once

#include <vector>

#include "transit/city.hpp"

namespace transit {

// All-pairs shortest paths over the street graph. time is n*n row-major; path holds the
// node sequence from i to j inclusive, with path[i][i] = [i] and time[i][i] = 0.
// For i < j the path is the minimal-time path, ties broken by fewer nodes, then by the
// lexicographically smallest node sequence; the (j, i) entry is its reverse, so the two
// orientations of a pair always describe the same physical path.
struct ShortestPathData {
  int n = 0;
  std::vector<double> time;
  std::vector<std::vector<int>> path;

  double t(int i, int j) const { return time[static_cast<size_t>(i) * n + j]; }
  const std::vector<int>& p(int i, int j) const {
    return path[static_cast<size_t>(i) * n + j];
  }
};

ShortestPathData all_pairs_shortest_paths(const CityGraph& city);

// Largest finite entry of sp.time; used to scale cost weights.
double max_pair_time(const ShortestPathData& sp);

// Single-source shortest paths under arbitrary positive edge weights given as an
// adjacency list (neighbor, weight). Ties are broken by fewer hops, then by the
// lexicographically smallest node sequence. banned_nodes marks nodes that may not be
// used at all (the source must not be banned). Outputs are indexed by node; dist is
// +inf (and path empty) where unreachable.
struct SingleSource {
  std::vector<double> dist;
  std::vector<int> hops;
  std::vector<std::vector<int>> path;
};

SingleSource dijkstra_paths(int n, const std::vector<std::vector<std::pair<int, double>>>& adj,
                            int source, const std::vector<uint8_t>* banned_nodes = nullptr);

}  // namespace transit
