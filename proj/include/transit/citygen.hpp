#pragma once

#include <cstdint>

#include "transit/city.hpp"

namespace transit {

enum class GenProcess { Grid4, Grid8, NearestNeighbor4, MstPlus, Voronoi };

struct GenConfig {
  int n = 20;
  double rho = 0.0;           // per-edge deletion probability (ignored by Voronoi)
  double area_side = 30000.0; // meters
  double vehicle_speed = 15.0;  // m/s; tau = euclidean distance / speed
  double demand_low = 60.0;
  double demand_high = 800.0;
  uint64_t seed = 0;
  int max_attempts = 100;     // regenerations allowed before giving up
  // MstPlus edge budget e(n) = round(slope*n + intercept).
  double mst_edge_slope = 2.5;
  double mst_edge_intercept = 0.0;
};

struct AugmentConfig {
  double pos_scale_halfwidth = 0.0;     // a: position factor drawn from [1-a, 1+a]
  double demand_scale_halfwidth = 0.0;  // b: demand factor drawn from [1-b, 1+b]
  double mirror_prob = 0.5;
};

// Builds one synthetic city. Street layout follows the chosen process, each edge is
// then dropped with probability rho (Voronoi skips deletion), and the whole draw is
// restarted from scratch whenever the survivor graph is disconnected. Demand is
// uniform per unordered pair. Deterministic in cfg.seed.
CityGraph generate_city(GenProcess process, const GenConfig& cfg);

// Random similarity transform of an existing city: position scale (tau follows),
// demand scale, mirror about the y axis with probability mirror_prob, rotation by a
// uniform angle about the geometric centre. Topology is untouched.
CityGraph augment_city(const CityGraph& city, const AugmentConfig& cfg, uint64_t seed);

const char* process_name(GenProcess p);
GenProcess process_from_name(const std::string& name);

}  // namespace transit
