#pragma once

#include <cstdint>
#include <vector>

#include "trajtok/geo.hpp"
#include "trajtok/spatial_grid.hpp"

namespace trajtok {

/// Taxi-like trips over a city with one dense downtown, a few secondary hubs and a sparse
/// uniform background. Trips head from an origin towards a destination drawn from the same
/// density, with heading noise, per-trip cruising speed, occasional stops (repeated identical
/// fixes) and small GPS jitter.
struct SynthCityConfig {
  std::size_t n_trajectories = 20000;
  std::uint64_t seed = 7;
  BBox bbox = kPortoBBox;
  std::size_t min_points = 8;
  std::size_t max_points = 48;
  double interval_s = 15.0;
  int n_hubs = 5;
  double downtown_weight = 0.5;
  double hub_weight = 0.35;  // the rest is uniform background
  double downtown_sigma_m = 700.0;
  double hub_sigma_m = 1200.0;
  double stop_probability = 0.08;
  double gps_noise_m = 6.0;
  double start_timestamp = 1372636800.0;
};

/// Deterministic in (config); trajectory i depends only on (seed, i). Ids are "synth-<i>".
std::vector<Trajectory> synth_city(const SynthCityConfig& cfg);

}  // namespace trajtok
