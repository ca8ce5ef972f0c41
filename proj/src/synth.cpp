#include "trajtok/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "trajtok/parallel.hpp"
#include "trajtok/rng.hpp"

namespace trajtok {

namespace {

constexpr double kDegPerRad = 180.0 / std::numbers::pi;

struct LocalFrame {
  double lat0, lon0, m_per_deg_lat, m_per_deg_lon;

  explicit LocalFrame(const BBox& b)
      : lat0(0.5 * (b.lat_min + b.lat_max)),
        lon0(0.5 * (b.lon_min + b.lon_max)),
        m_per_deg_lat(kEarthRadiusM / kDegPerRad),
        m_per_deg_lon(kEarthRadiusM / kDegPerRad * std::cos(lat0 / kDegPerRad)) {}

  double dlat(double meters) const { return meters / m_per_deg_lat; }
  double dlon(double meters) const { return meters / m_per_deg_lon; }
};

struct Hub {
  double lat, lon, sigma_m;
};

GpsPoint clamp_to(const BBox& b, GpsPoint p) {
  // Keep a hair inside the box so every fix survives the ingest filter.
  const double eps_lat = 1e-6 * (b.lat_max - b.lat_min);
  const double eps_lon = 1e-6 * (b.lon_max - b.lon_min);
  p.lat = std::clamp(p.lat, b.lat_min + eps_lat, b.lat_max - eps_lat);
  p.lon = std::clamp(p.lon, b.lon_min + eps_lon, b.lon_max - eps_lon);
  return p;
}

}  // namespace

std::vector<Trajectory> synth_city(const SynthCityConfig& cfg) {
  const BBox& b = cfg.bbox;
  const LocalFrame frame(b);

  // City layout comes from stream 0 of the seed.
  CounterRng layout(cfg.seed, 0);
  std::vector<Hub> hubs;
  hubs.push_back({b.lat_min + 0.45 * (b.lat_max - b.lat_min), b.lon_min + 0.55 * (b.lon_max - b.lon_min),
                  cfg.downtown_sigma_m});
  for (int h = 0; h < cfg.n_hubs; ++h) {
    hubs.push_back({b.lat_min + (0.1 + 0.8 * layout.uniform01()) * (b.lat_max - b.lat_min),
                    b.lon_min + (0.1 + 0.8 * layout.uniform01()) * (b.lon_max - b.lon_min), cfg.hub_sigma_m});
  }

  auto sample_place = [&](CounterRng& rng) {
    const double u = rng.uniform01();
    if (u < cfg.downtown_weight + cfg.hub_weight) {
      const Hub& h = u < cfg.downtown_weight || cfg.n_hubs == 0
                         ? hubs[0]
                         : hubs[1 + rng.uniform(static_cast<std::uint64_t>(cfg.n_hubs))];
      return clamp_to(b, {h.lat + frame.dlat(h.sigma_m * rng.normal()), h.lon + frame.dlon(h.sigma_m * rng.normal()),
                          0.0});
    }
    return clamp_to(b, {b.lat_min + rng.uniform01() * (b.lat_max - b.lat_min),
                        b.lon_min + rng.uniform01() * (b.lon_max - b.lon_min), 0.0});
  };

  std::vector<Trajectory> out(cfg.n_trajectories);
  parallel::parallel_for(0, static_cast<std::ptrdiff_t>(cfg.n_trajectories), [&](std::ptrdiff_t k) {
    const auto i = static_cast<std::uint64_t>(k);
    CounterRng rng(cfg.seed, i + 1);
    Trajectory& traj = out[i];
    traj.id = "synth-" + std::to_string(i);

    const std::size_t span = cfg.max_points > cfg.min_points ? cfg.max_points - cfg.min_points + 1 : 1;
    const std::size_t n = cfg.min_points + rng.uniform(span);
    const double speed = 4.0 + 10.0 * rng.uniform01();  // m/s
    const double t0 = cfg.start_timestamp + 60.0 * static_cast<double>(i);

    GpsPoint pos = sample_place(rng);
    GpsPoint dest = sample_place(rng);
    double heading = 2.0 * std::numbers::pi * rng.uniform01();
    std::size_t stop_left = 0;
    GpsPoint last_fix{};

    for (std::size_t j = 0; j < n; ++j) {
      const double t = t0 + cfg.interval_s * static_cast<double>(j);
      if (stop_left > 0) {
        --stop_left;
        traj.points.push_back({last_fix.lat, last_fix.lon, t});
        continue;
      }
      GpsPoint fix{pos.lat + frame.dlat(cfg.gps_noise_m * rng.normal()),
                   pos.lon + frame.dlon(cfg.gps_noise_m * rng.normal()), t};
      fix = clamp_to(b, fix);
      fix.t = t;
      traj.points.push_back(fix);
      last_fix = fix;
      if (rng.uniform01() < cfg.stop_probability) stop_left = 1 + rng.uniform(4);

      // Steer towards the destination with some wander; pick a new one on arrival.
      const double north = (dest.lat - pos.lat) * frame.m_per_deg_lat;
      const double east = (dest.lon - pos.lon) * frame.m_per_deg_lon;
      const double step = speed * cfg.interval_s * (0.8 + 0.4 * rng.uniform01());
      if (std::hypot(north, east) < step) dest = sample_place(rng);
      const double target = std::atan2(east, north);
      double turn = target - heading;
      turn = std::remainder(turn, 2.0 * std::numbers::pi);
      heading += 0.6 * turn + 0.25 * rng.normal();
      pos.lat += frame.dlat(step * std::cos(heading));
      pos.lon += frame.dlon(step * std::sin(heading));
      pos = clamp_to(b, pos);
    }
  });
  return out;
}

}  // namespace trajtok
