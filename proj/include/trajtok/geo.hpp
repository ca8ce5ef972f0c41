#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace trajtok {

/// Mean Earth radius used by every distance computation in the toolkit.
inline constexpr double kEarthRadiusM = 6'371'000.0;

struct GpsPoint {
  double lat = 0.0;  // degrees, [-90, 90]
  double lon = 0.0;  // degrees, [-180, 180]
  double t = 0.0;    // seconds

  bool same_position(const GpsPoint& o) const { return lat == o.lat && lon == o.lon; }
  friend bool operator==(const GpsPoint&, const GpsPoint&) = default;
};

struct Trajectory {
  std::string id;
  std::vector<GpsPoint> points;
};

class OrderingError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Throws std::invalid_argument if the point is outside the lat/lon ranges or t is not finite.
void validate(const GpsPoint& p);

/// Checks length >= 1, every point valid, and non-decreasing timestamps.
void validate(const Trajectory& traj);

/// Great-circle distance on a sphere of radius kEarthRadiusM.
double haversine_m(const GpsPoint& a, const GpsPoint& b);

struct Bearing {
  double degrees = 0.0;     // [0, 360)
  bool degenerate = false;  // coincident points; degrees is 0
};

/// Initial great-circle bearing from a to b, clockwise from north.
Bearing bearing_deg(const GpsPoint& a, const GpsPoint& b);

/// Haversine distance over elapsed time. Elapsed times below 1e-9 s give 0.
/// Throws OrderingError if b.t < a.t.
double speed_mps(const GpsPoint& a, const GpsPoint& b);

}  // namespace trajtok
