#include "trajtok/geo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace trajtok {

namespace {
constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kRadToDeg = 180.0 / std::numbers::pi;
}  // namespace

void validate(const GpsPoint& p) {
  if (!(p.lat >= -90.0 && p.lat <= 90.0)) throw std::invalid_argument("latitude out of range");
  if (!(p.lon >= -180.0 && p.lon <= 180.0)) throw std::invalid_argument("longitude out of range");
  if (!std::isfinite(p.t)) throw std::invalid_argument("timestamp not finite");
}

void validate(const Trajectory& traj) {
  if (traj.points.empty()) throw std::invalid_argument("trajectory '" + traj.id + "' is empty");
  for (std::size_t i = 0; i < traj.points.size(); ++i) {
    validate(traj.points[i]);
    if (i > 0 && traj.points[i].t < traj.points[i - 1].t)
      throw OrderingError("trajectory '" + traj.id + "' has decreasing timestamps at point " +
                          std::to_string(i));
  }
}

double haversine_m(const GpsPoint& a, const GpsPoint& b) {
  if (a.same_position(b)) return 0.0;
  const double lat1 = a.lat * kDegToRad;
  const double lat2 = b.lat * kDegToRad;
  const double dlat = (b.lat - a.lat) * kDegToRad;
  const double dlon = (b.lon - a.lon) * kDegToRad;
  const double s_lat = std::sin(dlat / 2.0);
  const double s_lon = std::sin(dlon / 2.0);
  double h = s_lat * s_lat + std::cos(lat1) * std::cos(lat2) * s_lon * s_lon;
  h = std::min(1.0, std::max(0.0, h));
  return 2.0 * kEarthRadiusM * std::asin(std::sqrt(h));
}

Bearing bearing_deg(const GpsPoint& a, const GpsPoint& b) {
  if (a.same_position(b)) return {0.0, true};
  const double lat1 = a.lat * kDegToRad;
  const double lat2 = b.lat * kDegToRad;
  const double dlon = (b.lon - a.lon) * kDegToRad;
  const double y = std::sin(dlon) * std::cos(lat2);
  const double x = std::cos(lat1) * std::sin(lat2) - std::sin(lat1) * std::cos(lat2) * std::cos(dlon);
  double deg = std::atan2(y, x) * kRadToDeg;
  deg = std::fmod(deg + 360.0, 360.0);
  // fmod can land exactly on 360 when deg is a tiny negative number.
  if (deg >= 360.0) deg = 0.0;
  return {deg, false};
}

double speed_mps(const GpsPoint& a, const GpsPoint& b) {
  const double dt = b.t - a.t;
  if (dt < 0.0) throw OrderingError("speed_mps: b.t precedes a.t");
  if (dt < 1e-9) return 0.0;
  return haversine_m(a, b) / dt;
}

}  // namespace trajtok
