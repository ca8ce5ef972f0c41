#pragma once

// Independent reference implementations used only to check the library.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "trajtok/geo.hpp"

namespace trajtok::oracle {

/// Enumerates every monotone alignment path from (0,0) to (n-1,m-1) and returns the
/// cheapest total haversine cost. Exponential; keep inputs tiny.
inline double brute_force_dtw(const std::vector<GpsPoint>& a, const std::vector<GpsPoint>& b) {
  double best = std::numeric_limits<double>::infinity();
  struct Walker {
    const std::vector<GpsPoint>& a;
    const std::vector<GpsPoint>& b;
    double& best;
    void go(std::size_t i, std::size_t j, double acc) {
      acc += haversine_m(a[i], b[j]);
      if (i + 1 == a.size() && j + 1 == b.size()) {
        best = std::min(best, acc);
        return;
      }
      if (i + 1 < a.size()) go(i + 1, j, acc);
      if (j + 1 < b.size()) go(i, j + 1, acc);
      if (i + 1 < a.size() && j + 1 < b.size()) go(i + 1, j + 1, acc);
    }
  } w{a, b, best};
  w.go(0, 0, 0.0);
  return best;
}

/// Spherical law of cosines distance; agrees with haversine away from tiny separations.
inline double law_of_cosines_m(double lat1, double lon1, double lat2, double lon2) {
  const double r = 3.14159265358979323846 / 180.0;
  const double c = std::sin(lat1 * r) * std::sin(lat2 * r) +
                   std::cos(lat1 * r) * std::cos(lat2 * r) * std::cos((lon2 - lon1) * r);
  return 6371000.0 * std::acos(std::clamp(c, -1.0, 1.0));
}

/// A span is invalid under run-aware masking when both endpoints are strictly inside the
/// same run: every id from s-1 to e+1 is equal. Checked by direct scan.
template <class Id>
bool span_inside_one_run(const std::vector<Id>& ids, std::size_t s, std::size_t e) {
  if (s == 0 || e + 1 >= ids.size()) return false;
  for (std::size_t p = s - 1; p <= e + 1; ++p) {
    if (ids[p] != ids[s]) return false;
  }
  return true;
}

}  // namespace trajtok::oracle
