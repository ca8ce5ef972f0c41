#include <doctest.h>

#include <array>
#include <cmath>
#include <numbers>
#include <set>

#include "oracles.hpp"
#include "trajtok/geo.hpp"
#include "trajtok/parallel.hpp"
#include "trajtok/rng.hpp"
#include "trajtok/spatial_grid.hpp"

#if defined(TRAJTOK_TEST_HEX)
#include <h3api.h>
#endif

using namespace trajtok;

namespace {

using Vec3 = std::array<double, 3>;

Vec3 unit(double lat, double lon) {
  const double r = std::numbers::pi / 180.0;
  return {std::cos(lat * r) * std::cos(lon * r), std::cos(lat * r) * std::sin(lon * r), std::sin(lat * r)};
}

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

/// Bearing from the local north/east basis at a, applied to the great-circle tangent towards b.
double vector_bearing(double lat1, double lon1, double lat2, double lon2) {
  const double r = std::numbers::pi / 180.0;
  const Vec3 b = unit(lat2, lon2);
  const Vec3 east{-std::sin(lon1 * r), std::cos(lon1 * r), 0.0};
  const Vec3 north{-std::sin(lat1 * r) * std::cos(lon1 * r), -std::sin(lat1 * r) * std::sin(lon1 * r),
                   std::cos(lat1 * r)};
  double deg = std::atan2(dot(b, east), dot(b, north)) / r;
  if (deg < 0) deg += 360.0;
  return deg;
}

GridConfig quad(int r_min = 0, int r_max = 8) { return {GridBackend::Quad, kPortoBBox, r_min, r_max}; }

GpsPoint random_point(CounterRng& rng, const BBox& b = kPortoBBox) {
  return {b.lat_min + rng.uniform01() * (b.lat_max - b.lat_min), b.lon_min + rng.uniform01() * (b.lon_max - b.lon_min),
          0.0};
}

}  // namespace

TEST_CASE("haversine reference values") {
  const GpsPoint a{0, 0, 0}, b{0, 1, 0};
  CHECK(haversine_m(a, a) == 0.0);
  CHECK(haversine_m(a, b) == doctest::Approx(2 * std::numbers::pi * kEarthRadiusM / 360.0).epsilon(1e-12));
  CHECK(haversine_m(a, b) == doctest::Approx(111194.93).epsilon(1e-7));
  const GpsPoint p{41.14, -8.61, 0}, q{41.15, -8.61, 0};
  const double ref = oracle::law_of_cosines_m(41.14, -8.61, 41.15, -8.61);
  // acos near 1 loses about 1e-5 m at this separation; the oracle limits the tolerance.
  CHECK(std::abs(haversine_m(p, q) - ref) <= 1e-5);
}

TEST_CASE("haversine is symmetric and non-negative") {
  CounterRng rng(1, 0);
  for (int i = 0; i < 1000; ++i) {
    const GpsPoint a{-90 + 180 * rng.uniform01(), -180 + 360 * rng.uniform01(), 0};
    const GpsPoint b{-90 + 180 * rng.uniform01(), -180 + 360 * rng.uniform01(), 0};
    const double d = haversine_m(a, b);
    CHECK(d >= 0.0);
    CHECK(std::abs(d - haversine_m(b, a)) <= 1e-12 * std::max(1.0, d));
  }
}

TEST_CASE("bearing axis cases and reference") {
  CHECK(bearing_deg({41.0, -8.6, 0}, {41.1, -8.6, 0}).degrees == doctest::Approx(0.0));
  CHECK(bearing_deg({0, 0, 0}, {0, 1, 0}).degrees == doctest::Approx(90.0));
  const Bearing deg = bearing_deg({41.14, -8.61, 0}, {41.14, -8.61, 0});
  CHECK(deg.degenerate);
  CHECK(deg.degrees == 0.0);
  const double b = bearing_deg({41.14, -8.61, 0}, {41.15, -8.60, 0}).degrees;
  CHECK(std::abs(b - vector_bearing(41.14, -8.61, 41.15, -8.60)) <= 1e-6);

  CounterRng rng(2, 0);
  for (int i = 0; i < 1000; ++i) {
    const GpsPoint p{-80 + 160 * rng.uniform01(), -180 + 360 * rng.uniform01(), 0};
    const GpsPoint q{-80 + 160 * rng.uniform01(), -180 + 360 * rng.uniform01(), 0};
    const Bearing br = bearing_deg(p, q);
    CHECK(br.degrees >= 0.0);
    CHECK(br.degrees < 360.0);
    CHECK(std::abs(std::remainder(br.degrees - vector_bearing(p.lat, p.lon, q.lat, q.lon), 360.0)) <= 1e-6);
  }
}

TEST_CASE("speed from distance over elapsed time") {
  const GpsPoint a{0, 0, 0};
  CHECK(speed_mps(a, {0, 0, 15}) == 0.0);
  const double dlon = 150.0 / (kEarthRadiusM * std::numbers::pi / 180.0);
  CHECK(speed_mps(a, {0, dlon, 15}) == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(speed_mps(a, {0, dlon, 0}) == 0.0);
  CHECK_THROWS_AS(speed_mps({0, 0, 10}, {0, 0, 5}), OrderingError);

  CounterRng rng(3, 0);
  for (int i = 0; i < 200; ++i) {
    const GpsPoint p{41 + rng.uniform01(), -8 + rng.uniform01(), 0};
    const double dt = 1 + 100 * rng.uniform01();
    const GpsPoint q1{41 + rng.uniform01(), -8 + rng.uniform01(), dt};
    const GpsPoint q2{q1.lat, q1.lon, 2 * dt};
    CHECK(speed_mps(p, q2) == doctest::Approx(speed_mps(p, q1) / 2).epsilon(1e-15));
  }
}

TEST_CASE("point and trajectory validation") {
  CHECK_THROWS_AS(validate(GpsPoint{91, 0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(validate(GpsPoint{0, 0, NAN}), std::invalid_argument);
  CHECK_THROWS_AS(validate(Trajectory{"x", {}}), std::invalid_argument);
  CHECK_THROWS_AS(validate(Trajectory{"x", {{0, 0, 10}, {0, 0, 5}}}), OrderingError);
  CHECK_NOTHROW(validate(Trajectory{"x", {{0, 0, 5}, {0, 0, 5}}}));
}

TEST_CASE("quad cells: root, quadrants and domain") {
  const GridConfig cfg = quad();
  const GpsPoint center{41.16, -8.615, 0};
  const CellKey root = cell_of(center, 0, cfg);
  CHECK(root.resolution == 0);
  CHECK(root.index == 0);
  const CellKey ll = cell_of({41.11, -8.69, 0}, 1, cfg);
  CHECK(quad_row_col(ll).row == 0);
  CHECK(quad_row_col(ll).col == 0);
  // The max edges belong to the last row and column.
  const CellKey corner = cell_of({kPortoBBox.lat_max, kPortoBBox.lon_max, 0}, 3, cfg);
  CHECK(quad_row_col(corner).row == 7);
  CHECK(quad_row_col(corner).col == 7);
  CHECK_THROWS_AS(cell_of({41.5, -8.6, 0}, 2, cfg), OutOfDomainError);
}

TEST_CASE("quad cell centers map back to their cell") {
  const GridConfig cfg = quad();
  CounterRng rng(4, 0);
  for (int i = 0; i < 1000; ++i) {
    const CellKey c = cell_of(random_point(rng), 5, cfg);
    CHECK(cell_of(cell_center(c, cfg), 5, cfg) == c);
  }
}

TEST_CASE("quad children tile their parent") {
  const GridConfig cfg = quad();
  CounterRng rng(5, 0);
  for (int i = 0; i < 50; ++i) {
    const CellKey c = cell_of(random_point(rng), static_cast<int>(rng.uniform(6)), cfg);
    const auto kids = children(c);
    REQUIRE(kids.size() == 4);
    CHECK(std::set<CellKey>(kids.begin(), kids.end()).size() == 4);
    const QuadRect pr = quad_rect(c, kPortoBBox);
    double area = 0.0;
    for (std::size_t a = 0; a < kids.size(); ++a) {
      CHECK(parent(kids[a]) == c);
      CHECK(is_ancestor(c, kids[a]));
      const QuadRect ka = quad_rect(kids[a], kPortoBBox);
      CHECK(ka.lat_lo >= pr.lat_lo - 1e-12);
      CHECK(ka.lat_hi <= pr.lat_hi + 1e-12);
      CHECK(ka.lon_lo >= pr.lon_lo - 1e-12);
      CHECK(ka.lon_hi <= pr.lon_hi + 1e-12);
      area += (ka.lat_hi - ka.lat_lo) * (ka.lon_hi - ka.lon_lo);
      for (std::size_t b = a + 1; b < kids.size(); ++b) {
        const QuadRect kb = quad_rect(kids[b], kPortoBBox);
        const double ov_lat = std::min(ka.lat_hi, kb.lat_hi) - std::max(ka.lat_lo, kb.lat_lo);
        const double ov_lon = std::min(ka.lon_hi, kb.lon_hi) - std::max(ka.lon_lo, kb.lon_lo);
        CHECK((ov_lat <= 1e-12 || ov_lon <= 1e-12));
      }
    }
    CHECK(area == doctest::Approx((pr.lat_hi - pr.lat_lo) * (pr.lon_hi - pr.lon_lo)).epsilon(1e-12));
  }
}

TEST_CASE("parent chains and ancestry") {
  const GridConfig cfg = quad();
  CounterRng rng(6, 0);
  const CellKey c = cell_of(random_point(rng), 5, cfg);
  int steps = 0;
  CellKey k = c;
  while (k.resolution > 0) {
    k = parent(k);
    ++steps;
  }
  CHECK(steps == 5);
  CHECK(k == cell_of({41.16, -8.615, 0}, 0, cfg));
  CHECK(is_ancestor(k, c));
  CHECK_FALSE(is_ancestor(c, c));
  CHECK_FALSE(is_ancestor(c, k));
  const auto sib = children(parent(c));
  for (const CellKey& s : sib)
    if (s != c) CHECK_FALSE(is_ancestor(s, c));
  CHECK_THROWS_AS(parent(k), GridError);
  CHECK_THROWS_AS(children(CellKey{GridBackend::Quad, 0, max_supported_resolution(GridBackend::Quad)}), GridError);
}

TEST_CASE("quad mapping nests across resolutions and threads") {
  const GridConfig cfg = quad();
  CounterRng rng(7, 0);
  std::vector<GpsPoint> pts;
  for (int i = 0; i < 10000; ++i) pts.push_back(random_point(rng));
  for (std::size_t i = 0; i < 500; ++i) {
    const CellKey fine = cell_of(pts[i], 12, cfg);
    CellKey up = fine;
    for (int r = 12; r > 4; --r) up = parent(up);
    CHECK(up == cell_of(pts[i], 4, cfg));
  }
  std::vector<CellKey> a(pts.size()), b(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) a[i] = cell_of(pts[i], 9, cfg);
  {
    parallel::ThreadScope scope(3);
    parallel::parallel_for(0, static_cast<std::ptrdiff_t>(pts.size()),
                           [&](std::ptrdiff_t i) { b[i] = cell_of(pts[i], 9, cfg); });
  }
  CHECK(a == b);
}

TEST_CASE("grid config validation and backend names") {
  CHECK_THROWS_AS((GridConfig{GridBackend::Quad, kPortoBBox, 5, 3}.validate()), GridError);
  CHECK_THROWS_AS((GridConfig{GridBackend::Quad, {1, 0, 0, 1}, 0, 3}.validate()), GridError);
  CHECK(parse_backend(to_string(GridBackend::Hex)) == GridBackend::Hex);
  CHECK_THROWS(parse_backend("TRI"));
}

#if defined(TRAJTOK_TEST_HEX)
TEST_CASE("hex cells agree with the hexagonal library and nest loosely") {
  REQUIRE(hex_backend_available());
  const GridConfig cfg{GridBackend::Hex, kPortoBBox, 6, 9};
  CounterRng rng(8, 0);
  std::size_t leaked = 0;
  for (int i = 0; i < 2000; ++i) {
    const GpsPoint p = random_point(rng);
    const CellKey c = cell_of(p, 8, cfg);
    LatLng ll{degsToRads(p.lat), degsToRads(p.lon)};
    H3Index h = 0;
    REQUIRE(latLngToCell(&ll, 8, &h) == E_SUCCESS);
    CHECK(c.index == h);
    const auto kids = children(c);
    CHECK(kids.size() == 7);
    for (const CellKey& k : kids) CHECK(parent(k) == c);
    const CellKey fine = cell_of(p, 9, cfg);
    if (parent(fine) != c) ++leaked;
  }
  // Aperture-7 children do not tile their parent exactly, so a few points leak.
  CHECK(leaked < 2000 / 10);
}
#endif
