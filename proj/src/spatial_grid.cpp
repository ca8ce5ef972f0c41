#include "trajtok/spatial_grid.hpp"

#include <cmath>

#ifdef TRAJTOK_HAVE_H3
#include "h3api.h"
#endif

namespace trajtok {

namespace {

constexpr int kQuadMaxResolution = 30;
constexpr int kHexMaxResolution = 15;

std::uint64_t quad_axis_index(double value, double lo, double hi, int r) {
  const double frac = (value - lo) / (hi - lo);
  const auto n = std::uint64_t{1} << r;
  auto idx = static_cast<std::uint64_t>(std::floor(std::ldexp(frac, r)));
  if (idx >= n) idx = n - 1;
  return idx;
}

#ifdef TRAJTOK_HAVE_H3
CellKey hex_cell_of(const GpsPoint& p, int r) {
  LatLng ll{degsToRads(p.lat), degsToRads(p.lon)};
  H3Index h = 0;
  if (latLngToCell(&ll, r, &h) != E_SUCCESS) throw OutOfDomainError("hexagonal cell lookup failed");
  return {GridBackend::Hex, static_cast<std::uint64_t>(h), r};
}
#endif

[[noreturn]] void no_hex() {
  throw GridError("hexagonal backend not compiled in (configure with TRAJTOK_WITH_H3=ON)");
}

}  // namespace

std::string to_string(GridBackend b) { return b == GridBackend::Quad ? "QUAD" : "HEX"; }

GridBackend parse_backend(const std::string& s) {
  if (s == "QUAD" || s == "quad") return GridBackend::Quad;
  if (s == "HEX" || s == "hex") return GridBackend::Hex;
  throw GridError("unknown grid backend '" + s + "'");
}

int max_supported_resolution(GridBackend b) {
  return b == GridBackend::Quad ? kQuadMaxResolution : kHexMaxResolution;
}

bool hex_backend_available() {
#ifdef TRAJTOK_HAVE_H3
  return true;
#else
  return false;
#endif
}

void GridConfig::validate() const {
  if (!(bbox.lat_min < bbox.lat_max) || !(bbox.lon_min < bbox.lon_max))
    throw GridError("bbox must satisfy lat_min < lat_max and lon_min < lon_max");
  if (r_min < 0 || r_min > r_max) throw GridError("resolutions must satisfy 0 <= r_min <= r_max");
  if (r_max > max_supported_resolution(backend))
    throw GridError("r_max exceeds the backend's finest resolution");
  if (backend == GridBackend::Hex && !hex_backend_available()) no_hex();
}

CellKey cell_of(const GpsPoint& p, int r, const GridConfig& cfg) {
  if (r < 0 || r > max_supported_resolution(cfg.backend))
    throw GridError("resolution " + std::to_string(r) + " unsupported");
  if (cfg.backend == GridBackend::Hex) {
#ifdef TRAJTOK_HAVE_H3
    return hex_cell_of(p, r);
#else
    no_hex();
#endif
  }
  const BBox& b = cfg.bbox;
  if (!b.contains(p.lat, p.lon)) throw OutOfDomainError("point outside grid bbox");
  const auto row = quad_axis_index(p.lat, b.lat_min, b.lat_max, r);
  const auto col = quad_axis_index(p.lon, b.lon_min, b.lon_max, r);
  return quad_cell(row, col, r);
}

QuadRowCol quad_row_col(const CellKey& c) {
  const std::uint64_t mask = (std::uint64_t{1} << c.resolution) - 1;
  return {c.index >> c.resolution, c.index & mask};
}

CellKey quad_cell(std::uint64_t row, std::uint64_t col, int r) {
  return {GridBackend::Quad, (row << r) | col, r};
}

std::vector<CellKey> children(const CellKey& c) {
  if (c.resolution >= max_supported_resolution(c.backend))
    throw GridError("cell already at the backend's finest resolution");
  if (c.backend == GridBackend::Hex) {
#ifdef TRAJTOK_HAVE_H3
    const auto h = static_cast<H3Index>(c.index);
    std::int64_t n = 0;
    if (cellToChildrenSize(h, c.resolution + 1, &n) != E_SUCCESS) throw GridError("invalid hex cell");
    std::vector<H3Index> raw(static_cast<std::size_t>(n));
    if (cellToChildren(h, c.resolution + 1, raw.data()) != E_SUCCESS) throw GridError("invalid hex cell");
    std::vector<CellKey> out;
    out.reserve(raw.size());
    for (H3Index k : raw)
      if (k != 0) out.push_back({GridBackend::Hex, static_cast<std::uint64_t>(k), c.resolution + 1});
    return out;
#else
    no_hex();
#endif
  }
  const auto [row, col] = quad_row_col(c);
  const int r = c.resolution + 1;
  return {quad_cell(2 * row, 2 * col, r), quad_cell(2 * row, 2 * col + 1, r),
          quad_cell(2 * row + 1, 2 * col, r), quad_cell(2 * row + 1, 2 * col + 1, r)};
}

CellKey parent(const CellKey& c) {
  if (c.resolution <= 0) throw GridError("resolution-0 cell has no parent");
  if (c.backend == GridBackend::Hex) {
#ifdef TRAJTOK_HAVE_H3
    H3Index p = 0;
    if (cellToParent(static_cast<H3Index>(c.index), c.resolution - 1, &p) != E_SUCCESS)
      throw GridError("invalid hex cell");
    return {GridBackend::Hex, static_cast<std::uint64_t>(p), c.resolution - 1};
#else
    no_hex();
#endif
  }
  const auto [row, col] = quad_row_col(c);
  return quad_cell(row >> 1, col >> 1, c.resolution - 1);
}

bool is_ancestor(const CellKey& a, const CellKey& b) {
  if (a.backend != b.backend) throw GridError("is_ancestor across backends");
  if (a.resolution >= b.resolution) return false;
  CellKey cur = b;
  while (cur.resolution > a.resolution) cur = parent(cur);
  return cur == a;
}

QuadRect quad_rect(const CellKey& c, const BBox& b) {
  const auto [row, col] = quad_row_col(c);
  const double lat_span = b.lat_max - b.lat_min;
  const double lon_span = b.lon_max - b.lon_min;
  const int r = c.resolution;
  return {b.lat_min + lat_span * std::ldexp(static_cast<double>(row), -r),
          b.lat_min + lat_span * std::ldexp(static_cast<double>(row + 1), -r),
          b.lon_min + lon_span * std::ldexp(static_cast<double>(col), -r),
          b.lon_min + lon_span * std::ldexp(static_cast<double>(col + 1), -r)};
}

GpsPoint cell_center(const CellKey& c, const GridConfig& cfg) {
  if (c.backend == GridBackend::Hex) {
#ifdef TRAJTOK_HAVE_H3
    LatLng ll{};
    if (cellToLatLng(static_cast<H3Index>(c.index), &ll) != E_SUCCESS) throw GridError("invalid hex cell");
    return {radsToDegs(ll.lat), radsToDegs(ll.lng), 0.0};
#else
    no_hex();
#endif
  }
  const QuadRect rect = quad_rect(c, cfg.bbox);
  return {rect.center_lat(), rect.center_lon(), 0.0};
}

}  // namespace trajtok
