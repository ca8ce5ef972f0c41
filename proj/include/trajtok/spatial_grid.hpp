#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "trajtok/geo.hpp"

namespace trajtok {

enum class GridBackend : std::uint8_t { Quad, Hex };

std::string to_string(GridBackend b);
GridBackend parse_backend(const std::string& s);

/// Identity of one cell of a hierarchical grid.
///
/// Quad backend: index is the row-major rectangle number `row * 2^r + col`, with row 0 at
/// the southern bbox edge and col 0 at the western edge. Hex backend: index is the native
/// 64-bit hexagonal-hierarchy cell id.
struct CellKey {
  GridBackend backend = GridBackend::Quad;
  std::uint64_t index = 0;
  int resolution = 0;

  friend bool operator==(const CellKey&, const CellKey&) = default;
  /// Canonical order: resolution ascending, then index ascending.
  friend bool operator<(const CellKey& a, const CellKey& b) {
    if (a.resolution != b.resolution) return a.resolution < b.resolution;
    if (a.index != b.index) return a.index < b.index;
    return a.backend < b.backend;
  }
};

struct CellKeyHash {
  std::size_t operator()(const CellKey& c) const noexcept {
    std::uint64_t h = c.index * 0x9E3779B97F4A7C15ULL;
    h ^= (static_cast<std::uint64_t>(c.resolution) << 1 | static_cast<std::uint64_t>(c.backend)) +
         0x7F4A7C15ULL + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

struct BBox {
  double lat_min = 0.0, lat_max = 0.0, lon_min = 0.0, lon_max = 0.0;

  bool contains(double lat, double lon) const {
    return lat >= lat_min && lat <= lat_max && lon >= lon_min && lon <= lon_max;
  }
  friend bool operator==(const BBox&, const BBox&) = default;
};

/// Bounding box used for the Porto taxi data.
inline constexpr BBox kPortoBBox{41.100, 41.220, -8.700, -8.530};

struct GridConfig {
  GridBackend backend = GridBackend::Quad;
  BBox bbox = kPortoBBox;
  int r_min = 0;
  int r_max = 0;

  void validate() const;
  friend bool operator==(const GridConfig&, const GridConfig&) = default;
};

class OutOfDomainError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

class GridError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Finest resolution each backend supports.
int max_supported_resolution(GridBackend b);

/// True when the hexagonal backend was compiled in.
bool hex_backend_available();

/// Cell containing p at resolution r. Quad cells are half-open [lo, hi) per axis, except
/// that the bbox's max edges belong to the last row/column. Throws OutOfDomainError for
/// a Quad point outside the bbox.
CellKey cell_of(const GpsPoint& p, int r, const GridConfig& cfg);

/// Native children at resolution r+1: 4 for Quad, 7 for hexagons (6 for pentagons).
std::vector<CellKey> children(const CellKey& c);

CellKey parent(const CellKey& c);

/// Strict ancestry: true iff repeated parent() from b reaches a.
bool is_ancestor(const CellKey& a, const CellKey& b);

struct QuadRect {
  double lat_lo, lat_hi, lon_lo, lon_hi;
  double center_lat() const { return 0.5 * (lat_lo + lat_hi); }
  double center_lon() const { return 0.5 * (lon_lo + lon_hi); }
};

/// Row/column of a Quad cell at its resolution.
struct QuadRowCol {
  std::uint64_t row, col;
};
QuadRowCol quad_row_col(const CellKey& c);
CellKey quad_cell(std::uint64_t row, std::uint64_t col, int r);

/// Declared rectangle of a Quad cell inside bbox.
QuadRect quad_rect(const CellKey& c, const BBox& bbox);

/// Center of any cell (rectangle center for Quad, hexagon centroid for Hex).
GpsPoint cell_center(const CellKey& c, const GridConfig& cfg);

}  // namespace trajtok
