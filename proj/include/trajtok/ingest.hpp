#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "trajtok/geo.hpp"
#include "trajtok/spatial_grid.hpp"

namespace trajtok {

enum class Split : std::uint8_t { Train, Val, Test };
std::string to_string(Split s);

/// FNV-1a 64 of the id, mod 100: below 60 train, below 80 validation, else test.
Split split_of(std::string_view trip_id);

struct IngestStats {
  std::size_t rows = 0;  // data rows read (header and blank lines excluded)
  std::size_t parsed = 0;
  std::size_t skipped_missing = 0;    // MISSING_DATA true
  std::size_t skipped_empty = 0;      // no points left after the bbox filter
  std::size_t skipped_duplicate = 0;  // TRIP_ID seen before
  std::size_t malformed = 0;
  std::size_t points_kept = 0;
  std::size_t points_dropped = 0;  // outside the bbox
  std::vector<std::string> diagnostics;  // "line N: reason", one per skipped or malformed row

  std::size_t skipped() const { return skipped_missing + skipped_empty + skipped_duplicate; }
};

struct IngestOptions {
  BBox bbox = kPortoBBox;
  double sample_interval_s = 15.0;
  std::size_t max_trajectories = 0;  // stop after this many parsed trajectories; 0 = all
};

struct IngestResult {
  std::vector<Trajectory> trajectories;
  IngestStats stats;
};

/// Splits one CSV line into fields; double quotes delimit fields and "" escapes a quote.
/// Throws std::invalid_argument on an unterminated quote.
std::vector<std::string> split_csv_line(std::string_view line);

/// Reads the Porto taxi CSV layout (TRIP_ID, TIMESTAMP, MISSING_DATA, POLYLINE columns
/// located by header name). Point i of a polyline gets t = TIMESTAMP + i * interval, where
/// i counts every listed point, including ones later dropped by the bbox filter.
IngestResult ingest_porto_csv(std::string_view text, const IngestOptions& opts = {});
IngestResult ingest_porto_file(const std::filesystem::path& path, const IngestOptions& opts = {});

std::string format_ingest_stats(const IngestStats& s);

struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0;
};
SplitCounts split_counts(std::span<const Trajectory> trajs);
std::string format_split_counts(const SplitCounts& c);

/// Raw trajectory store, one record per line: <id> TAB <n> TAB lat:lon:t;lat:lon:t;...
/// Lines starting with '#' are comments.
std::string format_trajectory_store(std::span<const Trajectory> trajs);
std::vector<Trajectory> parse_trajectory_store(const std::string& text);

/// Rows in Porto CSV layout for the given trajectories; timestamps must be evenly spaced
/// by `interval_s` from the first point.
std::string format_porto_csv(std::span<const Trajectory> trajs, double interval_s = 15.0);

}  // namespace trajtok
