#include "trajtok/ingest.hpp"

#include <charconv>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "json.hpp"
#include "trajtok/hash.hpp"
#include "trajtok/io.hpp"

namespace trajtok {

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split split_of(std::string_view trip_id) {
  const std::uint64_t bucket = fnv1a64(trip_id) % 100;
  if (bucket < 60) return Split::Train;
  if (bucket < 80) return Split::Val;
  return Split::Test;
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          fields.back() += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else if (c != '\r') {
      fields.back() += c;
    }
  }
  if (quoted) throw std::invalid_argument("unterminated quoted field");
  return fields;
}

namespace {

struct Columns {
  std::size_t trip_id, timestamp, missing, polyline, count;
};

Columns locate_columns(const std::vector<std::string>& header) {
  auto find = [&](const char* name) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw std::invalid_argument(std::string("CSV header has no ") + name + " column");
  };
  return {find("TRIP_ID"), find("TIMESTAMP"), find("MISSING_DATA"), find("POLYLINE"), header.size()};
}

bool parse_int64(const std::string& s, std::int64_t& out) {
  const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  return r.ec == std::errc() && r.ptr == s.data() + s.size();
}

}  // namespace

IngestResult ingest_porto_csv(std::string_view text, const IngestOptions& opts) {
  IngestResult out;
  IngestStats& st = out.stats;
  const auto lines = split_view(text, '\n');
  std::size_t li = 0;
  while (li < lines.size() && (lines[li].empty() || lines[li] == "\r")) ++li;
  if (li == lines.size()) throw std::invalid_argument("CSV is empty");
  const Columns cols = locate_columns(split_csv_line(lines[li]));
  ++li;

  std::unordered_set<std::string> seen;
  for (; li < lines.size(); ++li) {
    const std::string_view line = lines[li];
    if (line.empty() || line == "\r") continue;
    if (opts.max_trajectories > 0 && st.parsed >= opts.max_trajectories) break;
    ++st.rows;
    const std::string where = "line " + std::to_string(li + 1) + ": ";
    auto malformed = [&](const std::string& why) {
      ++st.malformed;
      st.diagnostics.push_back(where + "malformed, " + why);
    };

    std::vector<std::string> f;
    try {
      f = split_csv_line(line);
    } catch (const std::invalid_argument& e) {
      malformed(e.what());
      continue;
    }
    if (f.size() != cols.count) {
      malformed("expected " + std::to_string(cols.count) + " fields, found " + std::to_string(f.size()));
      continue;
    }
    const std::string& id = f[cols.trip_id];
    if (id.empty()) {
      malformed("empty TRIP_ID");
      continue;
    }
    const std::string& missing = f[cols.missing];
    if (missing != "True" && missing != "False") {
      malformed("MISSING_DATA must be True or False");
      continue;
    }
    std::int64_t t0 = 0;
    if (!parse_int64(f[cols.timestamp], t0)) {
      malformed("bad TIMESTAMP '" + f[cols.timestamp] + "'");
      continue;
    }
    nlohmann::json poly;
    try {
      poly = nlohmann::json::parse(f[cols.polyline]);
    } catch (const nlohmann::json::parse_error&) {
      malformed("POLYLINE is not a JSON array");
      continue;
    }
    if (!poly.is_array()) {
      malformed("POLYLINE is not a JSON array");
      continue;
    }
    Trajectory traj;
    traj.id = id;
    bool bad = false;
    std::size_t dropped = 0;
    for (std::size_t i = 0; i < poly.size() && !bad; ++i) {
      const auto& pt = poly[i];
      if (!pt.is_array() || pt.size() != 2 || !pt[0].is_number() || !pt[1].is_number()) {
        bad = true;
        break;
      }
      const double lon = pt[0].get<double>();
      const double lat = pt[1].get<double>();
      if (!std::isfinite(lat) || !std::isfinite(lon) || std::abs(lat) > 90.0 || std::abs(lon) > 180.0) {
        bad = true;
        break;
      }
      if (!opts.bbox.contains(lat, lon)) {
        ++dropped;
        continue;
      }
      traj.points.push_back({lat, lon, static_cast<double>(t0) + opts.sample_interval_s * static_cast<double>(i)});
    }
    if (bad) {
      malformed("POLYLINE entries must be [lon, lat] pairs in range");
      continue;
    }
    if (missing == "True") {
      ++st.skipped_missing;
      st.diagnostics.push_back(where + "skipped, MISSING_DATA is True");
      continue;
    }
    if (traj.points.empty()) {
      ++st.skipped_empty;
      st.diagnostics.push_back(where + "skipped, no points inside the bounding box");
      continue;
    }
    if (!seen.insert(id).second) {
      ++st.skipped_duplicate;
      st.diagnostics.push_back(where + "skipped, duplicate TRIP_ID " + id);
      continue;
    }
    st.points_dropped += dropped;
    st.points_kept += traj.points.size();
    ++st.parsed;
    out.trajectories.push_back(std::move(traj));
  }
  return out;
}

IngestResult ingest_porto_file(const std::filesystem::path& path, const IngestOptions& opts) {
  return ingest_porto_csv(read_file(path), opts);
}

std::string format_ingest_stats(const IngestStats& s) {
  std::string o;
  o += "rows=" + std::to_string(s.rows) + "\n";
  o += "parsed=" + std::to_string(s.parsed) + "\n";
  o += "skipped=" + std::to_string(s.skipped()) + "\n";
  o += "skipped_missing=" + std::to_string(s.skipped_missing) + "\n";
  o += "skipped_empty=" + std::to_string(s.skipped_empty) + "\n";
  o += "skipped_duplicate=" + std::to_string(s.skipped_duplicate) + "\n";
  o += "malformed=" + std::to_string(s.malformed) + "\n";
  o += "points_kept=" + std::to_string(s.points_kept) + "\n";
  o += "points_dropped=" + std::to_string(s.points_dropped) + "\n";
  for (const auto& d : s.diagnostics) o += "diagnostic=" + d + "\n";
  return o;
}

SplitCounts split_counts(std::span<const Trajectory> trajs) {
  SplitCounts c;
  for (const Trajectory& t : trajs) {
    switch (split_of(t.id)) {
      case Split::Train: ++c.train; break;
      case Split::Val: ++c.val; break;
      case Split::Test: ++c.test; break;
    }
  }
  return c;
}

std::string format_split_counts(const SplitCounts& c) {
  const double n = static_cast<double>(c.train + c.val + c.test);
  auto pct = [&](std::size_t k) { return format_double(n > 0 ? 100.0 * static_cast<double>(k) / n : 0.0); };
  return "train=" + std::to_string(c.train) + "\nval=" + std::to_string(c.val) + "\ntest=" + std::to_string(c.test) +
         "\ntrain_pct=" + pct(c.train) + "\nval_pct=" + pct(c.val) + "\ntest_pct=" + pct(c.test) + "\n";
}

std::string format_trajectory_store(std::span<const Trajectory> trajs) {
  std::string s;
  for (const Trajectory& t : trajs) {
    if (t.id.find_first_of("\t\n\r") != std::string::npos || (!t.id.empty() && t.id[0] == '#')) {
      throw std::invalid_argument("trajectory id '" + t.id + "' cannot be stored");
    }
    s += t.id + '\t' + std::to_string(t.points.size()) + '\t';
    for (std::size_t i = 0; i < t.points.size(); ++i) {
      if (i) s += ';';
      const GpsPoint& p = t.points[i];
      s += format_double(p.lat) + ':' + format_double(p.lon) + ':' + format_double(p.t);
    }
    s += '\n';
  }
  return s;
}

std::vector<Trajectory> parse_trajectory_store(const std::string& text) {
  std::vector<Trajectory> out;
  std::size_t lineno = 0;
  for (auto line : split_view(text, '\n')) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto f = split_view(line, '\t');
    auto fail = [&](const std::string& why) {
      throw std::invalid_argument("trajectory store line " + std::to_string(lineno) + ": " + why);
    };
    if (f.size() != 3) fail("expected 3 fields");
    Trajectory t;
    t.id = std::string(f[0]);
    std::size_t n = 0;
    if (std::from_chars(f[1].data(), f[1].data() + f[1].size(), n).ec != std::errc()) fail("bad point count");
    if (!f[2].empty()) {
      for (auto pt : split_view(f[2], ';')) {
        const auto c = split_view(pt, ':');
        if (c.size() != 3) fail("bad point");
        t.points.push_back({parse_double(c[0]), parse_double(c[1]), parse_double(c[2])});
      }
    }
    if (t.points.size() != n) fail("point count mismatch");
    out.push_back(std::move(t));
  }
  return out;
}

std::string format_porto_csv(std::span<const Trajectory> trajs, double interval_s) {
  std::string s =
      "\"TRIP_ID\",\"CALL_TYPE\",\"ORIGIN_CALL\",\"ORIGIN_STAND\",\"TAXI_ID\",\"TIMESTAMP\",\"DAY_TYPE\","
      "\"MISSING_DATA\",\"POLYLINE\"\n";
  for (const Trajectory& t : trajs) {
    if (t.points.empty()) throw std::invalid_argument("cannot write an empty trajectory");
    const double t0 = t.points.front().t;
    for (std::size_t i = 0; i < t.points.size(); ++i) {
      if (std::abs(t.points[i].t - (t0 + interval_s * static_cast<double>(i))) > 1e-6) {
        throw std::invalid_argument("trajectory " + t.id + " is not evenly sampled");
      }
    }
    s += "\"" + t.id + "\",\"C\",\"\",\"\",\"20000001\",\"" + std::to_string(static_cast<std::int64_t>(t0)) +
         "\",\"A\",\"False\",\"[";
    for (std::size_t i = 0; i < t.points.size(); ++i) {
      if (i) s += ',';
      s += '[' + format_double(t.points[i].lon) + ',' + format_double(t.points[i].lat) + ']';
    }
    s += "]\"\n";
  }
  return s;
}

}  // namespace trajtok
