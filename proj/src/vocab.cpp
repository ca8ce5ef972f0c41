#include "trajtok/vocab.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include "trajtok/hash.hpp"
#include "trajtok/io.hpp"
#include "trajtok/parallel.hpp"

namespace trajtok {

void merge_counts(CountMap& into, const CountMap& from) {
  for (const auto& [cell, n] : from) into[cell] += n;
}

CountMap count_base_serial(std::span<const GpsPoint> points, const GridConfig& cfg) {
  CountMap counts;
  for (const auto& p : points) ++counts[cell_of(p, cfg.r_min, cfg)];
  return counts;
}

CountMap count_base_sharded(std::span<const GpsPoint> points, const GridConfig& cfg, int n_shards) {
  if (n_shards < 1) n_shards = 1;
  std::vector<CountMap> shard_counts(static_cast<std::size_t>(n_shards));
  const std::size_t n = points.size();
  parallel::parallel_for(0, n_shards, [&](std::ptrdiff_t s) {
    const std::size_t lo = n * static_cast<std::size_t>(s) / static_cast<std::size_t>(n_shards);
    const std::size_t hi = n * static_cast<std::size_t>(s + 1) / static_cast<std::size_t>(n_shards);
    shard_counts[static_cast<std::size_t>(s)] = count_base_serial(points.subspan(lo, hi - lo), cfg);
  });
  CountMap merged;
  for (const auto& c : shard_counts) merge_counts(merged, c);
  return merged;
}

CountMap count_base(std::span<const GpsPoint> points, const GridConfig& cfg) {
  return count_base_sharded(points, cfg, std::max(1, parallel::max_threads()));
}

Vocabulary::Vocabulary(GridConfig grid, std::uint64_t capacity, std::vector<CellKey> cells,
                       std::string config_echo)
    : grid_(grid), capacity_(capacity), cells_(std::move(cells)), config_echo_(std::move(config_echo)) {
  std::sort(cells_.begin(), cells_.end());
  lookup_.reserve(cells_.size());
  for (std::size_t i = 0; i < cells_.size(); ++i) {
    const auto [it, inserted] = lookup_.emplace(cells_[i], static_cast<TokenId>(i) + kFirstCell);
    if (!inserted) throw std::invalid_argument("duplicate vocabulary cell");
  }
}

std::optional<TokenId> Vocabulary::token_of(const CellKey& c) const {
  const auto it = lookup_.find(c);
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

const CellKey& Vocabulary::cell(TokenId id) const {
  if (id < kFirstCell || static_cast<std::size_t>(id) >= size())
    throw std::out_of_range("token id " + std::to_string(id) + " is not a cell token");
  return cells_[static_cast<std::size_t>(id - kFirstCell)];
}

Vocabulary build_vocabulary(std::span<const GpsPoint> points, const GridConfig& cfg,
                            std::uint64_t capacity) {
  cfg.validate();
  if (capacity < 1) throw std::invalid_argument("capacity must be >= 1");

  // Cell ids per point are computed in parallel; bucketing is serial and ordered.
  std::vector<CellKey> assigned(points.size());
  parallel::parallel_for(0, static_cast<std::ptrdiff_t>(points.size()), [&](std::ptrdiff_t i) {
    assigned[static_cast<std::size_t>(i)] = cell_of(points[static_cast<std::size_t>(i)], cfg.r_min, cfg);
  });

  std::map<CellKey, std::vector<std::uint32_t>> level;
  for (std::size_t i = 0; i < points.size(); ++i) level[assigned[i]].push_back(static_cast<std::uint32_t>(i));

  std::vector<CellKey> accepted;
  for (int r = cfg.r_min; !level.empty(); ++r) {
    std::map<CellKey, std::vector<std::uint32_t>> next;
    for (auto& [cell, subset] : level) {
      if (subset.size() > capacity && r < cfg.r_max) {
        for (std::uint32_t i : subset) next[cell_of(points[i], r + 1, cfg)].push_back(i);
      } else {
        accepted.push_back(cell);
      }
    }
    level = std::move(next);
  }
  return Vocabulary(cfg, capacity, std::move(accepted));
}

std::vector<std::uint64_t> recount(const Vocabulary& v, std::span<const GpsPoint> points) {
  std::vector<std::uint64_t> counts(v.num_cells(), 0);
  const GridConfig& g = v.grid();
  for (const auto& p : points) {
    if (g.backend == GridBackend::Quad && !g.bbox.contains(p.lat, p.lon)) continue;
    for (int r = g.r_min; r <= g.r_max; ++r) {
      if (auto id = v.token_of(cell_of(p, r, g))) ++counts[static_cast<std::size_t>(*id - Vocabulary::kFirstCell)];
    }
  }
  return counts;
}

// ---------------------------------------------------------------------------------------
// File format

namespace {

constexpr std::string_view kChecksumKey = "checksum=";

std::string_view expect_key(std::string_view line, std::string_view key) {
  if (line.size() < key.size() + 1 || line.substr(0, key.size()) != key || line[key.size()] != '=')
    throw VocabFormatError("expected header '" + std::string(key) + "=', got '" + std::string(line) + "'");
  return line.substr(key.size() + 1);
}

template <class Int>
Int parse_int(std::string_view s) {
  Int v{};
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size())
    throw VocabFormatError("bad integer '" + std::string(s) + "'");
  return v;
}

double parse_real(std::string_view s) {
  try {
    return parse_double(s);
  } catch (const std::invalid_argument& e) {
    throw VocabFormatError(e.what());
  }
}

}  // namespace

std::string serialize_vocabulary(const Vocabulary& v) {
  const GridConfig& g = v.grid();
  std::ostringstream body;
  body << "version=" << kVocabFormatVersion << '\n'
       << "backend=" << to_string(g.backend) << '\n'
       << "bbox=" << format_double(g.bbox.lat_min) << ',' << format_double(g.bbox.lat_max) << ','
       << format_double(g.bbox.lon_min) << ',' << format_double(g.bbox.lon_max) << '\n'
       << "rmin=" << g.r_min << '\n'
       << "rmax=" << g.r_max << '\n'
       << "capacity=" << v.capacity() << '\n'
       << "count=" << v.num_cells() << '\n'
       << "config=" << v.config_echo() << '\n';
  for (std::size_t i = 0; i < v.num_cells(); ++i) {
    const CellKey& c = v.cells()[i];
    body << (static_cast<TokenId>(i) + Vocabulary::kFirstCell) << '\t' << c.resolution << '\t' << c.index << '\n';
  }
  std::string text = body.str();
  text += std::string(kChecksumKey) + hex64(fnv1a64(text)) + '\n';
  return text;
}

Vocabulary parse_vocabulary(const std::string& text) {
  const std::string_view all(text);
  const auto first_nl = all.find('\n');
  if (first_nl == std::string_view::npos) throw VocabFormatError("vocabulary file has no header");
  const auto version = parse_int<int>(expect_key(all.substr(0, first_nl), "version"));
  if (version != kVocabFormatVersion)
    throw VocabVersionError("unsupported vocabulary format version " + std::to_string(version));

  if (all.empty() || all.back() != '\n') throw VocabFormatError("vocabulary file truncated");
  const auto last_start = all.rfind('\n', all.size() - 2);
  const auto body_end = last_start == std::string_view::npos ? 0 : last_start + 1;
  const std::string_view last_line = all.substr(body_end, all.size() - body_end - 1);
  if (last_line.substr(0, kChecksumKey.size()) != kChecksumKey)
    throw VocabFormatError("vocabulary file truncated: missing checksum line");
  const std::string_view body = all.substr(0, body_end);
  if (last_line.substr(kChecksumKey.size()) != hex64(fnv1a64(body)))
    throw VocabChecksumError("vocabulary checksum mismatch");

  auto lines = split_view(body.substr(0, body.size() - 1), '\n');
  if (lines.size() < 8) throw VocabFormatError("vocabulary header incomplete");
  GridConfig g;
  try {
    g.backend = parse_backend(std::string(expect_key(lines[1], "backend")));
  } catch (const GridError& e) {
    throw VocabFormatError(e.what());
  }
  const auto bbox = split_view(expect_key(lines[2], "bbox"), ',');
  if (bbox.size() != 4) throw VocabFormatError("bbox needs 4 values");
  g.bbox = {parse_real(bbox[0]), parse_real(bbox[1]), parse_real(bbox[2]), parse_real(bbox[3])};
  g.r_min = parse_int<int>(expect_key(lines[3], "rmin"));
  g.r_max = parse_int<int>(expect_key(lines[4], "rmax"));
  const auto capacity = parse_int<std::uint64_t>(expect_key(lines[5], "capacity"));
  const auto count = parse_int<std::size_t>(expect_key(lines[6], "count"));
  std::string echo(expect_key(lines[7], "config"));
  if (lines.size() != 8 + count) throw VocabFormatError("entry count does not match header");

  std::vector<CellKey> cells;
  cells.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto f = split_view(lines[8 + i], '\t');
    if (f.size() != 3) throw VocabFormatError("entry line " + std::to_string(i) + " needs 3 fields");
    const auto id = parse_int<TokenId>(f[0]);
    if (id != static_cast<TokenId>(i) + Vocabulary::kFirstCell) throw VocabFormatError("token ids not dense");
    const auto res = parse_int<int>(f[1]);
    if (res < g.r_min || res > g.r_max) throw VocabFormatError("entry resolution outside [rmin, rmax]");
    cells.push_back({g.backend, parse_int<std::uint64_t>(f[2]), res});
  }
  if (!std::is_sorted(cells.begin(), cells.end())) throw VocabFormatError("entries not in canonical order");
  return Vocabulary(g, capacity, std::move(cells), std::move(echo));
}

void save_vocabulary(const Vocabulary& v, const std::filesystem::path& path) {
  write_file(path, serialize_vocabulary(v));
}

Vocabulary load_vocabulary(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::runtime_error& e) {
    throw VocabFileError(e.what());
  }
  return parse_vocabulary(text);
}

}  // namespace trajtok
