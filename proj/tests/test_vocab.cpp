#include <doctest.h>

#include <filesystem>
#include <map>
#include <set>

#include "trajtok/io.hpp"
#include "trajtok/parallel.hpp"
#include "trajtok/rng.hpp"
#include "trajtok/tokenizer.hpp"
#include "trajtok/vocab.hpp"

using namespace trajtok;

namespace {

GridConfig quad(int r_min, int r_max) { return {GridBackend::Quad, kPortoBBox, r_min, r_max}; }

/// Two dense clusters over a uniform background.
std::vector<GpsPoint> clustered_points(std::size_t n, std::uint64_t seed) {
  CounterRng rng(seed, 0);
  std::vector<GpsPoint> pts;
  const BBox& b = kPortoBBox;
  while (pts.size() < n) {
    GpsPoint p;
    const double u = rng.uniform01();
    if (u < 0.4) {
      p = {41.15 + 0.004 * rng.normal(), -8.61 + 0.005 * rng.normal(), 0};
    } else if (u < 0.6) {
      p = {41.19 + 0.01 * rng.normal(), -8.57 + 0.01 * rng.normal(), 0};
    } else {
      p = {b.lat_min + rng.uniform01() * (b.lat_max - b.lat_min), b.lon_min + rng.uniform01() * (b.lon_max - b.lon_min),
           0};
    }
    if (b.contains(p.lat, p.lon)) pts.push_back(p);
  }
  return pts;
}

// Closed-form membership: a cell is a leaf iff it holds points, every proper ancestor down
// to r_min is over capacity, and it is itself within capacity or at r_max.
std::set<CellKey> leaf_oracle(const std::vector<GpsPoint>& pts, const GridConfig& cfg, std::uint64_t cap) {
  std::vector<std::map<CellKey, std::uint64_t>> counts(cfg.r_max + 1);
  for (const GpsPoint& p : pts)
    for (int r = cfg.r_min; r <= cfg.r_max; ++r) ++counts[r][cell_of(p, r, cfg)];
  std::set<CellKey> out;
  for (int r = cfg.r_min; r <= cfg.r_max; ++r) {
    for (const auto& [c, n] : counts[r]) {
      if (n > cap && r < cfg.r_max) continue;
      bool ancestors_split = true;
      CellKey a = c;
      for (int q = r - 1; q >= cfg.r_min; --q) {
        a = parent(a);
        ancestors_split = ancestors_split && counts[q].at(a) > cap;
      }
      if (ancestors_split) out.insert(c);
    }
  }
  return out;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("trajtok_test_vocab_" + name);
}

}  // namespace

TEST_CASE("an under-capacity base cell stays whole") {
  const GridConfig cfg = quad(2, 6);
  std::vector<GpsPoint> pts(5, GpsPoint{41.15, -8.61, 0});
  const Vocabulary v = build_vocabulary(pts, cfg, 5);
  REQUIRE(v.num_cells() == 1);
  CHECK(v.cells()[0] == cell_of(pts[0], 2, cfg));
  CHECK(v.token_of(v.cells()[0]) == Vocabulary::kFirstCell);
  CHECK(v.size() == 4);
}

TEST_CASE("eight points two per quadrant split into the four children") {
  const GridConfig cfg = quad(0, 4);
  const BBox& b = kPortoBBox;
  const double dlat = b.lat_max - b.lat_min, dlon = b.lon_max - b.lon_min;
  std::vector<GpsPoint> pts;
  for (double fy : {0.2, 0.7})
    for (double fx : {0.2, 0.7}) {
      pts.push_back({b.lat_min + fy * dlat, b.lon_min + fx * dlon, 0});
      pts.push_back({b.lat_min + (fy + 0.1) * dlat, b.lon_min + (fx + 0.1) * dlon, 0});
    }
  const Vocabulary v = build_vocabulary(pts, cfg, 2);
  REQUIRE(v.num_cells() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(v.cells()[i].resolution == 1);
    CHECK(v.cells()[i].index == i);
    CHECK(v.token_of(v.cells()[i]) == static_cast<TokenId>(i) + 3);
  }
}

TEST_CASE("refinement matches the closed-form leaf set") {
  const auto pts = clustered_points(20000, 11);
  for (std::uint64_t cap : {50u, 300u, 2000u}) {
    const GridConfig cfg = quad(3, 9);
    const Vocabulary v = build_vocabulary(pts, cfg, cap);
    const std::set<CellKey> expected = leaf_oracle(pts, cfg, cap);
    CHECK(std::set<CellKey>(v.cells().begin(), v.cells().end()) == expected);
  }
}

TEST_CASE("capacity, ancestor-freeness and coverage") {
  const auto pts = clustered_points(20000, 12);
  const GridConfig cfg = quad(3, 8);
  const std::uint64_t cap = 200;
  const Vocabulary v = build_vocabulary(pts, cfg, cap);
  REQUIRE(v.num_cells() > 10);

  const auto counts = recount(v, pts);
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < v.num_cells(); ++i) {
    if (v.cells()[i].resolution < cfg.r_max) CHECK(counts[i] <= cap);
    CHECK(counts[i] > 0);
    CHECK(v.cells()[i].resolution >= cfg.r_min);
    CHECK(v.cells()[i].resolution <= cfg.r_max);
    total += counts[i];
  }
  CHECK(total == pts.size());

  for (const CellKey& a : v.cells())
    for (const CellKey& b : v.cells()) CHECK_FALSE(is_ancestor(a, b));

  for (const GpsPoint& p : pts) {
    int hits = 0;
    for (int r = cfg.r_min; r <= cfg.r_max; ++r) hits += v.token_of(cell_of(p, r, cfg)).has_value();
    CHECK(hits == 1);
    CHECK(map_point(v, p) != Vocabulary::kUnk);
  }
}

TEST_CASE("larger capacity never yields more cells") {
  const auto pts = clustered_points(10000, 13);
  std::size_t prev = SIZE_MAX;
  for (std::uint64_t cap : {10u, 40u, 160u, 640u, 2560u, 10240u}) {
    const std::size_t n = build_vocabulary(pts, quad(2, 9), cap).num_cells();
    CHECK(n <= prev);
    prev = n;
  }
}

TEST_CASE("counting and building are independent of threads and shards") {
  const auto pts = clustered_points(30000, 14);
  const GridConfig cfg = quad(4, 9);
  const CountMap ref = count_base_serial(pts, cfg);
  std::uint64_t sum = 0;
  for (const auto& [_, n] : ref) sum += n;
  CHECK(sum == pts.size());
  CHECK(count_base_sharded(pts, cfg, 7) == ref);
  const Vocabulary v1 = build_vocabulary(pts, cfg, 100);
  for (int threads : {1, 2, 4}) {
    parallel::ThreadScope scope(threads);
    CHECK(count_base(pts, cfg) == ref);
    CHECK(build_vocabulary(pts, cfg, 100) == v1);
  }
}

TEST_CASE("vocabulary file round trip") {
  const auto pts = clustered_points(5000, 15);
  Vocabulary v = build_vocabulary(pts, quad(3, 8), 100);
  v.set_config_echo(R"({"grid":"x"})");
  const auto path = temp_file("roundtrip.txt");
  save_vocabulary(v, path);
  const Vocabulary back = load_vocabulary(path);
  CHECK(back == v);
  CHECK(serialize_vocabulary(back) == read_file(path));
  for (TokenId id = Vocabulary::kFirstCell; id < static_cast<TokenId>(v.size()); ++id)
    CHECK(back.token_of(v.cell(id)) == id);
  std::filesystem::remove(path);
}

TEST_CASE("vocabulary file errors are distinguished") {
  const Vocabulary v = build_vocabulary(clustered_points(2000, 16), quad(3, 7), 100);
  const std::string text = serialize_vocabulary(v);

  std::string bumped = text;
  bumped.replace(0, bumped.find('\n'), "version=2");
  CHECK_THROWS_AS(parse_vocabulary(bumped), VocabVersionError);

  CHECK_THROWS_AS(parse_vocabulary(text.substr(0, text.size() / 2)), VocabFormatError);
  CHECK_THROWS_AS(parse_vocabulary(""), VocabFormatError);

  std::string flipped = text;
  const std::size_t at = flipped.find("\n3\t");
  REQUIRE(at != std::string::npos);
  flipped[at + 1] = '4';
  CHECK_THROWS_AS(parse_vocabulary(flipped), VocabChecksumError);

  CHECK_THROWS_AS(load_vocabulary(temp_file("missing.txt")), VocabFileError);
}
