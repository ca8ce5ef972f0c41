#include <doctest.h>

#include <cmath>
#include <numbers>

#include "trajtok/rng.hpp"
#include "trajtok/tokenizer.hpp"
#include "trajtok/vocab.hpp"

using namespace trajtok;

namespace {

const BBox kEquatorBox{-0.1, 0.1, -0.1, 0.1};

/// Coarse cells everywhere with the south-west quadrant refined to r_max.
Vocabulary mixed_vocab() {
  const GridConfig cfg{GridBackend::Quad, kPortoBBox, 1, 3};
  std::vector<CellKey> cells;
  for (const CellKey& c : children(quad_cell(0, 0, 1)))
    for (const CellKey& k : children(c)) cells.push_back(k);
  cells.push_back(quad_cell(0, 1, 1));
  cells.push_back(quad_cell(1, 0, 1));
  return Vocabulary(cfg, 10, cells);
}

double metres_to_lon_deg(double m) { return m / (kEarthRadiusM * std::numbers::pi / 180.0); }

Trajectory equator_walk(int n, double step_m, double dt) {
  Trajectory t{"walk", {}};
  for (int i = 0; i < n; ++i) t.points.push_back({0.0, metres_to_lon_deg(step_m * i), dt * i});
  return t;
}

}  // namespace

TEST_CASE("map_point picks the finest containing cell") {
  const Vocabulary v = mixed_vocab();
  const GridConfig& g = v.grid();
  const GpsPoint fine{41.105, -8.695, 0};
  CHECK(v.cell(map_point(v, fine)) == cell_of(fine, 3, g));
  const GpsPoint coarse{41.11, -8.56, 0};
  CHECK(v.cell(map_point(v, coarse)) == quad_cell(0, 1, 1));
  // North-east quadrant was never added.
  CHECK(map_point(v, {41.21, -8.54, 0}) == Vocabulary::kUnk);
  CHECK(map_point(v, {40.0, -8.6, 0}) == Vocabulary::kUnk);
}

TEST_CASE("tokenize basics") {
  const Vocabulary v = mixed_vocab();
  const Trajectory one{"one", {{41.105, -8.695, 100}}};
  const TokenSequence s1 = tokenize(v, one);
  REQUIRE(s1.size() == 1);
  CHECK(s1.tokens[0].speed == 0.0);
  CHECK(s1.id == "one");
  CHECK_THROWS_AS(tokenize(v, Trajectory{"e", {}}), std::invalid_argument);

  Trajectory same{"same", {}};
  for (int i = 0; i < 10; ++i) same.points.push_back({41.105 + 1e-5 * i, -8.695, 15.0 * i});
  CHECK(tokenize(v, same).size() == 10);
  const TokenSequence collapsed = tokenize(v, same, {.dedup = true, .max_len = 192});
  REQUIRE(collapsed.size() == 1);
  CHECK(collapsed.tokens[0].t == 0.0);
  CHECK(collapsed.tokens[0].lat == 41.105);

  Trajectory longer{"long", {}};
  for (int i = 0; i < 200; ++i) longer.points.push_back({41.15, -8.69 + 0.0007 * i, 15.0 * i});
  const TokenSequence trunc = tokenize(v, longer, {.dedup = false, .max_len = 192});
  REQUIRE(trunc.size() == 192);
  CHECK(trunc.tokens.back().t == 15.0 * 191);
  CHECK(trunc.tokens.back().lon == longer.points[191].lon);
}

TEST_CASE("kinematic features on an eastward equator walk") {
  const Vocabulary v(GridConfig{GridBackend::Quad, kEquatorBox, 0, 0}, 1, {quad_cell(0, 0, 0)});
  const TokenSequence s = tokenize(v, equator_walk(3, 150.0, 15.0));
  const auto k = kinematic_features(s, 30.0);
  REQUIRE(k.size() == 3);
  CHECK(k[0].v_norm == 0.0);
  for (std::size_t j = 0; j < 3; ++j) {
    if (j > 0) CHECK(k[j].v_norm == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
    CHECK(k[j].sin_heading == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(std::abs(k[j].cos_heading) < 1e-9);
  }
  // Exactly v_max and beyond both clamp to 1.
  CHECK(kinematic_features(s, 10.0)[1].v_norm == doctest::Approx(1.0));
  CHECK(kinematic_features(s, 5.0)[2].v_norm == 1.0);
}

TEST_CASE("stationary and degenerate headings") {
  const Vocabulary v(GridConfig{GridBackend::Quad, kEquatorBox, 0, 0}, 1, {quad_cell(0, 0, 0)});
  const TokenSequence still = tokenize(v, Trajectory{"s", {{0, 0, 0}, {0, 0, 15}}});
  for (const KinematicFeatures& f : kinematic_features(still, 30.0)) {
    CHECK(f.v_norm == 0.0);
    CHECK(f.sin_heading == 0.0);
    CHECK(f.cos_heading == 1.0);
  }
  // Stop in the middle of a northward trip keeps the northward heading.
  const TokenSequence stop = tokenize(v, Trajectory{"n", {{0, 0, 0}, {0.001, 0, 15}, {0.001, 0, 30}, {0.002, 0, 45}}});
  const auto k = kinematic_features(stop, 30.0);
  CHECK(k[0].cos_heading == doctest::Approx(1.0));
  CHECK(k[2].v_norm == 0.0);
  CHECK(k[2].cos_heading == doctest::Approx(1.0));
}

TEST_CASE("kinematic ranges over random trips") {
  const Vocabulary v = mixed_vocab();
  CounterRng rng(21, 0);
  for (int i = 0; i < 200; ++i) {
    Trajectory t{"r", {}};
    double time = 0.0;
    const int n = 1 + static_cast<int>(rng.uniform(40));
    for (int j = 0; j < n; ++j) {
      time += 15.0 * rng.uniform(2);
      t.points.push_back({41.1 + 0.12 * rng.uniform01(), -8.7 + 0.17 * rng.uniform01(), time});
    }
    const TokenSequence s = tokenize(v, t);
    CHECK(tokenize(v, t) == s);
    for (const KinematicFeatures& f : kinematic_features(s, 25.0)) {
      CHECK(f.v_norm >= 0.0);
      CHECK(f.v_norm <= 1.0);
      CHECK(std::abs(f.sin_heading * f.sin_heading + f.cos_heading * f.cos_heading - 1.0) < 1e-9);
    }
    const TokenSequence d = dedup(s);
    CHECK(d.size() <= s.size());
    CHECK(dedup(d) == d);
    CHECK(tokenize(v, t, {.dedup = true, .max_len = 192}) == d);
  }
}

TEST_CASE("tokenize_all matches per-trajectory calls") {
  const Vocabulary v = mixed_vocab();
  std::vector<Trajectory> trajs;
  for (int i = 0; i < 30; ++i) {
    Trajectory t{"t" + std::to_string(i), {}};
    for (int j = 0; j < 5 + i; ++j) t.points.push_back({41.11 + 0.001 * j, -8.69 + 0.002 * i, 15.0 * j});
    trajs.push_back(t);
  }
  const auto all = tokenize_all(v, trajs);
  REQUIRE(all.size() == trajs.size());
  for (std::size_t i = 0; i < trajs.size(); ++i) CHECK(all[i] == tokenize(v, trajs[i]));
}

TEST_CASE("token store round trip") {
  const Vocabulary v = mixed_vocab();
  std::vector<TokenSequence> seqs;
  seqs.push_back(tokenize(v, equator_walk(1, 0, 0)));
  seqs.push_back(tokenize(v, Trajectory{"a b", {{41.105, -8.695, 0}, {41.1051, -8.6949, 15.5}, {41.2, -8.54, 31}}}));
  const std::string text = "# header line\n" + format_token_store(seqs);
  CHECK(parse_token_store(text) == seqs);
  CHECK(parse_token_record(format_token_record(seqs[1])) == seqs[1]);
  CHECK_THROWS(parse_token_record("x\t2\t3:0:0:0:0:0:1"));
}
