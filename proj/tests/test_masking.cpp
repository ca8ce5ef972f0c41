#include <doctest.h>

#include <numeric>

#include "oracles.hpp"
#include "trajtok/masking.hpp"
#include "trajtok/parallel.hpp"
#include "trajtok/rng.hpp"

using namespace trajtok;

namespace {

std::vector<TokenId> distinct(std::size_t n) {
  std::vector<TokenId> ids(n);
  std::iota(ids.begin(), ids.end(), 3);
  return ids;
}

/// Random run structure: run lengths 1..max_run with random ids.
std::vector<TokenId> random_runs(CounterRng& rng, std::size_t n, std::uint64_t max_run) {
  std::vector<TokenId> ids;
  TokenId id = 3;
  while (ids.size() < n) {
    const std::size_t len = 1 + rng.uniform(max_run);
    id += 1 + static_cast<TokenId>(rng.uniform(3));
    for (std::size_t k = 0; k < len && ids.size() < n; ++k) ids.push_back(id);
  }
  return ids;
}

MaskSpec spec(MaskStrategy s, std::uint64_t seed) { return {0.3, 6, s, seed}; }

bool sorted_distinct(const std::vector<std::size_t>& v, std::size_t L) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] >= L) return false;
    if (i > 0 && v[i] <= v[i - 1]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("run decomposition") {
  const std::vector<TokenId> a{5, 5, 7, 5};
  const auto r = runs(a);
  REQUIRE(r.size() == 3);
  CHECK(r[0] == Run{0, 1, 5});
  CHECK(r[1] == Run{2, 2, 7});
  CHECK(r[2] == Run{3, 3, 5});
  CHECK(runs(distinct(9)).size() == 9);
  const std::vector<TokenId> c(12, 4);
  REQUIRE(runs(c).size() == 1);
  CHECK(runs(c)[0].length() == 12);
}

TEST_CASE("budget is floor of ratio times length") {
  CHECK(mask_budget(0.3, 10) == 3);
  CHECK(mask_budget(0.3, 1) == 0);
  CHECK(mask_budget(0.15, 20) == 3);
  for (MaskStrategy s : {MaskStrategy::RunAware, MaskStrategy::Naive}) {
    const MaskSet m = sample_mask(distinct(10), spec(s, 1));
    CHECK(m.size() == 3);
  }
  CHECK_THROWS(sample_mask(std::vector<TokenId>{}, spec(MaskStrategy::RunAware, 1)));
  CHECK_THROWS((MaskSpec{0.3, 1, MaskStrategy::RunAware, 0}.validate()));
  CHECK_THROWS((MaskSpec{1.0, 6, MaskStrategy::RunAware, 0}.validate()));
}

TEST_CASE("interior test agrees with the window oracle") {
  CounterRng rng(31, 0);
  for (int trial = 0; trial < 200; ++trial) {
    const auto ids = random_runs(rng, 3 + rng.uniform(30), 8);
    for (std::size_t s = 0; s < ids.size(); ++s)
      for (std::size_t e = s; e < ids.size(); ++e)
        CHECK(span_is_run_interior(ids, {s, e}) == oracle::span_inside_one_run(ids, s, e));
  }
}

TEST_CASE("all-distinct sequences: contiguous spans and no rejections") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto ids = distinct(60);
    const MaskSet m = sample_mask(ids, spec(MaskStrategy::RunAware, seed));
    CHECK(m.size() == 18);
    CHECK(m.rejected == 0);
    CHECK(m.fallback_non_interior + m.fallback_arbitrary == 0);
    for (const Span& s : m.accepted_spans) {
      const std::size_t len = s.end - s.start + 1;
      CHECK(len >= 5);
      CHECK(len <= 7);
    }
    // Every masked position lies in some accepted span.
    for (std::size_t p : m.positions) {
      bool in = false;
      for (const Span& s : m.accepted_spans) in = in || (p >= s.start && p <= s.end);
      CHECK(in);
    }
  }
}

TEST_CASE("constant sequence: accepted spans are all valid per the oracle") {
  const std::vector<TokenId> ids(20, 9);
  // Valid spans per brute force: those touching position 0 or 19.
  std::size_t valid = 0;
  for (std::size_t s = 0; s < 20; ++s)
    for (std::size_t e = s; e < 20; ++e) valid += !oracle::span_inside_one_run(ids, s, e);
  CHECK(valid == 20 + 20 - 1);
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    const MaskSet m = sample_mask(ids, spec(MaskStrategy::RunAware, seed));
    CHECK(m.size() == 6);
    for (const Span& s : m.accepted_spans) {
      CHECK_FALSE(oracle::span_inside_one_run(ids, s.start, s.end));
      CHECK((s.start == 0 || s.end == 19));
    }
  }
}

TEST_CASE("naive equals run-aware when the rule never fires") {
  CounterRng rng(32, 0);
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const auto ids = distinct(20 + rng.uniform(173));
    const MaskSet a = sample_mask(ids, spec(MaskStrategy::RunAware, seed), seed * 7);
    const MaskSet b = sample_mask(ids, spec(MaskStrategy::Naive, seed), seed * 7);
    CHECK(a.positions == b.positions);
  }
}

TEST_CASE("naive masking produces interior spans on constant sequences") {
  const std::vector<TokenId> ids(20, 9);
  std::size_t interior = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const MaskSet m = sample_mask(ids, spec(MaskStrategy::Naive, seed));
    for (const Span& s : m.accepted_spans) interior += oracle::span_inside_one_run(ids, s.start, s.end);
  }
  CHECK(interior > 100);
}

TEST_CASE("budget exactness and safety over random sequences") {
  CounterRng rng(33, 0);
  std::size_t violations = 0, misses = 0;
  for (std::uint64_t k = 0; k < 10000; ++k) {
    const std::size_t L = 20 + rng.uniform(173);
    const auto ids = random_runs(rng, L, 1 + rng.uniform(25));
    const MaskSet m = sample_mask(ids, spec(MaskStrategy::RunAware, 1000 + k), k);
    misses += m.size() != mask_budget(0.3, L);
    CHECK(sorted_distinct(m.positions, L));
    for (const Span& s : m.accepted_spans) violations += span_is_run_interior(ids, s);
  }
  CHECK(misses == 0);
  CHECK(violations == 0);
}

TEST_CASE("masks are deterministic across thread counts") {
  CounterRng rng(34, 0);
  std::vector<std::vector<TokenId>> seqs;
  for (int i = 0; i < 400; ++i) seqs.push_back(random_runs(rng, 20 + rng.uniform(100), 6));
  const MaskSpec sp = spec(MaskStrategy::RunAware, 99);
  const auto ref = sample_masks_serial(seqs, sp);
  for (int threads : {1, 3}) {
    parallel::ThreadScope scope(threads);
    const auto got = sample_masks(seqs, sp);
    REQUIRE(got.size() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(got[i].positions == ref[i].positions);
  }
  CHECK(sample_mask(seqs[5], sp, 5).positions == ref[5].positions);
}

TEST_CASE("every position can be masked") {
  const auto ids = distinct(50);
  std::vector<std::size_t> hits(50, 0);
  for (std::uint64_t seed = 0; seed < 10000; ++seed)
    for (std::size_t p : sample_mask(ids, spec(MaskStrategy::RunAware, seed)).positions) ++hits[p];
  for (std::size_t h : hits) CHECK(h > 0);
}

TEST_CASE("fallback fill on a tiny constant sequence") {
  // Only spans touching an end are valid, and they run out long before a 90% budget.
  const std::vector<TokenId> ids(40, 4);
  const MaskSpec sp{0.9, 2, MaskStrategy::RunAware, 5};
  const MaskSet m = sample_mask(ids, sp);
  CHECK(m.size() == 36);
  for (const Span& s : m.accepted_spans) CHECK_FALSE(span_is_run_interior(ids, s));
  CHECK(m.fallback_arbitrary > 0);
}

TEST_CASE("mask statistics summary") {
  std::vector<std::vector<TokenId>> seqs{distinct(10), std::vector<TokenId>(20, 4), {3, 3, 4, 4, 4}};
  const MaskSpec sp = spec(MaskStrategy::RunAware, 3);
  const auto masks = sample_masks(seqs, sp);
  const MaskStats st = mask_stats(seqs, masks, sp, 8);
  CHECK(st.sequences == 3);
  CHECK(st.budget_satisfied == 3);
  CHECK(st.interior_span_violations == 0);
  CHECK(st.total_tokens == 35);
  CHECK(st.total_masked == 3 + 6 + 1);
  REQUIRE(st.run_length_histogram.size() == 8);
  CHECK(st.run_length_histogram[1] == 10);
  CHECK(st.run_length_histogram[2] == 1);
  CHECK(st.run_length_histogram[3] == 1);
  CHECK(st.run_length_histogram[7] == 1);
  const std::string text = format_mask_stats(st, sp);
  CHECK(text.find("sequences=3") != std::string::npos);
  CHECK(text.find("strategy=RUN_AWARE") != std::string::npos);
}
