// Acceptance checks. Prints one PASS/FAIL/SKIP line per criterion and exits non-zero if any
// criterion fails. Pass criterion numbers as arguments to run a subset.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "test_support.hpp"
#include "trajtok/config.hpp"
#include "trajtok/gradcheck.hpp"
#include "trajtok/ingest.hpp"
#include "trajtok/io.hpp"
#include "trajtok/masking.hpp"
#include "trajtok/parallel.hpp"
#include "trajtok/pipeline.hpp"
#include "trajtok/similarity.hpp"
#include "trajtok/synth.hpp"
#include "trajtok/tokenizer.hpp"
#include "trajtok/training.hpp"
#include "trajtok/vocab.hpp"

namespace fs = std::filesystem;
using namespace trajtok;

namespace {

struct Outcome {
  enum Status { Pass, Fail, Skip } status;
  std::string detail;
};

Outcome verdict(bool ok, const std::string& detail) { return {ok ? Outcome::Pass : Outcome::Fail, detail}; }

std::string fmt(double x) {
  std::ostringstream s;
  s.precision(6);
  s << x;
  return s.str();
}

// ---------------------------------------------------------------------------------------
// 1. Vocabulary invariants

std::vector<GpsPoint> dataset(int kind, std::uint64_t seed) {
  CounterRng rng(seed, static_cast<std::uint64_t>(kind));
  const BBox& b = kPortoBBox;
  std::vector<GpsPoint> pts;
  while (pts.size() < 10000) {
    GpsPoint p;
    const double u = rng.uniform01();
    if (kind == 0) {
      p = {b.lat_min + rng.uniform01() * (b.lat_max - b.lat_min), b.lon_min + rng.uniform01() * (b.lon_max - b.lon_min), 0};
    } else if (kind == 1) {
      p = {41.16 + 0.01 * rng.normal(), -8.62 + 0.012 * rng.normal(), 0};
    } else if (u < 0.5) {
      p = {41.15 + 0.002 * rng.normal(), -8.61 + 0.002 * rng.normal(), 0};
    } else {
      p = {41.18 + 0.02 * rng.normal(), -8.58 + 0.025 * rng.normal(), 0};
    }
    if (b.contains(p.lat, p.lon)) pts.push_back(p);
  }
  return pts;
}

Outcome vocabulary_invariants() {
  const GridConfig cfg{GridBackend::Quad, kPortoBBox, 2, 10};
  const std::uint64_t cap = 100;
  std::string detail;
  bool ok = true;
  const char* names[] = {"uniform", "single-cluster", "two-scale"};
  for (int kind = 0; kind < 3; ++kind) {
    const auto pts = dataset(kind, 1);
    const Vocabulary v = build_vocabulary(pts, cfg, cap);
    const auto counts = recount(v, pts);
    std::size_t over = 0, ancestor_pairs = 0, unmapped = 0;
    for (std::size_t i = 0; i < v.num_cells(); ++i)
      if (v.cells()[i].resolution < cfg.r_max && counts[i] > cap) ++over;
    for (const CellKey& a : v.cells())
      for (const CellKey& b : v.cells()) ancestor_pairs += is_ancestor(a, b);
    for (const GpsPoint& p : pts) unmapped += map_point(v, p) == Vocabulary::kUnk;
    ok = ok && over == 0 && ancestor_pairs == 0 && unmapped == 0;
    detail += std::string(names[kind]) + ": cells=" + std::to_string(v.num_cells()) + " over_capacity=" +
              std::to_string(over) + " ancestor_pairs=" + std::to_string(ancestor_pairs) +
              " unmapped=" + std::to_string(unmapped) + "; ";
  }
  return verdict(ok, detail);
}

// ---------------------------------------------------------------------------------------
// 2. Eight-point hand example

Outcome hand_oracle() {
  const GridConfig cfg{GridBackend::Quad, kPortoBBox, 0, 4};
  const BBox& b = kPortoBBox;
  const double dlat = b.lat_max - b.lat_min, dlon = b.lon_max - b.lon_min;
  std::vector<GpsPoint> pts;
  for (double fy : {0.2, 0.7})
    for (double fx : {0.2, 0.7}) {
      pts.push_back({b.lat_min + fy * dlat, b.lon_min + fx * dlon, 0});
      pts.push_back({b.lat_min + (fy + 0.1) * dlat, b.lon_min + (fx + 0.1) * dlon, 0});
    }
  const Vocabulary v = build_vocabulary(pts, cfg, 2);
  // Hand trace: the root holds 8 > 2 points and splits; each quadrant holds 2 <= 2.
  const std::vector<CellKey> expected{quad_cell(0, 0, 1), quad_cell(0, 1, 1), quad_cell(1, 0, 1), quad_cell(1, 1, 1)};
  bool ok = v.cells() == expected;
  for (std::size_t i = 0; i < expected.size() && ok; ++i)
    ok = v.token_of(expected[i]) == static_cast<TokenId>(Vocabulary::kFirstCell + i);
  return verdict(ok, "cells=" + std::to_string(v.num_cells()));
}

// ---------------------------------------------------------------------------------------
// 3. Masking

Outcome masking_suite() {
  CounterRng rng(3, 0);
  std::vector<std::vector<TokenId>> seqs;
  for (int i = 0; i < 10000; ++i) {
    const std::size_t L = 20 + rng.uniform(173);
    const std::uint64_t max_run = 1 + rng.uniform(20);
    std::vector<TokenId> ids;
    TokenId id = 3;
    while (ids.size() < L) {
      const std::size_t len = 1 + rng.uniform(max_run);
      id += 1 + static_cast<TokenId>(rng.uniform(2));
      for (std::size_t k = 0; k < len && ids.size() < L; ++k) ids.push_back(id);
    }
    seqs.push_back(std::move(ids));
  }
  const MaskSpec spec{0.3, 6, MaskStrategy::RunAware, 2024};
  std::vector<std::vector<MaskSet>> runs;
  for (int threads : {1, 2})
    for (int rep = 0; rep < 2; ++rep) {
      parallel::ThreadScope scope(threads);
      runs.push_back(sample_masks(seqs, spec));
    }
  std::size_t budget_miss = 0, interior = 0, mismatched = 0;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const MaskSet& m = runs[0][i];
    budget_miss += m.size() != mask_budget(spec.ratio, seqs[i].size());
    for (const Span& s : m.accepted_spans) interior += oracle::span_inside_one_run(seqs[i], s.start, s.end);
    for (std::size_t r = 1; r < runs.size(); ++r) mismatched += runs[r][i].positions != m.positions;
  }
  return verdict(budget_miss == 0 && interior == 0 && mismatched == 0,
                 "masks=10000 budget_misses=" + std::to_string(budget_miss) + " interior_spans=" +
                     std::to_string(interior) + " nondeterministic=" + std::to_string(mismatched));
}

// ---------------------------------------------------------------------------------------
// 4. RoPE and attention

Outcome rope_attention_suite() {
  const EncoderConfig cfg = testing::toy_config();
  const int dh = cfg.head_dim();
  CounterRng rng(4, 0);
  auto random_mat = [&](Eigen::Index r, Eigen::Index c) {
    Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
  };
  auto random_coord = [&] { return Coords{rng.normal() * 300, rng.normal() * 300, rng.uniform01() * 3000}; };

  double norm_err = 0.0, rel_err = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const Mat q = random_mat(1, dh), k = random_mat(1, dh);
    const Coords a = random_coord(), b = random_coord();
    const Coords diff{a.lat - b.lat, a.lon - b.lon, a.t - b.t}, origin{};
    auto rot = [&](const Mat& m, const Coords& c, RopeMode mode) {
      return rope_rotate(m, std::span<const Coords>(&c, 1), mode, cfg.rope_split, cfg.rope_base);
    };
    for (RopeMode mode : {RopeMode::SpatioTemporal, RopeMode::Temporal})
      norm_err = std::max(norm_err, std::abs(rot(q, a, mode).norm() / q.norm() - 1.0));
    const Mat qa = rot(q, a, RopeMode::SpatioTemporal), kb = rot(k, b, RopeMode::SpatioTemporal);
    const Mat qd = rot(q, diff, RopeMode::SpatioTemporal), k0 = rot(k, origin, RopeMode::SpatioTemporal);
    int off = 0;
    for (int w : {cfg.rope_split.lat, cfg.rope_split.lon, cfg.rope_split.time}) {
      const double lhs = qa.row(0).segment(off, w).dot(kb.row(0).segment(off, w));
      const double rhs = qd.row(0).segment(off, w).dot(k0.row(0).segment(off, w));
      rel_err = std::max(rel_err, std::abs(lhs - rhs));
      off += w;
    }
  }

  const Params p = init_params(cfg, 4);
  const EncoderInput in = testing::random_input(20, cfg.vocab_size, 5);
  const Mat x = random_mat(20, cfg.d_model);
  double shift_err = 0.0, row_err = 0.0, pad_max = 0.0;
  for (RopeMode mode : {RopeMode::SpatioTemporal, RopeMode::Temporal}) {
    AttentionCache c0, c1;
    attention_forward(x, x, in.coords, mode, p.geo.self_blocks[0].attn, cfg, 20, &c0);
    auto shifted = in.coords;
    for (Coords& c : shifted) c.t += 1000.0;
    attention_forward(x, x, shifted, mode, p.geo.self_blocks[0].attn, cfg, 20, &c1);
    for (std::size_t h = 0; h < c0.logits.size(); ++h)
      shift_err = std::max(shift_err, (c0.logits[h] - c1.logits[h]).cwiseAbs().maxCoeff());
    AttentionCache cp;
    attention_forward(x, x, in.coords, mode, p.geo.self_blocks[0].attn, cfg, 13, &cp);
    for (const Mat& probs : cp.probs) {
      for (Eigen::Index i = 0; i < probs.rows(); ++i) row_err = std::max(row_err, std::abs(probs.row(i).sum() - 1.0));
      pad_max = std::max(pad_max, probs.rightCols(7).cwiseAbs().maxCoeff());
    }
  }
  const bool ok = norm_err <= 1e-12 && rel_err <= 1e-9 && shift_err <= 1e-6 && row_err <= 1e-9 && pad_max == 0.0;
  return verdict(ok, "norm_rel_err=" + fmt(norm_err) + " relative_identity_err=" + fmt(rel_err) +
                         " time_shift_err=" + fmt(shift_err) + " softmax_row_err=" + fmt(row_err) +
                         " max_pad_weight=" + fmt(pad_max));
}

// ---------------------------------------------------------------------------------------
// 5. Gradient check

Outcome gradient_suite() {
  const EncoderConfig cfg = testing::toy_config();  // 50 cells + 3 special ids
  const Params p = testing::perturbed_params(cfg, 7);
  const EncoderInput in = testing::random_input(16, cfg.vocab_size, 3);
  const std::vector<MaskedExample> batch{{&in, {1, 2, 6, 9, 10, 14}}};
  const GradCheckReport r = gradient_check(p, batch, cfg, LossWeights{}, 20, 1e-5, 11);
  return verdict(r.max_rel_error <= 1e-4,
                 "groups=" + std::to_string(r.groups) + " coords=" + std::to_string(r.entries.size()) +
                     " max_rel_err=" + fmt(r.max_rel_error));
}

// ---------------------------------------------------------------------------------------
// 6. Loss analytics

Outcome loss_suite() {
  const Mat uniform = Mat::Zero(3, 50);
  const double lg = loss_geom(uniform, std::vector<TokenId>{3, 20, 49});
  const double uniform_err = std::abs(lg - std::log(50.0));

  // Dyadic values keep every intermediate exact, so the comparison is bitwise.
  Mat preds(2, 3);
  preds << 0.75, 0.5, -0.25, 0.125, 1.0, 0.0;
  const std::vector<KinematicFeatures> targets{{0.25, 0.0, 0.75}, {0.625, 0.5, -0.5}};
  const LossWeights w{2.0, 0.5, 1.0};
  // speed errors 0.5, -0.5; sin errors 0.5, 0.5; cos errors -1, 0.5
  const double hand = 2.0 * (0.25 + 0.25) / 2.0 + 0.25 * (0.25 + 0.25) / 2.0 + 0.25 * (1.0 + 0.25) / 2.0;
  const double lk = loss_kin(preds, targets, w);
  Mat unit(1, 3);
  unit << 1.0, 1.0, 1.0;
  const double lk_unit = loss_kin(unit, std::vector<KinematicFeatures>{{0.0, 0.0, 0.0}}, LossWeights{});

  const EncoderConfig cfg = testing::toy_config();
  const Params p = testing::perturbed_params(cfg, 8);
  const EncoderInput in = testing::random_input(12, cfg.vocab_size, 9);
  const std::vector<std::size_t> mask{2, 5, 9};
  const LossBreakdown l0 = example_loss(in, mask, p, cfg, {1, 1, 0.0});
  double lin_err = 0.0;
  for (double lambda : {0.5, 1.0, 3.0}) {
    const LossBreakdown l = example_loss(in, mask, p, cfg, {1, 1, lambda});
    lin_err = std::max(lin_err, std::abs(l.joint - (l0.geom + lambda * l.kin)));
    lin_err = std::max(lin_err, std::abs(l.joint - l0.joint - lambda * l.kin));
  }
  const bool ok = uniform_err <= 1e-9 && lk == hand && lk_unit == 2.0 && lin_err <= 1e-12;
  return verdict(ok, "uniform_err=" + fmt(uniform_err) + " kin_fixture=" + fmt(lk) + " (hand " + fmt(hand) +
                         ") unit_errors=" + fmt(lk_unit) + " lambda_affine_err=" + fmt(lin_err));
}

// ---------------------------------------------------------------------------------------
// 7. Toy pretraining

/// Smallest capacity whose vocabulary has at most `target` cells.
std::uint64_t capacity_for(std::span<const GpsPoint> pts, const GridConfig& g, std::size_t target) {
  std::uint64_t lo = 1, hi = pts.size() + 1;
  while (lo < hi) {
    const std::uint64_t mid = lo + (hi - lo) / 2;
    if (build_vocabulary(pts, g, mid).num_cells() <= target) {
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  return lo;
}

Outcome toy_pretraining() {
  SynthCityConfig sc;
  sc.n_trajectories = 2500;
  sc.seed = 7;
  const auto trajs = synth_city(sc);
  const std::span<const Trajectory> train_trajs(trajs.data(), 2000), held_out(trajs.data() + 2000, 500);
  const auto pts = all_points(train_trajs);
  // Every split on this data yields four non-empty children, so cell counts step by 3 and
  // exactly 50 is unreachable; the largest vocabulary with at most 50 cells is used.
  const GridConfig g{GridBackend::Quad, kPortoBBox, 2, 6};
  const Vocabulary v = build_vocabulary(pts, g, capacity_for(pts, g, 50));
  const TokenizeOptions opts{false, 32};
  const auto train_seqs = tokenize_all(v, train_trajs, opts);
  const auto eval_seqs = tokenize_all(v, held_out, opts);
  const double v_max = speed_percentile(train_seqs, 99.5);

  EncoderConfig cfg = testing::toy_config();
  cfg.vocab_size = static_cast<int>(v.size());
  const auto train = to_inputs(train_seqs, v_max, cfg.coord_scale);
  const auto eval = to_inputs(eval_seqs, v_max, cfg.coord_scale);
  OptimizerConfig opt;
  opt.steps = 2000;
  opt.batch_size = 16;
  const MaskSpec spec{0.3, 6, MaskStrategy::RunAware, 5};
  const TrainResult r = train_toy(train, cfg, spec, LossWeights{}, opt, 1);
  const EvalResult e = evaluate_masked(eval, r.params, cfg, spec, LossWeights{});

  // Means of ten consecutive 100-step windows covering steps 0..999.
  std::vector<double> windows(10, 0.0);
  for (const TrainRecord& rec : r.trace)
    if (rec.step < 1000) windows[rec.step / 100] += rec.joint / 100.0;
  bool decreasing = true;
  std::string series;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (i > 0) decreasing = decreasing && windows[i] < windows[i - 1];
    series += (i ? "," : "") + fmt(windows[i]);
  }
  const bool ok = v.num_cells() + 2 >= 50 && v.num_cells() <= 50 && e.accuracy > 3.0 * e.majority_frequency && decreasing;
  return verdict(ok, "cells=" + std::to_string(v.num_cells()) + " accuracy=" + fmt(e.accuracy) +
                         " majority=" + fmt(e.majority_frequency) + " window_means=[" + series + "]" +
                         (decreasing ? "" : " (window means not strictly decreasing)"));
}

// ---------------------------------------------------------------------------------------
// 8. DTW

Outcome dtw_suite() {
  CounterRng rng(8, 0);
  auto walk = [&](std::size_t n) {
    std::vector<GpsPoint> pts;
    for (std::size_t i = 0; i < n; ++i) pts.push_back({41.1 + 0.1 * rng.uniform01(), -8.7 + 0.15 * rng.uniform01(), 0});
    return pts;
  };
  std::size_t mismatches = 0;
  double self_max = 0.0, asym = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto a = walk(1 + rng.uniform(5)), b = walk(1 + rng.uniform(5));
    mismatches += dtw(a, b) != oracle::brute_force_dtw(a, b);
    self_max = std::max(self_max, dtw(a, a));
    asym = std::max(asym, std::abs(dtw(a, b) - dtw(b, a)));
  }
  return verdict(mismatches == 0 && self_max == 0.0 && asym <= 1e-9,
                 "pairs=100 mismatches=" + std::to_string(mismatches) + " max_self=" + fmt(self_max) +
                     " max_asymmetry=" + fmt(asym));
}

// ---------------------------------------------------------------------------------------
// 9. Metric fixtures

double ideal_dcg(int k) {
  double s = 0.0;
  for (int i = 1; i <= k; ++i) s += 1.0 / std::log2(i + 1.0);
  return s;
}

bool near(double a, double b) { return std::abs(a - b) <= 1e-15 * std::max(1.0, std::abs(b)); }

Outcome metric_fixtures() {
  std::string failed;
  {
    const std::vector<double> dist{1, 2, 3, 4, 5, 6, 7, 8};
    std::vector<double> sim(8);
    const int order[] = {5, 0, 7, 1, 2, 3, 4, 6};
    for (int r = 0; r < 8; ++r) sim[order[r]] = 1.0 - 0.1 * r;
    const QueryMetrics m = query_metrics(dist, sim);
    const double ndcg = (1.0 / std::log2(3.0) + 1.0 / std::log2(5.0) + 1.0 / std::log2(6.0)) / ideal_dcg(5);
    if (!(m.hr1 == 0.0 && m.hr10 == 1.0 && m.mrr == 0.5 && m.r5_20 == 1.0 && near(m.ndcg5, ndcg))) failed += " A";
  }
  {
    std::vector<double> dist(25);
    std::iota(dist.begin(), dist.end(), 1.0);
    std::vector<int> order{3};
    for (int i = 5; i <= 23; ++i) order.push_back(i);
    for (int i : {0, 1, 2, 4, 24}) order.push_back(i);
    std::vector<double> sim(25);
    for (int r = 0; r < 25; ++r) sim[order[r]] = 100.0 - r;
    const QueryMetrics m = query_metrics(dist, sim);
    if (!(m.hr1 == 0.0 && m.hr10 == 0.0 && m.mrr == 1.0 / 21.0 && m.r5_20 == 0.2 && near(m.ndcg5, 1.0 / ideal_dcg(5))))
      failed += " B";
  }
  {
    const std::vector<double> dist{10, 20, 30, 40}, sim{0.1, 0.2, 0.3, 0.4};
    const QueryMetrics m = query_metrics(dist, sim);
    if (!(m.hr1 == 0.0 && m.hr10 == 1.0 && m.mrr == 0.25 && m.r5_20 == 1.0 && m.ndcg5 == 1.0)) failed += " C";
  }
  {
    RetrievalBank bank;
    bank.query_ids = {"q0", "q1", "q2"};
    CounterRng rng(9, 0);
    for (int i = 0; i < 80; ++i) bank.corpus_ids.push_back("c" + std::to_string(i));
    std::vector<double> sim;
    for (int q = 0; q < 3; ++q)
      for (int c = 0; c < 80; ++c) {
        const double d = 1.0 + 100.0 * rng.uniform01();
        bank.dtw.push_back(d);
        sim.push_back(-d);
      }
    const MetricsReport m = evaluate_scores(bank, sim);
    if (!(m.hr1 == 1.0 && m.hr10 == 1.0 && m.r5_20 == 1.0 && m.mrr == 1.0 && near(m.ndcg5, 1.0) &&
          near(m.ndcg10, 1.0) && near(m.ndcg50, 1.0) && near(m.spearman, 1.0)))
      failed += " perfect";
  }
  return verdict(failed.empty(), failed.empty() ? "fixtures A, B, C and perfect ranking match" : "mismatch in" + failed);
}

// ---------------------------------------------------------------------------------------
// 10. Adaptive versus fixed-resolution vocabularies

Outcome adaptive_vs_fixed() {
  if (!hex_backend_available()) return {Outcome::Skip, "hexagonal backend not compiled in"};
  SynthCityConfig sc;
  sc.n_trajectories = 20000;
  const auto trajs = synth_city(sc);
  const auto train_trajs = select_split(trajs, Split::Train);
  const auto test_trajs = select_split(trajs, Split::Test);
  const auto pts = all_points(train_trajs);
  const RetrievalBank bank = build_bank(test_trajs, 100, 1000, 17);

  // Capacity chosen so the adaptive vocabulary has as many cells as the reference one (1,494).
  const GridConfig adaptive{GridBackend::Hex, kPortoBBox, 6, 9};
  const std::uint64_t cap = capacity_for(pts, adaptive, 1494);
  struct Variant {
    std::string name;
    Vocabulary vocab;
  };
  std::vector<Variant> variants;
  variants.push_back({"adaptive(r6-9,C=" + std::to_string(cap) + ")", build_vocabulary(pts, adaptive, cap)});
  for (int r : {7, 8, 10}) {
    const GridConfig fixed{GridBackend::Hex, kPortoBBox, r, r};
    variants.push_back({"r" + std::to_string(r), build_vocabulary(pts, fixed, 1)});
  }

  OptimizerConfig opt;
  opt.steps = 1000;
  opt.batch_size = 16;
  const MaskSpec spec{0.3, 6, MaskStrategy::RunAware, 5};
  const TokenizeOptions topts{false, 48};
  std::vector<double> rho;
  std::string detail;
  for (const Variant& var : variants) {
    const auto train_seqs = tokenize_all(var.vocab, train_trajs, topts);
    const auto test_seqs = tokenize_all(var.vocab, test_trajs, topts);
    const double v_max = speed_percentile(train_seqs, 99.5);
    EncoderConfig cfg = testing::toy_config();
    cfg.vocab_size = static_cast<int>(var.vocab.size());
    cfg.max_seq_len = 48;
    const TrainResult r = train_toy(to_inputs(train_seqs, v_max, cfg.coord_scale), cfg, spec, LossWeights{}, opt, 1);
    const auto [qi, ci] = bank_inputs(bank, test_seqs, v_max, cfg.coord_scale);
    const MetricsReport m = evaluate(bank, embed_all(qi, r.params, cfg, PoolStream::Sum),
                                     embed_all(ci, r.params, cfg, PoolStream::Sum));
    rho.push_back(m.spearman);
    detail += var.name + ": cells=" + std::to_string(var.vocab.num_cells()) + " spearman=" + fmt(m.spearman) +
              " HR@10=" + fmt(m.hr10) + "; ";
  }
  bool ok = true;
  for (std::size_t i = 1; i < rho.size(); ++i) ok = ok && rho[0] >= rho[i];
  return verdict(ok, detail);
}

// ---------------------------------------------------------------------------------------
// 11. Full Porto data (runs only when TRAJTOK_PORTO_CSV names the CSV)

Outcome porto_full() {
  const char* path = std::getenv("TRAJTOK_PORTO_CSV");
  if (path == nullptr || !fs::exists(path)) return {Outcome::Skip, "set TRAJTOK_PORTO_CSV to the full Porto CSV to run"};
  if (!hex_backend_available()) return {Outcome::Skip, "hexagonal backend not compiled in"};
  const IngestResult data = ingest_porto_file(path);
  const SplitCounts sc = split_counts(data.trajectories);
  const double n = static_cast<double>(sc.train + sc.val + sc.test);
  const double train_pct = 100.0 * sc.train / n, val_pct = 100.0 * sc.val / n, test_pct = 100.0 * sc.test / n;
  const auto train_trajs = select_split(data.trajectories, Split::Train);
  const Vocabulary v = build_vocabulary(all_points(train_trajs), {GridBackend::Hex, kPortoBBox, 6, 9}, 1000);
  const double size_err = std::abs(static_cast<double>(v.num_cells()) - 1494.0) / 1494.0;
  const bool ok = size_err <= 0.02 && std::abs(train_pct - 60) <= 0.5 && std::abs(val_pct - 20) <= 0.5 &&
                  std::abs(test_pct - 20) <= 0.5;
  return verdict(ok, "cells=" + std::to_string(v.num_cells()) + " split%=" + fmt(train_pct) + "/" + fmt(val_pct) +
                         "/" + fmt(test_pct));
}

// ---------------------------------------------------------------------------------------
// 12. Pipeline determinism

Outcome pipeline_determinism() {
  const fs::path dir = fs::temp_directory_path() / "trajtok_acceptance_pipeline";
  fs::remove_all(dir);
  fs::create_directories(dir);
  SynthCityConfig sc;
  sc.n_trajectories = 500;
  sc.seed = 21;
  const fs::path csv = dir / "city.csv";
  write_file(csv, format_porto_csv(synth_city(sc)));

  RunConfig cfg;
  cfg.data.input_csv = csv.string();
  cfg.grid = {GridBackend::Quad, 3, 7, 150};
  cfg.tokenizer.max_seq_len = 32;
  cfg.encoder = testing::toy_config();
  cfg.optimizer.steps = 20;
  cfg.optimizer.batch_size = 8;
  cfg.eval = {20, 60, 5, PoolStream::Sum};
  cfg.trace = {0, 0, 0};
  cfg.seed = 11;

  std::vector<PipelineResult> runs;
  for (int threads : {1, 2}) {
    parallel::ThreadScope scope(threads);
    cfg.out_dir = (dir / ("run" + std::to_string(threads))).string();
    runs.push_back(run_pipeline(cfg));
  }
  const std::pair<const char*, const char*> artifacts[] = {{"vocab", "vocabulary.txt"},
                                                           {"tokenize", "tokens_train.txt"},
                                                           {"mask-stats", "mask_stats.txt"},
                                                           {"bank", "bank.txt"},
                                                           {"eval", "metrics.txt"}};
  std::string differing;
  for (const auto& [stage, file] : artifacts) {
    const std::string a = read_file(runs[0].stage(stage).dir / file);
    const std::string b = read_file(runs[1].stage(stage).dir / file);
    if (a != b || a.empty()) differing += std::string(" ") + file;
  }
  fs::remove_all(dir);
  return verdict(differing.empty(), differing.empty() ? "vocabulary, tokens, mask stats, bank and metrics identical"
                                                      : "differs:" + differing);
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    std::function<Outcome()> run;
    double limit_s;  // wall-clock limit; 0 = none
  };
  const std::vector<Criterion> criteria{
      {1, vocabulary_invariants, 10},
      {2, hand_oracle, 0},
      {3, masking_suite, 0},
      {4, rope_attention_suite, 0},
      {5, gradient_suite, 60},
      {6, loss_suite, 0},
      {7, toy_pretraining, 600},
      {8, dtw_suite, 0},
      {9, metric_fixtures, 0},
      {10, adaptive_vs_fixed, 3600},
      {11, porto_full, 0},
      {12, pipeline_determinism, 0},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& [id, fn, limit] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {Outcome::Fail, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (o.status == Outcome::Pass && limit > 0 && secs > limit)
      o = {Outcome::Fail, o.detail + " exceeded " + fmt(limit) + " s"};
    const char* status = o.status == Outcome::Pass ? "PASS" : o.status == Outcome::Fail ? "FAIL" : "SKIP";
    failures += o.status == Outcome::Fail;
    std::cout << "criterion " << id << ": " << status << " (" << fmt(secs) << " s) " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
