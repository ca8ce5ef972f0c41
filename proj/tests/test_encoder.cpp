#include <cmath>

#include "doctest.h"
#include "reference_encoder.hpp"
#include "test_support.hpp"
#include "trajtok/gradcheck.hpp"
#include "trajtok/parallel.hpp"

using namespace trajtok;
using trajtok::testing::toy_config;

TEST_CASE("gradient matches central differences on the toy config") {
  const EncoderConfig cfg = toy_config();
  const Params p = testing::perturbed_params(cfg, 7);
  const EncoderInput in = testing::random_input(16, cfg.vocab_size, 3);
  std::vector<MaskedExample> batch{{&in, {2, 3, 4, 9}}};
  const auto report = gradient_check(p, batch, cfg, LossWeights{}, 20, 1e-5, 11);
  for (const auto& e : report.entries)
    if (e.rel_error > 1e-4) MESSAGE(e.tensor << "[" << e.index << "] analytic " << e.analytic << " numeric " << e.numeric);
  CHECK(report.max_rel_error <= 1e-4);
}

namespace {

Mat random_mat(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  CounterRng rng(seed, 5);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

std::vector<Coords> random_coords(std::size_t n, std::uint64_t seed) {
  CounterRng rng(seed, 6);
  std::vector<Coords> c;
  for (std::size_t i = 0; i < n; ++i) c.push_back({(rng.uniform01() - 0.5) * 400, (rng.uniform01() - 0.5) * 400, 15.0 * i});
  return c;
}

double block_dot(const Mat& a, const Mat& b, int offset, int width) {
  return a.row(0).segment(offset, width).dot(b.row(0).segment(offset, width));
}

std::vector<TokenId> targets_at(const EncoderInput& in, const std::vector<std::size_t>& mask) {
  std::vector<TokenId> t;
  for (std::size_t m : mask) t.push_back(in.ids[m]);
  return t;
}

Params flat_grad(const EncoderConfig& cfg, const Params& p, const EncoderInput& in, const std::vector<std::size_t>& mask,
                 const LossWeights& w) {
  Params g = zero_params(cfg);
  example_loss_and_grad(in, mask, p, cfg, w, g);
  return g;
}

double max_abs_diff(const Params& a, const Params& b) {
  std::vector<const Mat*> bs;
  b.for_each([&](const std::string&, const Mat& m, bool) { bs.push_back(&m); });
  double worst = 0.0;
  std::size_t i = 0;
  a.for_each([&](const std::string&, const Mat& m, bool) { worst = std::max(worst, (m - *bs[i++]).cwiseAbs().maxCoeff()); });
  return worst;
}

}  // namespace

TEST_CASE("rope: identity at the origin, norm preserving, relative") {
  const EncoderConfig cfg = toy_config();
  const int dh = cfg.head_dim();
  const Mat v = random_mat(8, dh, 1);
  std::vector<Coords> zero(8);
  CHECK(rope_rotate(v, zero, RopeMode::SpatioTemporal, cfg.rope_split, cfg.rope_base) == v);
  const auto coords = random_coords(8, 2);
  for (RopeMode mode : {RopeMode::SpatioTemporal, RopeMode::Temporal}) {
    const Mat r = rope_rotate(v, coords, mode, cfg.rope_split, cfg.rope_base);
    for (Eigen::Index i = 0; i < 8; ++i) CHECK(std::abs(r.row(i).norm() / v.row(i).norm() - 1.0) < 1e-12);
  }

  CounterRng rng(3, 0);
  for (int trial = 0; trial < 100; ++trial) {
    const Mat q = random_mat(1, dh, 10 + trial), k = random_mat(1, dh, 500 + trial);
    const Coords a{rng.normal() * 300, rng.normal() * 300, rng.uniform01() * 3000};
    const Coords b{rng.normal() * 300, rng.normal() * 300, rng.uniform01() * 3000};
    const Coords diff{a.lat - b.lat, a.lon - b.lon, a.t - b.t};
    const Coords origin{};
    const auto rot = [&](const Mat& m, const Coords& c) {
      return rope_rotate(m, std::span<const Coords>(&c, 1), RopeMode::SpatioTemporal, cfg.rope_split, cfg.rope_base);
    };
    const Mat qa = rot(q, a), kb = rot(k, b), qd = rot(q, diff), k0 = rot(k, origin);
    const int w[3] = {cfg.rope_split.lat, cfg.rope_split.lon, cfg.rope_split.time};
    int off = 0;
    for (int blk = 0; blk < 3; ++blk) {
      CHECK(std::abs(block_dot(qa, kb, off, w[blk]) - block_dot(qd, k0, off, w[blk])) < 1e-9);
      off += w[blk];
    }
  }
}

TEST_CASE("attention: softmax rows, padding and shift invariance") {
  const EncoderConfig cfg = toy_config();
  const Params p = init_params(cfg, 4);
  const AttentionParams& ap = p.geo.self_blocks[0].attn;
  const Mat x = random_mat(10, cfg.d_model, 7);
  auto coords = random_coords(10, 8);

  AttentionCache c;
  attention_forward(x, x, coords, RopeMode::SpatioTemporal, ap, cfg, 7, &c);
  for (const Mat& probs : c.probs) {
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
      CHECK(std::abs(probs.row(i).sum() - 1.0) < 1e-9);
      for (Eigen::Index j = 7; j < 10; ++j) CHECK(probs(i, j) == 0.0);
    }
  }

  attention_forward(x, x, coords, RopeMode::SpatioTemporal, ap, cfg, 10, &c);
  const std::vector<Mat> before = c.logits;
  for (Coords& co : coords) {
    co.t += 1000.0;
    co.lat += 37.0;
    co.lon -= 12.0;
  }
  attention_forward(x, x, coords, RopeMode::SpatioTemporal, ap, cfg, 10, &c);
  for (std::size_t h = 0; h < before.size(); ++h) CHECK((c.logits[h] - before[h]).cwiseAbs().maxCoeff() < 1e-6);

  const Mat one = random_mat(1, cfg.d_model, 9);
  const std::vector<Coords> c1(1);
  const Mat out = attention_forward(one, one, c1, RopeMode::Temporal, ap, cfg, 1, nullptr);
  CHECK((out - one * ap.wv * ap.wo).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("cross block with its own input equals the self block") {
  const EncoderConfig cfg = toy_config();
  const Params p = testing::perturbed_params(cfg, 12);
  const SelfBlockParams& s = p.geo.self_blocks[1];
  CrossBlockParams cp;
  cp.ln_query = s.ln_attn;
  cp.ln_context = s.ln_attn;
  cp.attn = s.attn;
  cp.ln_mlp = s.ln_mlp;
  cp.mlp = s.mlp;
  const Mat x = random_mat(9, cfg.d_model, 13);
  const auto coords = random_coords(9, 14);
  CrossBlockCache cc;
  const Mat a = cross_block_forward(x, x, coords, cp, cfg, 9, &cc);
  const Mat b = self_block_forward(x, coords, RopeMode::SpatioTemporal, s, cfg, 9, nullptr);
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
  for (const Mat& probs : cc.attn.probs)
    for (Eigen::Index i = 0; i < probs.rows(); ++i) CHECK(std::abs(probs.row(i).sum() - 1.0) < 1e-9);
}

TEST_CASE("fusion update mirrors when the streams swap") {
  const EncoderConfig cfg = toy_config();
  const Params p = testing::perturbed_params(cfg, 15);
  const Mat a = random_mat(6, cfg.d_model, 16), b = random_mat(6, cfg.d_model, 17);
  const auto coords = random_coords(6, 18);
  const FusionParams fwd{&p.geo.self_blocks[3], &p.kin.self_blocks[3], &p.geo.cross_blocks[0],
                         &p.kin.cross_blocks[0], RopeMode::SpatioTemporal, RopeMode::Temporal};
  const FusionParams rev{fwd.self_b, fwd.self_a, fwd.cross_b, fwd.cross_a, fwd.mode_b, fwd.mode_a};
  const auto [a1, b1] = fusion_forward(a, b, coords, fwd, cfg, 6);
  const auto [b2, a2] = fusion_forward(b, a, coords, rev, cfg, 6);
  CHECK(a1 == a2);
  CHECK(b1 == b2);
}

TEST_CASE("geglu mlp: zero weights and central-difference jacobian") {
  MlpParams zero{Mat::Zero(3, 16), Mat::Zero(1, 16), Mat::Zero(8, 8), Mat::Zero(1, 8)};
  CHECK(mlp_forward(random_mat(4, 3, 1), zero, nullptr).isZero(0.0));

  MlpParams p{random_mat(3, 16, 2), random_mat(1, 16, 3), random_mat(8, 8, 4), random_mat(1, 8, 5)};
  const Mat x = random_mat(1, 3, 6);
  const Mat rows_equal = mlp_forward(Mat(x.replicate(2, 1)), p, nullptr);
  CHECK(rows_equal.row(0) == rows_equal.row(1));
  for (Eigen::Index out = 0; out < 8; ++out) {
    Mat dy = Mat::Zero(1, 8);
    dy(0, out) = 1.0;
    MlpCache c;
    mlp_forward(x, p, &c);
    MlpParams g{Mat::Zero(3, 16), Mat::Zero(1, 16), Mat::Zero(8, 8), Mat::Zero(1, 8)};
    const Mat dx = mlp_backward(dy, c, p, g);
    for (Eigen::Index in = 0; in < 3; ++in) {
      const double eps = 1e-6;
      Mat xp = x, xm = x;
      xp(0, in) += eps;
      xm(0, in) -= eps;
      const double fd = (mlp_forward(xp, p, nullptr)(0, out) - mlp_forward(xm, p, nullptr)(0, out)) / (2 * eps);
      CHECK(std::abs(dx(0, in) - fd) / std::max(1.0, std::abs(fd)) < 1e-6);
    }
  }
}

TEST_CASE("full forward matches the loop-by-loop reference") {
  const EncoderConfig cfg = toy_config();
  const Params p = testing::perturbed_params(cfg, 21);
  EncoderInput in = testing::random_input(16, cfg.vocab_size, 22);
  in = pad_input(in, 3);
  const std::vector<std::size_t> mask{0, 3, 4, 11, 15};
  const ForwardResult got = encoder_forward(in, mask, p, cfg);
  const auto ref = oracle::reference_forward(in, mask, p, cfg);
  double worst = 0.0;
  for (std::size_t r = 0; r < mask.size(); ++r) {
    for (int v = 0; v < cfg.vocab_size; ++v)
      worst = std::max(worst, std::abs(got.geom_logits(static_cast<Eigen::Index>(r), v) - ref.logits[r][v]));
    for (int d = 0; d < 3; ++d)
      worst = std::max(worst, std::abs(got.kin_preds(static_cast<Eigen::Index>(r), d) - ref.kin[r][d]));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("losses: analytic values") {
  const Mat uniform = Mat::Zero(2, 50);
  const std::vector<TokenId> t{3, 17};
  CHECK(loss_geom(uniform, t) == doctest::Approx(std::log(50.0)).epsilon(1e-12));

  Mat two(2, 3);
  two << 1.0, 2.0, 0.0, 0.5, -0.5, 0.0;
  const std::vector<TokenId> tt{1, 0};
  const double ce0 = std::log(std::exp(1.0) + std::exp(2.0) + 1.0) - 2.0;
  const double ce1 = std::log(std::exp(0.5) + std::exp(-0.5) + 1.0) - 0.5;
  CHECK(loss_geom(two, tt) == doctest::Approx((ce0 + ce1) / 2).epsilon(1e-14));

  double prev = 1e9;
  for (double margin : {1.0, 5.0, 20.0, 80.0}) {
    Mat m = Mat::Zero(1, 10);
    m(0, 4) = margin;
    const double l = loss_geom(m, std::vector<TokenId>{4});
    CHECK(l < prev);
    prev = l;
  }
  CHECK(prev < 1e-30);
  CHECK_THROWS(loss_geom(Mat(0, 5), std::vector<TokenId>{}));

  const LossWeights w;
  Mat preds(1, 3);
  preds << 0.5, 0.2, -0.3;
  CHECK(loss_kin(preds, std::vector<KinematicFeatures>{{0.5, 0.2, -0.3}}, w) == 0.0);
  CHECK(loss_kin(preds, std::vector<KinematicFeatures>{{1.5, 1.2, 0.7}}, w) == doctest::Approx(2.0));
  Mat p2(2, 3);
  p2 << 0.1, 0.0, 1.0, 0.9, -1.0, 0.0;
  const std::vector<KinematicFeatures> k2{{0.3, 0.6, 0.8}, {0.5, -0.8, 0.6}};
  const LossWeights w2{2.0, 0.5, 1.0};
  const double hand = 2.0 * (0.04 + 0.16) / 2 + 0.25 * (0.36 + 0.04) / 2 + 0.25 * (0.04 + 0.36) / 2;
  CHECK(loss_kin(p2, k2, w2) == doctest::Approx(hand).epsilon(1e-14));

  CHECK(loss_joint(3.9, 2.0, 1.0) == doctest::Approx(5.9));
  CHECK(loss_joint(3.9, 2.0, 0.0) == 3.9);
  const double j0 = loss_joint(1.3, 0.7, 0.0), j1 = loss_joint(1.3, 0.7, 1.0), j2 = loss_joint(1.3, 0.7, 2.5);
  CHECK((j2 - j0) == doctest::Approx(2.5 * (j1 - j0)));
}

TEST_CASE("zero heads give uniform logits") {
  const EncoderConfig cfg = toy_config();
  Params p = init_params(cfg, 30);
  p.geo_head_w.setZero();
  p.geo_head_b.setZero();
  const EncoderInput in = testing::random_input(12, cfg.vocab_size, 31);
  const std::vector<std::size_t> mask{1, 5, 6};
  const LossBreakdown l = example_loss(in, mask, p, cfg, LossWeights{});
  CHECK(l.geom == doctest::Approx(std::log(static_cast<double>(cfg.vocab_size))).epsilon(1e-12));
  CHECK_THROWS(example_loss(in, std::vector<std::size_t>{}, p, cfg, LossWeights{}));
}

TEST_CASE("embedding rows: lookups, masking and unused-row gradients") {
  const EncoderConfig cfg = toy_config();
  const Params p = testing::perturbed_params(cfg, 40);
  EncoderInput in = testing::random_input(10, cfg.vocab_size, 41);
  const std::vector<std::size_t> mask{2, 7};
  const Params g = flat_grad(cfg, p, in, mask, LossWeights{});
  std::vector<bool> used(cfg.vocab_size, false);
  used[Vocabulary::kMask] = true;
  for (std::size_t j = 0; j < in.length(); ++j)
    if (j != 2 && j != 7) used[in.ids[j]] = true;
  for (int r = 0; r < cfg.vocab_size; ++r) {
    if (used[r]) continue;
    CHECK(g.cell_embedding.row(r).isZero(0.0));
  }
  CHECK_FALSE(g.cell_embedding.row(Vocabulary::kMask).isZero(0.0));

  // Replacing a masked token's id changes nothing: the model only sees MASK there.
  EncoderInput swapped = in;
  swapped.ids[2] = in.ids[2] == 5 ? 6 : 5;
  swapped.kin[7] = {0.9, 0.0, 1.0};
  const ForwardResult a = encoder_forward(in, mask, p, cfg);
  const ForwardResult b = encoder_forward(swapped, mask, p, cfg);
  CHECK(a.g_final == b.g_final);
  CHECK(a.k_final == b.k_final);
}

TEST_CASE("gradients are affine in the kinematic weight") {
  const EncoderConfig cfg = toy_config();
  const Params p = testing::perturbed_params(cfg, 50);
  const EncoderInput in = testing::random_input(12, cfg.vocab_size, 51);
  const std::vector<std::size_t> mask{1, 4, 8};
  const Params g0 = flat_grad(cfg, p, in, mask, {1, 1, 0.0});
  const Params g1 = flat_grad(cfg, p, in, mask, {1, 1, 1.0});
  const Params g3 = flat_grad(cfg, p, in, mask, {1, 1, 3.0});
  Params lin = g0;
  axpy(lin, 3.0, g1);
  axpy(lin, -3.0, g0);
  CHECK(max_abs_diff(lin, g3) < 1e-10);
  // Doubling both betas doubles the kinematic part.
  const Params gb = flat_grad(cfg, p, in, mask, {2, 2, 1.0});
  Params twice = g0;
  axpy(twice, 2.0, g1);
  axpy(twice, -2.0, g0);
  CHECK(max_abs_diff(twice, gb) < 1e-10);
}

TEST_CASE("batches: companions, order and threads do not matter") {
  const EncoderConfig cfg = toy_config();
  const Params p = testing::perturbed_params(cfg, 60);
  const EncoderInput a = testing::random_input(14, cfg.vocab_size, 61);
  const EncoderInput b = testing::random_input(9, cfg.vocab_size, 62);
  const std::vector<std::size_t> ma{0, 5, 13}, mb{2, 3};
  const ForwardResult alone = encoder_forward(a, ma, p, cfg);
  std::vector<MaskedExample> ab{{&a, ma}, {&b, mb}}, ba{{&b, mb}, {&a, ma}};
  Params g_ab = zero_params(cfg), g_ba = zero_params(cfg), g_serial = zero_params(cfg);
  const LossBreakdown l_ab = batch_loss_and_grad(ab, p, cfg, LossWeights{}, g_ab);
  const LossBreakdown l_ba = batch_loss_and_grad(ba, p, cfg, LossWeights{}, g_ba);
  const LossBreakdown l_s = batch_loss_and_grad_serial(ab, p, cfg, LossWeights{}, g_serial);
  CHECK(l_ab.joint == doctest::Approx(l_ba.joint).epsilon(1e-14));
  CHECK(max_abs_diff(g_ab, g_ba) < 1e-14);
  CHECK(l_ab.joint == l_s.joint);
  CHECK(max_abs_diff(g_ab, g_serial) == 0.0);
  {
    parallel::ThreadScope scope(3);
    Params g3 = zero_params(cfg);
    CHECK(batch_loss_and_grad(ab, p, cfg, LossWeights{}, g3).joint == l_ab.joint);
    CHECK(max_abs_diff(g3, g_ab) == 0.0);
  }
  CHECK(encoder_forward(a, ma, p, cfg).geom_logits == alone.geom_logits);
  const LossBreakdown la = example_loss(a, ma, p, cfg, LossWeights{});
  CHECK(la.geom == doctest::Approx(loss_geom(alone.geom_logits, targets_at(a, ma))).epsilon(1e-14));
}

TEST_CASE("padding leaves valid positions unchanged") {
  const EncoderConfig cfg = toy_config();
  const Params p = testing::perturbed_params(cfg, 70);
  const EncoderInput in = testing::random_input(11, cfg.vocab_size, 71);
  const EncoderInput padded = pad_input(in, 5);
  CHECK(padded.length() == 16);
  CHECK(padded.valid_length == 11);
  const std::vector<std::size_t> mask{3, 9};
  const ForwardResult a = encoder_forward(in, mask, p, cfg);
  const ForwardResult b = encoder_forward(padded, mask, p, cfg);
  CHECK((a.geom_logits - b.geom_logits).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((a.g_final - b.g_final.topRows(11)).cwiseAbs().maxCoeff() < 1e-12);
}
