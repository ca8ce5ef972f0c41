#include "trajtok/encoder.hpp"

#include <cmath>
#include <stdexcept>

#include "trajtok/parallel.hpp"
#include "trajtok/rng.hpp"

namespace trajtok {

std::vector<Coords> relative_coords(const TokenSequence& seq, double coord_scale) {
  std::vector<Coords> out(seq.tokens.size());
  if (seq.tokens.empty()) return out;
  const Token& first = seq.tokens.front();
  for (std::size_t j = 0; j < seq.tokens.size(); ++j) {
    const Token& tok = seq.tokens[j];
    out[j] = {(tok.lat - first.lat) * coord_scale, (tok.lon - first.lon) * coord_scale, tok.t - first.t};
  }
  return out;
}

// ---------------------------------------------------------------------------------------
// Parameters

namespace {

LayerNormParams make_ln(int d) { return {Mat::Zero(1, d), Mat::Zero(1, d)}; }

MlpParams make_mlp(int d_in, int hidden, int d_out) {
  return {Mat::Zero(d_in, 2 * hidden), Mat::Zero(1, 2 * hidden), Mat::Zero(hidden, d_out), Mat::Zero(1, d_out)};
}

AttentionParams make_attn(int d) { return {Mat::Zero(d, d), Mat::Zero(d, d), Mat::Zero(d, d), Mat::Zero(d, d)}; }

ChannelParams make_channel(const EncoderConfig& cfg) {
  ChannelParams c;
  for (int i = 0; i < cfg.n_layers_total; ++i)
    c.self_blocks.push_back({make_ln(cfg.d_model), make_attn(cfg.d_model), make_ln(cfg.d_model),
                             make_mlp(cfg.d_model, cfg.d_ff, cfg.d_model)});
  for (int i = 0; i < cfg.n_fusion; ++i)
    c.cross_blocks.push_back({make_ln(cfg.d_model), make_ln(cfg.d_model), make_attn(cfg.d_model),
                              make_ln(cfg.d_model), make_mlp(cfg.d_model, cfg.d_ff, cfg.d_model)});
  c.ln_final = make_ln(cfg.d_model);
  return c;
}

}  // namespace

Params zero_params(const EncoderConfig& cfg) {
  cfg.validate();
  Params p;
  p.cell_embedding = Mat::Zero(cfg.vocab_size, cfg.d_model);
  p.kin_embed = make_mlp(3, cfg.kin_hidden, cfg.d_model);
  p.geo = make_channel(cfg);
  p.kin = make_channel(cfg);
  p.geo_head_w = Mat::Zero(cfg.d_model, cfg.vocab_size);
  p.geo_head_b = Mat::Zero(1, cfg.vocab_size);
  p.kin_head_w = Mat::Zero(cfg.d_model, 3);
  p.kin_head_b = Mat::Zero(1, 3);
  return p;
}

Params init_params(const EncoderConfig& cfg, std::uint64_t seed) {
  Params p = zero_params(cfg);
  std::uint64_t stream = 0;
  p.for_each([&](const std::string& name, Mat& m, bool decays) {
    CounterRng rng(seed, stream++);
    if (name.ends_with(".gain")) {
      m.setOnes();
    } else if (name == "cell_embedding") {
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    } else if (decays) {
      const double s = 1.0 / std::sqrt(static_cast<double>(m.rows()));
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = s * rng.normal();
    }
  });
  return p;
}

std::size_t Params::num_scalars() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Mat& m, bool) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

void axpy(Params& a, double s, const Params& b) {
  std::vector<const Mat*> src;
  b.for_each([&](const std::string&, const Mat& m, bool) { src.push_back(&m); });
  std::size_t i = 0;
  a.for_each([&](const std::string&, Mat& m, bool) { m += s * *src[i++]; });
}

void scale(Params& a, double s) {
  a.for_each([&](const std::string&, Mat& m, bool) { m *= s; });
}

bool all_finite(const Params& p) {
  bool ok = true;
  p.for_each([&](const std::string&, const Mat& m, bool) { ok = ok && m.allFinite(); });
  return ok;
}

// ---------------------------------------------------------------------------------------
// Inputs

EncoderInput make_encoder_input(const TokenSequence& seq, double v_max, double coord_scale) {
  EncoderInput in;
  in.ids = seq.ids();
  in.kin = kinematic_features(seq, v_max);
  in.coords = relative_coords(seq, coord_scale);
  in.valid_length = in.ids.size();
  return in;
}

EncoderInput pad_input(const EncoderInput& in, std::size_t extra) {
  EncoderInput out = in;
  const Coords last = in.coords.empty() ? Coords{} : in.coords.back();
  for (std::size_t i = 0; i < extra; ++i) {
    out.ids.push_back(Vocabulary::kPad);
    out.kin.push_back({0.0, 0.0, 0.0});
    out.coords.push_back(last);
  }
  return out;
}

// ---------------------------------------------------------------------------------------
// Forward / backward

struct ForwardCache {
  std::vector<TokenId> geo_ids;
  MlpCache kin_embed;
  std::vector<SelfBlockCache> geo_self, kin_self;
  std::vector<CrossBlockCache> geo_cross, kin_cross;
  LayerNormCache geo_final, kin_final;
  Mat g_final, k_final;
};

namespace {

void check_input(const EncoderInput& in, std::span<const std::size_t> mask, const EncoderConfig& cfg) {
  const std::size_t L = in.length();
  if (L == 0) throw std::invalid_argument("encoder: empty input");
  if (in.kin.size() != L || in.coords.size() != L) throw std::invalid_argument("encoder: ragged input");
  if (in.valid_length == 0 || in.valid_length > L) throw std::invalid_argument("encoder: bad valid_length");
  if (L > static_cast<std::size_t>(cfg.max_seq_len)) throw std::invalid_argument("encoder: sequence exceeds max_seq_len");
  for (TokenId id : in.ids)
    if (id < 0 || id >= cfg.vocab_size) throw std::out_of_range("encoder: token id out of range");
  for (std::size_t m : mask)
    if (m >= in.valid_length) throw std::out_of_range("encoder: mask position outside the sequence");
}

ForwardResult forward_impl(const EncoderInput& in, std::span<const std::size_t> mask, const Params& p,
                           const EncoderConfig& cfg, ForwardCache* cache) {
  check_input(in, mask, cfg);
  const auto L = static_cast<Eigen::Index>(in.length());
  const std::size_t n_valid = in.valid_length;

  std::vector<TokenId> geo_ids = in.ids;
  Mat kin_in(L, 3);
  for (Eigen::Index j = 0; j < L; ++j) {
    const auto& k = in.kin[static_cast<std::size_t>(j)];
    kin_in.row(j) << k.v_norm, k.sin_heading, k.cos_heading;
  }
  for (std::size_t m : mask) {
    geo_ids[m] = Vocabulary::kMask;
    kin_in.row(static_cast<Eigen::Index>(m)).setZero();
  }

  Mat g(L, cfg.d_model);
  for (Eigen::Index j = 0; j < L; ++j) g.row(j) = p.cell_embedding.row(geo_ids[static_cast<std::size_t>(j)]);
  Mat k = mlp_forward(kin_in, p.kin_embed, cache ? &cache->kin_embed : nullptr);

  const int n_self_only = cfg.n_layers_total - cfg.n_fusion;
  if (cache) {
    cache->geo_ids = geo_ids;
    cache->geo_self.assign(cfg.n_layers_total, {});
    cache->kin_self.assign(cfg.n_layers_total, {});
    cache->geo_cross.assign(cfg.n_fusion, {});
    cache->kin_cross.assign(cfg.n_fusion, {});
  }
  const auto& coords = in.coords;
  for (int l = 0; l < n_self_only; ++l) {
    g = self_block_forward(g, coords, RopeMode::SpatioTemporal, p.geo.self_blocks[l], cfg, n_valid,
                           cache ? &cache->geo_self[l] : nullptr);
    k = self_block_forward(k, coords, RopeMode::Temporal, p.kin.self_blocks[l], cfg, n_valid,
                           cache ? &cache->kin_self[l] : nullptr);
  }
  for (int f = 0; f < cfg.n_fusion; ++f) {
    const int l = n_self_only + f;
    const Mat g_self = self_block_forward(g, coords, RopeMode::SpatioTemporal, p.geo.self_blocks[l], cfg,
                                          n_valid, cache ? &cache->geo_self[l] : nullptr);
    const Mat k_self = self_block_forward(k, coords, RopeMode::Temporal, p.kin.self_blocks[l], cfg, n_valid,
                                          cache ? &cache->kin_self[l] : nullptr);
    Mat g_next = cross_block_forward(g_self, k, coords, p.geo.cross_blocks[f], cfg, n_valid,
                                     cache ? &cache->geo_cross[f] : nullptr);
    Mat k_next = cross_block_forward(k_self, g, coords, p.kin.cross_blocks[f], cfg, n_valid,
                                     cache ? &cache->kin_cross[f] : nullptr);
    g = std::move(g_next);
    k = std::move(k_next);
  }

  ForwardResult out;
  out.g_final = layer_norm_forward(g, p.geo.ln_final, cfg.ln_eps, cache ? &cache->geo_final : nullptr);
  out.k_final = layer_norm_forward(k, p.kin.ln_final, cfg.ln_eps, cache ? &cache->kin_final : nullptr);

  const auto n_mask = static_cast<Eigen::Index>(mask.size());
  out.geom_logits.resize(n_mask, cfg.vocab_size);
  out.kin_preds.resize(n_mask, 3);
  for (Eigen::Index r = 0; r < n_mask; ++r) {
    const auto j = static_cast<Eigen::Index>(mask[static_cast<std::size_t>(r)]);
    out.geom_logits.row(r) = out.g_final.row(j) * p.geo_head_w + p.geo_head_b;
    out.kin_preds.row(r) = out.k_final.row(j) * p.kin_head_w + p.kin_head_b;
  }
  if (cache) {
    cache->g_final = out.g_final;
    cache->k_final = out.k_final;
  }
  return out;
}

void backward_impl(const Mat& dlogits, const Mat& dkin, std::span<const std::size_t> mask, const EncoderInput& in,
                   const Params& p, const EncoderConfig& cfg, const ForwardCache& c, Params& grad) {
  const auto L = static_cast<Eigen::Index>(in.length());
  Mat dg_final = Mat::Zero(L, cfg.d_model);
  Mat dk_final = Mat::Zero(L, cfg.d_model);
  for (Eigen::Index r = 0; r < dlogits.rows(); ++r) {
    const auto j = static_cast<Eigen::Index>(mask[static_cast<std::size_t>(r)]);
    grad.geo_head_w.noalias() += c.g_final.row(j).transpose() * dlogits.row(r);
    grad.geo_head_b.row(0) += dlogits.row(r);
    dg_final.row(j) += dlogits.row(r) * p.geo_head_w.transpose();
    grad.kin_head_w.noalias() += c.k_final.row(j).transpose() * dkin.row(r);
    grad.kin_head_b.row(0) += dkin.row(r);
    dk_final.row(j) += dkin.row(r) * p.kin_head_w.transpose();
  }
  Mat dg = layer_norm_backward(dg_final, c.geo_final, p.geo.ln_final, grad.geo.ln_final);
  Mat dk = layer_norm_backward(dk_final, c.kin_final, p.kin.ln_final, grad.kin.ln_final);

  const auto& coords = in.coords;
  const int n_self_only = cfg.n_layers_total - cfg.n_fusion;
  for (int f = cfg.n_fusion - 1; f >= 0; --f) {
    const int l = n_self_only + f;
    const CrossGrads gc = cross_block_backward(dg, c.geo_cross[f], coords, p.geo.cross_blocks[f], cfg,
                                               grad.geo.cross_blocks[f]);
    const CrossGrads kc = cross_block_backward(dk, c.kin_cross[f], coords, p.kin.cross_blocks[f], cfg,
                                               grad.kin.cross_blocks[f]);
    // gc.dy flows to this layer's kinematic input, kc.dy to its geometric input.
    Mat dg_in = self_block_backward(gc.dx, c.geo_self[l], coords, p.geo.self_blocks[l], cfg,
                                    grad.geo.self_blocks[l]);
    Mat dk_in = self_block_backward(kc.dx, c.kin_self[l], coords, p.kin.self_blocks[l], cfg,
                                    grad.kin.self_blocks[l]);
    dg = dg_in + kc.dy;
    dk = dk_in + gc.dy;
  }
  for (int l = n_self_only - 1; l >= 0; --l) {
    dg = self_block_backward(dg, c.geo_self[l], coords, p.geo.self_blocks[l], cfg, grad.geo.self_blocks[l]);
    dk = self_block_backward(dk, c.kin_self[l], coords, p.kin.self_blocks[l], cfg, grad.kin.self_blocks[l]);
  }
  mlp_backward(dk, c.kin_embed, p.kin_embed, grad.kin_embed);
  for (Eigen::Index j = 0; j < L; ++j) grad.cell_embedding.row(c.geo_ids[static_cast<std::size_t>(j)]) += dg.row(j);
}

}  // namespace

ForwardResult encoder_forward(const EncoderInput& in, std::span<const std::size_t> mask, const Params& params,
                              const EncoderConfig& cfg) {
  return forward_impl(in, mask, params, cfg, nullptr);
}

// ---------------------------------------------------------------------------------------
// Losses

double loss_geom(const Mat& logits, std::span<const TokenId> targets) {
  if (logits.rows() == 0) throw std::invalid_argument("loss_geom: empty mask");
  if (static_cast<std::size_t>(logits.rows()) != targets.size())
    throw std::invalid_argument("loss_geom: target count mismatch");
  double total = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    const double lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
    total += lse - logits(r, targets[static_cast<std::size_t>(r)]);
  }
  return total / static_cast<double>(logits.rows());
}

double loss_kin(const Mat& preds, std::span<const KinematicFeatures> targets, const LossWeights& w) {
  if (preds.rows() == 0) throw std::invalid_argument("loss_kin: empty mask");
  if (static_cast<std::size_t>(preds.rows()) != targets.size())
    throw std::invalid_argument("loss_kin: target count mismatch");
  double sv = 0.0, ss = 0.0, sc = 0.0;
  for (Eigen::Index r = 0; r < preds.rows(); ++r) {
    const auto& t = targets[static_cast<std::size_t>(r)];
    sv += std::pow(preds(r, 0) - t.v_norm, 2);
    ss += std::pow(preds(r, 1) - t.sin_heading, 2);
    sc += std::pow(preds(r, 2) - t.cos_heading, 2);
  }
  const double n = static_cast<double>(preds.rows());
  return w.beta_speed * sv / n + 0.5 * w.beta_heading * ss / n + 0.5 * w.beta_heading * sc / n;
}

namespace {

struct Targets {
  std::vector<TokenId> ids;
  std::vector<KinematicFeatures> kin;
};

Targets gather_targets(const EncoderInput& in, std::span<const std::size_t> mask) {
  Targets t;
  for (std::size_t m : mask) {
    t.ids.push_back(in.ids[m]);
    t.kin.push_back(in.kin[m]);
  }
  return t;
}

LossBreakdown breakdown(const ForwardResult& fr, const Targets& t, const LossWeights& w) {
  LossBreakdown lb;
  lb.geom = loss_geom(fr.geom_logits, t.ids);
  lb.kin = loss_kin(fr.kin_preds, t.kin, w);
  lb.joint = loss_joint(lb.geom, lb.kin, w.lambda_kin);
  lb.masked = t.ids.size();
  for (Eigen::Index r = 0; r < fr.geom_logits.rows(); ++r) {
    Eigen::Index arg = 0;
    fr.geom_logits.row(r).maxCoeff(&arg);
    if (arg == t.ids[static_cast<std::size_t>(r)]) ++lb.correct;
  }
  return lb;
}

}  // namespace

LossBreakdown example_loss(const EncoderInput& in, std::span<const std::size_t> mask, const Params& params,
                           const EncoderConfig& cfg, const LossWeights& w) {
  if (mask.empty()) throw std::invalid_argument("example_loss: empty mask");
  const ForwardResult fr = forward_impl(in, mask, params, cfg, nullptr);
  return breakdown(fr, gather_targets(in, mask), w);
}

LossBreakdown example_loss_and_grad(const EncoderInput& in, std::span<const std::size_t> mask,
                                    const Params& params, const EncoderConfig& cfg, const LossWeights& w,
                                    Params& grad) {
  if (mask.empty()) throw std::invalid_argument("example_loss_and_grad: empty mask");
  ForwardCache cache;
  const ForwardResult fr = forward_impl(in, mask, params, cfg, &cache);
  const Targets t = gather_targets(in, mask);
  const LossBreakdown lb = breakdown(fr, t, w);
  if (!std::isfinite(lb.joint)) throw std::runtime_error("non-finite loss");

  const auto n = static_cast<Eigen::Index>(mask.size());
  const double inv_n = 1.0 / static_cast<double>(n);
  Mat dlogits(n, cfg.vocab_size);
  Mat dkin(n, 3);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mx = fr.geom_logits.row(r).maxCoeff();
    dlogits.row(r) = (fr.geom_logits.row(r).array() - mx).exp();
    dlogits.row(r) /= dlogits.row(r).sum();
    dlogits(r, t.ids[static_cast<std::size_t>(r)]) -= 1.0;
    dlogits.row(r) *= inv_n;
    const auto& tk = t.kin[static_cast<std::size_t>(r)];
    dkin(r, 0) = w.lambda_kin * w.beta_speed * 2.0 * (fr.kin_preds(r, 0) - tk.v_norm) * inv_n;
    dkin(r, 1) = w.lambda_kin * w.beta_heading * (fr.kin_preds(r, 1) - tk.sin_heading) * inv_n;
    dkin(r, 2) = w.lambda_kin * w.beta_heading * (fr.kin_preds(r, 2) - tk.cos_heading) * inv_n;
  }
  backward_impl(dlogits, dkin, mask, in, params, cfg, cache, grad);
  return lb;
}

namespace {

void accumulate(LossBreakdown& total, const LossBreakdown& lb) {
  total.joint += lb.joint;
  total.geom += lb.geom;
  total.kin += lb.kin;
  total.masked += lb.masked;
  total.correct += lb.correct;
}

void finish(LossBreakdown& total, std::size_t n, Params& grad, const Params& sum) {
  const double inv = 1.0 / static_cast<double>(n);
  total.joint *= inv;
  total.geom *= inv;
  total.kin *= inv;
  axpy(grad, inv, sum);
}

}  // namespace

LossBreakdown batch_loss_and_grad(std::span<const MaskedExample> batch, const Params& params,
                                  const EncoderConfig& cfg, const LossWeights& w, Params& grad) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  std::vector<Params> per_example(batch.size());
  std::vector<LossBreakdown> losses(batch.size());
  parallel::parallel_for(0, static_cast<std::ptrdiff_t>(batch.size()), [&](std::ptrdiff_t i) {
    const auto k = static_cast<std::size_t>(i);
    per_example[k] = zero_params(cfg);
    losses[k] = example_loss_and_grad(*batch[k].input, batch[k].mask, params, cfg, w, per_example[k]);
  });
  Params sum = zero_params(cfg);
  LossBreakdown total;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    axpy(sum, 1.0, per_example[k]);
    accumulate(total, losses[k]);
  }
  finish(total, batch.size(), grad, sum);
  return total;
}

LossBreakdown batch_loss_and_grad_serial(std::span<const MaskedExample> batch, const Params& params,
                                         const EncoderConfig& cfg, const LossWeights& w, Params& grad) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  Params sum = zero_params(cfg);
  LossBreakdown total;
  for (const auto& ex : batch) {
    Params g = zero_params(cfg);
    accumulate(total, example_loss_and_grad(*ex.input, ex.mask, params, cfg, w, g));
    axpy(sum, 1.0, g);
  }
  finish(total, batch.size(), grad, sum);
  return total;
}

}  // namespace trajtok
