#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "trajtok/encoder.hpp"

namespace trajtok {

void EncoderConfig::validate() const {
  if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0)
    throw std::invalid_argument("d_model must be a positive multiple of n_heads");
  if (n_fusion < 0 || n_fusion > n_layers_total) throw std::invalid_argument("need 0 <= n_fusion <= n_layers_total");
  if (rope_split.total() != head_dim()) throw std::invalid_argument("rope_split must sum to the head dimension");
  if (rope_split.lat % 2 || rope_split.lon % 2 || rope_split.time % 2 || head_dim() % 2)
    throw std::invalid_argument("rope blocks must have even width");
  if (d_ff <= 0 || kin_hidden <= 0 || vocab_size <= Vocabulary::kFirstCell || max_seq_len <= 0)
    throw std::invalid_argument("invalid encoder dimensions");
}

// ---------------------------------------------------------------------------------------
// RoPE

namespace {

void rotate_block(Mat& x, int offset, int width, std::span<const Coords> coords, double Coords::*axis,
                  double base, double sign) {
  const int pairs = width / 2;
  for (Eigen::Index j = 0; j < x.rows(); ++j) {
    const double pos = coords[static_cast<std::size_t>(j)].*axis;
    if (pos == 0.0) continue;
    for (int i = 0; i < pairs; ++i) {
      const double freq = std::pow(base, -2.0 * i / width);
      const double angle = sign * pos * freq;
      const double c = std::cos(angle), s = std::sin(angle);
      const int a = offset + 2 * i;
      const double x0 = x(j, a), x1 = x(j, a + 1);
      x(j, a) = x0 * c - x1 * s;
      x(j, a + 1) = x0 * s + x1 * c;
    }
  }
}

}  // namespace

void rope_rotate_inplace(Mat& vecs, std::span<const Coords> coords, RopeMode mode, const RopeSplit& split,
                         double base, bool inverse) {
  if (static_cast<std::size_t>(vecs.rows()) != coords.size())
    throw std::invalid_argument("rope: coordinate count does not match rows");
  const double sign = inverse ? -1.0 : 1.0;
  if (mode == RopeMode::Temporal) {
    rotate_block(vecs, 0, static_cast<int>(vecs.cols()), coords, &Coords::t, base, sign);
    return;
  }
  if (split.total() != vecs.cols()) throw std::invalid_argument("rope: split does not match head width");
  rotate_block(vecs, 0, split.lat, coords, &Coords::lat, base, sign);
  rotate_block(vecs, split.lat, split.lon, coords, &Coords::lon, base, sign);
  rotate_block(vecs, split.lat + split.lon, split.time, coords, &Coords::t, base, sign);
}

Mat rope_rotate(const Mat& vecs, std::span<const Coords> coords, RopeMode mode, const RopeSplit& split,
                double base) {
  Mat out = vecs;
  rope_rotate_inplace(out, coords, mode, split, base);
  return out;
}

// ---------------------------------------------------------------------------------------
// LayerNorm

Mat layer_norm_forward(const Mat& x, const LayerNormParams& p, double eps, LayerNormCache* cache) {
  const Eigen::Index n = x.rows(), d = x.cols();
  Mat xhat(n, d);
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.row(i).array() - mean) * inv_std(i);
  }
  Mat y = (xhat.array().rowwise() * p.gain.row(0).array()).rowwise() + p.bias.row(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Mat layer_norm_backward(const Mat& dy, const LayerNormCache& c, const LayerNormParams& p, LayerNormParams& grad) {
  const Eigen::Index n = dy.rows();
  const double d = static_cast<double>(dy.cols());
  grad.gain.row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  grad.bias.row(0) += dy.colwise().sum();
  Mat dxhat = dy.array().rowwise() * p.gain.row(0).array();
  Mat dx(n, dy.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double sum = dxhat.row(i).sum();
    const double dot = dxhat.row(i).dot(c.xhat.row(i));
    dx.row(i) = (c.inv_std(i) / d) * (d * dxhat.row(i).array() - sum - c.xhat.row(i).array() * dot);
  }
  return dx;
}

// ---------------------------------------------------------------------------------------
// GeGLU MLP

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Mat mlp_forward(const Mat& x, const MlpParams& p, MlpCache* cache) {
  Mat pre = x * p.w_in;
  pre.rowwise() += p.b_in.row(0);
  const Eigen::Index h = p.w_out.rows();
  Mat hidden(x.rows(), h);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index k = 0; k < h; ++k) hidden(i, k) = pre(i, k) * gelu(pre(i, h + k));
  Mat y = hidden * p.w_out;
  y.rowwise() += p.b_out.row(0);
  if (cache) {
    cache->x = x;
    cache->pre = std::move(pre);
    cache->hidden = std::move(hidden);
  }
  return y;
}

Mat mlp_backward(const Mat& dy, const MlpCache& c, const MlpParams& p, MlpParams& grad) {
  grad.w_out.noalias() += c.hidden.transpose() * dy;
  grad.b_out.row(0) += dy.colwise().sum();
  const Mat dhidden = dy * p.w_out.transpose();
  const Eigen::Index h = p.w_out.rows();
  Mat dpre(dy.rows(), 2 * h);
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    for (Eigen::Index k = 0; k < h; ++k) {
      const double a = c.pre(i, k), g = c.pre(i, h + k);
      dpre(i, k) = dhidden(i, k) * gelu(g);
      dpre(i, h + k) = dhidden(i, k) * a * gelu_grad(g);
    }
  }
  grad.w_in.noalias() += c.x.transpose() * dpre;
  grad.b_in.row(0) += dpre.colwise().sum();
  return dpre * p.w_in.transpose();
}

// ---------------------------------------------------------------------------------------
// Attention

Mat attention_forward(const Mat& xq, const Mat& xkv, std::span<const Coords> coords, RopeMode mode,
                      const AttentionParams& p, const EncoderConfig& cfg, std::size_t valid_length,
                      AttentionCache* cache) {
  const Eigen::Index L = xq.rows();
  if (xkv.rows() != L) throw std::invalid_argument("attention: query and context lengths differ");
  if (valid_length == 0 || valid_length > static_cast<std::size_t>(L))
    throw std::invalid_argument("attention: valid_length must be in [1, L]");
  const int dh = cfg.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto n_valid = static_cast<Eigen::Index>(valid_length);

  const Mat q = xq * p.wq;
  const Mat k = xkv * p.wk;
  const Mat v = xkv * p.wv;
  Mat concat(L, cfg.d_model);

  AttentionCache local;
  AttentionCache& c = cache ? *cache : local;
  c.q_rot.assign(cfg.n_heads, Mat());
  c.k_rot.assign(cfg.n_heads, Mat());
  c.v.assign(cfg.n_heads, Mat());
  c.logits.assign(cfg.n_heads, Mat());
  c.probs.assign(cfg.n_heads, Mat());
  c.mode = mode;

  for (int h = 0; h < cfg.n_heads; ++h) {
    Mat qh = q.middleCols(h * dh, dh);
    Mat kh = k.middleCols(h * dh, dh);
    rope_rotate_inplace(qh, coords, mode, cfg.rope_split, cfg.rope_base);
    rope_rotate_inplace(kh, coords, mode, cfg.rope_split, cfg.rope_base);
    Mat logits = (qh * kh.transpose()) * inv_sqrt;
    if (n_valid < L) logits.rightCols(L - n_valid).setConstant(-std::numeric_limits<double>::infinity());
    // Vectorized exp(-inf) can return a denormal, so padded weights are set explicitly.
    Mat probs = Mat::Zero(L, L);
    for (Eigen::Index i = 0; i < L; ++i) {
      const double mx = logits.row(i).head(n_valid).maxCoeff();
      probs.row(i).head(n_valid) = (logits.row(i).head(n_valid).array() - mx).exp();
      probs.row(i).head(n_valid) /= probs.row(i).head(n_valid).sum();
    }
    Mat vh = v.middleCols(h * dh, dh);
    concat.middleCols(h * dh, dh).noalias() = probs * vh;
    c.q_rot[h] = std::move(qh);
    c.k_rot[h] = std::move(kh);
    c.v[h] = std::move(vh);
    c.logits[h] = std::move(logits);
    c.probs[h] = std::move(probs);
  }
  Mat out = concat * p.wo;
  if (cache) {
    c.xq = xq;
    c.xkv = xkv;
    c.concat = std::move(concat);
  }
  return out;
}

AttentionGrads attention_backward(const Mat& dy, const AttentionCache& c, std::span<const Coords> coords,
                                  const AttentionParams& p, const EncoderConfig& cfg, AttentionParams& grad) {
  const int dh = cfg.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const Eigen::Index L = dy.rows();

  grad.wo.noalias() += c.concat.transpose() * dy;
  const Mat dconcat = dy * p.wo.transpose();

  Mat dq(L, cfg.d_model), dk(L, cfg.d_model), dv(L, cfg.d_model);
  for (int h = 0; h < cfg.n_heads; ++h) {
    const Mat& probs = c.probs[h];
    const Mat dout_h = dconcat.middleCols(h * dh, dh);
    dv.middleCols(h * dh, dh).noalias() = probs.transpose() * dout_h;
    const Mat dprobs = dout_h * c.v[h].transpose();
    Mat dlogits(L, L);
    for (Eigen::Index i = 0; i < L; ++i) {
      const double dot = dprobs.row(i).dot(probs.row(i));
      dlogits.row(i) = probs.row(i).array() * (dprobs.row(i).array() - dot);
    }
    Mat dqh = (dlogits * c.k_rot[h]) * inv_sqrt;
    Mat dkh = (dlogits.transpose() * c.q_rot[h]) * inv_sqrt;
    rope_rotate_inplace(dqh, coords, c.mode, cfg.rope_split, cfg.rope_base, /*inverse=*/true);
    rope_rotate_inplace(dkh, coords, c.mode, cfg.rope_split, cfg.rope_base, /*inverse=*/true);
    dq.middleCols(h * dh, dh) = dqh;
    dk.middleCols(h * dh, dh) = dkh;
  }
  grad.wq.noalias() += c.xq.transpose() * dq;
  grad.wk.noalias() += c.xkv.transpose() * dk;
  grad.wv.noalias() += c.xkv.transpose() * dv;
  AttentionGrads out;
  out.dxq = dq * p.wq.transpose();
  out.dxkv = dk * p.wk.transpose() + dv * p.wv.transpose();
  return out;
}

// ---------------------------------------------------------------------------------------
// Blocks

Mat self_block_forward(const Mat& x, std::span<const Coords> coords, RopeMode mode, const SelfBlockParams& p,
                       const EncoderConfig& cfg, std::size_t valid_length, SelfBlockCache* cache) {
  SelfBlockCache local;
  SelfBlockCache& c = cache ? *cache : local;
  const Mat h = layer_norm_forward(x, p.ln_attn, cfg.ln_eps, &c.ln_attn);
  const Mat x1 = x + attention_forward(h, h, coords, mode, p.attn, cfg, valid_length, cache ? &c.attn : nullptr);
  const Mat h2 = layer_norm_forward(x1, p.ln_mlp, cfg.ln_eps, &c.ln_mlp);
  return x1 + mlp_forward(h2, p.mlp, cache ? &c.mlp : nullptr);
}

Mat self_block_backward(const Mat& dy, const SelfBlockCache& c, std::span<const Coords> coords,
                        const SelfBlockParams& p, const EncoderConfig& cfg, SelfBlockParams& grad) {
  const Mat dh2 = mlp_backward(dy, c.mlp, p.mlp, grad.mlp);
  const Mat dx1 = dy + layer_norm_backward(dh2, c.ln_mlp, p.ln_mlp, grad.ln_mlp);
  const AttentionGrads ag = attention_backward(dx1, c.attn, coords, p.attn, cfg, grad.attn);
  const Mat dh = ag.dxq + ag.dxkv;
  return dx1 + layer_norm_backward(dh, c.ln_attn, p.ln_attn, grad.ln_attn);
}

Mat cross_block_forward(const Mat& x, const Mat& y, std::span<const Coords> coords, const CrossBlockParams& p,
                        const EncoderConfig& cfg, std::size_t valid_length, CrossBlockCache* cache) {
  CrossBlockCache local;
  CrossBlockCache& c = cache ? *cache : local;
  const Mat hq = layer_norm_forward(x, p.ln_query, cfg.ln_eps, &c.ln_query);
  const Mat hc = layer_norm_forward(y, p.ln_context, cfg.ln_eps, &c.ln_context);
  const Mat x1 = x + attention_forward(hq, hc, coords, RopeMode::SpatioTemporal, p.attn, cfg, valid_length,
                                       cache ? &c.attn : nullptr);
  const Mat h2 = layer_norm_forward(x1, p.ln_mlp, cfg.ln_eps, &c.ln_mlp);
  return x1 + mlp_forward(h2, p.mlp, cache ? &c.mlp : nullptr);
}

CrossGrads cross_block_backward(const Mat& dout, const CrossBlockCache& c, std::span<const Coords> coords,
                                const CrossBlockParams& p, const EncoderConfig& cfg, CrossBlockParams& grad) {
  const Mat dh2 = mlp_backward(dout, c.mlp, p.mlp, grad.mlp);
  const Mat dx1 = dout + layer_norm_backward(dh2, c.ln_mlp, p.ln_mlp, grad.ln_mlp);
  const AttentionGrads ag = attention_backward(dx1, c.attn, coords, p.attn, cfg, grad.attn);
  CrossGrads out;
  out.dx = dx1 + layer_norm_backward(ag.dxq, c.ln_query, p.ln_query, grad.ln_query);
  out.dy = layer_norm_backward(ag.dxkv, c.ln_context, p.ln_context, grad.ln_context);
  return out;
}

std::pair<Mat, Mat> fusion_forward(const Mat& a, const Mat& b, std::span<const Coords> coords,
                                   const FusionParams& p, const EncoderConfig& cfg, std::size_t valid_length) {
  const Mat a_self = self_block_forward(a, coords, p.mode_a, *p.self_a, cfg, valid_length, nullptr);
  const Mat b_self = self_block_forward(b, coords, p.mode_b, *p.self_b, cfg, valid_length, nullptr);
  return {cross_block_forward(a_self, b, coords, *p.cross_a, cfg, valid_length, nullptr),
          cross_block_forward(b_self, a, coords, *p.cross_b, cfg, valid_length, nullptr)};
}

}  // namespace trajtok
