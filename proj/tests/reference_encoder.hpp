#pragma once

// Loop-by-loop re-implementation of the encoder forward pass on nested vectors. Shares
// nothing with the library except the parameter structs, and rotates with std::complex.

#include <cmath>
#include <complex>
#include <vector>

#include "trajtok/encoder.hpp"

namespace trajtok::oracle {

using Rows = std::vector<std::vector<double>>;

inline Rows matmul(const Rows& x, const Mat& w) {
  Rows out(x.size(), std::vector<double>(static_cast<std::size_t>(w.cols()), 0.0));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      double s = 0.0;
      for (Eigen::Index k = 0; k < w.rows(); ++k) s += x[i][static_cast<std::size_t>(k)] * w(k, j);
      out[i][static_cast<std::size_t>(j)] = s;
    }
  return out;
}

inline Rows add_bias(Rows x, const Mat& b) {
  for (auto& row : x)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += b(0, static_cast<Eigen::Index>(j));
  return x;
}

inline Rows add(Rows a, const Rows& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
  return a;
}

inline Rows layer_norm(const Rows& x, const LayerNormParams& p, double eps) {
  Rows out = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double n = static_cast<double>(x[i].size());
    double mean = 0.0;
    for (double v : x[i]) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : x[i]) var += (v - mean) * (v - mean);
    var /= n;
    for (std::size_t j = 0; j < x[i].size(); ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      out[i][j] = (x[i][j] - mean) / std::sqrt(var + eps) * p.gain(0, jj) + p.bias(0, jj);
    }
  }
  return out;
}

inline Rows geglu(const Rows& x, const MlpParams& p) {
  const Rows pre = add_bias(matmul(x, p.w_in), p.b_in);
  const std::size_t h = static_cast<std::size_t>(p.w_out.rows());
  Rows hidden(x.size(), std::vector<double>(h));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t k = 0; k < h; ++k) {
      const double g = pre[i][h + k];
      hidden[i][k] = pre[i][k] * 0.5 * g * (1.0 + std::erf(g / std::sqrt(2.0)));
    }
  return add_bias(matmul(hidden, p.w_out), p.b_out);
}

inline void rotate(std::vector<double>& v, std::size_t offset, std::size_t width, double pos, double base) {
  for (std::size_t i = 0; i < width / 2; ++i) {
    const double theta = pos * std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(width));
    std::complex<double> z(v[offset + 2 * i], v[offset + 2 * i + 1]);
    z *= std::polar(1.0, theta);
    v[offset + 2 * i] = z.real();
    v[offset + 2 * i + 1] = z.imag();
  }
}

inline std::vector<double> rope(std::vector<double> v, const Coords& c, RopeMode mode, const EncoderConfig& cfg) {
  if (mode == RopeMode::Temporal) {
    rotate(v, 0, v.size(), c.t, cfg.rope_base);
    return v;
  }
  const auto a = static_cast<std::size_t>(cfg.rope_split.lat);
  const auto b = static_cast<std::size_t>(cfg.rope_split.lon);
  const auto t = static_cast<std::size_t>(cfg.rope_split.time);
  rotate(v, 0, a, c.lat, cfg.rope_base);
  rotate(v, a, b, c.lon, cfg.rope_base);
  rotate(v, a + b, t, c.t, cfg.rope_base);
  return v;
}

inline Rows attention(const Rows& xq, const Rows& xkv, const std::vector<Coords>& coords, RopeMode mode,
                      const AttentionParams& p, const EncoderConfig& cfg, std::size_t n_valid) {
  const Rows q = matmul(xq, p.wq), k = matmul(xkv, p.wk), v = matmul(xkv, p.wv);
  const std::size_t L = xq.size(), dh = static_cast<std::size_t>(cfg.head_dim());
  Rows concat(L, std::vector<double>(static_cast<std::size_t>(cfg.d_model), 0.0));
  for (std::size_t h = 0; h < static_cast<std::size_t>(cfg.n_heads); ++h) {
    auto head = [&](const Rows& m, std::size_t i) {
      return std::vector<double>(m[i].begin() + static_cast<std::ptrdiff_t>(h * dh),
                                 m[i].begin() + static_cast<std::ptrdiff_t>((h + 1) * dh));
    };
    for (std::size_t i = 0; i < L; ++i) {
      const auto qi = rope(head(q, i), coords[i], mode, cfg);
      std::vector<double> score(n_valid);
      double mx = -1e300;
      for (std::size_t j = 0; j < n_valid; ++j) {
        const auto kj = rope(head(k, j), coords[j], mode, cfg);
        double s = 0.0;
        for (std::size_t d = 0; d < dh; ++d) s += qi[d] * kj[d];
        score[j] = s / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, score[j]);
      }
      double z = 0.0;
      for (double& s : score) z += (s = std::exp(s - mx));
      for (std::size_t j = 0; j < n_valid; ++j)
        for (std::size_t d = 0; d < dh; ++d) concat[i][h * dh + d] += score[j] / z * v[j][h * dh + d];
    }
  }
  return matmul(concat, p.wo);
}

inline Rows self_block(const Rows& x, const std::vector<Coords>& coords, RopeMode mode, const SelfBlockParams& p,
                       const EncoderConfig& cfg, std::size_t n_valid) {
  const Rows n1 = layer_norm(x, p.ln_attn, cfg.ln_eps);
  const Rows x1 = add(x, attention(n1, n1, coords, mode, p.attn, cfg, n_valid));
  return add(x1, geglu(layer_norm(x1, p.ln_mlp, cfg.ln_eps), p.mlp));
}

inline Rows cross_block(const Rows& x, const Rows& y, const std::vector<Coords>& coords, const CrossBlockParams& p,
                        const EncoderConfig& cfg, std::size_t n_valid) {
  const Rows nq = layer_norm(x, p.ln_query, cfg.ln_eps);
  const Rows nc = layer_norm(y, p.ln_context, cfg.ln_eps);
  const Rows x1 = add(x, attention(nq, nc, coords, RopeMode::SpatioTemporal, p.attn, cfg, n_valid));
  return add(x1, geglu(layer_norm(x1, p.ln_mlp, cfg.ln_eps), p.mlp));
}

struct ReferenceOutput {
  Rows logits, kin;
};

inline ReferenceOutput reference_forward(const EncoderInput& in, const std::vector<std::size_t>& mask,
                                         const Params& p, const EncoderConfig& cfg) {
  const std::size_t L = in.length();
  Rows g(L), kin_in(L);
  for (std::size_t j = 0; j < L; ++j) {
    bool masked = false;
    for (std::size_t m : mask) masked = masked || m == j;
    const TokenId id = masked ? Vocabulary::kMask : in.ids[j];
    for (Eigen::Index d = 0; d < p.cell_embedding.cols(); ++d) g[j].push_back(p.cell_embedding(id, d));
    kin_in[j] = masked ? std::vector<double>{0, 0, 0}
                       : std::vector<double>{in.kin[j].v_norm, in.kin[j].sin_heading, in.kin[j].cos_heading};
  }
  Rows k = geglu(kin_in, p.kin_embed);
  const int n_self = cfg.n_layers_total - cfg.n_fusion;
  for (int l = 0; l < cfg.n_layers_total; ++l) {
    const Rows gs = self_block(g, in.coords, RopeMode::SpatioTemporal, p.geo.self_blocks[l], cfg, in.valid_length);
    const Rows ks = self_block(k, in.coords, RopeMode::Temporal, p.kin.self_blocks[l], cfg, in.valid_length);
    if (l < n_self) {
      g = gs;
      k = ks;
    } else {
      const Rows g2 = cross_block(gs, k, in.coords, p.geo.cross_blocks[l - n_self], cfg, in.valid_length);
      const Rows k2 = cross_block(ks, g, in.coords, p.kin.cross_blocks[l - n_self], cfg, in.valid_length);
      g = g2;
      k = k2;
    }
  }
  const Rows gf = layer_norm(g, p.geo.ln_final, cfg.ln_eps);
  const Rows kf = layer_norm(k, p.kin.ln_final, cfg.ln_eps);
  ReferenceOutput out;
  for (std::size_t m : mask) {
    out.logits.push_back(add_bias(matmul({gf[m]}, p.geo_head_w), p.geo_head_b)[0]);
    out.kin.push_back(add_bias(matmul({kf[m]}, p.kin_head_w), p.kin_head_b)[0]);
  }
  return out;
}

}  // namespace trajtok::oracle
