#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "trajtok/tokenizer.hpp"
#include "trajtok/vocab.hpp"

namespace trajtok {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Widths of the latitude / longitude / time blocks inside one attention head.
struct RopeSplit {
  int lat = 6;
  int lon = 6;
  int time = 4;
  int total() const { return lat + lon + time; }
  friend bool operator==(const RopeSplit&, const RopeSplit&) = default;
};

struct EncoderConfig {
  int d_model = 32;
  int n_heads = 2;
  int n_layers_total = 4;  // self-attention blocks per channel; the last n_fusion also fuse
  int n_fusion = 1;
  int d_ff = 64;        // GeGLU hidden width in every block MLP
  int kin_hidden = 32;  // GeGLU hidden width of the kinematic embedding MLP
  RopeSplit rope_split{};
  double coord_scale = 1e4;
  double rope_base = 1e4;
  int max_seq_len = 32;
  int vocab_size = 53;
  double ln_eps = 1e-5;

  int head_dim() const { return d_model / n_heads; }
  void validate() const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// Per-token position relative to the first token: degree offsets times coord_scale, and
/// seconds since the first timestamp.
struct Coords {
  double lat = 0.0;
  double lon = 0.0;
  double t = 0.0;
};

std::vector<Coords> relative_coords(const TokenSequence& seq, double coord_scale);

enum class RopeMode : std::uint8_t {
  SpatioTemporal,  // head split into (lat, lon, time) blocks
  Temporal,        // whole head rotated by time
};

/// Applies rotary embeddings to each row of `vecs` (L x head_dim). Pair (2i, 2i+1) of a
/// block of width w rotates by angle pos * base^(-2i/w). `inverse` rotates by -angle.
void rope_rotate_inplace(Mat& vecs, std::span<const Coords> coords, RopeMode mode, const RopeSplit& split,
                         double base, bool inverse = false);
Mat rope_rotate(const Mat& vecs, std::span<const Coords> coords, RopeMode mode, const RopeSplit& split,
                double base);

// ---------------------------------------------------------------------------------------
// Parameters

struct LayerNormParams {
  Mat gain, bias;  // 1 x d
};

struct MlpParams {
  Mat w_in, b_in;    // d_in x 2h, 1 x 2h  (value half, then gate half)
  Mat w_out, b_out;  // h x d_out, 1 x d_out
};

struct AttentionParams {
  Mat wq, wk, wv, wo;  // d x d; head h owns columns [h*d_h, (h+1)*d_h) of wq/wk/wv
};

struct SelfBlockParams {
  LayerNormParams ln_attn;
  AttentionParams attn;
  LayerNormParams ln_mlp;
  MlpParams mlp;
};

struct CrossBlockParams {
  LayerNormParams ln_query;
  LayerNormParams ln_context;
  AttentionParams attn;
  LayerNormParams ln_mlp;
  MlpParams mlp;
};

struct ChannelParams {
  std::vector<SelfBlockParams> self_blocks;    // n_layers_total
  std::vector<CrossBlockParams> cross_blocks;  // n_fusion
  LayerNormParams ln_final;
};

struct Params {
  Mat cell_embedding;  // vocab_size x d
  MlpParams kin_embed;  // 3 -> kin_hidden -> d
  ChannelParams geo;
  ChannelParams kin;
  Mat geo_head_w, geo_head_b;  // d x vocab_size, 1 x vocab_size
  Mat kin_head_w, kin_head_b;  // d x 3, 1 x 3

  /// Visits every tensor as f(name, tensor, decays) in a fixed order. `decays` marks
  /// weight matrices that take weight decay (not norms, biases or embeddings).
  template <class F>
  void for_each(F&& f);
  template <class F>
  void for_each(F&& f) const;

  std::size_t num_scalars() const;
};

/// Every tensor shaped for cfg and filled with zeros (norm gains included); used for
/// gradient buffers.
Params zero_params(const EncoderConfig& cfg);
/// Deterministic initialization: weights ~ N(0, 1/fan_in), norms gain 1, biases 0.
Params init_params(const EncoderConfig& cfg, std::uint64_t seed);

/// a += scale * b, tensor by tensor.
void axpy(Params& a, double scale, const Params& b);
void scale(Params& a, double s);
bool all_finite(const Params& p);

// ---------------------------------------------------------------------------------------
// Layers (forward caches are public so tests can inspect attention weights)

struct LayerNormCache {
  Mat xhat;
  Eigen::VectorXd inv_std;
};

Mat layer_norm_forward(const Mat& x, const LayerNormParams& p, double eps, LayerNormCache* cache);
Mat layer_norm_backward(const Mat& dy, const LayerNormCache& cache, const LayerNormParams& p, LayerNormParams& grad);

double gelu(double x);
double gelu_grad(double x);

struct MlpCache {
  Mat x, pre, hidden;
};

/// Two-layer GeGLU MLP: (x W_in + b_in) split into value a and gate g, then
/// (a * gelu(g)) W_out + b_out.
Mat mlp_forward(const Mat& x, const MlpParams& p, MlpCache* cache);
Mat mlp_backward(const Mat& dy, const MlpCache& cache, const MlpParams& p, MlpParams& grad);

struct AttentionCache {
  Mat xq, xkv;
  std::vector<Mat> q_rot, k_rot, v;  // per head
  std::vector<Mat> logits;           // per head, scaled; padded keys hold -inf
  std::vector<Mat> probs;            // per head softmax weights
  Mat concat;
  RopeMode mode = RopeMode::SpatioTemporal;
};

/// Multi-head scaled dot-product attention with queries from xq and keys/values from xkv.
/// RoPE rotates queries and keys by the shared per-token coords. Keys at positions
/// >= valid_length are padding and get weight exactly 0.
Mat attention_forward(const Mat& xq, const Mat& xkv, std::span<const Coords> coords, RopeMode mode,
                      const AttentionParams& p, const EncoderConfig& cfg, std::size_t valid_length,
                      AttentionCache* cache);

struct AttentionGrads {
  Mat dxq, dxkv;
};
AttentionGrads attention_backward(const Mat& dy, const AttentionCache& cache, std::span<const Coords> coords,
                                  const AttentionParams& p, const EncoderConfig& cfg, AttentionParams& grad);

struct SelfBlockCache {
  LayerNormCache ln_attn, ln_mlp;
  AttentionCache attn;
  MlpCache mlp;
};

/// X' = X + SelfAttn(LN(X)); X'' = X' + MLP(LN(X')).
Mat self_block_forward(const Mat& x, std::span<const Coords> coords, RopeMode mode, const SelfBlockParams& p,
                       const EncoderConfig& cfg, std::size_t valid_length, SelfBlockCache* cache);
Mat self_block_backward(const Mat& dy, const SelfBlockCache& cache, std::span<const Coords> coords,
                        const SelfBlockParams& p, const EncoderConfig& cfg, SelfBlockParams& grad);

struct CrossBlockCache {
  LayerNormCache ln_query, ln_context, ln_mlp;
  AttentionCache attn;
  MlpCache mlp;
};

/// X' = X + CrossAttn(LN_q(X), LN_c(Y)); X'' = X' + MLP(LN(X')). Coordinates are always
/// spatiotemporal.
Mat cross_block_forward(const Mat& x, const Mat& y, std::span<const Coords> coords, const CrossBlockParams& p,
                        const EncoderConfig& cfg, std::size_t valid_length, CrossBlockCache* cache);
struct CrossGrads {
  Mat dx, dy;
};
CrossGrads cross_block_backward(const Mat& dout, const CrossBlockCache& cache, std::span<const Coords> coords,
                                const CrossBlockParams& p, const EncoderConfig& cfg, CrossBlockParams& grad);

/// One fusion layer over two streams. Each stream first runs its own self block, then
/// cross-attends (as query) to the other stream's input to this layer:
///   A' = Cross_a(Self_a(A), B),  B' = Cross_b(Self_b(B), A).
struct FusionParams {
  const SelfBlockParams* self_a;
  const SelfBlockParams* self_b;
  const CrossBlockParams* cross_a;
  const CrossBlockParams* cross_b;
  RopeMode mode_a;
  RopeMode mode_b;
};
std::pair<Mat, Mat> fusion_forward(const Mat& a, const Mat& b, std::span<const Coords> coords,
                                   const FusionParams& p, const EncoderConfig& cfg, std::size_t valid_length);

// ---------------------------------------------------------------------------------------
// Model

/// One encoder input: original token ids and kinematic triples, plus positions.
/// Positions >= valid_length are padding (id PAD).
struct EncoderInput {
  std::vector<TokenId> ids;
  std::vector<KinematicFeatures> kin;
  std::vector<Coords> coords;
  std::size_t valid_length = 0;

  std::size_t length() const { return ids.size(); }
};

EncoderInput make_encoder_input(const TokenSequence& seq, double v_max, double coord_scale);
/// Appends `extra` PAD positions (coords repeat the last token's).
EncoderInput pad_input(const EncoderInput& in, std::size_t extra);

struct ForwardResult {
  Mat g_final;     // L x d after the geometric channel's final norm
  Mat k_final;     // L x d after the kinematic channel's final norm
  Mat geom_logits;  // |M| x vocab_size, rows follow the mask order
  Mat kin_preds;    // |M| x 3 (v_norm, sin, cos)
};

struct ForwardCache;  // opaque, defined in encoder.cpp

/// Full forward pass. At masked positions the geometric input is the MASK embedding and the
/// kinematic input triple is zero. Channels run (n_layers_total - n_fusion) self blocks,
/// then n_fusion fusion layers, then a final norm and the prediction heads.
ForwardResult encoder_forward(const EncoderInput& in, std::span<const std::size_t> mask, const Params& params,
                              const EncoderConfig& cfg);

struct LossWeights {
  double beta_speed = 1.0;
  double beta_heading = 1.0;
  double lambda_kin = 1.0;
};

/// Mean negative log-likelihood of targets (one per logits row).
double loss_geom(const Mat& logits, std::span<const TokenId> targets);
/// beta_speed MSE(v) + beta_heading/2 MSE(sin) + beta_heading/2 MSE(cos), means over rows.
double loss_kin(const Mat& preds, std::span<const KinematicFeatures> targets, const LossWeights& w);
inline double loss_joint(double geom, double kin, double lambda_kin) { return geom + lambda_kin * kin; }

struct LossBreakdown {
  double joint = 0.0;
  double geom = 0.0;
  double kin = 0.0;
  std::size_t masked = 0;
  std::size_t correct = 0;  // masked positions whose argmax logit is the target
};

/// Forward + losses for one example. Throws on an empty mask.
LossBreakdown example_loss(const EncoderInput& in, std::span<const std::size_t> mask, const Params& params,
                           const EncoderConfig& cfg, const LossWeights& w);

/// Forward + backward for one example; gradients are accumulated into `grad`.
/// Throws std::runtime_error when the loss is not finite.
LossBreakdown example_loss_and_grad(const EncoderInput& in, std::span<const std::size_t> mask,
                                    const Params& params, const EncoderConfig& cfg, const LossWeights& w,
                                    Params& grad);

struct MaskedExample {
  const EncoderInput* input;
  std::vector<std::size_t> mask;
};

/// Mean loss and gradient over a batch. Per-example gradients are computed in parallel and
/// summed in example order, so results are bit-identical for any thread count.
LossBreakdown batch_loss_and_grad(std::span<const MaskedExample> batch, const Params& params,
                                  const EncoderConfig& cfg, const LossWeights& w, Params& grad);
LossBreakdown batch_loss_and_grad_serial(std::span<const MaskedExample> batch, const Params& params,
                                         const EncoderConfig& cfg, const LossWeights& w, Params& grad);

// ---------------------------------------------------------------------------------------

template <class F>
void for_each_mlp(const std::string& prefix, MlpParams& m, F& f) {
  f(prefix + ".w_in", m.w_in, true);
  f(prefix + ".b_in", m.b_in, false);
  f(prefix + ".w_out", m.w_out, true);
  f(prefix + ".b_out", m.b_out, false);
}

template <class F>
void for_each_ln(const std::string& prefix, LayerNormParams& l, F& f) {
  f(prefix + ".gain", l.gain, false);
  f(prefix + ".bias", l.bias, false);
}

template <class F>
void for_each_attn(const std::string& prefix, AttentionParams& a, F& f) {
  f(prefix + ".wq", a.wq, true);
  f(prefix + ".wk", a.wk, true);
  f(prefix + ".wv", a.wv, true);
  f(prefix + ".wo", a.wo, true);
}

template <class F>
void for_each_channel(const std::string& prefix, ChannelParams& c, F& f) {
  for (std::size_t i = 0; i < c.self_blocks.size(); ++i) {
    const std::string p = prefix + ".self" + std::to_string(i);
    for_each_ln(p + ".ln_attn", c.self_blocks[i].ln_attn, f);
    for_each_attn(p + ".attn", c.self_blocks[i].attn, f);
    for_each_ln(p + ".ln_mlp", c.self_blocks[i].ln_mlp, f);
    for_each_mlp(p + ".mlp", c.self_blocks[i].mlp, f);
  }
  for (std::size_t i = 0; i < c.cross_blocks.size(); ++i) {
    const std::string p = prefix + ".cross" + std::to_string(i);
    for_each_ln(p + ".ln_query", c.cross_blocks[i].ln_query, f);
    for_each_ln(p + ".ln_context", c.cross_blocks[i].ln_context, f);
    for_each_attn(p + ".attn", c.cross_blocks[i].attn, f);
    for_each_ln(p + ".ln_mlp", c.cross_blocks[i].ln_mlp, f);
    for_each_mlp(p + ".mlp", c.cross_blocks[i].mlp, f);
  }
  for_each_ln(prefix + ".ln_final", c.ln_final, f);
}

template <class F>
void Params::for_each(F&& f) {
  f(std::string("cell_embedding"), cell_embedding, false);
  for_each_mlp("kin_embed", kin_embed, f);
  for_each_channel("geo", geo, f);
  for_each_channel("kin", kin, f);
  f(std::string("geo_head.w"), geo_head_w, true);
  f(std::string("geo_head.b"), geo_head_b, false);
  f(std::string("kin_head.w"), kin_head_w, true);
  f(std::string("kin_head.b"), kin_head_b, false);
}

template <class F>
void Params::for_each(F&& f) const {
  const_cast<Params*>(this)->for_each(
      [&](const std::string& name, Mat& m, bool decays) { f(name, static_cast<const Mat&>(m), decays); });
}

}  // namespace trajtok
