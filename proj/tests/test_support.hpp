#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "trajtok/encoder.hpp"
#include "trajtok/rng.hpp"

namespace trajtok::testing {

/// d_model 32, 2 heads, 4 layers with 1 fusion, head split (6, 6, 4), 50 cells + 3 specials.
inline EncoderConfig toy_config() {
  EncoderConfig cfg;
  cfg.d_model = 32;
  cfg.n_heads = 2;
  cfg.n_layers_total = 4;
  cfg.n_fusion = 1;
  cfg.d_ff = 32;
  cfg.kin_hidden = 16;
  cfg.rope_split = {6, 6, 4};
  cfg.max_seq_len = 32;
  cfg.vocab_size = 53;
  return cfg;
}

/// Random walk of L tokens with plausible relative coordinates and kinematics.
inline EncoderInput random_input(std::size_t L, int vocab_size, std::uint64_t seed) {
  CounterRng rng(seed, 99);
  EncoderInput in;
  double lat = 0.0, lon = 0.0, t = 0.0;
  for (std::size_t j = 0; j < L; ++j) {
    in.ids.push_back(Vocabulary::kFirstCell + static_cast<TokenId>(rng.uniform(vocab_size - Vocabulary::kFirstCell)));
    const double heading = rng.uniform01() * 2.0 * 3.141592653589793;
    in.kin.push_back({rng.uniform01(), std::sin(heading), std::cos(heading)});
    in.coords.push_back({lat, lon, t});
    lat += (rng.uniform01() - 0.5) * 20.0;
    lon += (rng.uniform01() - 0.5) * 20.0;
    t += 15.0;
  }
  in.valid_length = L;
  return in;
}

/// Gives every zero-initialized tensor (norms' biases, MLP biases) small random values so
/// gradient checks exercise them away from special points.
inline Params perturbed_params(const EncoderConfig& cfg, std::uint64_t seed) {
  Params p = init_params(cfg, seed);
  std::uint64_t stream = 1000;
  p.for_each([&](const std::string&, Mat& m, bool) {
    CounterRng rng(seed, stream++);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += 0.1 * rng.normal();
  });
  return p;
}

inline std::vector<std::size_t> every_kth(std::size_t L, std::size_t k, std::size_t offset = 0) {
  std::vector<std::size_t> out;
  for (std::size_t i = offset; i < L; i += k) out.push_back(i);
  return out;
}

}  // namespace trajtok::testing
