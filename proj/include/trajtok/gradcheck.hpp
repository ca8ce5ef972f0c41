#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "trajtok/encoder.hpp"

namespace trajtok {

struct GradCheckEntry {
  std::string tensor;
  Eigen::Index index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;  // |analytic - numeric| / max(1, |numeric|)
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  std::size_t groups = 0;
};

/// Compares analytic gradients of the batch-mean joint loss with central differences
/// (J(w + eps) - J(w - eps)) / 2 eps on `coords_per_group` random coordinates of every
/// parameter tensor (all coordinates when the tensor is smaller).
GradCheckReport gradient_check(const Params& params, std::span<const MaskedExample> batch, const EncoderConfig& cfg,
                               const LossWeights& w, std::size_t coords_per_group = 20, double eps = 1e-5,
                               std::uint64_t seed = 0);

std::string format_gradcheck(const GradCheckReport& r, double tolerance);

}  // namespace trajtok
