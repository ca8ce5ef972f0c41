#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "trajtok/vocab.hpp"

namespace trajtok {

enum class MaskStrategy : std::uint8_t { RunAware, Naive };

std::string to_string(MaskStrategy s);
MaskStrategy parse_mask_strategy(const std::string& s);

struct MaskSpec {
  double ratio = 0.3;
  int avg_span = 6;
  MaskStrategy strategy = MaskStrategy::RunAware;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Maximal block of equal token ids, positions [start, end] inclusive and 0-based.
struct Run {
  std::size_t start = 0;
  std::size_t end = 0;
  TokenId id = 0;
  std::size_t length() const { return end - start + 1; }
  friend bool operator==(const Run&, const Run&) = default;
};

std::vector<Run> runs(std::span<const TokenId> ids);

/// Candidate span [start, end] (0-based, inclusive).
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;
  friend bool operator==(const Span&, const Span&) = default;
};

/// True when both endpoints sit strictly inside the same run, i.e. the span covers only the
/// interior of one constant-cell block.
bool span_is_run_interior(std::span<const TokenId> ids, const Span& s);

/// Masked positions (sorted, distinct, 0-based) plus sampling diagnostics.
struct MaskSet {
  std::vector<std::size_t> positions;
  std::vector<Span> accepted_spans;
  std::size_t rejected = 0;
  std::size_t attempts = 0;
  std::size_t fallback_non_interior = 0;
  std::size_t fallback_arbitrary = 0;

  std::size_t size() const { return positions.size(); }
  bool contains(std::size_t pos) const;
};

/// floor(ratio * L), computed so that e.g. 0.3 * 10 yields 3.
std::size_t mask_budget(double ratio, std::size_t length);

/// Span masking with a budget of floor(ratio * L) positions.
///
/// Candidate span lengths are drawn uniformly from {avg_span-1, avg_span, avg_span+1}
/// (clipped to L) and starts uniformly from [0, L-len]. Under RunAware a candidate whose
/// endpoints both lie strictly inside one run is rejected. An accepted span contributes its
/// not-yet-masked positions until the budget is met. After 10 x budget attempts, the rest
/// of the budget is filled from run endpoints in random order, then from any position.
///
/// `rng_stream` selects the generator stream, normally the trajectory index.
MaskSet sample_mask(std::span<const TokenId> ids, const MaskSpec& spec, std::uint64_t rng_stream = 0);
MaskSet sample_mask_run_aware(std::span<const TokenId> ids, MaskSpec spec, std::uint64_t rng_stream = 0);
MaskSet sample_mask_naive(std::span<const TokenId> ids, MaskSpec spec, std::uint64_t rng_stream = 0);

/// Masks for many sequences in parallel; sequence i uses stream i.
std::vector<MaskSet> sample_masks(std::span<const std::vector<TokenId>> seqs, const MaskSpec& spec);
std::vector<MaskSet> sample_masks_serial(std::span<const std::vector<TokenId>> seqs, const MaskSpec& spec);

struct MaskStats {
  std::size_t sequences = 0;
  std::size_t budget_satisfied = 0;
  std::size_t interior_span_violations = 0;
  std::size_t total_masked = 0;
  std::size_t total_tokens = 0;
  std::size_t total_rejections = 0;
  std::size_t fallback_fills = 0;
  std::vector<std::size_t> run_length_histogram;  // index = run length (capped at last bin)
};

MaskStats mask_stats(std::span<const std::vector<TokenId>> seqs, std::span<const MaskSet> masks,
                     const MaskSpec& spec, std::size_t histogram_bins = 32);

/// key=value text rendering of MaskStats.
std::string format_mask_stats(const MaskStats& s, const MaskSpec& spec);

}  // namespace trajtok
