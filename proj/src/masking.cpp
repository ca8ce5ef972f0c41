#include "trajtok/masking.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "trajtok/parallel.hpp"
#include "trajtok/rng.hpp"

namespace trajtok {

std::string to_string(MaskStrategy s) { return s == MaskStrategy::RunAware ? "RUN_AWARE" : "NAIVE"; }

MaskStrategy parse_mask_strategy(const std::string& s) {
  if (s == "RUN_AWARE" || s == "run_aware" || s == "run-aware") return MaskStrategy::RunAware;
  if (s == "NAIVE" || s == "naive") return MaskStrategy::Naive;
  throw std::invalid_argument("unknown mask strategy '" + s + "'");
}

void MaskSpec::validate() const {
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("mask ratio must be in (0, 1)");
  if (avg_span < 2) throw std::invalid_argument("average span length must be >= 2");
}

std::vector<Run> runs(std::span<const TokenId> ids) {
  std::vector<Run> out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (out.empty() || out.back().id != ids[i])
      out.push_back({i, i, ids[i]});
    else
      out.back().end = i;
  }
  return out;
}

bool span_is_run_interior(std::span<const TokenId> ids, const Span& s) {
  const auto interior = [&](std::size_t p) {
    return p > 0 && p + 1 < ids.size() && ids[p - 1] == ids[p] && ids[p + 1] == ids[p];
  };
  if (!interior(s.start) || !interior(s.end)) return false;
  // Same run iff no id change between the endpoints.
  for (std::size_t p = s.start; p < s.end; ++p)
    if (ids[p] != ids[p + 1]) return false;
  return true;
}

bool MaskSet::contains(std::size_t pos) const {
  return std::binary_search(positions.begin(), positions.end(), pos);
}

std::size_t mask_budget(double ratio, std::size_t length) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(length) + 1e-9));
}

MaskSet sample_mask(std::span<const TokenId> ids, const MaskSpec& spec, std::uint64_t rng_stream) {
  spec.validate();
  const std::size_t L = ids.size();
  if (L == 0) throw std::invalid_argument("cannot mask an empty sequence");

  const std::size_t budget = mask_budget(spec.ratio, L);
  MaskSet out;
  if (budget == 0) return out;

  // run_id[i] and whether i is the first or last position of its run.
  std::vector<std::size_t> run_id(L);
  std::vector<char> run_endpoint(L, 0);
  const auto rs = runs(ids);
  for (std::size_t k = 0; k < rs.size(); ++k) {
    for (std::size_t i = rs[k].start; i <= rs[k].end; ++i) run_id[i] = k;
    run_endpoint[rs[k].start] = 1;
    run_endpoint[rs[k].end] = 1;
  }

  CounterRng rng(spec.seed, rng_stream);
  std::vector<char> masked(L, 0);
  std::size_t count = 0;
  const std::size_t max_attempts = 10 * budget;

  while (count < budget && out.attempts < max_attempts) {
    ++out.attempts;
    const auto len_draw = static_cast<std::size_t>(spec.avg_span - 1) + rng.uniform(3);
    const std::size_t len = std::min(len_draw, L);
    const std::size_t start = rng.uniform(L - len + 1);
    const Span s{start, start + len - 1};
    if (spec.strategy == MaskStrategy::RunAware && run_id[s.start] == run_id[s.end] &&
        !run_endpoint[s.start] && !run_endpoint[s.end]) {
      ++out.rejected;
      continue;
    }
    out.accepted_spans.push_back(s);
    for (std::size_t i = s.start; i <= s.end && count < budget; ++i) {
      if (!masked[i]) {
        masked[i] = 1;
        ++count;
      }
    }
  }

  if (count < budget) {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < L; ++i)
      if (!masked[i] && run_endpoint[i]) pool.push_back(i);
    rng.shuffle(pool);
    for (std::size_t i : pool) {
      if (count == budget) break;
      masked[i] = 1;
      ++count;
      ++out.fallback_non_interior;
    }
  }
  if (count < budget) {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < L; ++i)
      if (!masked[i]) pool.push_back(i);
    rng.shuffle(pool);
    for (std::size_t i : pool) {
      if (count == budget) break;
      masked[i] = 1;
      ++count;
      ++out.fallback_arbitrary;
    }
  }

  for (std::size_t i = 0; i < L; ++i)
    if (masked[i]) out.positions.push_back(i);
  return out;
}

MaskSet sample_mask_run_aware(std::span<const TokenId> ids, MaskSpec spec, std::uint64_t rng_stream) {
  spec.strategy = MaskStrategy::RunAware;
  return sample_mask(ids, spec, rng_stream);
}

MaskSet sample_mask_naive(std::span<const TokenId> ids, MaskSpec spec, std::uint64_t rng_stream) {
  spec.strategy = MaskStrategy::Naive;
  return sample_mask(ids, spec, rng_stream);
}

std::vector<MaskSet> sample_masks(std::span<const std::vector<TokenId>> seqs, const MaskSpec& spec) {
  std::vector<MaskSet> out(seqs.size());
  parallel::parallel_for(0, static_cast<std::ptrdiff_t>(seqs.size()), [&](std::ptrdiff_t i) {
    const auto k = static_cast<std::size_t>(i);
    out[k] = sample_mask(seqs[k], spec, k);
  });
  return out;
}

std::vector<MaskSet> sample_masks_serial(std::span<const std::vector<TokenId>> seqs, const MaskSpec& spec) {
  std::vector<MaskSet> out;
  out.reserve(seqs.size());
  for (std::size_t k = 0; k < seqs.size(); ++k) out.push_back(sample_mask(seqs[k], spec, k));
  return out;
}

MaskStats mask_stats(std::span<const std::vector<TokenId>> seqs, std::span<const MaskSet> masks,
                     const MaskSpec& spec, std::size_t histogram_bins) {
  if (seqs.size() != masks.size()) throw std::invalid_argument("mask_stats: size mismatch");
  MaskStats st;
  st.sequences = seqs.size();
  st.run_length_histogram.assign(std::max<std::size_t>(histogram_bins, 2), 0);
  for (std::size_t k = 0; k < seqs.size(); ++k) {
    const auto& ids = seqs[k];
    const auto& m = masks[k];
    if (m.size() == mask_budget(spec.ratio, ids.size())) ++st.budget_satisfied;
    for (const auto& s : m.accepted_spans)
      if (span_is_run_interior(ids, s)) ++st.interior_span_violations;
    st.total_masked += m.size();
    st.total_tokens += ids.size();
    st.total_rejections += m.rejected;
    st.fallback_fills += m.fallback_non_interior + m.fallback_arbitrary;
    for (const auto& r : runs(ids))
      ++st.run_length_histogram[std::min(r.length(), st.run_length_histogram.size() - 1)];
  }
  return st;
}

std::string format_mask_stats(const MaskStats& s, const MaskSpec& spec) {
  std::ostringstream os;
  os << "strategy=" << to_string(spec.strategy) << '\n'
     << "ratio=" << spec.ratio << '\n'
     << "avg_span=" << spec.avg_span << '\n'
     << "seed=" << spec.seed << '\n'
     << "sequences=" << s.sequences << '\n'
     << "budget_satisfied=" << s.budget_satisfied << '\n'
     << "budget_satisfaction_rate="
     << (s.sequences ? static_cast<double>(s.budget_satisfied) / static_cast<double>(s.sequences) : 1.0) << '\n'
     << "interior_span_violations=" << s.interior_span_violations << '\n'
     << "total_tokens=" << s.total_tokens << '\n'
     << "total_masked=" << s.total_masked << '\n'
     << "total_rejections=" << s.total_rejections << '\n'
     << "fallback_fills=" << s.fallback_fills << '\n';
  for (std::size_t i = 1; i < s.run_length_histogram.size(); ++i) {
    os << "run_length_hist." << i;
    if (i + 1 == s.run_length_histogram.size()) os << "+";
    os << '=' << s.run_length_histogram[i] << '\n';
  }
  return os.str();
}

}  // namespace trajtok
