#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "trajtok/geo.hpp"
#include "trajtok/vocab.hpp"

namespace trajtok {

struct Token {
  TokenId id = Vocabulary::kUnk;
  double lat = 0.0;
  double lon = 0.0;
  double t = 0.0;
  double speed = 0.0;          // m/s over the segment from the previous token; 0 for the first
  double heading = 0.0;        // raw bearing of that segment, degrees
  bool heading_degenerate = true;  // no segment, or coincident endpoints

  friend bool operator==(const Token&, const Token&) = default;
};

struct TokenSequence {
  std::string id;
  std::vector<Token> tokens;

  std::size_t size() const { return tokens.size(); }
  std::vector<TokenId> ids() const;
  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

struct TokenizeOptions {
  bool dedup = false;
  std::size_t max_len = 192;
};

struct KinematicFeatures {
  double v_norm = 0.0;
  double sin_heading = 0.0;
  double cos_heading = 1.0;
};

/// Highest-resolution vocabulary cell containing p (scanning r_max down to r_min), or UNK.
TokenId map_point(const Vocabulary& v, const GpsPoint& p);

/// One token per point (or per run of equal ids with dedup), prefix-truncated to max_len,
/// with segment speed/heading attached. Throws std::invalid_argument on an empty trajectory.
TokenSequence tokenize(const Vocabulary& v, const Trajectory& traj, const TokenizeOptions& opts = {});

/// Parallel tokenize over many trajectories; output order matches input order.
std::vector<TokenSequence> tokenize_all(const Vocabulary& v, std::span<const Trajectory> trajs,
                                        const TokenizeOptions& opts = {});

/// Collapses consecutive tokens sharing an id, keeping each run's first token, and
/// recomputes segment kinematics.
TokenSequence dedup(const TokenSequence& seq);

/// Recomputes each token's speed/heading from its predecessor.
void attach_kinematics(TokenSequence& seq);

/// Normalized kinematic triples. The first token has v = 0. Degenerate headings are
/// forward-filled from the previous token; leading degenerate headings take the first
/// non-degenerate one; an all-degenerate sequence uses heading 0 (sin 0, cos 1).
std::vector<KinematicFeatures> kinematic_features(const TokenSequence& seq, double v_max);

/// Line-oriented token store. One record per line:
///   <id> TAB <L> TAB <tok>;<tok>;...
/// with each tok = token_id:lat:lon:t:speed:heading:degenerate(0|1), reals in shortest
/// round-trip decimal form. Lines starting with '#' are comments.
std::string format_token_record(const TokenSequence& seq);
TokenSequence parse_token_record(std::string_view line);
std::string format_token_store(std::span<const TokenSequence> seqs);
std::vector<TokenSequence> parse_token_store(const std::string& text);

}  // namespace trajtok
