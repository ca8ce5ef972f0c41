#include "trajtok/tokenizer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "trajtok/hash.hpp"
#include "trajtok/io.hpp"
#include "trajtok/parallel.hpp"

namespace trajtok {

std::vector<TokenId> TokenSequence::ids() const {
  std::vector<TokenId> out;
  out.reserve(tokens.size());
  for (const auto& tok : tokens) out.push_back(tok.id);
  return out;
}

TokenId map_point(const Vocabulary& v, const GpsPoint& p) {
  const GridConfig& g = v.grid();
  if (g.backend == GridBackend::Quad && !g.bbox.contains(p.lat, p.lon)) return Vocabulary::kUnk;
  for (int r = g.r_max; r >= g.r_min; --r) {
    if (auto id = v.token_of(cell_of(p, r, g))) return *id;
  }
  return Vocabulary::kUnk;
}

void attach_kinematics(TokenSequence& seq) {
  for (std::size_t j = 0; j < seq.tokens.size(); ++j) {
    Token& tok = seq.tokens[j];
    if (j == 0) {
      tok.speed = 0.0;
      tok.heading = 0.0;
      tok.heading_degenerate = true;
      continue;
    }
    const Token& prev = seq.tokens[j - 1];
    const GpsPoint a{prev.lat, prev.lon, prev.t};
    const GpsPoint b{tok.lat, tok.lon, tok.t};
    tok.speed = speed_mps(a, b);
    const Bearing br = bearing_deg(a, b);
    tok.heading = br.degrees;
    tok.heading_degenerate = br.degenerate;
  }
}

TokenSequence dedup(const TokenSequence& seq) {
  TokenSequence out{seq.id, {}};
  for (const auto& tok : seq.tokens)
    if (out.tokens.empty() || out.tokens.back().id != tok.id) out.tokens.push_back(tok);
  attach_kinematics(out);
  return out;
}

TokenSequence tokenize(const Vocabulary& v, const Trajectory& traj, const TokenizeOptions& opts) {
  if (traj.points.empty()) throw std::invalid_argument("cannot tokenize empty trajectory '" + traj.id + "'");
  if (opts.max_len == 0) throw std::invalid_argument("max_len must be >= 1");
  TokenSequence seq{traj.id, {}};
  seq.tokens.reserve(traj.points.size());
  for (const auto& p : traj.points) {
    Token tok;
    tok.id = map_point(v, p);
    tok.lat = p.lat;
    tok.lon = p.lon;
    tok.t = p.t;
    if (opts.dedup && !seq.tokens.empty() && seq.tokens.back().id == tok.id) continue;
    seq.tokens.push_back(tok);
  }
  if (seq.tokens.size() > opts.max_len) seq.tokens.resize(opts.max_len);
  attach_kinematics(seq);
  return seq;
}

std::vector<TokenSequence> tokenize_all(const Vocabulary& v, std::span<const Trajectory> trajs,
                                        const TokenizeOptions& opts) {
  std::vector<TokenSequence> out(trajs.size());
  parallel::parallel_for(0, static_cast<std::ptrdiff_t>(trajs.size()), [&](std::ptrdiff_t i) {
    out[static_cast<std::size_t>(i)] = tokenize(v, trajs[static_cast<std::size_t>(i)], opts);
  });
  return out;
}

std::vector<KinematicFeatures> kinematic_features(const TokenSequence& seq, double v_max) {
  if (!(v_max > 0.0)) throw std::invalid_argument("v_max must be positive");
  const auto& toks = seq.tokens;
  std::vector<KinematicFeatures> out(toks.size());

  double fill = 0.0;
  const auto first = std::find_if(toks.begin(), toks.end(), [](const Token& t) { return !t.heading_degenerate; });
  if (first != toks.end()) fill = first->heading;

  constexpr double kDegToRad = std::numbers::pi / 180.0;
  for (std::size_t j = 0; j < toks.size(); ++j) {
    const Token& tok = toks[j];
    if (!tok.heading_degenerate) fill = tok.heading;
    const double v = j == 0 ? 0.0 : tok.speed;
    out[j].v_norm = std::clamp(v / v_max, 0.0, 1.0);
    out[j].sin_heading = std::sin(fill * kDegToRad);
    out[j].cos_heading = std::cos(fill * kDegToRad);
  }
  return out;
}

// ---------------------------------------------------------------------------------------
// Token store

std::string format_token_record(const TokenSequence& seq) {
  if (seq.id.find_first_of("\t\n") != std::string::npos)
    throw std::invalid_argument("trajectory id contains tab or newline");
  std::string line = seq.id + '\t' + std::to_string(seq.tokens.size()) + '\t';
  for (std::size_t j = 0; j < seq.tokens.size(); ++j) {
    const Token& t = seq.tokens[j];
    if (j) line += ';';
    line += std::to_string(t.id) + ':' + format_double(t.lat) + ':' + format_double(t.lon) + ':' +
            format_double(t.t) + ':' + format_double(t.speed) + ':' + format_double(t.heading) + ':' +
            (t.heading_degenerate ? '1' : '0');
  }
  return line;
}

TokenSequence parse_token_record(std::string_view line) {
  const auto fields = split_view(line, '\t');
  if (fields.size() != 3) throw std::invalid_argument("token record needs 3 tab-separated fields");
  TokenSequence seq{std::string(fields[0]), {}};
  std::size_t n = 0;
  auto [end, ec] = std::from_chars(fields[1].data(), fields[1].data() + fields[1].size(), n);
  if (ec != std::errc{}) throw std::invalid_argument("bad token count");
  if (n == 0) return seq;
  for (auto tok_text : split_view(fields[2], ';')) {
    const auto f = split_view(tok_text, ':');
    if (f.size() != 7) throw std::invalid_argument("token tuple needs 7 fields");
    Token t;
    std::from_chars(f[0].data(), f[0].data() + f[0].size(), t.id);
    t.lat = parse_double(f[1]);
    t.lon = parse_double(f[2]);
    t.t = parse_double(f[3]);
    t.speed = parse_double(f[4]);
    t.heading = parse_double(f[5]);
    t.heading_degenerate = f[6] == "1";
    seq.tokens.push_back(t);
  }
  if (seq.tokens.size() != n) throw std::invalid_argument("token count mismatch");
  return seq;
}

std::string format_token_store(std::span<const TokenSequence> seqs) {
  std::string out;
  for (const auto& s : seqs) {
    out += format_token_record(s);
    out += '\n';
  }
  return out;
}

std::vector<TokenSequence> parse_token_store(const std::string& text) {
  std::vector<TokenSequence> out;
  for (auto line : split_view(text, '\n'))
    if (!line.empty() && line[0] != '#') out.push_back(parse_token_record(line));
  return out;
}

}  // namespace trajtok
