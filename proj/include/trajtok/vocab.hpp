#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "trajtok/geo.hpp"
#include "trajtok/spatial_grid.hpp"

namespace trajtok {

using CountMap = std::map<CellKey, std::uint64_t>;

/// Point counts per cell at cfg.r_min. OpenMP-parallel; thread-local maps are merged by
/// addition so the result is independent of the thread count.
CountMap count_base(std::span<const GpsPoint> points, const GridConfig& cfg);

/// Single-threaded reference for count_base.
CountMap count_base_serial(std::span<const GpsPoint> points, const GridConfig& cfg);

/// Counts each of n_shards contiguous shards separately and merges them.
CountMap count_base_sharded(std::span<const GpsPoint> points, const GridConfig& cfg, int n_shards);

void merge_counts(CountMap& into, const CountMap& from);

using TokenId = std::int32_t;

/// Density-adaptive multi-resolution token inventory.
///
/// Token ids 0..2 are reserved for PAD, UNK and MASK. Cell entries follow in canonical order
/// (resolution ascending, index ascending) starting at id 3.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kMask = 2;
  static constexpr TokenId kFirstCell = 3;

  Vocabulary() = default;
  /// Sorts cells canonically and assigns ids. Throws on duplicates.
  Vocabulary(GridConfig grid, std::uint64_t capacity, std::vector<CellKey> cells,
             std::string config_echo = {});

  const GridConfig& grid() const { return grid_; }
  std::uint64_t capacity() const { return capacity_; }
  const std::vector<CellKey>& cells() const { return cells_; }
  const std::string& config_echo() const { return config_echo_; }
  void set_config_echo(std::string echo) { config_echo_ = std::move(echo); }

  /// Number of cell entries (excluding the special tokens).
  std::size_t num_cells() const { return cells_.size(); }
  /// Total token ids including specials; the embedding table size.
  std::size_t size() const { return cells_.size() + kFirstCell; }

  std::optional<TokenId> token_of(const CellKey& c) const;
  const CellKey& cell(TokenId id) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.grid_ == b.grid_ && a.capacity_ == b.capacity_ && a.cells_ == b.cells_ &&
           a.config_echo_ == b.config_echo_;
  }

 private:
  GridConfig grid_;
  std::uint64_t capacity_ = 0;
  std::vector<CellKey> cells_;
  std::unordered_map<CellKey, TokenId, CellKeyHash> lookup_;
  std::string config_echo_;
};

/// Density-adaptive refinement: base cells holding more than `capacity` points are split and
/// their points re-bucketed by cell_of at the next resolution, until a cell holds at most
/// `capacity` points or reaches r_max. Children that receive no points are dropped. Points
/// are re-bucketed by their own finer cell, so hexagonal children that leak outside their
/// nominal parent are still counted where the point actually lies.
Vocabulary build_vocabulary(std::span<const GpsPoint> points, const GridConfig& cfg,
                            std::uint64_t capacity);

/// Number of points falling in each vocabulary cell (by direct cell_of at the cell's
/// resolution). Used to verify the capacity invariant.
std::vector<std::uint64_t> recount(const Vocabulary& v, std::span<const GpsPoint> points);

class VocabFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class VocabVersionError : public VocabFileError {
 public:
  using VocabFileError::VocabFileError;
};
class VocabFormatError : public VocabFileError {
 public:
  using VocabFileError::VocabFileError;
};
class VocabChecksumError : public VocabFileError {
 public:
  using VocabFileError::VocabFileError;
};

inline constexpr int kVocabFormatVersion = 1;

std::string serialize_vocabulary(const Vocabulary& v);
Vocabulary parse_vocabulary(const std::string& text);
void save_vocabulary(const Vocabulary& v, const std::filesystem::path& path);
Vocabulary load_vocabulary(const std::filesystem::path& path);

}  // namespace trajtok
