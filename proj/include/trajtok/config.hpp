#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "trajtok/encoder.hpp"
#include "trajtok/masking.hpp"
#include "trajtok/spatial_grid.hpp"
#include "trajtok/tokenizer.hpp"
#include "trajtok/training.hpp"

namespace trajtok {

enum class PoolStream : std::uint8_t { Geo, Kin, Sum };
std::string to_string(PoolStream s);
PoolStream parse_pool_stream(const std::string& s);

struct DataConfig {
  std::string input_csv;
  double sample_interval_s = 15.0;
  BBox bbox = kPortoBBox;
  std::size_t max_trajectories = 0;  // 0 = no limit
};

struct GridSection {
  GridBackend backend = GridBackend::Quad;
  int r_min = 3;
  int r_max = 7;
  std::uint64_t capacity = 1000;
};

struct TokenizerSection {
  bool dedup = false;
  std::size_t max_seq_len = 192;
  double v_max = 0.0;  // 0 = derive from training segment speeds
  double v_max_percentile = 99.5;
};

struct EvalSection {
  std::size_t n_queries = 1000;
  std::size_t n_corpus = 10000;
  std::uint64_t bank_seed = 17;
  PoolStream pool = PoolStream::Sum;
};

struct TraceSection {
  std::size_t interval = 100;
  std::size_t n_queries = 50;
  std::size_t n_corpus = 200;
};

/// Everything a pipeline run depends on. Loaded from a JSON file; every artifact embeds
/// the compact JSON echo of the config that produced it.
struct RunConfig {
  DataConfig data;
  GridSection grid;
  TokenizerSection tokenizer;
  MaskSpec mask;
  EncoderConfig encoder;  // vocab_size is overwritten from the built vocabulary
  LossWeights loss;
  OptimizerConfig optimizer;
  EvalSection eval;
  TraceSection trace;
  std::uint64_t seed = 0;  // parameter init and batch order
  std::string out_dir = "run";

  GridConfig grid_config() const { return {grid.backend, data.bbox, grid.r_min, grid.r_max}; }
};

nlohmann::json to_json(const EncoderConfig& c);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
/// Compact JSON of everything except out_dir.
std::string config_echo(const RunConfig& c);

}  // namespace trajtok
