#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "trajtok/encoder.hpp"
#include "trajtok/masking.hpp"

namespace trajtok {

struct OptimizerConfig {
  double lr = 1e-3;
  double weight_decay = 0.01;
  double warmup_frac = 0.2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 1.0;  // global L2 norm; 0 disables
  std::size_t batch_size = 16;
  std::size_t steps = 1000;
};

/// Linear warmup over the first warmup_frac of steps, then cosine decay to 0.
double learning_rate_at(const OptimizerConfig& opt, std::size_t step);

/// AdamW with decoupled weight decay on the tensors marked as decaying.
class AdamW {
 public:
  AdamW(const OptimizerConfig& opt, const EncoderConfig& cfg);
  void step(Params& params, const Params& grad, double lr);
  std::size_t steps_taken() const { return t_; }

 private:
  OptimizerConfig opt_;
  Params m_, v_;
  std::size_t t_ = 0;
};

/// Global L2 norm of all gradient tensors.
double global_norm(const Params& g);

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double joint = 0.0;
  double geom = 0.0;
  double kin = 0.0;
  double accuracy = std::numeric_limits<double>::quiet_NaN();  // on the eval set, when evaluated
};

struct EvalResult {
  double joint = 0.0;
  double geom = 0.0;
  double kin = 0.0;
  double accuracy = 0.0;
  double majority_frequency = 0.0;  // accuracy of always predicting the most common target
  std::size_t masked = 0;
  std::size_t examples = 0;
};

/// Masked loss and top-1 cell accuracy with fixed masks: example i uses stream i of
/// spec.seed. Examples whose mask budget is 0 are skipped.
EvalResult evaluate_masked(std::span<const EncoderInput> data, const Params& params, const EncoderConfig& cfg,
                           const MaskSpec& spec, const LossWeights& w);

struct TrainOptions {
  std::size_t eval_interval = 0;  // 0 disables periodic evaluation
  std::span<const EncoderInput> eval_set;
  std::size_t checkpoint_interval = 0;
  std::function<void(std::size_t step, const Params&)> on_checkpoint;
};

struct TrainResult {
  Params params;
  std::vector<TrainRecord> trace;
};

/// Masked pretraining. Step s draws its batch from a per-epoch permutation of the data
/// (epoch e shuffled with stream e of `seed`); the mask of example i in epoch e comes from
/// stream (e << 32 | i) of spec.seed. Same inputs and seeds give bit-identical traces.
TrainResult train_toy(std::span<const EncoderInput> data, const EncoderConfig& cfg, const MaskSpec& spec,
                      const LossWeights& w, const OptimizerConfig& opt, std::uint64_t seed,
                      const TrainOptions& options = {}, const Params* initial = nullptr);

std::string format_trace_csv(std::span<const TrainRecord> trace);

// ---------------------------------------------------------------------------------------
// Checkpoints

/// Binary layout, little-endian:
///   "TTCKPT\0\0" | u32 version | u32 0 | u64 step | u64 seed | u32 n + config JSON |
///   u32 tensor count | per tensor: u32 n + name, u32 rows, u32 cols, f64 values (row-major) |
///   u64 FNV-1a of every preceding byte
struct Checkpoint {
  EncoderConfig cfg;
  Params params;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  std::string config_echo;  // full run configuration, JSON
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string serialize_checkpoint(const Checkpoint& ck);
Checkpoint parse_checkpoint(const std::string& bytes);
void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace trajtok
