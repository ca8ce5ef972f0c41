#pragma once

#include <filesystem>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "trajtok/config.hpp"
#include "trajtok/ingest.hpp"
#include "trajtok/similarity.hpp"
#include "trajtok/training.hpp"

namespace trajtok {

class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct StageReport {
  std::string name;
  std::string key;  // hex digest of (stage, config subset, input digests)
  bool rebuilt = false;
  std::filesystem::path dir;
  std::string output_digest;
};

struct PipelineResult {
  std::vector<StageReport> stages;
  MetricsReport metrics;

  const StageReport& stage(const std::string& name) const;
};

/// Stage names in execution order.
inline const std::vector<std::string>& pipeline_stages() {
  static const std::vector<std::string> names{"ingest", "vocab",   "tokenize", "mask-stats",
                                              "pretrain", "bank", "embed",    "eval"};
  return names;
}

/// Runs every stage under cfg.out_dir/stages/<name>-<key>/. A stage whose directory holds a
/// completion marker is reported up-to-date and not rerun; otherwise its outputs are rebuilt
/// from upstream files. Writes cfg.out_dir/manifest.txt. Throws StageError naming the stage.
PipelineResult run_pipeline(const RunConfig& cfg, std::ostream* log = nullptr);

/// The value at `percentile` (0-100, linear interpolation) of all non-first token speeds;
/// 1.0 if there are none or the value is not positive.
double speed_percentile(std::span<const TokenSequence> seqs, double percentile);

struct TraceRow {
  std::size_t step = 0;
  double val_loss = 0.0;
  double hr10 = 0.0;
};

/// Pretrains on `train` and, every `interval` steps, records the masked loss on `val` (fixed
/// masks) and zero-shot HR@10 on `bank`, whose ids index `bank_inputs`.
std::vector<TraceRow> loss_transfer_trace(std::span<const EncoderInput> train, std::span<const EncoderInput> val,
                                          const RetrievalBank& bank, std::span<const EncoderInput> bank_queries,
                                          std::span<const EncoderInput> bank_corpus, const EncoderConfig& ecfg,
                                          const RunConfig& cfg, std::size_t interval);
std::string format_trace_rows(std::span<const TraceRow> rows, const std::string& config_echo = "");

struct TracedTraining {
  TrainResult result;
  std::vector<TraceRow> rows;  // empty unless interval > 0
};

/// Pretraining as run by the pipeline. With interval > 0, every interval steps records the
/// masked loss on `val` and, when `bank` is given, zero-shot HR@10 on it.
TracedTraining train_with_trace(std::span<const EncoderInput> train, std::span<const EncoderInput> val,
                                const RetrievalBank* bank, std::span<const EncoderInput> bank_queries,
                                std::span<const EncoderInput> bank_corpus, const EncoderConfig& ecfg,
                                const RunConfig& cfg, std::size_t interval);

// Building blocks shared by the pipeline stages and the command-line tool.

/// Trajectories whose id hashes into `which`, in input order.
std::vector<Trajectory> select_split(std::vector<Trajectory> trajs, Split which);
std::vector<GpsPoint> all_points(std::span<const Trajectory> trajs);
/// Reads the `v_max=` line of a tokenize-stage v_max file.
double parse_v_max(const std::string& text);
std::vector<EncoderInput> to_inputs(std::span<const TokenSequence> seqs, double v_max, double coord_scale);
/// cfg.encoder with vocab_size and max_seq_len taken from the vocabulary and tokenizer.
EncoderConfig encoder_for(const RunConfig& cfg, const Vocabulary& vocab);
/// Encoder inputs for a bank's queries and corpus, looked up by id in `seqs`.
std::pair<std::vector<EncoderInput>, std::vector<EncoderInput>> bank_inputs(const RetrievalBank& bank,
                                                                            std::span<const TokenSequence> seqs,
                                                                            double v_max, double coord_scale);
/// One `id<TAB>v1,v2,...` line per embedding; '#' lines are comments.
std::string format_embeddings(const std::vector<std::string>& ids, const std::vector<Eigen::VectorXd>& embs);
std::unordered_map<std::string, Eigen::VectorXd> parse_embeddings(const std::string& text);

}  // namespace trajtok
