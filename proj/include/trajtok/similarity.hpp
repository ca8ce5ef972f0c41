#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "trajtok/config.hpp"
#include "trajtok/encoder.hpp"
#include "trajtok/geo.hpp"

namespace trajtok {

/// Dynamic time warping with haversine point cost and no window constraint.
/// Throws std::invalid_argument on an empty trajectory.
double dtw(std::span<const GpsPoint> a, std::span<const GpsPoint> b);
inline double dtw(const Trajectory& a, const Trajectory& b) { return dtw(a.points, b.points); }

/// Row-major |queries| x |corpus| matrix of DTW distances.
std::vector<double> dtw_matrix(std::span<const Trajectory> queries, std::span<const Trajectory> corpus);
std::vector<double> dtw_matrix_serial(std::span<const Trajectory> queries, std::span<const Trajectory> corpus);

/// Mean of the chosen stream's final hidden states over valid positions, L2-normalized.
/// No positions are masked.
Eigen::VectorXd embed_zero_shot(const EncoderInput& in, const Params& params, const EncoderConfig& cfg,
                                PoolStream pool);
std::vector<Eigen::VectorXd> embed_all(std::span<const EncoderInput> inputs, const Params& params,
                                       const EncoderConfig& cfg, PoolStream pool);

/// Query and corpus ids plus the ground-truth DTW matrix between them.
struct RetrievalBank {
  std::uint64_t seed = 0;
  std::vector<std::string> query_ids;
  std::vector<std::string> corpus_ids;
  std::vector<double> dtw;  // row-major n_queries x n_corpus
  std::string config_echo;

  std::size_t n_queries() const { return query_ids.size(); }
  std::size_t n_corpus() const { return corpus_ids.size(); }
  double distance(std::size_t q, std::size_t c) const { return dtw[q * corpus_ids.size() + c]; }
  friend bool operator==(const RetrievalBank&, const RetrievalBank&) = default;
};

class BankError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Samples disjoint query and corpus sets from `pool` without replacement (seeded
/// shuffle) and computes their DTW matrix. Throws BankError if the pool is too small.
RetrievalBank build_bank(std::span<const Trajectory> pool, std::size_t n_queries, std::size_t n_corpus,
                         std::uint64_t seed, const std::string& config_echo = "");

inline constexpr int kBankVersion = 1;
std::string serialize_bank(const RetrievalBank& bank);
RetrievalBank parse_bank(const std::string& text);
void save_bank(const RetrievalBank& bank, const std::filesystem::path& path);
RetrievalBank load_bank(const std::filesystem::path& path);

struct MetricsReport {
  double hr1 = 0.0;
  double hr10 = 0.0;
  double r5_20 = 0.0;
  double mrr = 0.0;
  double ndcg5 = 0.0;
  double ndcg10 = 0.0;
  double ndcg50 = 0.0;
  double spearman = 0.0;
  std::size_t n_queries = 0;
  std::size_t n_corpus = 0;
};

/// Per-query ranking metrics for one query, given its ground-truth distances (smaller is
/// closer) and model similarities (larger is closer). Ties in either ordering go to the
/// smaller tie_order value, or the earlier position when tie_order is empty.
struct QueryMetrics {
  double hr1, hr10, r5_20, mrr, ndcg5, ndcg10, ndcg50, spearman;
};
QueryMetrics query_metrics(std::span<const double> truth_dist, std::span<const double> model_sim,
                           std::span<const std::size_t> tie_order = {});

/// Averages query_metrics over all rows, breaking ties by corpus trajectory id.
/// `sim` is row-major like bank.dtw.
MetricsReport evaluate_scores(const RetrievalBank& bank, std::span<const double> sim);
MetricsReport evaluate_scores_serial(const RetrievalBank& bank, std::span<const double> sim);

/// Cosine similarities between unit-norm embeddings, then evaluate_scores.
MetricsReport evaluate(const RetrievalBank& bank, std::span<const Eigen::VectorXd> query_emb,
                       std::span<const Eigen::VectorXd> corpus_emb);

/// Ranks with ties sharing their average rank (1-based).
std::vector<double> average_ranks(std::span<const double> v);
/// Spearman correlation as Pearson on average ranks; 0 if either side is constant.
double spearman(std::span<const double> a, std::span<const double> b);

std::string format_metrics(const MetricsReport& m, const std::string& config_echo = "");
std::string metrics_csv(const MetricsReport& m);

}  // namespace trajtok
