#include "trajtok/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "trajtok/hash.hpp"
#include "trajtok/io.hpp"
#include "trajtok/parallel.hpp"
#include "trajtok/rng.hpp"

namespace trajtok {

double dtw(std::span<const GpsPoint> a, std::span<const GpsPoint> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("dtw: empty trajectory");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> prev(b.size() + 1, inf), cur(b.size() + 1, inf);
  prev[0] = 0.0;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = inf;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const double best = std::min({prev[j], cur[j - 1], prev[j - 1]});
      cur[j] = haversine_m(a[i - 1], b[j - 1]) + best;
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::vector<double> dtw_matrix(std::span<const Trajectory> queries, std::span<const Trajectory> corpus) {
  std::vector<double> out(queries.size() * corpus.size());
  const auto n = static_cast<std::ptrdiff_t>(out.size());
  parallel::parallel_for(0, n, [&](std::ptrdiff_t k) {
    const auto i = static_cast<std::size_t>(k) / corpus.size();
    const auto j = static_cast<std::size_t>(k) % corpus.size();
    out[static_cast<std::size_t>(k)] = dtw(queries[i], corpus[j]);
  });
  return out;
}

std::vector<double> dtw_matrix_serial(std::span<const Trajectory> queries, std::span<const Trajectory> corpus) {
  std::vector<double> out;
  out.reserve(queries.size() * corpus.size());
  for (const Trajectory& q : queries)
    for (const Trajectory& c : corpus) out.push_back(dtw(q, c));
  return out;
}

Eigen::VectorXd embed_zero_shot(const EncoderInput& in, const Params& params, const EncoderConfig& cfg,
                                PoolStream pool) {
  if (in.valid_length == 0) throw std::invalid_argument("embed_zero_shot: empty input");
  const ForwardResult fr = encoder_forward(in, {}, params, cfg);
  const auto n = static_cast<Eigen::Index>(in.valid_length);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(cfg.d_model);
  if (pool != PoolStream::Kin) v += fr.g_final.topRows(n).colwise().mean().transpose();
  if (pool != PoolStream::Geo) v += fr.k_final.topRows(n).colwise().mean().transpose();
  const double norm = v.norm();
  if (norm > 0.0) v /= norm;
  return v;
}

std::vector<Eigen::VectorXd> embed_all(std::span<const EncoderInput> inputs, const Params& params,
                                       const EncoderConfig& cfg, PoolStream pool) {
  std::vector<Eigen::VectorXd> out(inputs.size());
  parallel::parallel_for(0, static_cast<std::ptrdiff_t>(inputs.size()), [&](std::ptrdiff_t i) {
    out[static_cast<std::size_t>(i)] = embed_zero_shot(inputs[static_cast<std::size_t>(i)], params, cfg, pool);
  });
  return out;
}

// ---------------------------------------------------------------------------------------
// Bank

RetrievalBank build_bank(std::span<const Trajectory> pool, std::size_t n_queries, std::size_t n_corpus,
                         std::uint64_t seed, const std::string& config_echo) {
  if (n_queries == 0 || n_corpus == 0) throw BankError("bank needs at least one query and one corpus item");
  if (n_queries + n_corpus > pool.size()) {
    throw BankError("bank needs " + std::to_string(n_queries + n_corpus) + " trajectories, pool has " +
                    std::to_string(pool.size()));
  }
  std::set<std::string> ids;
  for (const Trajectory& t : pool) {
    if (!ids.insert(t.id).second) throw BankError("duplicate trajectory id '" + t.id + "' in bank pool");
  }
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  CounterRng(seed, 0).shuffle(order);

  RetrievalBank bank;
  bank.seed = seed;
  bank.config_echo = config_echo;
  std::vector<Trajectory> queries, corpus;
  for (std::size_t k = 0; k < n_queries + n_corpus; ++k) {
    const Trajectory& t = pool[order[k]];
    if (k < n_queries) {
      bank.query_ids.push_back(t.id);
      queries.push_back(t);
    } else {
      bank.corpus_ids.push_back(t.id);
      corpus.push_back(t);
    }
  }
  bank.dtw = dtw_matrix(queries, corpus);
  return bank;
}

namespace {

void check_id(const std::string& id) {
  if (id.empty() || id.find_first_of(",\t\n\r") != std::string::npos) {
    throw BankError("trajectory id '" + id + "' cannot be stored in a bank file");
  }
}

std::string join_ids(const std::vector<std::string>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    check_id(ids[i]);
    if (i) s += ',';
    s += ids[i];
  }
  return s;
}

std::string_view expect_key(std::string_view line, std::string_view key) {
  if (line.substr(0, key.size()) != key || line.size() <= key.size() || line[key.size()] != '=') {
    throw BankError("bank file: expected '" + std::string(key) + "=' line");
  }
  return line.substr(key.size() + 1);
}

}  // namespace

std::string serialize_bank(const RetrievalBank& bank) {
  std::string body;
  body += "version=" + std::to_string(kBankVersion) + "\n";
  body += "seed=" + std::to_string(bank.seed) + "\n";
  body += "config=" + bank.config_echo + "\n";
  body += "queries=" + join_ids(bank.query_ids) + "\n";
  body += "corpus=" + join_ids(bank.corpus_ids) + "\n";
  for (std::size_t q = 0; q < bank.n_queries(); ++q) {
    for (std::size_t c = 0; c < bank.n_corpus(); ++c) {
      if (c) body += '\t';
      body += format_double(bank.distance(q, c));
    }
    body += '\n';
  }
  return body + "checksum=" + hex64(fnv1a64(body)) + "\n";
}

RetrievalBank parse_bank(const std::string& text) {
  auto lines = split_view(text, '\n');
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw BankError("bank file is empty");
  const auto version = expect_key(lines[0], "version");
  if (version != std::to_string(kBankVersion)) {
    throw BankError("unsupported bank version " + std::string(version));
  }
  const std::string_view last = lines.back();
  if (last.substr(0, 9) != "checksum=") throw BankError("bank file truncated: no checksum line");
  const std::size_t body_len = static_cast<std::size_t>(last.data() - text.data());
  if (hex64(fnv1a64(std::string_view(text).substr(0, body_len))) != last.substr(9)) {
    throw BankError("bank checksum mismatch");
  }
  if (lines.size() < 6) throw BankError("bank file truncated");

  RetrievalBank bank;
  bank.seed = std::stoull(std::string(expect_key(lines[1], "seed")));
  bank.config_echo = std::string(expect_key(lines[2], "config"));
  for (auto id : split_view(expect_key(lines[3], "queries"), ',')) bank.query_ids.emplace_back(id);
  for (auto id : split_view(expect_key(lines[4], "corpus"), ',')) bank.corpus_ids.emplace_back(id);
  const std::size_t rows = lines.size() - 6;
  if (rows != bank.n_queries()) throw BankError("bank file: row count does not match query count");
  for (std::size_t q = 0; q < rows; ++q) {
    const auto cells = split_view(lines[5 + q], '\t');
    if (cells.size() != bank.n_corpus()) throw BankError("bank file: row " + std::to_string(q) + " has wrong width");
    for (auto c : cells) bank.dtw.push_back(parse_double(c));
  }
  return bank;
}

void save_bank(const RetrievalBank& bank, const std::filesystem::path& path) { write_file(path, serialize_bank(bank)); }
RetrievalBank load_bank(const std::filesystem::path& path) { return parse_bank(read_file(path)); }

// ---------------------------------------------------------------------------------------
// Metrics

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("spearman: length mismatch");
  if (a.size() < 2) return 0.0;
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

namespace {

std::vector<std::size_t> order_by(std::span<const double> key, bool ascending, std::span<const std::size_t> tie) {
  std::vector<std::size_t> idx(key.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (key[a] != key[b]) return ascending ? key[a] < key[b] : key[a] > key[b];
    return tie.empty() ? a < b : tie[a] < tie[b];
  });
  return idx;
}

/// Position of each corpus id in lexicographic id order.
std::vector<std::size_t> id_order(const std::vector<std::string>& ids) {
  std::vector<std::size_t> idx(ids.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
  std::vector<std::size_t> rank(ids.size());
  for (std::size_t i = 0; i < idx.size(); ++i) rank[idx[i]] = i;
  return rank;
}

double ndcg_at(const std::vector<std::size_t>& truth, const std::vector<std::size_t>& model, std::size_t k) {
  const std::size_t kk = std::min(k, truth.size());
  std::vector<char> relevant(truth.size(), 0);
  for (std::size_t i = 0; i < kk; ++i) relevant[truth[i]] = 1;
  double dcg = 0.0, idcg = 0.0;
  for (std::size_t i = 0; i < kk; ++i) {
    const double disc = 1.0 / std::log2(static_cast<double>(i) + 2.0);
    if (relevant[model[i]]) dcg += disc;
    idcg += disc;
  }
  return dcg / idcg;
}

}  // namespace

QueryMetrics query_metrics(std::span<const double> truth_dist, std::span<const double> model_sim,
                           std::span<const std::size_t> tie_order) {
  if (truth_dist.size() != model_sim.size() || truth_dist.empty() ||
      (!tie_order.empty() && tie_order.size() != truth_dist.size())) {
    throw std::invalid_argument("query_metrics: mismatched or empty rows");
  }
  const auto truth = order_by(truth_dist, true, tie_order);
  const auto model = order_by(model_sim, false, tie_order);
  const std::size_t n = truth.size();
  const std::size_t nn = truth[0];

  std::vector<std::size_t> model_rank(n);
  for (std::size_t i = 0; i < n; ++i) model_rank[model[i]] = i;  // 0-based

  QueryMetrics m{};
  m.hr1 = model_rank[nn] < 1 ? 1.0 : 0.0;
  m.hr10 = model_rank[nn] < 10 ? 1.0 : 0.0;
  m.mrr = 1.0 / static_cast<double>(model_rank[nn] + 1);

  // Fraction of the true top 5 found in the model's top 20.
  const std::size_t k5 = std::min<std::size_t>(5, n);
  const std::size_t k20 = std::min<std::size_t>(20, n);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < k5; ++i) hits += model_rank[truth[i]] < k20 ? 1 : 0;
  m.r5_20 = static_cast<double>(hits) / static_cast<double>(k5);

  m.ndcg5 = ndcg_at(truth, model, 5);
  m.ndcg10 = ndcg_at(truth, model, 10);
  m.ndcg50 = ndcg_at(truth, model, 50);

  // Correlate distance with dissimilarity so a perfect model scores +1.
  std::vector<double> neg(model_sim.begin(), model_sim.end());
  for (double& x : neg) x = -x;
  m.spearman = spearman(truth_dist, neg);
  return m;
}

namespace {

MetricsReport average(const std::vector<QueryMetrics>& rows, const RetrievalBank& bank) {
  MetricsReport r;
  r.n_queries = bank.n_queries();
  r.n_corpus = bank.n_corpus();
  for (const QueryMetrics& q : rows) {
    r.hr1 += q.hr1;
    r.hr10 += q.hr10;
    r.r5_20 += q.r5_20;
    r.mrr += q.mrr;
    r.ndcg5 += q.ndcg5;
    r.ndcg10 += q.ndcg10;
    r.ndcg50 += q.ndcg50;
    r.spearman += q.spearman;
  }
  const double n = static_cast<double>(rows.size());
  for (double* v : {&r.hr1, &r.hr10, &r.r5_20, &r.mrr, &r.ndcg5, &r.ndcg10, &r.ndcg50, &r.spearman}) *v /= n;
  return r;
}

void check_shapes(const RetrievalBank& bank, std::span<const double> sim) {
  if (bank.n_queries() == 0 || bank.n_corpus() == 0) throw BankError("evaluate: empty bank");
  if (sim.size() != bank.n_queries() * bank.n_corpus() || bank.dtw.size() != sim.size()) {
    throw std::invalid_argument("evaluate: similarity matrix does not match the bank");
  }
}

}  // namespace

MetricsReport evaluate_scores(const RetrievalBank& bank, std::span<const double> sim) {
  check_shapes(bank, sim);
  const std::size_t nc = bank.n_corpus();
  const auto tie = id_order(bank.corpus_ids);
  std::vector<QueryMetrics> rows(bank.n_queries());
  parallel::parallel_for(0, static_cast<std::ptrdiff_t>(rows.size()), [&](std::ptrdiff_t k) {
    const auto q = static_cast<std::size_t>(k);
    rows[q] = query_metrics(std::span(bank.dtw).subspan(q * nc, nc), sim.subspan(q * nc, nc), tie);
  });
  return average(rows, bank);
}

MetricsReport evaluate_scores_serial(const RetrievalBank& bank, std::span<const double> sim) {
  check_shapes(bank, sim);
  const std::size_t nc = bank.n_corpus();
  const auto tie = id_order(bank.corpus_ids);
  std::vector<QueryMetrics> rows;
  for (std::size_t q = 0; q < bank.n_queries(); ++q) {
    rows.push_back(query_metrics(std::span(bank.dtw).subspan(q * nc, nc), sim.subspan(q * nc, nc), tie));
  }
  return average(rows, bank);
}

MetricsReport evaluate(const RetrievalBank& bank, std::span<const Eigen::VectorXd> query_emb,
                       std::span<const Eigen::VectorXd> corpus_emb) {
  if (query_emb.size() != bank.n_queries() || corpus_emb.size() != bank.n_corpus()) {
    throw std::invalid_argument("evaluate: embedding counts do not match the bank");
  }
  std::vector<double> sim(bank.n_queries() * bank.n_corpus());
  for (std::size_t q = 0; q < bank.n_queries(); ++q)
    for (std::size_t c = 0; c < bank.n_corpus(); ++c) sim[q * bank.n_corpus() + c] = query_emb[q].dot(corpus_emb[c]);
  return evaluate_scores(bank, sim);
}

std::string format_metrics(const MetricsReport& m, const std::string& config_echo) {
  std::string s;
  if (!config_echo.empty()) s += "config=" + config_echo + "\n";
  s += "n_queries=" + std::to_string(m.n_queries) + "\n";
  s += "n_corpus=" + std::to_string(m.n_corpus) + "\n";
  s += "HR@1=" + format_double(m.hr1) + "\n";
  s += "HR@10=" + format_double(m.hr10) + "\n";
  s += "R5@20=" + format_double(m.r5_20) + "\n";
  s += "MRR=" + format_double(m.mrr) + "\n";
  s += "NDCG@5=" + format_double(m.ndcg5) + "\n";
  s += "NDCG@10=" + format_double(m.ndcg10) + "\n";
  s += "NDCG@50=" + format_double(m.ndcg50) + "\n";
  s += "Spearman=" + format_double(m.spearman) + "\n";
  return s;
}

std::string metrics_csv(const MetricsReport& m) {
  return "metric,value\nHR@1," + format_double(m.hr1) + "\nHR@10," + format_double(m.hr10) + "\nR5@20," +
         format_double(m.r5_20) + "\nMRR," + format_double(m.mrr) + "\nNDCG@5," + format_double(m.ndcg5) +
         "\nNDCG@10," + format_double(m.ndcg10) + "\nNDCG@50," + format_double(m.ndcg50) + "\nSpearman," +
         format_double(m.spearman) + "\n";
}

}  // namespace trajtok
