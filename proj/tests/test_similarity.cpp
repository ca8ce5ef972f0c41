#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "oracles.hpp"
#include "test_support.hpp"
#include "trajtok/parallel.hpp"
#include "trajtok/rng.hpp"
#include "trajtok/similarity.hpp"

using namespace trajtok;

namespace {

Trajectory random_traj(CounterRng& rng, std::size_t n, const std::string& id) {
  Trajectory t;
  t.id = id;
  for (std::size_t i = 0; i < n; ++i) {
    t.points.push_back({41.10 + 0.12 * rng.uniform01(), -8.70 + 0.17 * rng.uniform01(), 15.0 * i});
  }
  return t;
}

double ideal_dcg(std::size_t k) {
  double s = 0.0;
  for (std::size_t i = 1; i <= k; ++i) s += 1.0 / std::log2(i + 1.0);
  return s;
}

}  // namespace

TEST_CASE("dtw matches exhaustive alignment enumeration on short sequences") {
  CounterRng rng(11, 0);
  for (int pair = 0; pair < 100; ++pair) {
    const Trajectory a = random_traj(rng, 1 + rng.uniform(5), "a");
    const Trajectory b = random_traj(rng, 1 + rng.uniform(5), "b");
    const double fast = dtw(a, b);
    const double brute = oracle::brute_force_dtw(a.points, b.points);
    CHECK(std::abs(fast - brute) <= 1e-9 * std::max(1.0, brute));
    CHECK(std::abs(fast - dtw(b, a)) <= 1e-9 * std::max(1.0, fast));
    CHECK(dtw(a, a) == 0.0);
  }
}

TEST_CASE("dtw edge cases") {
  const GpsPoint p{41.15, -8.61, 0}, q{41.16, -8.60, 15};
  CHECK(dtw(std::vector<GpsPoint>{p}, std::vector<GpsPoint>{q}) == haversine_m(p, q));
  // One point against many: every point aligns with the single one.
  CHECK(dtw(std::vector<GpsPoint>{p}, std::vector<GpsPoint>{q, q, p}) ==
        doctest::Approx(2 * haversine_m(p, q)));
  CHECK_THROWS_AS(dtw(std::vector<GpsPoint>{}, std::vector<GpsPoint>{p}), std::invalid_argument);
}

TEST_CASE("parallel dtw matrix equals the serial one") {
  CounterRng rng(3, 0);
  std::vector<Trajectory> q, c;
  for (int i = 0; i < 5; ++i) q.push_back(random_traj(rng, 3 + rng.uniform(10), "q" + std::to_string(i)));
  for (int i = 0; i < 9; ++i) c.push_back(random_traj(rng, 3 + rng.uniform(10), "c" + std::to_string(i)));
  parallel::ThreadScope scope(3);
  CHECK(dtw_matrix(q, c) == dtw_matrix_serial(q, c));
}

TEST_CASE("bank sampling is disjoint, deterministic and consistent with dtw") {
  CounterRng rng(5, 0);
  std::vector<Trajectory> pool;
  for (int i = 0; i < 12; ++i) pool.push_back(random_traj(rng, 4, "t" + std::to_string(i)));
  const RetrievalBank bank = build_bank(pool, 2, 3, 42, "{}");
  REQUIRE(bank.n_queries() == 2);
  REQUIRE(bank.n_corpus() == 3);
  for (const auto& qid : bank.query_ids) {
    CHECK(std::find(bank.corpus_ids.begin(), bank.corpus_ids.end(), qid) == bank.corpus_ids.end());
  }
  auto by_id = [&](const std::string& id) {
    return *std::find_if(pool.begin(), pool.end(), [&](const Trajectory& t) { return t.id == id; });
  };
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(bank.distance(i, j) == dtw(by_id(bank.query_ids[i]), by_id(bank.corpus_ids[j])));

  CHECK(serialize_bank(build_bank(pool, 2, 3, 42, "{}")) == serialize_bank(bank));
  CHECK(build_bank(pool, 2, 3, 43, "{}").query_ids != bank.query_ids);
  CHECK_THROWS_AS(build_bank(pool, 6, 7, 1), BankError);
}

TEST_CASE("bank files round-trip and reject damage") {
  CounterRng rng(6, 0);
  std::vector<Trajectory> pool;
  for (int i = 0; i < 6; ++i) pool.push_back(random_traj(rng, 5, "id" + std::to_string(i)));
  const RetrievalBank bank = build_bank(pool, 2, 4, 1, R"({"k":1})");
  const std::string text = serialize_bank(bank);
  CHECK(parse_bank(text) == bank);

  std::string damaged = text;
  damaged[text.find("queries=") + 9] ^= 1;
  CHECK_THROWS_WITH_AS(parse_bank(damaged), doctest::Contains("checksum"), BankError);
  CHECK_THROWS_WITH_AS(parse_bank(text.substr(0, text.size() / 2)), doctest::Contains("truncated"), BankError);
  std::string version = text;
  version[8] = '7';
  CHECK_THROWS_WITH_AS(parse_bank(version), doctest::Contains("version"), BankError);

  const auto path = std::filesystem::temp_directory_path() / "trajtok_bank_test.txt";
  save_bank(bank, path);
  CHECK(load_bank(path) == bank);
  std::filesystem::remove(path);
}

TEST_CASE("metric fixture: nearest neighbour second, eight candidates") {
  // Truth: c0 < c1 < ... < c7. Model order: c5, c0, c7, c1, c2, c3, c4, c6.
  const std::vector<double> dist{1, 2, 3, 4, 5, 6, 7, 8};
  std::vector<double> sim(8);
  const int order[] = {5, 0, 7, 1, 2, 3, 4, 6};
  for (int r = 0; r < 8; ++r) sim[order[r]] = 1.0 - 0.1 * r;
  const QueryMetrics m = query_metrics(dist, sim);
  CHECK(m.hr1 == 0.0);
  CHECK(m.hr10 == 1.0);
  CHECK(m.mrr == 0.5);
  CHECK(m.r5_20 == 1.0);
  // Relevant = {c0..c4}; hits at ranks 2, 4, 5.
  const double dcg5 = 1.0 / std::log2(3.0) + 1.0 / std::log2(5.0) + 1.0 / std::log2(6.0);
  CHECK(m.ndcg5 == doctest::Approx(dcg5 / ideal_dcg(5)).epsilon(1e-15));
}

TEST_CASE("metric fixture: nearest neighbour outside the top twenty") {
  // 25 candidates, truth ascending by index. Model: c3, c5..c23, then c0, c1, c2, c4, c24.
  std::vector<double> dist(25);
  std::iota(dist.begin(), dist.end(), 1.0);
  std::vector<int> order{3};
  for (int i = 5; i <= 23; ++i) order.push_back(i);
  for (int i : {0, 1, 2, 4, 24}) order.push_back(i);
  REQUIRE(order.size() == 25);
  std::vector<double> sim(25);
  for (int r = 0; r < 25; ++r) sim[order[r]] = 100.0 - r;
  const QueryMetrics m = query_metrics(dist, sim);
  CHECK(m.hr1 == 0.0);
  CHECK(m.hr10 == 0.0);
  CHECK(m.mrr == 1.0 / 21.0);
  CHECK(m.r5_20 == 1.0 / 5.0);
  CHECK(m.ndcg5 == doctest::Approx(1.0 / ideal_dcg(5)).epsilon(1e-15));
}

TEST_CASE("metric fixture: four candidates, nearest ranked last") {
  // Truth c0 < c1 < c2 < c3; model order c3, c2, c1, c0.
  const std::vector<double> dist{10, 20, 30, 40};
  const std::vector<double> sim{0.1, 0.2, 0.3, 0.4};
  const QueryMetrics m = query_metrics(dist, sim);
  CHECK(m.hr1 == 0.0);
  CHECK(m.hr10 == 1.0);
  CHECK(m.mrr == 0.25);
  CHECK(m.r5_20 == 1.0);
  // k clips to 4 and every candidate is relevant, so NDCG@5 is 1.
  CHECK(m.ndcg5 == 1.0);
  CHECK(m.spearman == doctest::Approx(-1.0));
}

TEST_CASE("perfect ranking scores one everywhere") {
  RetrievalBank bank;
  bank.query_ids = {"q0", "q1"};
  for (int i = 0; i < 60; ++i) bank.corpus_ids.push_back("c" + std::to_string(i));
  std::vector<double> sim;
  CounterRng rng(1, 0);
  for (int q = 0; q < 2; ++q) {
    for (int c = 0; c < 60; ++c) {
      const double d = 100.0 * rng.uniform01();
      bank.dtw.push_back(d);
      sim.push_back(-d);
    }
  }
  const MetricsReport r = evaluate_scores(bank, sim);
  CHECK(r.hr1 == 1.0);
  CHECK(r.hr10 == 1.0);
  CHECK(r.r5_20 == 1.0);
  CHECK(r.mrr == 1.0);
  CHECK(r.ndcg5 == 1.0);
  CHECK(r.ndcg10 == 1.0);
  CHECK(r.ndcg50 == 1.0);
  CHECK(r.spearman == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("one adjacent swap of a perfect ranking never raises MRR or NDCG") {
  const std::size_t n = 30;
  std::vector<double> dist(n);
  std::iota(dist.begin(), dist.end(), 0.0);
  std::vector<double> perfect(n);
  for (std::size_t i = 0; i < n; ++i) perfect[i] = -dist[i];
  const QueryMetrics base = query_metrics(dist, perfect);
  for (std::size_t r = 0; r + 1 < n; ++r) {
    std::vector<double> sim = perfect;
    std::swap(sim[r], sim[r + 1]);
    const QueryMetrics m = query_metrics(dist, sim);
    CHECK(m.mrr <= base.mrr);
    CHECK(m.ndcg5 <= base.ndcg5);
    CHECK(m.ndcg10 <= base.ndcg10);
    CHECK(m.ndcg50 <= base.ndcg50);
  }
}

TEST_CASE("metrics ignore corpus presentation order and thread count") {
  CounterRng rng(9, 0);
  RetrievalBank bank;
  const std::size_t nq = 7, nc = 40;
  for (std::size_t q = 0; q < nq; ++q) bank.query_ids.push_back("q" + std::to_string(q));
  for (std::size_t c = 0; c < nc; ++c) bank.corpus_ids.push_back("c" + std::to_string(c));
  std::vector<double> sim;
  for (std::size_t k = 0; k < nq * nc; ++k) {
    bank.dtw.push_back(std::floor(10.0 * rng.uniform01()));  // plenty of ties
    sim.push_back(std::floor(5.0 * rng.uniform01()) / 5.0);
  }
  const MetricsReport base = evaluate_scores_serial(bank, sim);

  std::vector<std::size_t> perm(nc);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  CounterRng(2, 0).shuffle(perm);
  RetrievalBank shuffled = bank;
  std::vector<double> sim2(sim.size());
  for (std::size_t c = 0; c < nc; ++c) {
    shuffled.corpus_ids[c] = bank.corpus_ids[perm[c]];
    for (std::size_t q = 0; q < nq; ++q) {
      shuffled.dtw[q * nc + c] = bank.dtw[q * nc + perm[c]];
      sim2[q * nc + c] = sim[q * nc + perm[c]];
    }
  }
  parallel::ThreadScope scope(3);
  CHECK(format_metrics(evaluate_scores(bank, sim)) == format_metrics(base));
  CHECK(format_metrics(evaluate_scores_serial(shuffled, sim2)) == format_metrics(base));
  const MetricsReport other = evaluate_scores(shuffled, sim2);
  CHECK(format_metrics(other) == format_metrics(base));
  for (double v : {base.hr1, base.hr10, base.r5_20, base.mrr, base.ndcg5, base.ndcg10, base.ndcg50}) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(std::abs(base.spearman) <= 1.0);
}

TEST_CASE("spearman uses average ranks for ties") {
  CHECK(average_ranks(std::vector<double>{3, 1, 3, 2}) == std::vector<double>{3.5, 1, 3.5, 2});
  CHECK(spearman(std::vector<double>{1, 2, 3}, std::vector<double>{5, 5, 5}) == 0.0);
  CHECK(spearman(std::vector<double>{1, 2, 3, 4}, std::vector<double>{10, 20, 30, 40}) == doctest::Approx(1.0));
}

TEST_CASE("evaluate rejects mismatched shapes") {
  RetrievalBank bank;
  bank.query_ids = {"q"};
  bank.corpus_ids = {"a", "b"};
  bank.dtw = {1, 2};
  CHECK_THROWS_AS(evaluate_scores(bank, std::vector<double>{1.0}), std::invalid_argument);
  std::vector<Eigen::VectorXd> one{Eigen::VectorXd::Ones(3)};
  CHECK_THROWS_AS(evaluate(bank, one, one), std::invalid_argument);
}

TEST_CASE("zero-shot embeddings are unit length and ignore padding") {
  const EncoderConfig cfg = trajtok::testing::toy_config();
  const Params params = trajtok::testing::perturbed_params(cfg, 4);
  for (std::size_t L : {1u, 5u, 12u}) {
    const EncoderInput in = trajtok::testing::random_input(L, cfg.vocab_size, 20 + L);
    for (PoolStream pool : {PoolStream::Geo, PoolStream::Kin, PoolStream::Sum}) {
      const Eigen::VectorXd e = embed_zero_shot(in, params, cfg, pool);
      CHECK(std::abs(e.norm() - 1.0) <= 1e-9);
      const Eigen::VectorXd padded = embed_zero_shot(pad_input(in, 7), params, cfg, pool);
      CHECK((e - padded).norm() <= 1e-9);
    }
  }
  EncoderInput empty;
  CHECK_THROWS_AS(embed_zero_shot(empty, params, cfg, PoolStream::Sum), std::invalid_argument);
}

TEST_CASE("metrics text carries every field") {
  MetricsReport m;
  m.hr1 = 0.25;
  m.n_queries = 4;
  const std::string s = format_metrics(m, R"({"a":1})");
  for (const char* key : {"config=", "HR@1=0.25", "HR@10=", "R5@20=", "MRR=", "NDCG@5=", "NDCG@10=", "NDCG@50=",
                          "Spearman=", "n_queries=4"}) {
    CHECK(s.find(key) != std::string::npos);
  }
  CHECK(metrics_csv(m).rfind("metric,value\n", 0) == 0);
}
