// Serial reference vs OpenMP kernels. Thread count follows OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include "../tests/test_support.hpp"
#include "trajtok/encoder.hpp"
#include "trajtok/masking.hpp"
#include "trajtok/rng.hpp"
#include "trajtok/similarity.hpp"
#include "trajtok/synth.hpp"
#include "trajtok/vocab.hpp"

using namespace trajtok;

namespace {

const std::vector<GpsPoint>& points() {
  static const std::vector<GpsPoint> pts = [] {
    CounterRng rng(1, 0);
    std::vector<GpsPoint> p;
    const BBox& b = kPortoBBox;
    for (int i = 0; i < 200000; ++i)
      p.push_back({b.lat_min + rng.uniform01() * (b.lat_max - b.lat_min),
                   b.lon_min + rng.uniform01() * (b.lon_max - b.lon_min), 0});
    return p;
  }();
  return pts;
}

const std::vector<Trajectory>& trips() {
  static const std::vector<Trajectory> t = [] {
    SynthCityConfig sc;
    sc.n_trajectories = 240;
    return synth_city(sc);
  }();
  return t;
}

RetrievalBank random_bank(std::size_t nq, std::size_t nc) {
  RetrievalBank bank;
  CounterRng rng(2, 0);
  for (std::size_t q = 0; q < nq; ++q) bank.query_ids.push_back("q" + std::to_string(q));
  for (std::size_t c = 0; c < nc; ++c) bank.corpus_ids.push_back("c" + std::to_string(c));
  for (std::size_t i = 0; i < nq * nc; ++i) bank.dtw.push_back(rng.uniform01());
  return bank;
}

template <bool Serial>
void BM_count_base(benchmark::State& state) {
  const GridConfig cfg{GridBackend::Quad, kPortoBBox, 8, 12};
  for (auto _ : state)
    benchmark::DoNotOptimize(Serial ? count_base_serial(points(), cfg) : count_base(points(), cfg));
}

template <bool Serial>
void BM_dtw_matrix(benchmark::State& state) {
  const std::span<const Trajectory> all(trips());
  const auto q = all.first(40), c = all.subspan(40);
  for (auto _ : state) benchmark::DoNotOptimize(Serial ? dtw_matrix_serial(q, c) : dtw_matrix(q, c));
}

template <bool Serial>
void BM_evaluate_scores(benchmark::State& state) {
  const RetrievalBank bank = random_bank(200, 2000);
  CounterRng rng(3, 0);
  std::vector<double> sim(bank.dtw.size());
  for (double& s : sim) s = rng.uniform01();
  for (auto _ : state)
    benchmark::DoNotOptimize(Serial ? evaluate_scores_serial(bank, sim) : evaluate_scores(bank, sim));
}

template <bool Serial>
void BM_batch_loss_and_grad(benchmark::State& state) {
  const EncoderConfig cfg = testing::toy_config();
  const Params p = testing::perturbed_params(cfg, 1);
  std::vector<EncoderInput> inputs;
  for (std::uint64_t i = 0; i < 16; ++i) inputs.push_back(testing::random_input(32, cfg.vocab_size, i));
  std::vector<MaskedExample> batch;
  for (const EncoderInput& in : inputs) batch.push_back({&in, testing::every_kth(32, 3)});
  Params grad = zero_params(cfg);
  for (auto _ : state) {
    benchmark::DoNotOptimize(Serial ? batch_loss_and_grad_serial(batch, p, cfg, LossWeights{}, grad)
                                    : batch_loss_and_grad(batch, p, cfg, LossWeights{}, grad));
  }
}

template <bool Serial>
void BM_sample_masks(benchmark::State& state) {
  CounterRng rng(4, 0);
  std::vector<std::vector<TokenId>> seqs(5000);
  for (auto& s : seqs)
    for (std::size_t i = 0, n = 20 + rng.uniform(173); i < n; ++i) s.push_back(3 + static_cast<TokenId>(i / 4));
  const MaskSpec spec{0.3, 6, MaskStrategy::RunAware, 9};
  for (auto _ : state) benchmark::DoNotOptimize(Serial ? sample_masks_serial(seqs, spec) : sample_masks(seqs, spec));
}

}  // namespace

BENCHMARK(BM_count_base<true>)->Name("count_base/serial")->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_count_base<false>)->Name("count_base/omp")->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_dtw_matrix<true>)->Name("dtw_matrix/serial")->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_dtw_matrix<false>)->Name("dtw_matrix/omp")->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_evaluate_scores<true>)->Name("evaluate_scores/serial")->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_evaluate_scores<false>)->Name("evaluate_scores/omp")->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_batch_loss_and_grad<true>)->Name("batch_loss_and_grad/serial")->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_batch_loss_and_grad<false>)->Name("batch_loss_and_grad/omp")->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_sample_masks<true>)->Name("sample_masks/serial")->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_sample_masks<false>)->Name("sample_masks/omp")->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
