#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>

#include "test_support.hpp"
#include "trajtok/config.hpp"
#include "trajtok/parallel.hpp"
#include "trajtok/training.hpp"

using namespace trajtok;
using trajtok::testing::random_input;
using trajtok::testing::toy_config;

namespace {

std::vector<EncoderInput> toy_data(std::size_t n, std::size_t L, int vocab) {
  std::vector<EncoderInput> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_input(L, vocab, 1000 + i));
  return out;
}

bool params_equal(const Params& a, const Params& b) {
  std::vector<const Mat*> la, lb;
  a.for_each([&](const std::string&, const Mat& m, bool) { la.push_back(&m); });
  b.for_each([&](const std::string&, const Mat& m, bool) { lb.push_back(&m); });
  if (la.size() != lb.size()) return false;
  for (std::size_t i = 0; i < la.size(); ++i) {
    if (la[i]->rows() != lb[i]->rows() || la[i]->cols() != lb[i]->cols()) return false;
    if (std::memcmp(la[i]->data(), lb[i]->data(), sizeof(double) * la[i]->size()) != 0) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("learning rate warms up linearly then decays along a cosine") {
  OptimizerConfig opt;
  opt.lr = 1e-3;
  opt.steps = 100;
  opt.warmup_frac = 0.2;
  CHECK(learning_rate_at(opt, 0) == doctest::Approx(1e-3 / 20));
  CHECK(learning_rate_at(opt, 19) == doctest::Approx(1e-3));
  CHECK(learning_rate_at(opt, 20) == doctest::Approx(1e-3));
  CHECK(learning_rate_at(opt, 60) == doctest::Approx(0.5e-3));
  CHECK(learning_rate_at(opt, 99) < 1e-5);
  for (std::size_t s = 20; s + 1 < 100; ++s) CHECK(learning_rate_at(opt, s + 1) <= learning_rate_at(opt, s));
}

TEST_CASE("AdamW first step moves each weight by lr against its gradient sign") {
  EncoderConfig cfg = toy_config();
  OptimizerConfig opt;
  opt.weight_decay = 0.0;
  AdamW adam(opt, cfg);
  Params p = zero_params(cfg);
  Params g = zero_params(cfg);
  g.geo_head_b(0, 0) = 3.0;
  g.geo_head_b(0, 1) = -0.5;
  adam.step(p, g, 0.1);
  // m_hat / sqrt(v_hat) = sign(g) on the first step.
  CHECK(p.geo_head_b(0, 0) == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(p.geo_head_b(0, 1) == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(p.geo_head_b(0, 2) == 0.0);
}

TEST_CASE("weight decay applies to weight matrices only") {
  EncoderConfig cfg = toy_config();
  OptimizerConfig opt;
  opt.weight_decay = 0.5;
  AdamW adam(opt, cfg);
  Params p = init_params(cfg, 3);
  const Params before = p;
  adam.step(p, zero_params(cfg), 0.1);
  CHECK(p.geo_head_w.isApprox(before.geo_head_w * 0.95));
  CHECK(p.geo_head_b == before.geo_head_b);
  CHECK(p.cell_embedding == before.cell_embedding);
  CHECK(p.geo.ln_final.gain == before.geo.ln_final.gain);
}

TEST_CASE("zero learning rate leaves parameters and evaluation loss unchanged") {
  EncoderConfig cfg = toy_config();
  const auto data = toy_data(12, 16, cfg.vocab_size);
  MaskSpec spec;
  spec.seed = 5;
  OptimizerConfig opt;
  opt.lr = 0.0;
  opt.steps = 5;
  opt.batch_size = 4;
  const Params init = init_params(cfg, 9);
  const EvalResult e0 = evaluate_masked(data, init, cfg, spec, {});
  const TrainResult r = train_toy(data, cfg, spec, {}, opt, 9, {}, &init);
  CHECK(params_equal(r.params, init));
  const EvalResult e1 = evaluate_masked(data, r.params, cfg, spec, {});
  CHECK(e0.joint == e1.joint);
}

TEST_CASE("training is bit-identical across runs and thread counts") {
  EncoderConfig cfg = toy_config();
  const auto data = toy_data(10, 12, cfg.vocab_size);
  MaskSpec spec;
  spec.seed = 1;
  OptimizerConfig opt;
  opt.steps = 6;
  opt.batch_size = 4;
  TrainResult a, b;
  {
    parallel::ThreadScope scope(1);
    a = train_toy(data, cfg, spec, {}, opt, 4);
  }
  {
    parallel::ThreadScope scope(3);
    b = train_toy(data, cfg, spec, {}, opt, 4);
  }
  CHECK(params_equal(a.params, b.params));
  REQUIRE(a.trace.size() == b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) CHECK(a.trace[i].joint == b.trace[i].joint);
  CHECK(format_trace_csv(a.trace) == format_trace_csv(b.trace));
}

TEST_CASE("training reduces the loss on a small fixed set") {
  EncoderConfig cfg = toy_config();
  const auto data = toy_data(8, 16, cfg.vocab_size);
  MaskSpec spec;
  spec.seed = 2;
  OptimizerConfig opt;
  opt.lr = 3e-3;
  opt.steps = 60;
  opt.batch_size = 8;
  const Params init = init_params(cfg, 1);
  const double before = evaluate_masked(data, init, cfg, spec, {}).joint;
  const TrainResult r = train_toy(data, cfg, spec, {}, opt, 1, {}, &init);
  const double after = evaluate_masked(data, r.params, cfg, spec, {}).joint;
  CHECK(after < before);
}

TEST_CASE("sequences too short to mask are rejected or skipped") {
  EncoderConfig cfg = toy_config();
  std::vector<EncoderInput> data{random_input(2, cfg.vocab_size, 1)};
  OptimizerConfig opt;
  opt.steps = 1;
  CHECK_THROWS_AS(train_toy(data, cfg, MaskSpec{}, {}, opt, 0), std::invalid_argument);
  data.push_back(random_input(10, cfg.vocab_size, 2));
  CHECK_NOTHROW(train_toy(data, cfg, MaskSpec{}, {}, opt, 0));
}

TEST_CASE("periodic checkpoints and evaluation fire on schedule") {
  EncoderConfig cfg = toy_config();
  const auto data = toy_data(6, 10, cfg.vocab_size);
  OptimizerConfig opt;
  opt.steps = 7;
  opt.batch_size = 2;
  std::vector<std::size_t> seen;
  TrainOptions options;
  options.eval_interval = 2;
  options.eval_set = data;
  options.checkpoint_interval = 3;
  options.on_checkpoint = [&](std::size_t step, const Params&) { seen.push_back(step); };
  const TrainResult r = train_toy(data, cfg, MaskSpec{}, {}, opt, 0, options);
  CHECK(seen == std::vector<std::size_t>{3, 6});
  CHECK(std::isnan(r.trace[0].accuracy));
  CHECK_FALSE(std::isnan(r.trace[1].accuracy));
}

TEST_CASE("checkpoints round-trip bit-exactly and reject corruption") {
  Checkpoint ck;
  ck.cfg = toy_config();
  ck.params = init_params(ck.cfg, 77);
  ck.step = 123;
  ck.seed = 77;
  ck.config_echo = R"({"seed":77})";
  const std::string bytes = serialize_checkpoint(ck);
  const Checkpoint back = parse_checkpoint(bytes);
  CHECK(back.cfg == ck.cfg);
  CHECK(back.step == 123);
  CHECK(back.seed == 77);
  CHECK(back.config_echo == ck.config_echo);
  CHECK(params_equal(back.params, ck.params));
  CHECK(serialize_checkpoint(back) == bytes);

  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 1;
  CHECK_THROWS_AS(parse_checkpoint(flipped), CheckpointError);
  CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, bytes.size() - 3)), CheckpointError);
  std::string version = bytes;
  version[8] = 9;
  CHECK_THROWS_WITH_AS(parse_checkpoint(version), doctest::Contains("version"), CheckpointError);
  CHECK_THROWS_AS(parse_checkpoint("not a checkpoint"), CheckpointError);

  const auto path = std::filesystem::temp_directory_path() / "trajtok_test_ckpt.bin";
  save_checkpoint(ck, path);
  CHECK(params_equal(load_checkpoint(path).params, ck.params));
  std::filesystem::remove(path);
}

TEST_CASE("run config JSON round-trips and rejects unknown keys") {
  RunConfig c;
  c.grid.backend = GridBackend::Hex;
  c.grid.capacity = 77;
  c.mask.seed = 42;
  c.eval.pool = PoolStream::Geo;
  c.encoder.rope_split = {4, 4, 8};
  const RunConfig back = run_config_from_json(to_json(c));
  CHECK(config_echo(back) == config_echo(c));
  CHECK(back.encoder == c.encoder);

  auto j = to_json(c);
  j["grid"]["bogus"] = 1;
  CHECK_THROWS_AS(run_config_from_json(j), std::invalid_argument);
  auto k = to_json(c);
  k["eval"]["pool"] = "MAX";
  CHECK_THROWS_AS(run_config_from_json(k), std::invalid_argument);
  CHECK(run_config_from_json(nlohmann::json::object()).grid.capacity == RunConfig{}.grid.capacity);
}
