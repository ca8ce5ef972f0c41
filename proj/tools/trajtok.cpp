// trajtok: command-line front end. Every subcommand reads an optional JSON run config,
// applies --set overrides and --seed, and writes its outputs under --out.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

#include "trajtok/config.hpp"
#include "trajtok/gradcheck.hpp"
#include "trajtok/hash.hpp"
#include "trajtok/ingest.hpp"
#include "trajtok/io.hpp"
#include "trajtok/masking.hpp"
#include "trajtok/pipeline.hpp"
#include "trajtok/rng.hpp"
#include "trajtok/similarity.hpp"
#include "trajtok/synth.hpp"
#include "trajtok/tokenizer.hpp"
#include "trajtok/training.hpp"
#include "trajtok/vocab.hpp"

namespace fs = std::filesystem;
using namespace trajtok;
using nlohmann::json;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, const std::string& out_help) {
  cmd->add_option("--config", c.config_path, "JSON run config (defaults apply to missing keys)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "Override a config field, e.g. --set grid.capacity=500");
  cmd->add_option("--seed", c.seed, "Seed for this subcommand's random choices");
  cmd->add_option("--out", c.out, out_help)->required();
}

/// "a.b=value": value is parsed as JSON, falling back to a plain string.
void apply_override(json& j, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
  json* node = &j;
  std::string path = kv.substr(0, eq);
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (dot == std::string::npos) {
      const std::string raw = kv.substr(eq + 1);
      json value = json::parse(raw, nullptr, /*allow_exceptions=*/false);
      (*node)[key] = value.is_discarded() ? json(raw) : value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

RunConfig load_config(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_run_config(c.config_path);
  if (!c.overrides.empty()) {
    json j = to_json(cfg);
    for (const std::string& kv : c.overrides) apply_override(j, kv);
    cfg = run_config_from_json(j);
  }
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

std::string header(const RunConfig& cfg) { return "# config=" + config_echo(cfg) + "\n"; }

void write_out(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file(path, text);
  std::cerr << "wrote " << path.string() << "\n";
}

std::vector<Trajectory> read_trajectories(const std::string& path) { return parse_trajectory_store(read_file(path)); }

std::vector<TokenSequence> read_tokens(const fs::path& dir, Split s) {
  return parse_token_store(read_file(dir / ("tokens_" + to_string(s) + ".txt")));
}

double read_v_max(const fs::path& dir) { return parse_v_max(read_file(dir / "v_max.txt")); }

/// Random walk input for gradient checks, independent of any data files.
EncoderInput random_input(std::size_t L, int vocab_size, std::uint64_t seed) {
  CounterRng rng(seed, 1);
  EncoderInput in;
  double lat = 0.0, lon = 0.0;
  for (std::size_t j = 0; j < L; ++j) {
    in.ids.push_back(Vocabulary::kFirstCell + static_cast<TokenId>(rng.uniform(vocab_size - Vocabulary::kFirstCell)));
    const double h = rng.uniform01() * 6.283185307179586;
    in.kin.push_back({rng.uniform01(), std::sin(h), std::cos(h)});
    in.coords.push_back({lat, lon, 15.0 * static_cast<double>(j)});
    lat += rng.normal() * 10.0;
    lon += rng.normal() * 10.0;
  }
  in.valid_length = L;
  return in;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Density-adaptive trajectory tokenization and pretraining toolkit"};
  app.require_subcommand(1);

  // synth ----------------------------------------------------------------------------
  Common synth_c;
  std::size_t synth_n = 20000;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic city in the taxi CSV format");
  add_common(synth, synth_c, "Output CSV path");
  synth->add_option("--n", synth_n, "Number of trajectories");
  synth->callback([&] {
    SynthCityConfig sc;
    sc.n_trajectories = synth_n;
    if (synth_c.seed) sc.seed = *synth_c.seed;
    const RunConfig cfg = load_config(Common{synth_c.config_path, synth_c.overrides, std::nullopt, ""});
    sc.bbox = cfg.data.bbox;
    sc.interval_s = cfg.data.sample_interval_s;
    write_out(synth_c.out, format_porto_csv(synth_city(sc), sc.interval_s));
  });

  // ingest ---------------------------------------------------------------------------
  Common ingest_c;
  std::string ingest_input;
  auto* ingest = app.add_subcommand("ingest", "Parse a taxi CSV into a trajectory store with statistics");
  add_common(ingest, ingest_c, "Output directory");
  ingest->add_option("--input", ingest_input, "CSV file (overrides data.input_csv)");
  ingest->callback([&] {
    RunConfig cfg = load_config(ingest_c);
    if (!ingest_input.empty()) cfg.data.input_csv = ingest_input;
    if (cfg.data.input_csv.empty()) throw CLI::ValidationError("--input", "no input CSV given");
    IngestOptions opts;
    opts.bbox = cfg.data.bbox;
    opts.sample_interval_s = cfg.data.sample_interval_s;
    opts.max_trajectories = cfg.data.max_trajectories;
    const IngestResult res = ingest_porto_file(cfg.data.input_csv, opts);
    const fs::path dir(ingest_c.out);
    write_out(dir / "trajectories.txt", header(cfg) + format_trajectory_store(res.trajectories));
    write_out(dir / "ingest_stats.txt", "config=" + config_echo(cfg) + "\n" + format_ingest_stats(res.stats));
    write_out(dir / "split_stats.txt",
              "config=" + config_echo(cfg) + "\n" + format_split_counts(split_counts(res.trajectories)));
    std::cout << format_ingest_stats(res.stats);
  });

  // split-stats ----------------------------------------------------------------------
  Common split_c;
  std::string split_trajs;
  auto* split = app.add_subcommand("split-stats", "Count trajectories per train/val/test split");
  add_common(split, split_c, "Output text file");
  split->add_option("--trajectories", split_trajs, "Trajectory store")->required()->check(CLI::ExistingFile);
  split->callback([&] {
    const RunConfig cfg = load_config(split_c);
    const std::string text = format_split_counts(split_counts(read_trajectories(split_trajs)));
    write_out(split_c.out, "config=" + config_echo(cfg) + "\n" + text);
    std::cout << text;
  });

  // build-vocab ----------------------------------------------------------------------
  Common vocab_c;
  std::string vocab_trajs;
  auto* vocab = app.add_subcommand("build-vocab", "Build the density-adaptive vocabulary from training points");
  add_common(vocab, vocab_c, "Output vocabulary file");
  vocab->add_option("--trajectories", vocab_trajs, "Trajectory store")->required()->check(CLI::ExistingFile);
  vocab->callback([&] {
    const RunConfig cfg = load_config(vocab_c);
    const auto train = select_split(read_trajectories(vocab_trajs), Split::Train);
    Vocabulary v = build_vocabulary(all_points(train), cfg.grid_config(), cfg.grid.capacity);
    v.set_config_echo(config_echo(cfg));
    if (fs::path(vocab_c.out).has_parent_path()) fs::create_directories(fs::path(vocab_c.out).parent_path());
    save_vocabulary(v, vocab_c.out);
    std::cout << "cells=" << v.num_cells() << " tokens=" << v.size() << "\n";
  });

  // tokenize -------------------------------------------------------------------------
  Common tok_c;
  std::string tok_vocab, tok_trajs;
  auto* tok = app.add_subcommand("tokenize", "Tokenize every split and derive v_max");
  add_common(tok, tok_c, "Output directory");
  tok->add_option("--vocab", tok_vocab, "Vocabulary file")->required()->check(CLI::ExistingFile);
  tok->add_option("--trajectories", tok_trajs, "Trajectory store")->required()->check(CLI::ExistingFile);
  tok->callback([&] {
    const RunConfig cfg = load_config(tok_c);
    const Vocabulary v = load_vocabulary(tok_vocab);
    const auto trajs = read_trajectories(tok_trajs);
    const TokenizeOptions opts{cfg.tokenizer.dedup, cfg.tokenizer.max_seq_len};
    std::vector<TokenSequence> train;
    for (Split s : {Split::Train, Split::Val, Split::Test}) {
      auto seqs = tokenize_all(v, select_split(trajs, s), opts);
      write_out(fs::path(tok_c.out) / ("tokens_" + to_string(s) + ".txt"), header(cfg) + format_token_store(seqs));
      if (s == Split::Train) train = std::move(seqs);
    }
    const double v_max =
        cfg.tokenizer.v_max > 0.0 ? cfg.tokenizer.v_max : speed_percentile(train, cfg.tokenizer.v_max_percentile);
    write_out(fs::path(tok_c.out) / "v_max.txt", "config=" + config_echo(cfg) + "\nv_max=" + format_double(v_max) + "\n");
  });

  // mask-stats -----------------------------------------------------------------------
  Common mask_c;
  std::string mask_tokens;
  auto* mask = app.add_subcommand("mask-stats", "Sample masks over a token store and summarize them");
  add_common(mask, mask_c, "Output text file");
  mask->add_option("--tokens", mask_tokens, "Token store file")->required()->check(CLI::ExistingFile);
  mask->callback([&] {
    Common c = mask_c;
    c.seed.reset();
    RunConfig cfg = load_config(c);
    if (mask_c.seed) cfg.mask.seed = *mask_c.seed;
    std::vector<std::vector<TokenId>> ids;
    for (const TokenSequence& s : parse_token_store(read_file(mask_tokens))) ids.push_back(s.ids());
    const auto masks = sample_masks(ids, cfg.mask);
    const std::string text = format_mask_stats(mask_stats(ids, masks, cfg.mask), cfg.mask);
    write_out(mask_c.out, "config=" + config_echo(cfg) + "\n" + text);
    std::cout << text;
  });

  // pretrain -------------------------------------------------------------------------
  Common pre_c;
  std::string pre_vocab, pre_tokens;
  auto* pre = app.add_subcommand("pretrain", "Pretrain the encoder with masked modeling");
  add_common(pre, pre_c, "Output directory (checkpoint.bin, loss_trace.csv)");
  pre->add_option("--vocab", pre_vocab, "Vocabulary file")->required()->check(CLI::ExistingFile);
  pre->add_option("--tokens", pre_tokens, "Directory written by tokenize")->required()->check(CLI::ExistingDirectory);
  pre->callback([&] {
    const RunConfig cfg = load_config(pre_c);
    const Vocabulary v = load_vocabulary(pre_vocab);
    const EncoderConfig ecfg = encoder_for(cfg, v);
    const double v_max = read_v_max(pre_tokens);
    const auto train = to_inputs(read_tokens(pre_tokens, Split::Train), v_max, ecfg.coord_scale);
    const auto val = to_inputs(read_tokens(pre_tokens, Split::Val), v_max, ecfg.coord_scale);
    TracedTraining t = train_with_trace(train, val, nullptr, {}, {}, ecfg, cfg, 0);
    Checkpoint ck{ecfg, std::move(t.result.params), cfg.optimizer.steps, cfg.seed, config_echo(cfg)};
    fs::create_directories(pre_c.out);
    save_checkpoint(ck, fs::path(pre_c.out) / "checkpoint.bin");
    write_out(fs::path(pre_c.out) / "loss_trace.csv", header(cfg) + format_trace_csv(t.result.trace));
    const EvalResult e = evaluate_masked(val, ck.params, ecfg, cfg.mask, cfg.loss);
    std::cout << "val_joint=" << format_double(e.joint) << " val_accuracy=" << format_double(e.accuracy) << "\n";
  });

  // gradcheck ------------------------------------------------------------------------
  Common gc_c;
  std::size_t gc_samples = 20, gc_length = 16;
  double gc_tol = 1e-4;
  auto* gc = app.add_subcommand("gradcheck", "Compare analytic gradients with central differences");
  add_common(gc, gc_c, "Output report file");
  gc->add_option("--samples", gc_samples, "Coordinates checked per parameter tensor");
  gc->add_option("--length", gc_length, "Sequence length of the random example");
  gc->add_option("--tolerance", gc_tol, "Maximum allowed relative error");
  bool gc_failed = false;
  gc->callback([&] {
    const RunConfig cfg = load_config(gc_c);
    EncoderConfig ecfg = cfg.encoder;
    ecfg.validate();
    Params p = init_params(ecfg, cfg.seed);
    // Move zero-initialized biases and norm offsets away from special points.
    std::uint64_t stream = 100;
    p.for_each([&](const std::string&, Mat& m, bool) {
      CounterRng rng(cfg.seed, stream++);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += 0.1 * rng.normal();
    });
    const EncoderInput in = random_input(gc_length, ecfg.vocab_size, cfg.seed);
    std::vector<std::size_t> positions;
    for (std::size_t i = 1; i < gc_length; i += 3) positions.push_back(i);
    const std::vector<MaskedExample> batch{{&in, positions}};
    const GradCheckReport r = gradient_check(p, batch, ecfg, cfg.loss, gc_samples, 1e-5, cfg.seed);
    const std::string text = format_gradcheck(r, gc_tol);
    write_out(gc_c.out, "config=" + config_echo(cfg) + "\n" + text);
    std::cout << text;
    gc_failed = r.max_rel_error > gc_tol;
  });

  // bank -----------------------------------------------------------------------------
  Common bank_c;
  std::string bank_trajs;
  auto* bank = app.add_subcommand("bank", "Sample the query/corpus retrieval bank from the test split");
  add_common(bank, bank_c, "Output bank file");
  bank->add_option("--trajectories", bank_trajs, "Trajectory store")->required()->check(CLI::ExistingFile);
  bank->callback([&] {
    Common c = bank_c;
    c.seed.reset();
    RunConfig cfg = load_config(c);
    if (bank_c.seed) cfg.eval.bank_seed = *bank_c.seed;
    const auto test = select_split(read_trajectories(bank_trajs), Split::Test);
    const RetrievalBank b = build_bank(test, cfg.eval.n_queries, cfg.eval.n_corpus, cfg.eval.bank_seed, config_echo(cfg));
    if (fs::path(bank_c.out).has_parent_path()) fs::create_directories(fs::path(bank_c.out).parent_path());
    save_bank(b, bank_c.out);
    std::cout << "queries=" << b.query_ids.size() << " corpus=" << b.corpus_ids.size() << "\n";
  });

  // embed ----------------------------------------------------------------------------
  Common emb_c;
  std::string emb_ckpt, emb_bank, emb_tokens;
  auto* emb = app.add_subcommand("embed", "Zero-shot embeddings of the bank's trajectories");
  add_common(emb, emb_c, "Output embeddings file");
  emb->add_option("--checkpoint", emb_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  emb->add_option("--bank", emb_bank, "Bank file")->required()->check(CLI::ExistingFile);
  emb->add_option("--tokens", emb_tokens, "Directory written by tokenize")->required()->check(CLI::ExistingDirectory);
  emb->callback([&] {
    const RunConfig cfg = load_config(emb_c);
    const Checkpoint ck = load_checkpoint(emb_ckpt);
    const RetrievalBank b = load_bank(emb_bank);
    const auto [qi, ci] = bank_inputs(b, read_tokens(emb_tokens, Split::Test), read_v_max(emb_tokens), ck.cfg.coord_scale);
    const auto qe = embed_all(qi, ck.params, ck.cfg, cfg.eval.pool);
    const auto ce = embed_all(ci, ck.params, ck.cfg, cfg.eval.pool);
    write_out(emb_c.out, header(cfg) + format_embeddings(b.query_ids, qe) + format_embeddings(b.corpus_ids, ce));
  });

  // eval-sim -------------------------------------------------------------------------
  Common ev_c;
  std::string ev_bank, ev_emb;
  auto* ev = app.add_subcommand("eval-sim", "Similarity-retrieval metrics against DTW ground truth");
  add_common(ev, ev_c, "Output metrics file (a .csv sibling is also written)");
  ev->add_option("--bank", ev_bank, "Bank file")->required()->check(CLI::ExistingFile);
  ev->add_option("--embeddings", ev_emb, "Embeddings file")->required()->check(CLI::ExistingFile);
  ev->callback([&] {
    const RunConfig cfg = load_config(ev_c);
    const RetrievalBank b = load_bank(ev_bank);
    const auto embs = parse_embeddings(read_file(ev_emb));
    std::vector<Eigen::VectorXd> qe, ce;
    for (const auto& id : b.query_ids) qe.push_back(embs.at(id));
    for (const auto& id : b.corpus_ids) ce.push_back(embs.at(id));
    const MetricsReport m = evaluate(b, qe, ce);
    const std::string text = format_metrics(m, config_echo(cfg)) + "seed=" + std::to_string(b.seed) + "\n";
    write_out(ev_c.out, text);
    write_out(fs::path(ev_c.out).replace_extension(".csv"), header(cfg) + metrics_csv(m));
    std::cout << text;
  });

  // trace ----------------------------------------------------------------------------
  Common tr_c;
  std::string tr_vocab, tr_tokens, tr_trajs;
  std::size_t tr_interval = 0;
  auto* tr = app.add_subcommand("trace", "Held-out loss and zero-shot HR@10 at regular pretraining checkpoints");
  add_common(tr, tr_c, "Output CSV (step,val_loss,hr10)");
  tr->add_option("--vocab", tr_vocab, "Vocabulary file")->required()->check(CLI::ExistingFile);
  tr->add_option("--tokens", tr_tokens, "Directory written by tokenize")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--trajectories", tr_trajs, "Trajectory store (the trace bank uses the val split)")
      ->required()
      ->check(CLI::ExistingFile);
  tr->add_option("--interval", tr_interval, "Steps between checkpoints (default: trace.interval)");
  tr->callback([&] {
    const RunConfig cfg = load_config(tr_c);
    const std::size_t interval = tr_interval > 0 ? tr_interval : cfg.trace.interval;
    const Vocabulary v = load_vocabulary(tr_vocab);
    const EncoderConfig ecfg = encoder_for(cfg, v);
    const double v_max = read_v_max(tr_tokens);
    const auto val_seqs = read_tokens(tr_tokens, Split::Val);
    const auto train = to_inputs(read_tokens(tr_tokens, Split::Train), v_max, ecfg.coord_scale);
    const auto val = to_inputs(val_seqs, v_max, ecfg.coord_scale);
    const auto val_trajs = select_split(read_trajectories(tr_trajs), Split::Val);
    const RetrievalBank b =
        build_bank(val_trajs, cfg.trace.n_queries, cfg.trace.n_corpus, cfg.eval.bank_seed, config_echo(cfg));
    const auto [bq, bc] = bank_inputs(b, val_seqs, v_max, ecfg.coord_scale);
    const auto rows = loss_transfer_trace(train, val, b, bq, bc, ecfg, cfg, interval);
    write_out(tr_c.out, format_trace_rows(rows, config_echo(cfg)));
  });

  // run ------------------------------------------------------------------------------
  Common run_c;
  auto* run = app.add_subcommand("run", "Run every stage, reusing up-to-date stage outputs");
  add_common(run, run_c, "Run directory (overrides out_dir)");
  run->callback([&] {
    RunConfig cfg = load_config(run_c);
    cfg.out_dir = run_c.out;
    const PipelineResult res = run_pipeline(cfg, &std::cerr);
    std::cout << format_metrics(res.metrics);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return gc_failed ? 3 : 0;
}
