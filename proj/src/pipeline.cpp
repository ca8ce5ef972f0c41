#include "trajtok/pipeline.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <unordered_map>

#include "trajtok/hash.hpp"
#include "trajtok/io.hpp"
#include "trajtok/masking.hpp"
#include "trajtok/tokenizer.hpp"
#include "trajtok/training.hpp"
#include "trajtok/vocab.hpp"

namespace trajtok {

namespace fs = std::filesystem;
using nlohmann::json;

const StageReport& PipelineResult::stage(const std::string& name) const {
  for (const StageReport& s : stages)
    if (s.name == name) return s;
  throw std::out_of_range("no stage named " + name);
}

double speed_percentile(std::span<const TokenSequence> seqs, double percentile) {
  std::vector<double> v;
  for (const TokenSequence& s : seqs)
    for (std::size_t i = 1; i < s.tokens.size(); ++i) v.push_back(s.tokens[i].speed);
  if (v.empty()) return 1.0;
  std::sort(v.begin(), v.end());
  const double pos = std::clamp(percentile, 0.0, 100.0) / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double x = v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  return x > 0.0 ? x : 1.0;
}

TracedTraining train_with_trace(std::span<const EncoderInput> train, std::span<const EncoderInput> val,
                                const RetrievalBank* bank, std::span<const EncoderInput> bank_queries,
                                std::span<const EncoderInput> bank_corpus, const EncoderConfig& ecfg,
                                const RunConfig& cfg, std::size_t interval) {
  TracedTraining out;
  TrainOptions options;
  if (interval > 0) {
    options.checkpoint_interval = interval;
    options.on_checkpoint = [&](std::size_t step, const Params& p) {
      TraceRow row;
      row.step = step;
      row.val_loss = evaluate_masked(val, p, ecfg, cfg.mask, cfg.loss).joint;
      if (bank != nullptr) {
        const auto qe = embed_all(bank_queries, p, ecfg, cfg.eval.pool);
        const auto ce = embed_all(bank_corpus, p, ecfg, cfg.eval.pool);
        row.hr10 = evaluate(*bank, qe, ce).hr10;
      }
      out.rows.push_back(row);
    };
  }
  out.result = train_toy(train, ecfg, cfg.mask, cfg.loss, cfg.optimizer, cfg.seed, options);
  return out;
}

std::vector<TraceRow> loss_transfer_trace(std::span<const EncoderInput> train, std::span<const EncoderInput> val,
                                          const RetrievalBank& bank, std::span<const EncoderInput> bank_queries,
                                          std::span<const EncoderInput> bank_corpus, const EncoderConfig& ecfg,
                                          const RunConfig& cfg, std::size_t interval) {
  if (interval == 0) throw std::invalid_argument("loss_transfer_trace: interval must be positive");
  return train_with_trace(train, val, &bank, bank_queries, bank_corpus, ecfg, cfg, interval).rows;
}

std::string format_trace_rows(std::span<const TraceRow> rows, const std::string& config_echo) {
  std::string s;
  if (!config_echo.empty()) s += "# config=" + config_echo + "\n";
  s += "step,val_loss,hr10\n";
  for (const TraceRow& r : rows) {
    s += std::to_string(r.step) + ',' + format_double(r.val_loss) + ',' + format_double(r.hr10) + '\n';
  }
  return s;
}

// ---------------------------------------------------------------------------------------
// Stage helpers

std::vector<Trajectory> select_split(std::vector<Trajectory> trajs, Split which) {
  std::vector<Trajectory> out;
  for (Trajectory& t : trajs)
    if (split_of(t.id) == which) out.push_back(std::move(t));
  return out;
}

std::vector<GpsPoint> all_points(std::span<const Trajectory> trajs) {
  std::vector<GpsPoint> pts;
  for (const Trajectory& t : trajs) pts.insert(pts.end(), t.points.begin(), t.points.end());
  return pts;
}

double parse_v_max(const std::string& text) {
  for (auto line : split_view(text, '\n')) {
    if (line.substr(0, 6) == "v_max=") return parse_double(line.substr(6));
  }
  throw std::runtime_error("v_max file has no v_max line");
}

std::vector<EncoderInput> to_inputs(std::span<const TokenSequence> seqs, double v_max, double coord_scale) {
  std::vector<EncoderInput> out;
  out.reserve(seqs.size());
  for (const TokenSequence& s : seqs) out.push_back(make_encoder_input(s, v_max, coord_scale));
  return out;
}

EncoderConfig encoder_for(const RunConfig& cfg, const Vocabulary& vocab) {
  EncoderConfig e = cfg.encoder;
  e.vocab_size = static_cast<int>(vocab.size());
  e.max_seq_len = static_cast<int>(cfg.tokenizer.max_seq_len);
  return e;
}

std::pair<std::vector<EncoderInput>, std::vector<EncoderInput>> bank_inputs(const RetrievalBank& bank,
                                                                            std::span<const TokenSequence> seqs,
                                                                            double v_max, double coord_scale) {
  std::unordered_map<std::string, const TokenSequence*> by_id;
  for (const TokenSequence& s : seqs) by_id[s.id] = &s;
  auto pick = [&](const std::vector<std::string>& ids) {
    std::vector<EncoderInput> out;
    for (const std::string& id : ids) {
      const auto it = by_id.find(id);
      if (it == by_id.end()) throw std::runtime_error("bank trajectory " + id + " has no token sequence");
      out.push_back(make_encoder_input(*it->second, v_max, coord_scale));
    }
    return out;
  };
  return {pick(bank.query_ids), pick(bank.corpus_ids)};
}

std::string format_embeddings(const std::vector<std::string>& ids, const std::vector<Eigen::VectorXd>& embs) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    s += ids[i] + '\t';
    for (Eigen::Index k = 0; k < embs[i].size(); ++k) {
      if (k) s += ',';
      s += format_double(embs[i][k]);
    }
    s += '\n';
  }
  return s;
}

std::unordered_map<std::string, Eigen::VectorXd> parse_embeddings(const std::string& text) {
  std::unordered_map<std::string, Eigen::VectorXd> out;
  for (auto line : split_view(text, '\n')) {
    if (line.empty() || line[0] == '#') continue;
    const auto f = split_view(line, '\t');
    if (f.size() != 2) throw std::runtime_error("embeddings file: bad line");
    const auto vals = split_view(f[1], ',');
    Eigen::VectorXd v(static_cast<Eigen::Index>(vals.size()));
    for (std::size_t k = 0; k < vals.size(); ++k) v[static_cast<Eigen::Index>(k)] = parse_double(vals[k]);
    out.emplace(std::string(f[0]), std::move(v));
  }
  return out;
}


// ---------------------------------------------------------------------------------------
// Stages

namespace {

constexpr const char* kMarker = "stage.done";

std::string directory_digest(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() != kMarker) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::uint64_t h = fnv1a64("");
  for (const fs::path& f : files) {
    h = fnv1a64(f.filename().string(), h);
    h = fnv1a64(std::string_view("\0", 1), h);
    h = fnv1a64(read_file(f), h);
  }
  return hex64(h);
}

class Runner {
 public:
  Runner(const RunConfig& cfg, std::ostream* log) : cfg_(cfg), log_(log), echo_(config_echo(cfg)) {
    root_ = fs::path(cfg.out_dir);
  }

  const StageReport& run(const std::string& name, const json& subset, const std::vector<std::string>& inputs,
                         const std::function<void(const fs::path&)>& build) {
    std::string material = name + "\n" + subset.dump() + "\n";
    for (const std::string& in : inputs) material += in + "\n";
    StageReport rep;
    rep.name = name;
    rep.key = hex64(fnv1a64(material));
    rep.dir = root_ / "stages" / (name + "-" + rep.key);
    const fs::path marker = rep.dir / kMarker;

    if (fs::exists(marker)) {
      const std::string recorded = read_file(marker);
      if (recorded == "digest=" + directory_digest(rep.dir) + "\n") {
        rep.output_digest = recorded.substr(7, recorded.size() - 8);
        rep.rebuilt = false;
        if (log_) *log_ << "[" << name << "] up-to-date " << rep.key << "\n";
        result_.stages.push_back(rep);
        return result_.stages.back();
      }
    }

    const fs::path tmp = rep.dir.string() + ".tmp";
    try {
      fs::remove_all(tmp);
      fs::create_directories(tmp);
      build(tmp);
      fs::remove_all(rep.dir);
      fs::rename(tmp, rep.dir);
      rep.output_digest = directory_digest(rep.dir);
      write_file(marker, "digest=" + rep.output_digest + "\n");
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(name, e.what());
    }
    rep.rebuilt = true;
    if (log_) *log_ << "[" << name << "] built " << rep.key << "\n";
    result_.stages.push_back(rep);
    return result_.stages.back();
  }

  const RunConfig& cfg() const { return cfg_; }
  const std::string& echo() const { return echo_; }
  PipelineResult& result() { return result_; }
  const fs::path& root() const { return root_; }

 private:
  const RunConfig& cfg_;
  std::ostream* log_;
  std::string echo_;
  fs::path root_;
  PipelineResult result_;
};

std::vector<Trajectory> load_split(const fs::path& ingest_dir, Split which) {
  return select_split(parse_trajectory_store(read_file(ingest_dir / "trajectories.txt")), which);
}

double read_v_max(const fs::path& tokenize_dir) { return parse_v_max(read_file(tokenize_dir / "v_max.txt")); }

}  // namespace

PipelineResult run_pipeline(const RunConfig& cfg, std::ostream* log) {
  const json cj = to_json(cfg);
  Runner r(cfg, log);
  const std::string& echo = r.echo();
  const std::string header = "# config=" + echo + "\n";

  // ingest -----------------------------------------------------------------------------
  std::string csv_digest;
  try {
    csv_digest = hex64(fnv1a64(read_file(cfg.data.input_csv)));
  } catch (const std::exception& e) {
    throw StageError("ingest", e.what());
  }
  const StageReport ingest = r.run("ingest", cj["data"], {csv_digest}, [&](const fs::path& dir) {
    IngestOptions opts;
    opts.bbox = cfg.data.bbox;
    opts.sample_interval_s = cfg.data.sample_interval_s;
    opts.max_trajectories = cfg.data.max_trajectories;
    const IngestResult res = ingest_porto_file(cfg.data.input_csv, opts);
    if (res.trajectories.empty()) throw std::runtime_error("no trajectories survived ingestion");
    write_file(dir / "trajectories.txt", header + format_trajectory_store(res.trajectories));
    write_file(dir / "ingest_stats.txt", "config=" + echo + "\n" + format_ingest_stats(res.stats));
    write_file(dir / "split_stats.txt", "config=" + echo + "\n" + format_split_counts(split_counts(res.trajectories)));
  });

  // vocab ------------------------------------------------------------------------------
  const StageReport vocab_stage = r.run("vocab", cj["grid"], {ingest.output_digest}, [&](const fs::path& dir) {
    const auto train = load_split(ingest.dir, Split::Train);
    if (train.empty()) throw std::runtime_error("training split is empty");
    Vocabulary v = build_vocabulary(all_points(train), cfg.grid_config(), cfg.grid.capacity);
    v.set_config_echo(echo);
    save_vocabulary(v, dir / "vocabulary.txt");
  });

  // tokenize ---------------------------------------------------------------------------
  const StageReport tokenize = r.run(
      "tokenize", cj["tokenizer"], {ingest.output_digest, vocab_stage.output_digest}, [&](const fs::path& dir) {
        const Vocabulary v = load_vocabulary(vocab_stage.dir / "vocabulary.txt");
        TokenizeOptions opts;
        opts.dedup = cfg.tokenizer.dedup;
        opts.max_len = cfg.tokenizer.max_seq_len;
        std::vector<TokenSequence> train_seqs;
        for (Split s : {Split::Train, Split::Val, Split::Test}) {
          const auto trajs = load_split(ingest.dir, s);
          auto seqs = tokenize_all(v, trajs, opts);
          write_file(dir / ("tokens_" + to_string(s) + ".txt"), header + format_token_store(seqs));
          if (s == Split::Train) train_seqs = std::move(seqs);
        }
        const double v_max = cfg.tokenizer.v_max > 0.0
                                 ? cfg.tokenizer.v_max
                                 : speed_percentile(train_seqs, cfg.tokenizer.v_max_percentile);
        write_file(dir / "v_max.txt", "config=" + echo + "\nv_max=" + format_double(v_max) + "\n");
      });

  auto load_tokens = [&](Split s) {
    return parse_token_store(read_file(tokenize.dir / ("tokens_" + to_string(s) + ".txt")));
  };

  // mask-stats -------------------------------------------------------------------------
  r.run("mask-stats", cj["mask"], {tokenize.output_digest}, [&](const fs::path& dir) {
    std::vector<std::vector<TokenId>> ids;
    for (const TokenSequence& s : load_tokens(Split::Train)) ids.push_back(s.ids());
    const auto masks = sample_masks(ids, cfg.mask);
    const MaskStats stats = mask_stats(ids, masks, cfg.mask);
    write_file(dir / "mask_stats.txt", "config=" + echo + "\n" + format_mask_stats(stats, cfg.mask));
  });

  // pretrain ---------------------------------------------------------------------------
  json pretrain_subset{{"mask", cj["mask"]},         {"encoder", cj["encoder"]},
                       {"loss", cj["loss"]},         {"optimizer", cj["optimizer"]},
                       {"seed", cj["seed"]},         {"trace", cj["trace"]},
                       {"pool", cj["eval"]["pool"]}};
  const StageReport pretrain = r.run(
      "pretrain", pretrain_subset, {ingest.output_digest, vocab_stage.output_digest, tokenize.output_digest},
      [&](const fs::path& dir) {
        const Vocabulary v = load_vocabulary(vocab_stage.dir / "vocabulary.txt");
        const EncoderConfig ecfg = encoder_for(cfg, v);
        const double v_max = read_v_max(tokenize.dir);
        const auto train_seqs = load_tokens(Split::Train);
        const auto val_seqs = load_tokens(Split::Val);
        const auto train = to_inputs(train_seqs, v_max, ecfg.coord_scale);
        const auto val = to_inputs(val_seqs, v_max, ecfg.coord_scale);

        TracedTraining trained;
        if (cfg.trace.interval > 0) {
          const auto val_trajs = load_split(ingest.dir, Split::Val);
          const RetrievalBank trace_bank =
              build_bank(val_trajs, cfg.trace.n_queries, cfg.trace.n_corpus, cfg.eval.bank_seed, echo);
          const auto [bq, bc] = bank_inputs(trace_bank, val_seqs, v_max, ecfg.coord_scale);
          trained = train_with_trace(train, val, &trace_bank, bq, bc, ecfg, cfg, cfg.trace.interval);
          write_file(dir / "transfer_trace.csv", format_trace_rows(trained.rows, echo));
        } else {
          trained = train_with_trace(train, val, nullptr, {}, {}, ecfg, cfg, 0);
        }
        Checkpoint ck;
        ck.cfg = ecfg;
        ck.params = std::move(trained.result.params);
        ck.step = cfg.optimizer.steps;
        ck.seed = cfg.seed;
        ck.config_echo = echo;
        save_checkpoint(ck, dir / "checkpoint.bin");
        write_file(dir / "loss_trace.csv", header + format_trace_csv(trained.result.trace));
      });

  // bank -------------------------------------------------------------------------------
  json bank_subset{{"n_queries", cfg.eval.n_queries}, {"n_corpus", cfg.eval.n_corpus}, {"bank_seed", cfg.eval.bank_seed}};
  const StageReport bank_stage = r.run("bank", bank_subset, {ingest.output_digest}, [&](const fs::path& dir) {
    const auto test = load_split(ingest.dir, Split::Test);
    save_bank(build_bank(test, cfg.eval.n_queries, cfg.eval.n_corpus, cfg.eval.bank_seed, echo), dir / "bank.txt");
  });

  // embed ------------------------------------------------------------------------------
  const StageReport embed = r.run(
      "embed", json{{"pool", cj["eval"]["pool"]}},
      {pretrain.output_digest, tokenize.output_digest, bank_stage.output_digest}, [&](const fs::path& dir) {
        const Checkpoint ck = load_checkpoint(pretrain.dir / "checkpoint.bin");
        const RetrievalBank bank = load_bank(bank_stage.dir / "bank.txt");
        const auto [qi, ci] = bank_inputs(bank, load_tokens(Split::Test), read_v_max(tokenize.dir), ck.cfg.coord_scale);
        const auto qe = embed_all(qi, ck.params, ck.cfg, cfg.eval.pool);
        const auto ce = embed_all(ci, ck.params, ck.cfg, cfg.eval.pool);
        write_file(dir / "embeddings.txt",
                   header + format_embeddings(bank.query_ids, qe) + format_embeddings(bank.corpus_ids, ce));
      });

  // eval -------------------------------------------------------------------------------
  const StageReport eval = r.run("eval", json::object(), {embed.output_digest, bank_stage.output_digest},
                                 [&](const fs::path& dir) {
                                   const RetrievalBank bank = load_bank(bank_stage.dir / "bank.txt");
                                   const auto embs = parse_embeddings(read_file(embed.dir / "embeddings.txt"));
                                   std::vector<Eigen::VectorXd> qe, ce;
                                   for (const auto& id : bank.query_ids) qe.push_back(embs.at(id));
                                   for (const auto& id : bank.corpus_ids) ce.push_back(embs.at(id));
                                   MetricsReport m = evaluate(bank, qe, ce);
                                   write_file(dir / "metrics.txt", format_metrics(m, echo) +
                                                                       "seed=" + std::to_string(bank.seed) + "\n");
                                   write_file(dir / "metrics.csv", header + metrics_csv(m));
                                 });

  // Metrics are re-read from the artifact so up-to-date runs report the same numbers.
  PipelineResult& res = r.result();
  for (auto line : split_view(read_file(eval.dir / "metrics.txt"), '\n')) {
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) continue;
    const std::string key(line.substr(0, eq));
    const std::string_view val = line.substr(eq + 1);
    static const std::map<std::string, double MetricsReport::*> fields{
        {"HR@1", &MetricsReport::hr1},     {"HR@10", &MetricsReport::hr10},   {"R5@20", &MetricsReport::r5_20},
        {"MRR", &MetricsReport::mrr},      {"NDCG@5", &MetricsReport::ndcg5}, {"NDCG@10", &MetricsReport::ndcg10},
        {"NDCG@50", &MetricsReport::ndcg50}, {"Spearman", &MetricsReport::spearman}};
    if (auto it = fields.find(key); it != fields.end()) res.metrics.*(it->second) = parse_double(val);
    if (key == "n_queries") res.metrics.n_queries = std::stoull(std::string(val));
    if (key == "n_corpus") res.metrics.n_corpus = std::stoull(std::string(val));
  }

  std::string manifest = "stage\tkey\tstatus\tdigest\tdir\n";
  for (const StageReport& s : res.stages) {
    manifest += s.name + '\t' + s.key + '\t' + (s.rebuilt ? "built" : "up-to-date") + '\t' + s.output_digest + '\t' +
                fs::relative(s.dir, r.root()).string() + '\n';
  }
  write_file(r.root() / "manifest.txt", manifest);
  return res;
}

}  // namespace trajtok
