#include "trajtok/config.hpp"

#include <initializer_list>
#include <stdexcept>

#include "trajtok/io.hpp"

namespace trajtok {

using nlohmann::json;

std::string to_string(PoolStream s) {
  switch (s) {
    case PoolStream::Geo: return "GEO";
    case PoolStream::Kin: return "KIN";
    case PoolStream::Sum: return "SUM";
  }
  return "?";
}

PoolStream parse_pool_stream(const std::string& s) {
  if (s == "GEO") return PoolStream::Geo;
  if (s == "KIN") return PoolStream::Kin;
  if (s == "SUM") return PoolStream::Sum;
  throw std::invalid_argument("unknown pooling stream '" + s + "' (expected GEO, KIN or SUM)");
}

namespace {

void check_keys(const json& j, const std::string& section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw std::invalid_argument("config section '" + section + "' must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw std::invalid_argument("unknown config key '" + section + "." + key + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

json to_json(const EncoderConfig& c) {
  return json{{"d_model", c.d_model},
              {"n_heads", c.n_heads},
              {"n_layers_total", c.n_layers_total},
              {"n_fusion", c.n_fusion},
              {"d_ff", c.d_ff},
              {"kin_hidden", c.kin_hidden},
              {"rope_split", {c.rope_split.lat, c.rope_split.lon, c.rope_split.time}},
              {"coord_scale", c.coord_scale},
              {"rope_base", c.rope_base},
              {"max_seq_len", c.max_seq_len},
              {"vocab_size", c.vocab_size},
              {"ln_eps", c.ln_eps}};
}

EncoderConfig encoder_config_from_json(const json& j) {
  check_keys(j, "encoder", {"d_model", "n_heads", "n_layers_total", "n_fusion", "d_ff", "kin_hidden", "rope_split",
                            "coord_scale", "rope_base", "max_seq_len", "vocab_size", "ln_eps"});
  EncoderConfig c;
  read(j, "d_model", c.d_model);
  read(j, "n_heads", c.n_heads);
  read(j, "n_layers_total", c.n_layers_total);
  read(j, "n_fusion", c.n_fusion);
  read(j, "d_ff", c.d_ff);
  read(j, "kin_hidden", c.kin_hidden);
  if (j.contains("rope_split")) {
    const auto v = j.at("rope_split").get<std::vector<int>>();
    if (v.size() != 3) throw std::invalid_argument("encoder.rope_split needs three widths");
    c.rope_split = {v[0], v[1], v[2]};
  }
  read(j, "coord_scale", c.coord_scale);
  read(j, "rope_base", c.rope_base);
  read(j, "max_seq_len", c.max_seq_len);
  read(j, "vocab_size", c.vocab_size);
  read(j, "ln_eps", c.ln_eps);
  return c;
}

json to_json(const RunConfig& c) {
  json j;
  j["data"] = {{"input_csv", c.data.input_csv},
               {"sample_interval_s", c.data.sample_interval_s},
               {"bbox", {c.data.bbox.lat_min, c.data.bbox.lat_max, c.data.bbox.lon_min, c.data.bbox.lon_max}},
               {"max_trajectories", c.data.max_trajectories}};
  j["grid"] = {{"backend", to_string(c.grid.backend)},
               {"r_min", c.grid.r_min},
               {"r_max", c.grid.r_max},
               {"capacity", c.grid.capacity}};
  j["tokenizer"] = {{"dedup", c.tokenizer.dedup},
                    {"max_seq_len", c.tokenizer.max_seq_len},
                    {"v_max", c.tokenizer.v_max},
                    {"v_max_percentile", c.tokenizer.v_max_percentile}};
  j["mask"] = {{"ratio", c.mask.ratio},
               {"avg_span", c.mask.avg_span},
               {"strategy", to_string(c.mask.strategy)},
               {"seed", c.mask.seed}};
  j["encoder"] = to_json(c.encoder);
  j["loss"] = {{"beta_speed", c.loss.beta_speed},
               {"beta_heading", c.loss.beta_heading},
               {"lambda_kin", c.loss.lambda_kin}};
  j["optimizer"] = {{"lr", c.optimizer.lr},
                    {"weight_decay", c.optimizer.weight_decay},
                    {"warmup_frac", c.optimizer.warmup_frac},
                    {"beta1", c.optimizer.beta1},
                    {"beta2", c.optimizer.beta2},
                    {"eps", c.optimizer.eps},
                    {"grad_clip", c.optimizer.grad_clip},
                    {"batch_size", c.optimizer.batch_size},
                    {"steps", c.optimizer.steps}};
  j["eval"] = {{"n_queries", c.eval.n_queries},
               {"n_corpus", c.eval.n_corpus},
               {"bank_seed", c.eval.bank_seed},
               {"pool", to_string(c.eval.pool)}};
  j["trace"] = {{"interval", c.trace.interval},
                {"n_queries", c.trace.n_queries},
                {"n_corpus", c.trace.n_corpus}};
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  return j;
}

RunConfig run_config_from_json(const json& j) {
  check_keys(j, "", {"data", "grid", "tokenizer", "mask", "encoder", "loss", "optimizer", "eval", "trace", "seed",
                     "out_dir"});
  RunConfig c;
  try {
    if (j.contains("data")) {
      const json& d = j.at("data");
      check_keys(d, "data", {"input_csv", "sample_interval_s", "bbox", "max_trajectories"});
      read(d, "input_csv", c.data.input_csv);
      read(d, "sample_interval_s", c.data.sample_interval_s);
      read(d, "max_trajectories", c.data.max_trajectories);
      if (d.contains("bbox")) {
        const auto b = d.at("bbox").get<std::vector<double>>();
        if (b.size() != 4) throw std::invalid_argument("data.bbox needs [lat_min, lat_max, lon_min, lon_max]");
        c.data.bbox = {b[0], b[1], b[2], b[3]};
      }
    }
    if (j.contains("grid")) {
      const json& g = j.at("grid");
      check_keys(g, "grid", {"backend", "r_min", "r_max", "capacity"});
      if (g.contains("backend")) c.grid.backend = parse_backend(g.at("backend").get<std::string>());
      read(g, "r_min", c.grid.r_min);
      read(g, "r_max", c.grid.r_max);
      read(g, "capacity", c.grid.capacity);
    }
    if (j.contains("tokenizer")) {
      const json& t = j.at("tokenizer");
      check_keys(t, "tokenizer", {"dedup", "max_seq_len", "v_max", "v_max_percentile"});
      read(t, "dedup", c.tokenizer.dedup);
      read(t, "max_seq_len", c.tokenizer.max_seq_len);
      read(t, "v_max", c.tokenizer.v_max);
      read(t, "v_max_percentile", c.tokenizer.v_max_percentile);
    }
    if (j.contains("mask")) {
      const json& m = j.at("mask");
      check_keys(m, "mask", {"ratio", "avg_span", "strategy", "seed"});
      read(m, "ratio", c.mask.ratio);
      read(m, "avg_span", c.mask.avg_span);
      if (m.contains("strategy")) c.mask.strategy = parse_mask_strategy(m.at("strategy").get<std::string>());
      read(m, "seed", c.mask.seed);
    }
    if (j.contains("encoder")) c.encoder = encoder_config_from_json(j.at("encoder"));
    if (j.contains("loss")) {
      const json& l = j.at("loss");
      check_keys(l, "loss", {"beta_speed", "beta_heading", "lambda_kin"});
      read(l, "beta_speed", c.loss.beta_speed);
      read(l, "beta_heading", c.loss.beta_heading);
      read(l, "lambda_kin", c.loss.lambda_kin);
    }
    if (j.contains("optimizer")) {
      const json& o = j.at("optimizer");
      check_keys(o, "optimizer",
                 {"lr", "weight_decay", "warmup_frac", "beta1", "beta2", "eps", "grad_clip", "batch_size", "steps"});
      read(o, "lr", c.optimizer.lr);
      read(o, "weight_decay", c.optimizer.weight_decay);
      read(o, "warmup_frac", c.optimizer.warmup_frac);
      read(o, "beta1", c.optimizer.beta1);
      read(o, "beta2", c.optimizer.beta2);
      read(o, "eps", c.optimizer.eps);
      read(o, "grad_clip", c.optimizer.grad_clip);
      read(o, "batch_size", c.optimizer.batch_size);
      read(o, "steps", c.optimizer.steps);
    }
    if (j.contains("eval")) {
      const json& e = j.at("eval");
      check_keys(e, "eval", {"n_queries", "n_corpus", "bank_seed", "pool"});
      read(e, "n_queries", c.eval.n_queries);
      read(e, "n_corpus", c.eval.n_corpus);
      read(e, "bank_seed", c.eval.bank_seed);
      if (e.contains("pool")) c.eval.pool = parse_pool_stream(e.at("pool").get<std::string>());
    }
    if (j.contains("trace")) {
      const json& t = j.at("trace");
      check_keys(t, "trace", {"interval", "n_queries", "n_corpus"});
      read(t, "interval", c.trace.interval);
      read(t, "n_queries", c.trace.n_queries);
      read(t, "n_corpus", c.trace.n_corpus);
    }
    read(j, "seed", c.seed);
    read(j, "out_dir", c.out_dir);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("bad config value: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

std::string config_echo(const RunConfig& c) {
  // The output location does not affect any artifact's content.
  json j = to_json(c);
  j.erase("out_dir");
  return j.dump();
}

}  // namespace trajtok
