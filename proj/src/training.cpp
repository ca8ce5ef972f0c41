#include "trajtok/training.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <map>
#include <numbers>
#include <sstream>

#include "json.hpp"
#include "trajtok/config.hpp"
#include "trajtok/hash.hpp"
#include "trajtok/io.hpp"
#include "trajtok/parallel.hpp"
#include "trajtok/rng.hpp"

namespace trajtok {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

double learning_rate_at(const OptimizerConfig& opt, std::size_t step) {
  if (opt.steps == 0) return 0.0;
  const double total = static_cast<double>(opt.steps);
  const double warmup = std::floor(opt.warmup_frac * total);
  const double s = static_cast<double>(step);
  if (s < warmup) return opt.lr * (s + 1.0) / warmup;
  const double span = std::max(1.0, total - warmup);
  const double progress = std::min(1.0, (s - warmup) / span);
  return opt.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamW::AdamW(const OptimizerConfig& opt, const EncoderConfig& cfg)
    : opt_(opt), m_(zero_params(cfg)), v_(zero_params(cfg)) {}

void AdamW::step(Params& params, const Params& grad, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));

  std::vector<Mat*> p_list, m_list, v_list;
  std::vector<const Mat*> g_list;
  std::vector<bool> decays;
  params.for_each([&](const std::string&, Mat& m, bool d) {
    p_list.push_back(&m);
    decays.push_back(d);
  });
  grad.for_each([&](const std::string&, const Mat& m, bool) { g_list.push_back(&m); });
  m_.for_each([&](const std::string&, Mat& m, bool) { m_list.push_back(&m); });
  v_.for_each([&](const std::string&, Mat& m, bool) { v_list.push_back(&m); });

  for (std::size_t k = 0; k < p_list.size(); ++k) {
    Mat& p = *p_list[k];
    const Mat& g = *g_list[k];
    Mat& m = *m_list[k];
    Mat& v = *v_list[k];
    m = opt_.beta1 * m + (1.0 - opt_.beta1) * g;
    v = opt_.beta2 * v + (1.0 - opt_.beta2) * g.cwiseProduct(g);
    const double wd = decays[k] ? opt_.weight_decay : 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const double mh = m.data()[i] / bc1;
      const double vh = v.data()[i] / bc2;
      p.data()[i] -= lr * (mh / (std::sqrt(vh) + opt_.eps) + wd * p.data()[i]);
    }
  }
}

double global_norm(const Params& g) {
  double s = 0.0;
  g.for_each([&](const std::string&, const Mat& m, bool) { s += m.squaredNorm(); });
  return std::sqrt(s);
}

EvalResult evaluate_masked(std::span<const EncoderInput> data, const Params& params, const EncoderConfig& cfg,
                           const MaskSpec& spec, const LossWeights& w) {
  struct Item {
    LossBreakdown loss;
    std::vector<TokenId> targets;
    bool used = false;
  };
  std::vector<Item> items(data.size());
  parallel::parallel_for(0, static_cast<std::ptrdiff_t>(data.size()), [&](std::ptrdiff_t k) {
    const auto i = static_cast<std::size_t>(k);
    const EncoderInput& in = data[i];
    const std::span<const TokenId> ids(in.ids.data(), in.valid_length);
    const MaskSet ms = sample_mask(ids, spec, i);
    if (ms.positions.empty()) return;
    items[i].loss = example_loss(in, ms.positions, params, cfg, w);
    for (std::size_t p : ms.positions) items[i].targets.push_back(in.ids[p]);
    items[i].used = true;
  });

  EvalResult r;
  std::map<TokenId, std::size_t> freq;
  std::size_t correct = 0;
  for (const Item& it : items) {
    if (!it.used) continue;
    ++r.examples;
    r.joint += it.loss.joint;
    r.geom += it.loss.geom;
    r.kin += it.loss.kin;
    r.masked += it.loss.masked;
    correct += it.loss.correct;
    for (TokenId t : it.targets) ++freq[t];
  }
  if (r.examples == 0) return r;
  const double n = static_cast<double>(r.examples);
  r.joint /= n;
  r.geom /= n;
  r.kin /= n;
  std::size_t top = 0;
  for (const auto& [id, c] : freq) top = std::max(top, c);
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.masked);
  r.majority_frequency = static_cast<double>(top) / static_cast<double>(r.masked);
  return r;
}

TrainResult train_toy(std::span<const EncoderInput> data, const EncoderConfig& cfg, const MaskSpec& spec,
                      const LossWeights& w, const OptimizerConfig& opt, std::uint64_t seed,
                      const TrainOptions& options, const Params* initial) {
  cfg.validate();
  spec.validate();
  if (data.empty()) throw std::invalid_argument("train_toy: empty training set");
  if (opt.batch_size == 0) throw std::invalid_argument("train_toy: batch_size must be positive");

  // Only sequences that receive at least one mask contribute.
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (mask_budget(spec.ratio, data[i].valid_length) > 0) usable.push_back(i);
  }
  if (usable.empty()) throw std::invalid_argument("train_toy: every sequence is too short to mask");

  TrainResult out;
  out.params = initial ? *initial : init_params(cfg, seed);
  AdamW adam(opt, cfg);
  Params grad = zero_params(cfg);

  const std::size_t N = usable.size();
  std::vector<std::size_t> perm;
  std::uint64_t perm_epoch = ~std::uint64_t{0};

  for (std::size_t step = 0; step < opt.steps; ++step) {
    std::vector<MaskedExample> batch;
    batch.reserve(opt.batch_size);
    for (std::size_t b = 0; b < opt.batch_size; ++b) {
      const std::uint64_t flat = static_cast<std::uint64_t>(step) * opt.batch_size + b;
      const std::uint64_t epoch = flat / N;
      if (epoch != perm_epoch) {
        perm.resize(N);
        for (std::size_t i = 0; i < N; ++i) perm[i] = usable[i];
        CounterRng(seed, epoch).shuffle(perm);
        perm_epoch = epoch;
      }
      const std::size_t idx = perm[flat % N];
      const EncoderInput& in = data[idx];
      const std::span<const TokenId> ids(in.ids.data(), in.valid_length);
      MaskSet ms = sample_mask(ids, spec, (epoch << 32) | static_cast<std::uint64_t>(idx));
      batch.push_back({&in, std::move(ms.positions)});
    }

    scale(grad, 0.0);
    const LossBreakdown loss = batch_loss_and_grad(batch, out.params, cfg, w, grad);
    if (!std::isfinite(loss.joint) || !all_finite(grad)) {
      throw DivergenceError("training diverged at step " + std::to_string(step));
    }
    if (opt.grad_clip > 0.0) {
      const double norm = global_norm(grad);
      if (norm > opt.grad_clip) scale(grad, opt.grad_clip / norm);
    }
    const double lr = learning_rate_at(opt, step);
    adam.step(out.params, grad, lr);
    if (!all_finite(out.params)) throw DivergenceError("parameters not finite after step " + std::to_string(step));

    TrainRecord rec;
    rec.step = step + 1;
    rec.lr = lr;
    rec.joint = loss.joint;
    rec.geom = loss.geom;
    rec.kin = loss.kin;
    if (options.eval_interval > 0 && !options.eval_set.empty() && rec.step % options.eval_interval == 0) {
      rec.accuracy = evaluate_masked(options.eval_set, out.params, cfg, spec, w).accuracy;
    }
    out.trace.push_back(rec);
    if (options.checkpoint_interval > 0 && options.on_checkpoint && rec.step % options.checkpoint_interval == 0) {
      options.on_checkpoint(rec.step, out.params);
    }
  }
  return out;
}

std::string format_trace_csv(std::span<const TrainRecord> trace) {
  std::string s = "step,lr,joint,geom,kin,accuracy\n";
  for (const TrainRecord& r : trace) {
    s += std::to_string(r.step) + ',' + format_double(r.lr) + ',' + format_double(r.joint) + ',' +
         format_double(r.geom) + ',' + format_double(r.kin) + ',' +
         (std::isnan(r.accuracy) ? std::string() : format_double(r.accuracy)) + '\n';
  }
  return s;
}

// ---------------------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'T', 'T', 'C', 'K', 'P', 'T', 0, 0};

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_string(std::string& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  explicit Reader(std::string_view b) : b_(b) {}
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(b_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw CheckpointError("checkpoint truncated");
  }
  std::string_view b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ck) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, 0);
  put<std::uint64_t>(out, ck.step);
  put<std::uint64_t>(out, ck.seed);
  nlohmann::json header;
  header["encoder"] = to_json(ck.cfg);
  header["run"] = ck.config_echo;
  put_string(out, header.dump());

  std::uint32_t count = 0;
  ck.params.for_each([&](const std::string&, const Mat&, bool) { ++count; });
  put<std::uint32_t>(out, count);
  ck.params.for_each([&](const std::string& name, const Mat& m, bool) {
    put_string(out, name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
    out.append(reinterpret_cast<const char*>(m.data()), sizeof(double) * static_cast<std::size_t>(m.size()));
  });
  put<std::uint64_t>(out, fnv1a64(out));
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("not a checkpoint file");
  }
  Reader r(std::string_view(bytes).substr(sizeof(kMagic)));
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  if (bytes.size() < sizeof(kMagic) + 8 + 8) throw CheckpointError("checkpoint truncated");
  const std::string_view body(bytes.data(), bytes.size() - 8);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  if (fnv1a64(body) != stored) throw CheckpointError("checkpoint checksum mismatch");

  Reader br(body.substr(sizeof(kMagic) + 8));
  Checkpoint ck;
  ck.step = br.get<std::uint64_t>();
  ck.seed = br.get<std::uint64_t>();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(br.get_string());
    ck.cfg = encoder_config_from_json(header.at("encoder"));
    ck.config_echo = header.at("run").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint header: ") + e.what());
  }
  ck.params = zero_params(ck.cfg);
  const auto count = br.get<std::uint32_t>();
  std::uint32_t expected = 0;
  ck.params.for_each([&](const std::string&, const Mat&, bool) { ++expected; });
  if (count != expected) throw CheckpointError("checkpoint tensor count does not match its config");
  ck.params.for_each([&](const std::string& name, Mat& m, bool) {
    const std::string got = br.get_string();
    if (got != name) throw CheckpointError("expected tensor " + name + ", found " + got);
    const auto rows = br.get<std::uint32_t>();
    const auto cols = br.get<std::uint32_t>();
    if (rows != m.rows() || cols != m.cols()) throw CheckpointError("shape mismatch for tensor " + name);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = br.get<double>();
  });
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  write_file(path, serialize_checkpoint(ck));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

}  // namespace trajtok
