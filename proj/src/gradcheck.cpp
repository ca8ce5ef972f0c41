#include "trajtok/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "trajtok/rng.hpp"

namespace trajtok {

namespace {

double batch_joint(std::span<const MaskedExample> batch, const Params& p, const EncoderConfig& cfg,
                   const LossWeights& w) {
  double total = 0.0;
  for (const auto& ex : batch) total += example_loss(*ex.input, ex.mask, p, cfg, w).joint;
  return total / static_cast<double>(batch.size());
}

}  // namespace

GradCheckReport gradient_check(const Params& params, std::span<const MaskedExample> batch, const EncoderConfig& cfg,
                               const LossWeights& w, std::size_t coords_per_group, double eps,
                               std::uint64_t seed) {
  Params grad = zero_params(cfg);
  batch_loss_and_grad_serial(batch, params, cfg, w, grad);

  std::vector<std::pair<std::string, const Mat*>> analytic;
  grad.for_each([&](const std::string& name, const Mat& m, bool) { analytic.emplace_back(name, &m); });

  Params probe = params;
  GradCheckReport report;
  std::size_t group = 0;
  probe.for_each([&](const std::string& name, Mat& m, bool) {
    const Mat& g = *analytic[group].second;
    CounterRng rng(seed, group++);
    std::vector<Eigen::Index> picks(static_cast<std::size_t>(m.size()));
    for (std::size_t i = 0; i < picks.size(); ++i) picks[i] = static_cast<Eigen::Index>(i);
    rng.shuffle(picks);
    if (picks.size() > coords_per_group) picks.resize(coords_per_group);
    for (Eigen::Index idx : picks) {
      const double saved = m.data()[idx];
      m.data()[idx] = saved + eps;
      const double up = batch_joint(batch, probe, cfg, w);
      m.data()[idx] = saved - eps;
      const double down = batch_joint(batch, probe, cfg, w);
      m.data()[idx] = saved;
      GradCheckEntry e{name, idx, g.data()[idx], (up - down) / (2.0 * eps), 0.0};
      e.rel_error = std::abs(e.analytic - e.numeric) / std::max(1.0, std::abs(e.numeric));
      report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
      report.entries.push_back(std::move(e));
    }
    ++report.groups;
  });
  return report;
}

std::string format_gradcheck(const GradCheckReport& r, double tolerance) {
  std::ostringstream os;
  os.precision(6);
  os << "groups=" << r.groups << '\n'
     << "coordinates=" << r.entries.size() << '\n'
     << "max_rel_error=" << r.max_rel_error << '\n'
     << "tolerance=" << tolerance << '\n'
     << "status=" << (r.max_rel_error <= tolerance ? "PASS" : "FAIL") << '\n';
  return os.str();
}

}  // namespace trajtok
