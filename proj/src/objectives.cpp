#include "nasrl/objectives.hpp"

#include <cmath>
#include <iomanip>
#include <limits>

#include "nasrl/errors.hpp"

namespace nasrl {

void RewardSpec::validate() const {
  if (!(reference_params > 0.0) || !std::isfinite(reference_params)) {
    throw ConfigError("reward: reference_params must be a positive number");
  }
  if (!std::isfinite(beta)) throw ConfigError("reward: beta must be finite");
  for (const auto& t : extra_terms) {
    if (!(t.reference > 0.0)) throw ConfigError("reward: reference of term '" + t.metric + "' must be positive");
  }
}

double scalarize(double accuracy, double params, const RewardSpec& spec) {
  if (!(params > 0.0)) throw ContractViolation("scalarize: params must be positive");
  if (spec.beta == 0.0) return accuracy;
  return accuracy * std::pow(params / spec.reference_params, spec.beta);
}

double scalarize(const MetricVector& m, const RewardSpec& spec) {
  if (m.accuracy < 0.0 || m.accuracy > 1.0) throw ContractViolation("scalarize: accuracy outside [0,1]");
  double r = scalarize(m.accuracy, static_cast<double>(m.params), spec);
  for (const auto& t : spec.extra_terms) {
    const auto it = m.extensions.find(t.metric);
    if (it == m.extensions.end()) throw ContractViolation("scalarize: metric '" + t.metric + "' was not measured");
    if (t.exponent != 0.0) r *= std::pow(std::max(it->second, 1e-12) / t.reference, t.exponent);
  }
  return r;
}

double reward_for(RewardMode mode, const MetricVector& m, const RewardSpec& spec) {
  const double ratio = static_cast<double>(m.params) / spec.reference_params;
  switch (mode) {
    case RewardMode::scalarized: return scalarize(m, spec);
    case RewardMode::max_params: return ratio;
    case RewardMode::min_params: return 1.0 / ratio;
  }
  return 0.0;
}

std::vector<SurfacePoint> reward_surface_grid(const RewardSpec& spec, std::pair<double, double> accuracy_range,
                                              std::pair<double, double> params_range, int resolution) {
  spec.validate();
  if (resolution < 2) throw ConfigError("reward surface: resolution must be >= 2");
  if (!(accuracy_range.first > 0.0 && accuracy_range.second > accuracy_range.first)) {
    throw ConfigError("reward surface: accuracy range must be positive and increasing");
  }
  if (!(params_range.first > 0.0 && params_range.second > params_range.first)) {
    throw ConfigError("reward surface: params range must be positive and increasing");
  }
  auto lin = [resolution](std::pair<double, double> r, int i) {
    return r.first + (r.second - r.first) * static_cast<double>(i) / (resolution - 1);
  };
  std::vector<SurfacePoint> grid;
  grid.reserve(static_cast<std::size_t>(resolution) * resolution);
  for (int i = 0; i < resolution; ++i) {
    const double acc = lin(accuracy_range, i);
    for (int j = 0; j < resolution; ++j) {
      const double params = lin(params_range, j);
      grid.push_back({acc, params, scalarize(acc, params, spec)});
    }
  }
  return grid;
}

void write_surface_csv(std::ostream& os, std::span<const SurfacePoint> grid) {
  os << "acc,params,reward\n";
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& p : grid) os << p.accuracy << ',' << p.params << ',' << p.reward << '\n';
}

double evaluate_accuracy(const SuperNetwork& net, const Genotype& g, std::span<const Batch> batches, BnMode mode) {
  if (batches.empty()) throw ContractViolation("evaluate_accuracy: no validation batches");
  if (mode == BnMode::train) throw ContractViolation("evaluate_accuracy: evaluation must not update statistics");
  const ForwardContext ctx{mode};
  std::size_t correct = 0, total = 0;
  for (const auto& b : batches) {
    const Tensor logits = net.forward_discrete(b.images, g, ctx);
    const int n = logits.dim(0), k = logits.dim(1);
    auto d = logits.data();
    for (int r = 0; r < n; ++r) {
      int best = 0;
      for (int j = 1; j < k; ++j)
        if (d[static_cast<std::size_t>(r) * k + j] > d[static_cast<std::size_t>(r) * k + best]) best = j;
      if (best == b.labels[static_cast<std::size_t>(r)]) ++correct;
    }
    total += static_cast<std::size_t>(n);
  }
  if (total == 0) throw ContractViolation("evaluate_accuracy: validation batches hold no samples");
  return static_cast<double>(correct) / static_cast<double>(total);
}

MetricRegistry::MetricRegistry() {
  add("macs", [](const Genotype& g, const NetworkConfig& c, int h, int w) { return count_macs(g, c, h, w); });
}

void MetricRegistry::add(std::string name, Fn fn) { metrics_[std::move(name)] = std::move(fn); }

double MetricRegistry::measure(const std::string& name, const Genotype& g, const NetworkConfig& config, int height,
                               int width) const {
  const auto it = metrics_.find(name);
  if (it == metrics_.end()) throw ConfigError("unknown metric '" + name + "'");
  return it->second(g, config, height, width);
}

}  // namespace nasrl
