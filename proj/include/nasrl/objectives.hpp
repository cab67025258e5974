#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nasrl/data.hpp"
#include "nasrl/network.hpp"

namespace nasrl {

struct MetricVector {
  double accuracy = 0.0;
  std::size_t params = 1;
  std::map<std::string, double> extensions;
};

// Extra multiplicative factor (value / reference)^exponent on a named
// extension metric.
struct RewardTerm {
  std::string metric;
  double reference = 1.0;
  double exponent = 0.0;
};

// R = Acc · (Params / P)^β · Π_terms (m / ref)^e
struct RewardSpec {
  double reference_params = 1.0;
  double beta = -0.25;
  std::vector<RewardTerm> extra_terms;

  void validate() const;
};

double scalarize(double accuracy, double params, const RewardSpec& spec);
double scalarize(const MetricVector& m, const RewardSpec& spec);

// Which objective drives the controller.
enum class RewardMode {
  scalarized,  // Acc · (Params/P)^β
  max_params,  // Params / P
  min_params,  // (Params / P)^-1
};

double reward_for(RewardMode mode, const MetricVector& m, const RewardSpec& spec);

struct SurfacePoint {
  double accuracy;
  double params;
  double reward;
};

// resolution × resolution samples, accuracy-major, both axes linearly spaced
// with inclusive endpoints.
std::vector<SurfacePoint> reward_surface_grid(const RewardSpec& spec, std::pair<double, double> accuracy_range,
                                              std::pair<double, double> params_range, int resolution);

// Header `acc,params,reward`, values printed with round-trip precision.
void write_surface_csv(std::ostream& os, std::span<const SurfacePoint> grid);

// Top-1 accuracy of A(g) over the batches (ties resolve to the lowest class).
// Read-only over the network when mode is batch_stats or eval.
double evaluate_accuracy(const SuperNetwork& net, const Genotype& g, std::span<const Batch> batches,
                         BnMode mode = BnMode::batch_stats);

// Named measurements of a genotype beyond accuracy and parameter count.
// "macs" (multiply-accumulates for one image) is registered by default.
class MetricRegistry {
 public:
  using Fn = std::function<double(const Genotype&, const NetworkConfig&, int height, int width)>;

  MetricRegistry();
  void add(std::string name, Fn fn);
  bool contains(const std::string& name) const { return metrics_.count(name) > 0; }
  double measure(const std::string& name, const Genotype& g, const NetworkConfig& config, int height,
                 int width) const;

 private:
  std::map<std::string, Fn> metrics_;
};

}  // namespace nasrl
