#include "nasrl/controller.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nasrl/errors.hpp"

namespace nasrl {

std::vector<double> softmax_probs(std::span<const double> alpha) {
  if (alpha.empty()) throw ContractViolation("softmax_probs: empty vector");
  const double mx = *std::max_element(alpha.begin(), alpha.end());
  std::vector<double> p(alpha.size());
  double z = 0.0;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    p[i] = std::exp(alpha[i] - mx);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

std::vector<std::vector<double>> table_probs(const AlphaTable& table) {
  std::vector<std::vector<double>> out;
  out.reserve(table.edges.size());
  for (const auto& a : table.edges) out.push_back(softmax_probs(a));
  return out;
}

int sample_index(std::span<const double> probs, Rng& rng) {
  const double u = uniform01(rng);
  double cumulative = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    cumulative += probs[i];
    if (u < cumulative) return static_cast<int>(i);
  }
  // Rounding left u above the final partial sum: take the last non-zero entry.
  for (std::size_t i = probs.size(); i-- > 0;)
    if (probs[i] > 0.0) return static_cast<int>(i);
  return static_cast<int>(probs.size()) - 1;
}

Genotype sample_genotype(const ArchAlphas& alpha, Rng& rng) {
  Genotype g;
  for (CellType t : {CellType::normal, CellType::reduction}) {
    auto& out = g.of(t);
    for (const auto& a : alpha.of(t).edges) out.push_back(sample_index(softmax_probs(a), rng));
  }
  return g;
}

namespace {

void check_choices(const Genotype& g, const ArchAlphas& alpha) {
  for (CellType t : {CellType::normal, CellType::reduction}) {
    const auto& choices = g.of(t);
    const auto& table = alpha.of(t);
    if (choices.size() != table.edges.size()) {
      throw ContractViolation("log_prob: genotype and α disagree on the " + std::string(cell_type_name(t)) +
                              " edge count");
    }
    for (std::size_t e = 0; e < choices.size(); ++e) {
      if (choices[e] < 0 || choices[e] >= static_cast<int>(table.edges[e].size())) {
        throw ContractViolation("log_prob: " + std::string(cell_type_name(t)) + " edge " + std::to_string(e) +
                                " has invalid choice " + std::to_string(choices[e]));
      }
    }
  }
}

}  // namespace

double log_prob(const Genotype& g, const ArchAlphas& alpha) {
  check_choices(g, alpha);
  double total = 0.0;
  for (CellType t : {CellType::normal, CellType::reduction}) {
    const auto& choices = g.of(t);
    const auto& table = alpha.of(t);
    for (std::size_t e = 0; e < choices.size(); ++e) {
      const auto& a = table.edges[e];
      const double mx = *std::max_element(a.begin(), a.end());
      double z = 0.0;
      for (double v : a) z += std::exp(v - mx);
      total += a[static_cast<std::size_t>(choices[e])] - mx - std::log(z);
    }
  }
  return total;
}

ArchAlphas score_gradient(const Genotype& g, const ArchAlphas& alpha) {
  check_choices(g, alpha);
  ArchAlphas grad = alpha;
  for (CellType t : {CellType::normal, CellType::reduction}) {
    const auto& choices = g.of(t);
    auto& table = grad.of(t);
    for (std::size_t e = 0; e < choices.size(); ++e) {
      auto p = softmax_probs(alpha.of(t).edges[e]);
      for (std::size_t k = 0; k < p.size(); ++k) {
        table.edges[e][k] = (static_cast<int>(k) == choices[e] ? 1.0 : 0.0) - p[k];
      }
    }
  }
  return grad;
}

void baseline_update(BaselineState& baseline, double batch_mean_reward) {
  if (!std::isfinite(batch_mean_reward)) throw ContractViolation("baseline_update: non-finite reward");
  if (!baseline.initialized) {
    baseline.value = batch_mean_reward;
    baseline.initialized = true;
    return;
  }
  baseline.value = baseline.decay * baseline.value + (1.0 - baseline.decay) * batch_mean_reward;
}

double SampleBatch::mean_reward() const {
  if (rewards.empty()) throw ContractViolation("SampleBatch: no rewards");
  return std::accumulate(rewards.begin(), rewards.end(), 0.0) / static_cast<double>(rewards.size());
}

ArchAlphas reinforce_update(const SampleBatch& batch, BaselineState& baseline, ArchAlphas& alpha,
                            const ReinforceOptions& options) {
  const std::size_t m = batch.size();
  if (m == 0) throw ContractViolation("reinforce_update: empty sample batch");
  if (batch.rewards.size() != m || batch.log_probs.size() != m) {
    throw ContractViolation("reinforce_update: genotypes, rewards and log_probs differ in length");
  }
  const double mean = batch.mean_reward();
  const bool seeded_now = options.use_baseline && !baseline.initialized;
  if (seeded_now) baseline_update(baseline, mean);
  const double b = options.use_baseline ? baseline.value : 0.0;

  ArchAlphas estimate = alpha;
  for (CellType t : {CellType::normal, CellType::reduction})
    for (auto& v : estimate.of(t).edges) std::fill(v.begin(), v.end(), 0.0);

  for (std::size_t i = 0; i < m; ++i) {
    const double advantage = batch.rewards[i] - b;
    if (advantage == 0.0) continue;
    const ArchAlphas score = score_gradient(batch.genotypes[i], alpha);
    for (CellType t : {CellType::normal, CellType::reduction}) {
      auto& dst = estimate.of(t).edges;
      const auto& src = score.of(t).edges;
      for (std::size_t e = 0; e < dst.size(); ++e)
        for (std::size_t k = 0; k < dst[e].size(); ++k) dst[e][k] += advantage * src[e][k] / static_cast<double>(m);
    }
  }
  for (CellType t : {CellType::normal, CellType::reduction}) {
    auto& a = alpha.of(t).edges;
    const auto& d = estimate.of(t).edges;
    for (std::size_t e = 0; e < a.size(); ++e)
      for (std::size_t k = 0; k < a[e].size(); ++k) a[e][k] += options.learning_rate * d[e][k];
  }
  if (options.use_baseline && !seeded_now) baseline_update(baseline, mean);
  return estimate;
}

}  // namespace nasrl
