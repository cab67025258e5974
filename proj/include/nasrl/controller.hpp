#pragma once

#include <span>
#include <vector>

#include "nasrl/rng.hpp"
#include "nasrl/search_space.hpp"

namespace nasrl {

// Max-subtracted softmax.
std::vector<double> softmax_probs(std::span<const double> alpha);
std::vector<std::vector<double>> table_probs(const AlphaTable& table);

// Inverse-CDF draw of one index from a probability vector.
int sample_index(std::span<const double> probs, Rng& rng);

// One independent multinomial draw per edge, normal edges first.
Genotype sample_genotype(const ArchAlphas& alpha, Rng& rng);

// Σ over edges of log softmax(α_edge)[choice]. Throws ContractViolation for a
// pruned or out-of-range choice.
double log_prob(const Genotype& g, const ArchAlphas& alpha);

// ∇_α log π(g): per edge, 1{k = g_e} - p_k.
ArchAlphas score_gradient(const Genotype& g, const ArchAlphas& alpha);

// Exponential moving average of batch-mean rewards.
struct BaselineState {
  double value = 0.0;
  double decay = 0.9;
  bool initialized = false;
};

// First call sets value = mean; later calls blend with `decay`.
void baseline_update(BaselineState& baseline, double batch_mean_reward);

struct SampleBatch {
  std::vector<Genotype> genotypes;
  std::vector<double> rewards;
  std::vector<double> log_probs;

  std::size_t size() const noexcept { return genotypes.size(); }
  double mean_reward() const;
};

struct ReinforceOptions {
  double learning_rate = 0.05;
  // Without a baseline the advantage is the raw reward.
  bool use_baseline = true;
};

// α <- α + lr · (1/M) Σ_m (R_m - b) ∇_α log π(N_m), then the baseline
// absorbs the batch mean. On first use the baseline is seeded with the batch
// mean before the advantages are formed. Returns the gradient estimate.
ArchAlphas reinforce_update(const SampleBatch& batch, BaselineState& baseline, ArchAlphas& alpha,
                            const ReinforceOptions& options);

}  // namespace nasrl
