#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace nasrl {

enum class OpKind {
  none,
  skip_connect,
  sep_conv_3x3,
  sep_conv_5x5,
  sep_conv_7x7,
  dil_conv_3x3,
  dil_conv_5x5,
  conv_1x1,
  conv_3x3,
  conv_3x1_1x3,
  max_pool_3x3,
  avg_pool_3x3,
  max_pool_5x5,
  max_pool_7x7,
};

std::string_view op_name(OpKind kind);
std::optional<OpKind> op_from_name(std::string_view name);

// Candidate catalogs in their canonical order; α indices refer to this order
// (or to the surviving subsequence after shrinking).
const std::vector<OpKind>& normal_catalog();
const std::vector<OpKind>& reduction_catalog();

enum class CellType { normal, reduction };

std::string_view cell_type_name(CellType type);

struct CellSpec {
  int intermediate_nodes = 4;
  int input_nodes = 2;
  int multiplier = 4;  // trailing intermediate nodes concatenated into the cell output

  void validate() const;
};

// Edge (from, to) in node numbering: inputs are 0 and 1, intermediates follow.
struct EdgeId {
  int from;
  int to;
  friend bool operator==(const EdgeId&, const EdgeId&) = default;
};

// Edges in canonical order: grouped by destination node, then by source.
std::vector<EdgeId> cell_edges(const CellSpec& spec);

// Per-edge candidate lists for one cell type.
using EdgeCandidates = std::vector<std::vector<OpKind>>;

struct CandidateSets {
  EdgeCandidates normal;
  EdgeCandidates reduction;

  static CandidateSets full(const CellSpec& spec, const std::vector<OpKind>& normal_ops,
                            const std::vector<OpKind>& reduction_ops);

  const EdgeCandidates& of(CellType t) const { return t == CellType::normal ? normal : reduction; }
  EdgeCandidates& of(CellType t) { return t == CellType::normal ? normal : reduction; }
};

// Architecture parameters for one cell type: one real vector per edge, aligned
// with that edge's candidate list.
struct AlphaTable {
  std::vector<std::vector<double>> edges;

  static AlphaTable zeros(const EdgeCandidates& candidates);
  std::size_t edge_count() const noexcept { return edges.size(); }
  friend bool operator==(const AlphaTable&, const AlphaTable&) = default;
};

struct ArchAlphas {
  AlphaTable normal;
  AlphaTable reduction;

  static ArchAlphas zeros(const CandidateSets& sets) {
    return {AlphaTable::zeros(sets.normal), AlphaTable::zeros(sets.reduction)};
  }
  const AlphaTable& of(CellType t) const { return t == CellType::normal ? normal : reduction; }
  AlphaTable& of(CellType t) { return t == CellType::normal ? normal : reduction; }
  friend bool operator==(const ArchAlphas&, const ArchAlphas&) = default;
};

// One chosen candidate index per edge; kPruned marks an edge with no operation.
struct Genotype {
  static constexpr int kPruned = -1;

  std::vector<int> normal;
  std::vector<int> reduction;

  const std::vector<int>& of(CellType t) const { return t == CellType::normal ? normal : reduction; }
  std::vector<int>& of(CellType t) { return t == CellType::normal ? normal : reduction; }
  friend bool operator==(const Genotype&, const Genotype&) = default;
};

// Throws InvalidGenotype if an index falls outside its edge's candidate list.
void validate_genotype(const Genotype& g, const CandidateSets& sets);

// Chosen op per edge (none for pruned edges).
std::vector<OpKind> resolve_ops(const std::vector<int>& choices, const EdgeCandidates& candidates);

// Per-edge argmax of α (lowest index on ties). Edges whose winner is `none`
// are pruned. No per-node indegree cap is applied.
Genotype derive_genotype(const ArchAlphas& alpha, const CandidateSets& sets);

struct ShrinkResult {
  CandidateSets sets;
  ArchAlphas alpha;  // zeros, aligned with the new sets
};

// Keeps the `keep_*` highest-α candidates per edge, preserving their relative
// order. Ties are resolved towards the lower index.
ShrinkResult shrink_opset(const ArchAlphas& alpha, const CandidateSets& sets, int keep_normal, int keep_reduction);

// Indices (ascending) of the `keep` largest entries of one α vector.
std::vector<int> top_k_indices(std::span<const double> alpha, int keep);

}  // namespace nasrl
