#include "nasrl/search_space.hpp"

#include <algorithm>
#include <array>
#include <numeric>

#include "nasrl/errors.hpp"

namespace nasrl {

namespace {

constexpr std::array<std::pair<OpKind, std::string_view>, 14> kOpNames{{
    {OpKind::none, "none"},
    {OpKind::skip_connect, "skip_connect"},
    {OpKind::sep_conv_3x3, "sep_conv_3x3"},
    {OpKind::sep_conv_5x5, "sep_conv_5x5"},
    {OpKind::sep_conv_7x7, "sep_conv_7x7"},
    {OpKind::dil_conv_3x3, "dil_conv_3x3"},
    {OpKind::dil_conv_5x5, "dil_conv_5x5"},
    {OpKind::conv_1x1, "conv_1x1"},
    {OpKind::conv_3x3, "conv_3x3"},
    {OpKind::conv_3x1_1x3, "conv_3x1_1x3"},
    {OpKind::max_pool_3x3, "max_pool_3x3"},
    {OpKind::avg_pool_3x3, "avg_pool_3x3"},
    {OpKind::max_pool_5x5, "max_pool_5x5"},
    {OpKind::max_pool_7x7, "max_pool_7x7"},
}};

}  // namespace

std::string_view op_name(OpKind kind) {
  for (const auto& [k, name] : kOpNames)
    if (k == kind) return name;
  return "?";
}

std::optional<OpKind> op_from_name(std::string_view name) {
  for (const auto& [k, n] : kOpNames)
    if (n == name) return k;
  return std::nullopt;
}

const std::vector<OpKind>& normal_catalog() {
  static const std::vector<OpKind> ops{OpKind::none,         OpKind::skip_connect, OpKind::sep_conv_3x3,
                                       OpKind::sep_conv_5x5, OpKind::sep_conv_7x7, OpKind::dil_conv_3x3,
                                       OpKind::dil_conv_5x5, OpKind::conv_1x1,     OpKind::conv_3x3,
                                       OpKind::conv_3x1_1x3};
  return ops;
}

const std::vector<OpKind>& reduction_catalog() {
  static const std::vector<OpKind> ops{OpKind::none,         OpKind::skip_connect, OpKind::max_pool_3x3,
                                       OpKind::avg_pool_3x3, OpKind::max_pool_5x5, OpKind::max_pool_7x7};
  return ops;
}

std::string_view cell_type_name(CellType type) { return type == CellType::normal ? "normal" : "reduction"; }

void CellSpec::validate() const {
  if (input_nodes != 2) throw ConfigError("cell: exactly two input nodes are supported");
  if (intermediate_nodes < 1) throw ConfigError("cell: need at least one intermediate node");
  if (multiplier < 1 || multiplier > intermediate_nodes) {
    throw ConfigError("cell: multiplier must lie in [1, intermediate_nodes]");
  }
}

std::vector<EdgeId> cell_edges(const CellSpec& spec) {
  std::vector<EdgeId> edges;
  for (int j = 0; j < spec.intermediate_nodes; ++j) {
    const int to = spec.input_nodes + j;
    for (int from = 0; from < to; ++from) edges.push_back({from, to});
  }
  return edges;
}

CandidateSets CandidateSets::full(const CellSpec& spec, const std::vector<OpKind>& normal_ops,
                                  const std::vector<OpKind>& reduction_ops) {
  if (normal_ops.empty() || reduction_ops.empty()) throw ConfigError("candidate operation list is empty");
  const auto n = cell_edges(spec).size();
  return {EdgeCandidates(n, normal_ops), EdgeCandidates(n, reduction_ops)};
}

AlphaTable AlphaTable::zeros(const EdgeCandidates& candidates) {
  AlphaTable t;
  t.edges.reserve(candidates.size());
  for (const auto& c : candidates) t.edges.emplace_back(c.size(), 0.0);
  return t;
}

void validate_genotype(const Genotype& g, const CandidateSets& sets) {
  for (CellType t : {CellType::normal, CellType::reduction}) {
    const auto& choices = g.of(t);
    const auto& cands = sets.of(t);
    if (choices.size() != cands.size()) {
      throw InvalidGenotype(std::string(cell_type_name(t)) + " genotype has " + std::to_string(choices.size()) +
                            " edges, network has " + std::to_string(cands.size()));
    }
    for (std::size_t e = 0; e < choices.size(); ++e) {
      const int c = choices[e];
      if (c != Genotype::kPruned && (c < 0 || c >= static_cast<int>(cands[e].size()))) {
        throw InvalidGenotype(std::string(cell_type_name(t)) + " edge " + std::to_string(e) + " selects index " +
                              std::to_string(c) + " but only " + std::to_string(cands[e].size()) +
                              " candidates remain");
      }
    }
  }
}

std::vector<OpKind> resolve_ops(const std::vector<int>& choices, const EdgeCandidates& candidates) {
  std::vector<OpKind> ops(choices.size(), OpKind::none);
  for (std::size_t e = 0; e < choices.size(); ++e) {
    if (choices[e] != Genotype::kPruned) ops[e] = candidates.at(e).at(static_cast<std::size_t>(choices[e]));
  }
  return ops;
}

namespace {

int argmax_lowest(std::span<const double> v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

void check_alignment(const AlphaTable& alpha, const EdgeCandidates& cands, CellType t) {
  if (alpha.edges.size() != cands.size()) {
    throw ContractViolation(std::string(cell_type_name(t)) + " α table edge count does not match candidates");
  }
  for (std::size_t e = 0; e < cands.size(); ++e) {
    if (alpha.edges[e].size() != cands[e].size()) {
      throw ContractViolation(std::string(cell_type_name(t)) + " α vector " + std::to_string(e) +
                              " misaligned with its candidate list");
    }
  }
}

}  // namespace

Genotype derive_genotype(const ArchAlphas& alpha, const CandidateSets& sets) {
  Genotype g;
  for (CellType t : {CellType::normal, CellType::reduction}) {
    const auto& table = alpha.of(t);
    const auto& cands = sets.of(t);
    check_alignment(table, cands, t);
    auto& out = g.of(t);
    out.resize(cands.size());
    for (std::size_t e = 0; e < cands.size(); ++e) {
      const int best = argmax_lowest(table.edges[e]);
      out[e] = cands[e][best] == OpKind::none ? Genotype::kPruned : best;
    }
  }
  return g;
}

std::vector<int> top_k_indices(std::span<const double> alpha, int keep) {
  if (keep < 1) throw ConfigError("shrink: keep must be at least 1");
  if (keep > static_cast<int>(alpha.size())) {
    throw ConfigError("shrink: keep " + std::to_string(keep) + " exceeds candidate count " +
                      std::to_string(alpha.size()));
  }
  std::vector<int> order(alpha.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return alpha[a] > alpha[b]; });
  order.resize(static_cast<std::size_t>(keep));
  std::sort(order.begin(), order.end());
  return order;
}

ShrinkResult shrink_opset(const ArchAlphas& alpha, const CandidateSets& sets, int keep_normal, int keep_reduction) {
  ShrinkResult r;
  for (CellType t : {CellType::normal, CellType::reduction}) {
    const auto& table = alpha.of(t);
    const auto& cands = sets.of(t);
    check_alignment(table, cands, t);
    const int keep = t == CellType::normal ? keep_normal : keep_reduction;
    auto& out = r.sets.of(t);
    out.resize(cands.size());
    for (std::size_t e = 0; e < cands.size(); ++e) {
      for (int idx : top_k_indices(table.edges[e], keep)) out[e].push_back(cands[e][idx]);
    }
  }
  r.alpha = ArchAlphas::zeros(r.sets);
  return r;
}

}  // namespace nasrl
