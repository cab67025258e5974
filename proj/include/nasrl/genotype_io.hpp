#pragma once

#include <string>
#include <string_view>

#include <json.hpp>

#include "nasrl/search_space.hpp"

namespace nasrl {

// {"normal": [[from, to, "op"], ...], "reduction": [...]}; pruned and `none`
// edges are omitted.
nlohmann::json genotype_to_json(const Genotype& g, const CellSpec& spec, const CandidateSets& sets);

// Edges missing from the document are pruned. Throws InvalidGenotype for an
// unknown edge or an op outside the edge's candidate list.
Genotype genotype_from_json(const nlohmann::json& doc, const CellSpec& spec, const CandidateSets& sets);

// Parses text first; malformed JSON raises FormatError with the byte offset.
Genotype parse_genotype(std::string_view text, const CellSpec& spec, const CandidateSets& sets);

// Graphviz digraph of one cell type: inputs c_{k-2}, c_{k-1}, intermediate
// nodes 0.., output c_{k}.
std::string genotype_to_dot(const Genotype& g, CellType type, const CellSpec& spec, const CandidateSets& sets);

}  // namespace nasrl
