#include "nasrl/genotype_io.hpp"

#include <algorithm>
#include <sstream>

#include "nasrl/errors.hpp"

namespace nasrl {

using nlohmann::json;

json genotype_to_json(const Genotype& g, const CellSpec& spec, const CandidateSets& sets) {
  validate_genotype(g, sets);
  const auto edges = cell_edges(spec);
  json doc = json::object();
  for (CellType t : {CellType::normal, CellType::reduction}) {
    json list = json::array();
    const auto ops = resolve_ops(g.of(t), sets.of(t));
    for (std::size_t e = 0; e < edges.size(); ++e) {
      if (ops[e] == OpKind::none) continue;
      list.push_back(json::array({edges[e].from, edges[e].to, std::string(op_name(ops[e]))}));
    }
    doc[std::string(cell_type_name(t))] = std::move(list);
  }
  return doc;
}

Genotype genotype_from_json(const json& doc, const CellSpec& spec, const CandidateSets& sets) {
  if (!doc.is_object()) throw InvalidGenotype("genotype document must be a JSON object");
  const auto edges = cell_edges(spec);
  Genotype g;
  for (CellType t : {CellType::normal, CellType::reduction}) {
    const std::string key(cell_type_name(t));
    auto& choices = g.of(t);
    choices.assign(edges.size(), Genotype::kPruned);
    if (!doc.contains(key)) throw InvalidGenotype("genotype is missing the \"" + key + "\" list");
    const auto& list = doc.at(key);
    if (!list.is_array()) throw InvalidGenotype("\"" + key + "\" must be an array");
    for (const auto& item : list) {
      if (!item.is_array() || item.size() != 3 || !item[0].is_number_integer() || !item[1].is_number_integer() ||
          !item[2].is_string()) {
        throw InvalidGenotype("\"" + key + "\" entries must be [from, to, \"op\"], got " + item.dump());
      }
      const EdgeId id{item[0].get<int>(), item[1].get<int>()};
      const auto it = std::find(edges.begin(), edges.end(), id);
      if (it == edges.end()) throw InvalidGenotype(key + ": no edge " + item.dump());
      const auto e = static_cast<std::size_t>(it - edges.begin());
      const auto name = item[2].get<std::string>();
      const auto kind = op_from_name(name);
      if (!kind) throw InvalidGenotype(key + ": unknown operation \"" + name + "\"");
      const auto& cands = sets.of(t).at(e);
      const auto pos = std::find(cands.begin(), cands.end(), *kind);
      if (pos == cands.end()) {
        throw InvalidGenotype(key + ": operation \"" + name + "\" is not a candidate on edge " + item.dump());
      }
      if (choices[e] != Genotype::kPruned) throw InvalidGenotype(key + ": edge listed twice " + item.dump());
      choices[e] = static_cast<int>(pos - cands.begin());
    }
  }
  return g;
}

Genotype parse_genotype(std::string_view text, const CellSpec& spec, const CandidateSets& sets) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("genotype JSON parse error: ") + e.what(), e.byte);
  }
  return genotype_from_json(doc, spec, sets);
}

std::string genotype_to_dot(const Genotype& g, CellType type, const CellSpec& spec, const CandidateSets& sets) {
  validate_genotype(g, sets);
  const auto edges = cell_edges(spec);
  const auto ops = resolve_ops(g.of(type), sets.of(type));
  auto node = [&](int id) -> std::string {
    if (id == 0) return "\"c_{k-2}\"";
    if (id == 1) return "\"c_{k-1}\"";
    return "\"" + std::to_string(id - spec.input_nodes) + "\"";
  };
  std::ostringstream os;
  os << "digraph " << cell_type_name(type) << " {\n";
  os << "  rankdir=LR;\n";
  os << "  node [style=filled, fontname=\"helvetica\"];\n";
  os << "  " << node(0) << " [fillcolor=darkseagreen2];\n";
  os << "  " << node(1) << " [fillcolor=darkseagreen2];\n";
  for (int j = 0; j < spec.intermediate_nodes; ++j) {
    os << "  " << node(spec.input_nodes + j) << " [fillcolor=lightblue];\n";
  }
  os << "  \"c_{k}\" [fillcolor=palegoldenrod];\n";
  for (std::size_t e = 0; e < edges.size(); ++e) {
    if (ops[e] == OpKind::none) continue;
    os << "  " << node(edges[e].from) << " -> " << node(edges[e].to) << " [label=\"" << op_name(ops[e])
       << "\"];\n";
  }
  for (int j = spec.intermediate_nodes - spec.multiplier; j < spec.intermediate_nodes; ++j) {
    os << "  " << node(spec.input_nodes + j) << " -> \"c_{k}\";\n";
  }
  os << "}\n";
  return os.str();
}

}  // namespace nasrl
