#include "run_config.hpp"

#include <yaml-cpp/yaml.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "nasrl/errors.hpp"

namespace nasrl::cli {

namespace {

class Doc {
 public:
  explicit Doc(std::string source) : source_(std::move(source)) {}

  [[noreturn]] void fail(const YAML::Node& at, const std::string& msg) const {
    const YAML::Mark m = at.Mark();
    if (m.is_null()) throw RunConfigError(source_ + ": " + msg);
    throw RunConfigError(source_ + ":" + std::to_string(m.line + 1) + ":" + std::to_string(m.column + 1) + ": " + msg);
  }

  void require_map(const YAML::Node& node, const std::string& where) const {
    if (!node.IsMap()) fail(node, where + " must be a mapping");
  }

  void allow_keys(const YAML::Node& node, const std::string& where, std::initializer_list<const char*> keys) const {
    require_map(node, where);
    const std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& kv : node) {
      const auto key = kv.first.as<std::string>();
      if (!allowed.count(key)) fail(kv.first, "unknown key '" + key + "' in " + where);
    }
  }

  template <typename T>
  void read(const YAML::Node& parent, const char* key, T& out) const {
    const YAML::Node node = parent[key];
    if (!node) return;
    if (!node.IsScalar()) fail(node, std::string("'") + key + "' must be a scalar");
    try {
      out = node.as<T>();
    } catch (const YAML::BadConversion&) {
      fail(node, std::string("'") + key + "' has an invalid value '" + node.Scalar() + "'");
    }
  }

  template <typename T>
  void read_pair(const YAML::Node& parent, const char* key, std::pair<T, T>& out) const {
    const YAML::Node node = parent[key];
    if (!node) return;
    if (!node.IsSequence() || node.size() != 2) fail(node, std::string("'") + key + "' must be a two-element list");
    try {
      out = {node[0].as<T>(), node[1].as<T>()};
    } catch (const YAML::BadConversion&) {
      fail(node, std::string("'") + key + "' must hold two numbers");
    }
  }

  const std::string& source() const { return source_; }

 private:
  std::string source_;
};

void read_sgd(const Doc& doc, const YAML::Node& node, const std::string& where, SgdOptions& sgd) {
  if (!node) return;
  doc.allow_keys(node, where, {"learning_rate", "momentum", "weight_decay"});
  doc.read(node, "learning_rate", sgd.learning_rate);
  doc.read(node, "momentum", sgd.momentum);
  doc.read(node, "weight_decay", sgd.weight_decay);
}

void read_stage(const Doc& doc, const YAML::Node& node, const std::string& where, StageConfig& s) {
  doc.allow_keys(node, where,
                 {"layers", "channels", "keep_normal", "keep_reduction", "epochs", "pretrain_epochs", "rl_interval",
                  "samples", "batch_size", "alpha_lr", "sgd"});
  doc.read(node, "layers", s.layers);
  doc.read(node, "channels", s.channels);
  doc.read(node, "keep_normal", s.keep_normal);
  doc.read(node, "keep_reduction", s.keep_reduction);
  doc.read(node, "epochs", s.epochs);
  doc.read(node, "pretrain_epochs", s.pretrain_epochs);
  doc.read(node, "rl_interval", s.rl_interval);
  doc.read(node, "samples", s.samples);
  doc.read(node, "batch_size", s.batch_size);
  doc.read(node, "alpha_lr", s.alpha_lr);
  read_sgd(doc, node["sgd"], where + ".sgd", s.sgd);
}

std::vector<OpKind> read_ops(const Doc& doc, const YAML::Node& node, const std::vector<OpKind>& catalog) {
  if (!node.IsSequence()) doc.fail(node, "operation list must be a sequence");
  std::vector<OpKind> ops;
  for (const auto& item : node) {
    const auto name = item.as<std::string>();
    const auto kind = op_from_name(name);
    if (!kind || std::find(catalog.begin(), catalog.end(), *kind) == catalog.end()) {
      doc.fail(item, "operation '" + name + "' is not in this cell type's catalog");
    }
    ops.push_back(*kind);
  }
  return ops;
}

void read_data(const Doc& doc, const YAML::Node& node, DataSpec& d, const std::filesystem::path& base) {
  if (!node) return;
  doc.allow_keys(node, "data", {"source", "synthetic", "idx", "train_fraction", "split_seed"});
  std::string source = "synthetic";
  doc.read(node, "source", source);
  if (source == "synthetic") {
    d.source = DataSpec::Source::synthetic;
  } else if (source == "idx") {
    d.source = DataSpec::Source::idx;
  } else {
    doc.fail(node["source"], "data source must be 'synthetic' or 'idx'");
  }
  if (const auto syn = node["synthetic"]) {
    doc.allow_keys(syn, "data.synthetic", {"classes", "per_class", "size", "channels", "noise_sigma", "seed"});
    doc.read(syn, "classes", d.synthetic.classes);
    doc.read(syn, "per_class", d.synthetic.per_class);
    doc.read(syn, "size", d.synthetic.size);
    doc.read(syn, "channels", d.synthetic.channels);
    doc.read(syn, "noise_sigma", d.synthetic.noise_sigma);
    doc.read(syn, "seed", d.synthetic.seed);
  }
  if (const auto idx = node["idx"]) {
    doc.allow_keys(idx, "data.idx", {"images", "labels"});
    std::string images, labels;
    doc.read(idx, "images", images);
    doc.read(idx, "labels", labels);
    d.images = images.empty() ? std::filesystem::path() : base / images;
    d.labels = labels.empty() ? std::filesystem::path() : base / labels;
  }
  doc.read(node, "train_fraction", d.train_fraction);
  doc.read(node, "split_seed", d.split_seed);

  if (!(d.train_fraction > 0.0 && d.train_fraction < 1.0)) {
    doc.fail(node["train_fraction"], "train_fraction must lie in (0, 1)");
  }
  if (d.source == DataSpec::Source::idx) {
    for (const auto& [key, path] : {std::pair{"images", d.images}, std::pair{"labels", d.labels}}) {
      const YAML::Node at = node["idx"] ? node["idx"][key] : node;
      if (path.empty()) doc.fail(at ? at : node, std::string("idx source needs data.idx.") + key);
      if (!std::filesystem::is_regular_file(path)) doc.fail(at, "dataset file not found: " + path.string());
    }
  }
}

void read_reward(const Doc& doc, const YAML::Node& node, SearchConfig& c) {
  if (!node) return;
  doc.allow_keys(node, "reward", {"mode", "reference_params", "beta", "terms", "baseline_decay", "use_baseline"});
  std::string mode = "scalarized";
  doc.read(node, "mode", mode);
  if (mode == "scalarized") {
    c.reward_mode = RewardMode::scalarized;
  } else if (mode == "max_params") {
    c.reward_mode = RewardMode::max_params;
  } else if (mode == "min_params") {
    c.reward_mode = RewardMode::min_params;
  } else {
    doc.fail(node["mode"], "reward mode must be scalarized, max_params or min_params");
  }
  if (const auto p = node["reference_params"]) {
    if (p.IsScalar() && p.Scalar() == "auto") {
      c.reward.reference_params = 0.0;
    } else {
      doc.read(node, "reference_params", c.reward.reference_params);
      if (!(c.reward.reference_params > 0.0)) doc.fail(p, "reference_params must be positive or 'auto'");
    }
  }
  doc.read(node, "beta", c.reward.beta);
  doc.read(node, "baseline_decay", c.baseline_decay);
  doc.read(node, "use_baseline", c.use_baseline);
  if (const auto terms = node["terms"]) {
    if (!terms.IsSequence()) doc.fail(terms, "reward.terms must be a sequence");
    for (std::size_t i = 0; i < terms.size(); ++i) {
      const auto t = terms[i];
      doc.allow_keys(t, "reward.terms[" + std::to_string(i) + "]", {"metric", "reference", "exponent"});
      RewardTerm term;
      doc.read(t, "metric", term.metric);
      doc.read(t, "reference", term.reference);
      doc.read(t, "exponent", term.exponent);
      if (!MetricRegistry().contains(term.metric)) doc.fail(t, "unknown reward metric '" + term.metric + "'");
      c.reward.extra_terms.push_back(term);
    }
  }
}

void read_search(const Doc& doc, const YAML::Node& node, SearchConfig& c) {
  if (!node) return;
  doc.allow_keys(node, "search",
                 {"weight_path", "workers", "val_batches", "val_batch_size", "checkpoint_every", "normal_ops",
                  "reduction_ops", "intermediate_nodes"});
  std::string path = "mixed";
  doc.read(node, "weight_path", path);
  if (path == "mixed") {
    c.weight_path = WeightPath::mixed;
  } else if (path == "sampled") {
    c.weight_path = WeightPath::sampled;
  } else {
    doc.fail(node["weight_path"], "weight_path must be 'mixed' or 'sampled'");
  }
  doc.read(node, "workers", c.workers);
  doc.read(node, "val_batches", c.val_batches);
  doc.read(node, "val_batch_size", c.val_batch_size);
  doc.read(node, "checkpoint_every", c.checkpoint_every);
  doc.read(node, "intermediate_nodes", c.cell.intermediate_nodes);
  c.cell.multiplier = c.cell.intermediate_nodes;
  if (node["normal_ops"]) c.normal_ops = read_ops(doc, node["normal_ops"], normal_catalog());
  if (node["reduction_ops"]) c.reduction_ops = read_ops(doc, node["reduction_ops"], reduction_catalog());
}

void read_stages(const Doc& doc, const YAML::Node& root, SearchConfig& c) {
  const YAML::Node common = root["stage_defaults"];
  const YAML::Node list = root["stages"];
  if (list) {
    if (!list.IsSequence() || list.size() == 0) doc.fail(list, "stages must be a non-empty sequence");
    c.stages.assign(list.size(), StageConfig{});
  }
  for (std::size_t k = 0; k < c.stages.size(); ++k) {
    const std::string where = "stages[" + std::to_string(k) + "]";
    if (common) read_stage(doc, common, "stage_defaults", c.stages[k]);
    if (list) read_stage(doc, list[k], where, c.stages[k]);
  }
  // Keep the op-list size consistent for the first stage when only the list shrank.
  if (!list || !list[0]["keep_normal"]) {
    if (!(common && common["keep_normal"])) c.stages[0].keep_normal = int(c.normal_ops.size());
  }
  if (!list || !list[0]["keep_reduction"]) {
    if (!(common && common["keep_reduction"])) c.stages[0].keep_reduction = int(c.reduction_ops.size());
  }
}

void read_eval(const Doc& doc, const YAML::Node& node, EvalSpec& e) {
  if (!node) return;
  doc.allow_keys(node, "eval", {"layers", "channels", "epochs", "batch_size", "sgd"});
  if (node["layers"]) {
    int layers = 0;
    doc.read(node, "layers", layers);
    e.layers = layers;
  }
  if (node["channels"]) {
    int channels = 0;
    doc.read(node, "channels", channels);
    e.channels = channels;
  }
  doc.read(node, "epochs", e.epochs);
  doc.read(node, "batch_size", e.batch_size);
  read_sgd(doc, node["sgd"], "eval.sgd", e.sgd);
  if (e.epochs < 0) doc.fail(node["epochs"], "eval.epochs must be >= 0");
  if (e.batch_size < 1) doc.fail(node["batch_size"], "eval.batch_size must be >= 1");
}

void read_surface(const Doc& doc, const YAML::Node& node, SurfaceSpec& s) {
  if (!node) return;
  doc.allow_keys(node, "reward_surface", {"resolution", "accuracy", "params_ratio"});
  doc.read(node, "resolution", s.resolution);
  doc.read_pair(node, "accuracy", s.accuracy);
  doc.read_pair(node, "params_ratio", s.params_ratio);
  if (s.resolution < 2) doc.fail(node["resolution"], "resolution must be >= 2");
  if (!(s.params_ratio.first > 0.0)) doc.fail(node["params_ratio"], "params_ratio must be positive");
}

// Maps an engine validation message "stage k: ..." back to the stage's node.
YAML::Node anchor_for(const YAML::Node& root, const std::string& message) {
  if (message.rfind("stage ", 0) == 0 && root["stages"]) {
    const auto k = std::stoul(message.substr(6));
    if (k < root["stages"].size()) return root["stages"][k];
  }
  if (message.find("reward") != std::string::npos && root["reward"]) return root["reward"];
  return root;
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::string& source) {
  const Doc doc(source);
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw RunConfigError(source + ":" + std::to_string(e.mark.line + 1) + ":" + std::to_string(e.mark.column + 1) +
                         ": " + e.msg);
  }
  RunConfig rc;
  if (root.IsNull()) return rc;
  try {
    doc.allow_keys(root, "the document",
                   {"seed", "output_dir", "data", "search", "reward", "stage_defaults", "stages", "eval",
                    "reward_surface"});
    doc.read(root, "seed", rc.search.seed);
    std::string out;
    doc.read(root, "output_dir", out);
    if (!out.empty()) rc.output_dir = out;
    const auto base = std::filesystem::path(source).parent_path();
    read_data(doc, root["data"], rc.data, base);
    read_search(doc, root["search"], rc.search);
    read_reward(doc, root["reward"], rc.search);
    read_stages(doc, root, rc.search);
    read_eval(doc, root["eval"], rc.eval);
    read_surface(doc, root["reward_surface"], rc.surface);
  } catch (const YAML::Exception& e) {
    throw RunConfigError(source + ":" + std::to_string(e.mark.line + 1) + ":" + std::to_string(e.mark.column + 1) +
                         ": " + e.msg);
  }
  try {
    rc.search.checkpoint_path = rc.output_dir / "checkpoint.bin";
    rc.search.validate();
  } catch (const ConfigError& e) {
    doc.fail(anchor_for(root, e.what()), e.what());
  }
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw RunConfigError(path.string() + ": cannot open configuration file");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str(), path.string());
}

std::pair<Dataset, Dataset> load_splits(const DataSpec& spec) {
  Dataset all;
  if (spec.source == DataSpec::Source::synthetic) {
    all = generate_synthetic(spec.synthetic);
  } else {
    for (const auto& p : {spec.images, spec.labels}) {
      if (!std::filesystem::is_regular_file(p)) throw RunConfigError("dataset file not found: " + p.string());
    }
    all = read_idx(spec.images, spec.labels);
  }
  return split(all, spec.train_fraction, spec.split_seed);
}

}  // namespace nasrl::cli
