#include "commands.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "nasrl/errors.hpp"
#include "nasrl/genotype_io.hpp"
#include "run_config.hpp"

namespace nasrl::cli {

namespace {

namespace fs = std::filesystem;

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

// Writes through a sibling temp file so readers never see half a file.
void write_file(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    os << text;
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

RunConfig load(const Overrides& o) {
  if (o.config.empty()) throw RunConfigError("--config is required");
  RunConfig rc = load_run_config(o.config);
  if (o.seed) rc.search.seed = *o.seed;
  if (!o.out.empty()) rc.output_dir = o.out;
  rc.search.checkpoint_path = rc.output_dir / "checkpoint.bin";
  return rc;
}

std::pair<Dataset, Dataset> splits_or_config_error(const DataSpec& spec) {
  try {
    return load_splits(spec);
  } catch (const ConfigError& e) {
    throw RunConfigError(std::string("data: ") + e.what());
  }
}

nlohmann::json summary_json(const SearchResult& r, const SearchConfig& c) {
  nlohmann::json j;
  j["params"] = r.params;
  j["accuracy"] = r.accuracy;
  j["alpha_updates"] = r.history.size();
  j["beta"] = c.reward.beta;
  j["seed"] = c.seed;
  j["layers"] = r.network.layers;
  j["channels"] = r.network.channels;
  j["reference_params"] = r.stages.empty() ? 0.0 : r.stages.back().reference_params;
  return j;
}

void write_artifacts(const fs::path& dir, const SearchResult& r, const SearchConfig& c) {
  fs::create_directories(dir);
  write_file(dir / "genotype.json", genotype_to_json(r.genotype, c.cell, r.sets).dump(2) + "\n");
  write_file(dir / "metrics.csv", format_metrics_csv(r.history));
  write_file(dir / "cells_normal.dot", genotype_to_dot(r.genotype, CellType::normal, c.cell, r.sets));
  write_file(dir / "cells_reduction.dot", genotype_to_dot(r.genotype, CellType::reduction, c.cell, r.sets));
  write_file(dir / "summary.json", summary_json(r, c).dump(2) + "\n");
}

SearchResult search_into(const fs::path& dir, SearchConfig config, const Dataset& train, const Dataset& val,
                         bool resume, std::ostream& out) {
  fs::create_directories(dir);
  const fs::path checkpoint = dir / "checkpoint.bin";
  config.checkpoint_path = checkpoint;
  SearchEngine engine = resume && fs::exists(checkpoint) ? SearchEngine::resume(checkpoint, config, train, val)
                                                         : SearchEngine(config, train, val);
  engine.set_progress_stream(&out);
  engine.run();
  engine.save_checkpoint(checkpoint);
  SearchResult r = engine.result();
  write_artifacts(dir, r, config);
  out << "params " << r.params << " accuracy " << r.accuracy << '\n';
  return r;
}

int cmd_search(const Overrides& o, bool resume, std::ostream& out) {
  const RunConfig rc = load(o);
  const auto [train, val] = splits_or_config_error(rc.data);
  search_into(rc.output_dir, rc.search, train, val, resume, out);
  return 0;
}

int cmd_ablate(const Overrides& o, const std::string& mode, bool resume, std::ostream& out) {
  RunConfig rc = load(o);
  const auto [train, val] = splits_or_config_error(rc.data);
  SearchConfig c = rc.search;
  if (mode == "reinforce_acc") {
    c.reward_mode = RewardMode::scalarized;
    c.reward.beta = 0.0;
    c.reward.extra_terms.clear();
  } else if (mode == "max_params") {
    c.reward_mode = RewardMode::max_params;
  } else if (mode == "min_params") {
    c.reward_mode = RewardMode::min_params;
  } else {  // compress_compare
    c.reward_mode = RewardMode::scalarized;
    std::ostringstream table;
    table << "beta,params,accuracy\n" << std::setprecision(17);
    for (double beta : {0.0, -0.25}) {
      c.reward.beta = beta;
      const fs::path dir = rc.output_dir / (beta == 0.0 ? "beta_0" : "beta_-0.25");
      out << "run beta=" << beta << " -> " << dir.string() << '\n';
      const SearchResult r = search_into(dir, c, train, val, resume, out);
      table << beta << ',' << r.params << ',' << r.accuracy << '\n';
    }
    write_file(rc.output_dir / "compare.csv", table.str());
    return 0;
  }
  search_into(rc.output_dir, c, train, val, resume, out);
  return 0;
}

int cmd_eval(const Overrides& o, const std::string& genotype_path, std::ostream& out) {
  const RunConfig rc = load(o);
  const auto [train, val] = splits_or_config_error(rc.data);
  std::ifstream in(genotype_path);
  if (!in) throw RunConfigError("cannot open genotype file " + genotype_path);
  std::ostringstream text;
  text << in.rdbuf();
  const SearchConfig& c = rc.search;
  const CandidateSets sets = CandidateSets::full(c.cell, c.normal_ops, c.reduction_ops);
  const Genotype g = parse_genotype(text.str(), c.cell, sets);

  StandaloneOptions opt;
  opt.layers = rc.eval.layers.value_or(c.stages.back().layers);
  opt.channels = rc.eval.channels.value_or(c.stages.back().channels);
  opt.epochs = rc.eval.epochs;
  opt.batch_size = rc.eval.batch_size;
  opt.sgd = rc.eval.sgd;
  opt.seed = c.seed;
  const StandaloneReport report = train_standalone(g, sets, c.cell, opt, train, val);

  NetworkConfig reference = report.network;
  reference.candidates = sets;
  RewardSpec spec = c.reward;
  if (spec.reference_params <= 0.0) {
    spec.reference_params = double(uniform_genotype_parameters(reference, OpKind::sep_conv_3x3, OpKind::skip_connect));
  }
  const double reward = scalarize(MetricVector{report.accuracy, report.params, {}}, spec);
  out << std::setprecision(10) << "accuracy " << report.accuracy << '\n'
      << "params " << report.params << '\n'
      << "reward " << reward << '\n';
  return 0;
}

int cmd_reward_surface(const Overrides& o, std::optional<double> reference, std::optional<double> beta,
                       std::optional<int> resolution, std::ostream& out) {
  RunConfig rc;
  if (!o.config.empty()) rc = load(o);
  if (!o.out.empty()) rc.output_dir = o.out;
  RewardSpec spec = rc.search.reward;
  if (beta) spec.beta = *beta;
  if (reference) spec.reference_params = *reference;
  if (spec.reference_params <= 0.0) throw RunConfigError("reward-surface needs a positive reference size (--reference-params)");
  SurfaceSpec s = rc.surface;
  if (resolution) s.resolution = *resolution;
  std::vector<SurfacePoint> grid;
  try {
    grid = reward_surface_grid(spec, s.accuracy,
                               {s.params_ratio.first * spec.reference_params, s.params_ratio.second * spec.reference_params},
                               s.resolution);
  } catch (const ConfigError& e) {
    throw RunConfigError(e.what());
  }
  fs::create_directories(rc.output_dir);
  std::ostringstream csv;
  write_surface_csv(csv, grid);
  write_file(rc.output_dir / "reward_surface.csv", csv.str());
  out << "wrote " << grid.size() << " points to " << (rc.output_dir / "reward_surface.csv").string() << '\n';
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Reinforcement-learned architecture search on a desk-scale supernetwork"};
  app.require_subcommand(1);
  Overrides o;
  std::uint64_t seed = 0;
  auto common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", o.config, "YAML run configuration");
    if (needs_config) c->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the search seed");
    sub->add_option("--out", o.out, "override the output directory");
  };

  bool resume = false;
  auto* search = app.add_subcommand("search", "run the staged search and write its artifacts");
  common(search, true);
  search->add_flag("--resume", resume, "continue from <out>/checkpoint.bin when present");

  std::string mode;
  auto* ablate = app.add_subcommand("ablate", "run one of the reward ablations");
  common(ablate, true);
  ablate->add_option("--mode", mode, "reinforce_acc | max_params | min_params | compress_compare")
      ->required()
      ->check(CLI::IsMember({"reinforce_acc", "max_params", "min_params", "compress_compare"}));
  ablate->add_flag("--resume", resume, "continue from checkpoints in the output directory");

  std::string genotype;
  auto* eval = app.add_subcommand("eval", "train a saved genotype from scratch and report its metrics");
  common(eval, true);
  eval->add_option("--genotype", genotype, "genotype.json written by search")->required();

  std::optional<double> reference, beta;
  std::optional<int> resolution;
  auto* surface = app.add_subcommand("reward-surface", "write the reward over an accuracy x size grid");
  common(surface, false);
  surface->add_option("--reference-params", reference, "reference size P");
  surface->add_option("--beta", beta, "size exponent");
  surface->add_option("--resolution", resolution, "grid points per axis");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  }
  if (search->count("--seed") + ablate->count("--seed") + eval->count("--seed") + surface->count("--seed") > 0) {
    o.seed = seed;
  }

  try {
    if (*search) return cmd_search(o, resume, out);
    if (*ablate) return cmd_ablate(o, mode, resume, out);
    if (*eval) return cmd_eval(o, genotype, out);
    return cmd_reward_surface(o, reference, beta, resolution, out);
  } catch (const RunConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const InvalidGenotype& e) {
    err << "invalid genotype: " << e.what() << '\n';
    return 1;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace nasrl::cli
