#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "commands.hpp"
#include "nasrl/genotype_io.hpp"
#include "nasrl/network.hpp"
#include "run_config.hpp"

using namespace nasrl;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigs = fs::path(NASRL_SOURCE_DIR) / "configs";

struct Outcome {
  int code;
  std::string out, err;
};

Outcome invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "nasrl_cli");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run_cli(int(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& name) : dir(fs::temp_directory_path() / ("nasrl_cli_" + name)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  fs::path write(const std::string& name, const std::string& text) const {
    std::ofstream(dir / name) << text;
    return dir / name;
  }
};

std::vector<std::vector<double>> read_csv_rows(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    std::vector<double> row;
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

TEST_CASE("search emits every artifact and is reproducible") {
  Scratch s("search");
  const auto quick = (kConfigs / "quick.yaml").string();
  const auto a = invoke({"search", "--config", quick, "--out", (s.dir / "a").string()});
  REQUIRE(a.code == 0);
  for (const char* f : {"genotype.json", "metrics.csv", "cells_normal.dot", "cells_reduction.dot", "checkpoint.bin"}) {
    CHECK(fs::exists(s.dir / "a" / f));
  }
  CHECK(slurp(s.dir / "a" / "metrics.csv").rfind(
            "iteration,mean_sampled_params,max_sampled_accuracy,argmax_genotype_accuracy,reward_mean,baseline\n", 0) == 0);
  CHECK(slurp(s.dir / "a" / "cells_normal.dot").find("digraph") != std::string::npos);
  // One progress line per α update.
  const auto rows = read_csv_rows(s.dir / "a" / "metrics.csv");
  CHECK(std::count(a.out.begin(), a.out.end(), '\n') == long(rows.size()) + 1);

  const auto b = invoke({"search", "--config", quick, "--out", (s.dir / "b").string()});
  REQUIRE(b.code == 0);
  CHECK(slurp(s.dir / "a" / "genotype.json") == slurp(s.dir / "b" / "genotype.json"));
  CHECK(slurp(s.dir / "a" / "metrics.csv") == slurp(s.dir / "b" / "metrics.csv"));

  const auto c = invoke({"search", "--config", quick, "--seed", "7", "--out", (s.dir / "c").string()});
  REQUIRE(c.code == 0);
  CHECK(slurp(s.dir / "a" / "metrics.csv") != slurp(s.dir / "c" / "metrics.csv"));

  // Resuming a finished run reproduces its outputs.
  const auto r = invoke({"search", "--config", quick, "--resume", "--out", (s.dir / "a").string()});
  REQUIRE(r.code == 0);
  CHECK(slurp(s.dir / "a" / "genotype.json") == slurp(s.dir / "b" / "genotype.json"));
}

TEST_CASE("configuration errors exit with 2, name the line and write nothing") {
  Scratch s("config");
  const fs::path out = s.dir / "out";
  auto run = [&](const std::string& yaml) {
    return invoke({"search", "--config", s.write("c.yaml", yaml).string(), "--out", out.string()});
  };

  SUBCASE("missing dataset file") {
    const auto r = run("data:\n  source: idx\n  idx:\n    images: nope-images.idx\n    labels: nope-labels.idx\n");
    CHECK(r.code == 2);
    CHECK(r.err.find("c.yaml:4:") != std::string::npos);
    CHECK(r.err.find("not found") != std::string::npos);
  }
  SUBCASE("unknown key") {
    const auto r = run("seed: 1\nstages:\n  - {layers: 5, chanels: 8}\n");
    CHECK(r.code == 2);
    CHECK(r.err.find("c.yaml:3:") != std::string::npos);
    CHECK(r.err.find("chanels") != std::string::npos);
  }
  SUBCASE("malformed YAML") {
    const auto r = run("seed: 1\nstages: [\n");
    CHECK(r.code == 2);
    CHECK(r.err.find("c.yaml:") != std::string::npos);
  }
  SUBCASE("wrong value type") {
    const auto r = run("seed: 1\nsearch:\n  workers: many\n");
    CHECK(r.code == 2);
    CHECK(r.err.find("c.yaml:3:") != std::string::npos);
  }
  SUBCASE("keep exceeding the candidate set") {
    const auto r = run(
        "stages:\n  - {layers: 4, keep_normal: 10, keep_reduction: 6}\n  - {layers: 5, keep_normal: 12, "
        "keep_reduction: 4}\n");
    CHECK(r.code == 2);
    CHECK(r.err.find("c.yaml:3:") != std::string::npos);
    CHECK(r.err.find("stage 1") != std::string::npos);
  }
  SUBCASE("layer schedule not increasing") {
    const auto r = run("stages:\n  - {layers: 5}\n  - {layers: 5, keep_normal: 6, keep_reduction: 4}\n");
    CHECK(r.code == 2);
  }
  SUBCASE("unknown operation") {
    const auto r = run("search:\n  normal_ops: [none, skip_connect, warp_conv]\n");
    CHECK(r.code == 2);
    CHECK(r.err.find("c.yaml:2:") != std::string::npos);
  }
  CHECK_FALSE(fs::exists(out));
}

TEST_CASE("usage errors exit with 2") {
  CHECK(invoke({}).code == 2);
  CHECK(invoke({"frobnicate"}).code == 2);
  const auto quick = (kConfigs / "quick.yaml").string();
  CHECK(invoke({"ablate", "--config", quick, "--mode", "max_accuracy"}).code == 2);
  CHECK(invoke({"search"}).code == 2);
  CHECK(invoke({"search", "--config", "/nonexistent/config.yaml"}).code == 2);
  CHECK(invoke({"--help"}).code == 0);
}

TEST_CASE("bundled configurations parse") {
  for (const char* name : {"quick.yaml", "default.yaml", "ablation.yaml", "schedule.yaml", "accuracy.yaml"}) {
    CAPTURE(name);
    CHECK_NOTHROW(cli::load_run_config(kConfigs / name));
  }
  const auto d = cli::load_run_config(kConfigs / "default.yaml");
  CHECK(d.search.stages.size() == 3);
  CHECK(d.search.stages[1].layers == 8);
  CHECK(d.search.stages[2].keep_normal == 4);
  CHECK(d.search.stages[2].keep_reduction == 3);
}

TEST_CASE("eval reports the exact parameter count and rejects bad genotypes") {
  Scratch s("eval");
  const auto quick = (kConfigs / "quick.yaml").string();
  const auto rc = cli::load_run_config(quick);

  // Every edge a skip connection: only the backbone carries weights.
  nlohmann::json doc;
  for (const char* type : {"normal", "reduction"}) {
    doc[type] = nlohmann::json::array();
    for (const auto& e : cell_edges(rc.search.cell)) doc[type].push_back({e.from, e.to, "skip_connect"});
  }
  const auto skip = s.write("skip.json", doc.dump());
  const auto r = invoke({"eval", "--config", quick, "--genotype", skip.string()});
  REQUIRE(r.code == 0);
  NetworkConfig net;
  net.cell = rc.search.cell;
  net.layers = rc.search.stages.back().layers;
  net.channels = rc.search.stages.back().channels;
  net.candidates = CandidateSets::full(net.cell, rc.search.normal_ops, rc.search.reduction_ops);
  CHECK(r.out.find("params " + std::to_string(backbone_parameter_count(net)) + "\n") != std::string::npos);
  CHECK(r.out.find("accuracy ") != std::string::npos);
  CHECK(r.out.find("reward ") != std::string::npos);

  // A searched genotype: the printed count matches the library count.
  REQUIRE(invoke({"search", "--config", quick, "--out", (s.dir / "run").string()}).code == 0);
  const auto searched = invoke({"eval", "--config", quick, "--genotype", (s.dir / "run" / "genotype.json").string()});
  REQUIRE(searched.code == 0);
  const Genotype g = parse_genotype(slurp(s.dir / "run" / "genotype.json"), net.cell, net.candidates);
  CHECK(searched.out.find("params " + std::to_string(count_parameters(g, net)) + "\n") != std::string::npos);

  const auto broken = s.write("broken.json", "{\"normal\": [[0, 2, \"skip_connect\"]");
  const auto b = invoke({"eval", "--config", quick, "--genotype", broken.string()});
  CHECK(b.code == 1);
  CHECK(b.err.find("byte offset") != std::string::npos);

  // Restricting the catalog makes the conv_3x3 edge stale.
  s.write("narrow.yaml",
          "data:\n  synthetic: {per_class: 2, size: 8}\n"
          "search:\n  normal_ops: [none, skip_connect, sep_conv_3x3, conv_1x1]\n"
          "stages:\n  - {layers: 4, channels: 4, epochs: 1, pretrain_epochs: 0}\n"
          "eval: {epochs: 1}\n");
  nlohmann::json stale;
  stale["normal"] = nlohmann::json::array({nlohmann::json::array({0, 2, "conv_3x3"})});
  stale["reduction"] = nlohmann::json::array();
  const auto st = invoke({"eval", "--config", (s.dir / "narrow.yaml").string(), "--genotype",
                       s.write("stale.json", stale.dump()).string()});
  CHECK(st.code == 1);
  CHECK(st.err.find("invalid genotype") != std::string::npos);
}

TEST_CASE("reward surface file") {
  Scratch s("surface");
  const auto r = invoke({"reward-surface", "--reference-params", "1000", "--beta", "-0.25", "--resolution", "10", "--out",
                      s.dir.string()});
  REQUIRE(r.code == 0);
  const auto rows = read_csv_rows(s.dir / "reward_surface.csv");
  CHECK(rows.size() == 100);
  bool spot = false;
  for (const auto& row : rows) {
    if (std::abs(row[0] - 0.9) < 1e-12 && std::abs(row[1] - 2000.0) < 1e-9) {
      spot = true;
      CHECK(std::abs(row[2] - 0.75681) < 1e-5);
    }
  }
  CHECK(spot);

  const auto flat = invoke({"reward-surface", "--reference-params", "1000", "--beta", "0", "--resolution", "5", "--out",
                         s.dir.string()});
  REQUIRE(flat.code == 0);
  const auto frows = read_csv_rows(s.dir / "reward_surface.csv");
  CHECK(frows.size() == 25);
  for (const auto& row : frows) CHECK(row[2] == row[0]);

  CHECK(invoke({"reward-surface", "--beta", "-0.25", "--out", s.dir.string()}).code == 2);
  CHECK(invoke({"reward-surface", "--reference-params", "1000", "--resolution", "1", "--out", s.dir.string()}).code == 2);
}

TEST_CASE("ablation modes run and compress_compare writes paired metrics") {
  Scratch s("ablate");
  const auto quick = (kConfigs / "quick.yaml").string();
  for (const char* mode : {"reinforce_acc", "max_params", "min_params"}) {
    CAPTURE(mode);
    const auto dir = s.dir / mode;
    CHECK(invoke({"ablate", "--config", quick, "--mode", mode, "--out", dir.string()}).code == 0);
    CHECK(fs::exists(dir / "metrics.csv"));
  }
  const auto dir = s.dir / "compare";
  REQUIRE(invoke({"ablate", "--config", quick, "--mode", "compress_compare", "--out", dir.string()}).code == 0);
  CHECK(fs::exists(dir / "beta_0" / "metrics.csv"));
  CHECK(fs::exists(dir / "beta_-0.25" / "metrics.csv"));
  const auto table = read_csv_rows(dir / "compare.csv");
  REQUIRE(table.size() == 2);
  CHECK(table[0][0] == 0.0);
  CHECK(table[1][0] == -0.25);
}
