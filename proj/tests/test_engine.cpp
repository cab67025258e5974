#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "nasrl/engine.hpp"
#include "nasrl/errors.hpp"

using namespace nasrl;

namespace {

struct Splits {
  Dataset train, val;
};

Splits tiny_data(int per_class = 2) {
  SyntheticSpec spec;
  spec.size = 8;
  spec.per_class = per_class;
  spec.seed = 4;
  auto [train, val] = split(generate_synthetic(spec), 0.5, 1);
  return {std::move(train), std::move(val)};
}

StageConfig tiny_stage(int layers, int keep_normal, int keep_reduction) {
  StageConfig s;
  s.layers = layers;
  s.channels = 4;
  s.keep_normal = keep_normal;
  s.keep_reduction = keep_reduction;
  s.epochs = 2;
  s.pretrain_epochs = 1;
  s.rl_interval = 1;
  s.samples = 2;
  s.batch_size = 4;
  s.alpha_lr = 0.5;
  return s;
}

SearchConfig three_stage_config() {
  SearchConfig c;
  c.stages = {tiny_stage(4, 10, 6), tiny_stage(6, 6, 4), tiny_stage(8, 4, 3)};
  c.val_batches = 1;
  c.val_batch_size = 4;
  c.weight_path = WeightPath::sampled;
  c.seed = 11;
  return c;
}

// Top-`keep` entries of one α vector, recomputed by a stable sort.
std::vector<OpKind> top_keep(const std::vector<OpKind>& ops, const std::vector<double>& alpha, int keep) {
  std::vector<int> idx(ops.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return alpha[std::size_t(a)] > alpha[std::size_t(b)]; });
  idx.resize(std::size_t(keep));
  std::sort(idx.begin(), idx.end());
  std::vector<OpKind> out;
  for (int i : idx) out.push_back(ops[std::size_t(i)]);
  return out;
}

double variance(const std::vector<double>& v) {
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / double(v.size());
}

std::vector<double> flat_weights(const SuperNetwork& net) {
  std::vector<double> out;
  for (const auto& p : net.parameters())
    if (p.rank() == 4) out.insert(out.end(), p.data().begin(), p.data().end());
  return out;
}

}  // namespace

TEST_CASE("pure pre-training leaves α untouched") {
  auto [train, val] = tiny_data();
  SearchConfig c;
  StageConfig s = tiny_stage(5, 10, 6);
  s.rl_interval = 1000;  // larger than the number of steps per epoch
  c.stages = {s};
  c.val_batch_size = 4;
  c.weight_path = WeightPath::sampled;
  SearchEngine engine(c, train, val);
  CHECK(engine.run());
  CHECK(engine.history().empty());
  CHECK(engine.alpha() == ArchAlphas::zeros(engine.candidate_sets()));
  const SearchResult r = engine.result();
  CHECK(r.genotype == derive_genotype(ArchAlphas::zeros(r.sets), r.sets));
  // On ties the first candidate (none) wins, which prunes every edge.
  for (int choice : r.genotype.normal) CHECK(choice == Genotype::kPruned);
}

TEST_CASE("three-stage search ends with the configured candidate-set sizes") {
  auto [train, val] = tiny_data();
  const SearchConfig c = three_stage_config();
  const SearchResult r = run_search(c, train, val);
  REQUIRE(r.stages.size() == 3);
  for (const auto& edge : r.sets.normal) CHECK(edge.size() == 4);
  for (const auto& edge : r.sets.reduction) CHECK(edge.size() == 3);
  CHECK(r.network.layers == 8);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(r.stages[k].layers == grow_layers(c, k));
    CHECK(r.stages[k].sets.normal.front().size() == std::size_t(c.stages[k].keep_normal));
    CHECK(r.stages[k].alpha_updates > 0);
  }
  // Iterations are numbered monotonically across stages.
  for (std::size_t i = 0; i < r.history.size(); ++i) CHECK(r.history[i].iteration == int(i) + 1);
  validate_genotype(r.genotype, r.sets);
}

TEST_CASE("transition survivors are the top-keep of the logged α, in their original order") {
  auto [train, val] = tiny_data();
  const SearchConfig c = three_stage_config();
  const SearchResult r = run_search(c, train, val);
  for (std::size_t k = 0; k + 1 < r.stages.size(); ++k) {
    const StageSummary& done = r.stages[k];
    const StageSummary& next = r.stages[k + 1];
    for (std::size_t e = 0; e < done.sets.normal.size(); ++e) {
      CHECK(next.sets.normal[e] ==
            top_keep(done.sets.normal[e], done.final_alpha.normal.edges[e], c.stages[k + 1].keep_normal));
      CHECK(next.sets.reduction[e] ==
            top_keep(done.sets.reduction[e], done.final_alpha.reduction.edges[e], c.stages[k + 1].keep_reduction));
    }
    const CandidateSets direct = transition_stage(done.sets, done.final_alpha, c.stages[k + 1]);
    CHECK(direct.normal == next.sets.normal);
  }
}

TEST_CASE("each stage starts from fresh weights, zero α and a reset baseline") {
  auto [train, val] = tiny_data();
  SearchConfig c = three_stage_config();
  c.stages[1].layers = 5;
  c.stages[2].layers = 6;
  SearchEngine engine(c, train, val);
  std::vector<double> before;
  while (engine.stage_index() == 0) {
    before = flat_weights(engine.network());
    REQUIRE_FALSE(engine.run(1));
  }
  // The first α update of stage 1 has run: one update moves α away from zero.
  const std::vector<double> after = flat_weights(engine.network());
  CHECK(after != before);
  const SuperNetwork reference(engine.network().config(), 12345);
  const double v_ref = variance(flat_weights(reference)), v_after = variance(after);
  CHECK(std::abs(v_after - v_ref) < 0.3 * v_ref);
  CHECK(engine.history().back().iteration == engine.result().stages.front().alpha_updates + 1);
}

TEST_CASE("checkpoint and resume reproduce the uninterrupted run bit-exactly") {
  auto [train, val] = tiny_data();
  const SearchConfig c = three_stage_config();
  const SearchResult full = run_search(c, train, val);
  const auto dir = std::filesystem::temp_directory_path() / "nasrl_engine_ckpt";
  std::filesystem::create_directories(dir);

  for (int cut : {1, 3, int(full.history.size()) / 2, int(full.history.size()) - 1}) {
    CAPTURE(cut);
    const auto path = dir / ("ck" + std::to_string(cut) + ".bin");
    {
      SearchEngine first(c, train, val);
      REQUIRE_FALSE(first.run(cut));
      first.save_checkpoint(path);
    }
    SearchEngine resumed = SearchEngine::resume(path, c, train, val);
    CHECK(resumed.history().size() == std::size_t(cut));
    CHECK(resumed.run());
    const SearchResult r = resumed.result();
    CHECK(r.genotype == full.genotype);
    CHECK(r.history == full.history);
    CHECK(r.params == full.params);
    CHECK(r.accuracy == full.accuracy);
  }

  SUBCASE("periodic checkpoints") {
    SearchConfig periodic = c;
    periodic.checkpoint_every = 2;
    periodic.checkpoint_path = dir / "periodic.bin";
    SearchEngine engine(periodic, train, val);
    REQUIRE_FALSE(engine.run(5));
    CHECK(std::filesystem::exists(periodic.checkpoint_path));
    SearchEngine resumed = SearchEngine::resume(periodic.checkpoint_path, periodic, train, val);
    CHECK(resumed.history().size() == 4);
    resumed.run();
    CHECK(resumed.result().genotype == full.genotype);
  }

  SUBCASE("mismatched config or corrupt file is rejected") {
    const auto path = dir / "mismatch.bin";
    SearchEngine engine(c, train, val);
    engine.run(2);
    engine.save_checkpoint(path);
    SearchConfig other = c;
    other.seed = 99;
    CHECK_THROWS_AS(SearchEngine::resume(path, other, train, val), ConfigError);
    std::filesystem::resize_file(path, 20);
    CHECK_THROWS_AS(SearchEngine::resume(path, c, train, val), FormatError);
    CHECK_THROWS(SearchEngine::resume(dir / "missing.bin", c, train, val));
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("single-threaded runs are reproducible from the seed") {
  auto [train, val] = tiny_data();
  SearchConfig c = three_stage_config();
  c.stages.resize(1);
  const SearchResult a = run_search(c, train, val), b = run_search(c, train, val);
  CHECK(a.history == b.history);
  CHECK(a.genotype == b.genotype);
  c.seed = 12;
  const SearchResult other = run_search(c, train, val);
  CHECK(other.history != a.history);
}

TEST_CASE("parallel sample evaluation matches the serial run") {
  auto [train, val] = tiny_data();
  SearchConfig c = three_stage_config();
  c.stages.resize(1);
  c.stages[0].samples = 4;
  const SearchResult serial = run_search(c, train, val);
  c.workers = 3;
  const SearchResult parallel = run_search(c, train, val);
  CHECK(parallel.history == serial.history);
  CHECK(parallel.genotype == serial.genotype);
}

TEST_CASE("mixed weight path runs and only touches weights") {
  auto [train, val] = tiny_data();
  SearchConfig c = three_stage_config();
  c.stages.resize(1);
  c.weight_path = WeightPath::mixed;
  const SearchResult r = run_search(c, train, val);
  CHECK_FALSE(r.history.empty());
  for (const auto& rec : r.history) {
    CHECK(rec.max_sampled_accuracy >= 0.0);
    CHECK(rec.max_sampled_accuracy <= 1.0);
  }
}

TEST_CASE("layer schedule lookup and validation") {
  const SearchConfig d = SearchConfig::defaults();
  CHECK(grow_layers(d, 0) == 5);
  CHECK(grow_layers(d, 1) == 8);
  CHECK(grow_layers(d, 2) == 11);
  CHECK_THROWS_AS(grow_layers(d, 3), ContractViolation);
  for (std::size_t k = 1; k < d.stages.size(); ++k) CHECK(d.stages[k].channels <= d.stages[k - 1].channels);
  CHECK_NOTHROW(d.validate());

  auto broken = [&](auto mutate) {
    SearchConfig c = SearchConfig::defaults();
    mutate(c);
    return c;
  };
  CHECK_THROWS_AS(broken([](SearchConfig& c) { c.stages[1].layers = 5; }).validate(), ConfigError);
  CHECK_THROWS_AS(broken([](SearchConfig& c) { c.stages[1].keep_normal = 11; }).validate(), ConfigError);
  CHECK_THROWS_AS(broken([](SearchConfig& c) { c.stages[2].keep_normal = 7; }).validate(), ConfigError);
  CHECK_THROWS_AS(broken([](SearchConfig& c) { c.stages[0].keep_normal = 8; }).validate(), ConfigError);
  CHECK_THROWS_AS(broken([](SearchConfig& c) { c.stages[0].pretrain_epochs = 25; }).validate(), ConfigError);
  CHECK_THROWS_AS(broken([](SearchConfig& c) { c.stages[0].rl_interval = 0; }).validate(), ConfigError);
  CHECK_THROWS_AS(broken([](SearchConfig& c) { c.stages.clear(); }).validate(), ConfigError);
  CHECK_THROWS_AS(broken([](SearchConfig& c) { c.reward.extra_terms.push_back({"energy", 1.0, -1.0}); }).validate(),
                  ConfigError);

  // Invalid configs surface before any training.
  auto [train, val] = tiny_data();
  CHECK_THROWS_AS(SearchEngine(broken([](SearchConfig& c) { c.stages[1].keep_normal = 11; }), train, val), ConfigError);
}

TEST_CASE("metrics CSV layout") {
  const std::vector<MetricRecord> h{{1, 100.0, 0.5, 0.25, 0.4, 0.35}, {2, 120.5, 0.6, 0.3, 0.45, 0.4}};
  const std::string csv = format_metrics_csv(h);
  CHECK(csv.rfind("iteration,mean_sampled_params,max_sampled_accuracy,argmax_genotype_accuracy,reward_mean,baseline\n",
                  0) == 0);
  CHECK(csv.find("\n2,120.5,") != std::string::npos);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}
