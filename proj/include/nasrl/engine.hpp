#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "nasrl/controller.hpp"
#include "nasrl/data.hpp"
#include "nasrl/network.hpp"
#include "nasrl/objectives.hpp"
#include "nasrl/search_space.hpp"
#include "nasrl/sgd.hpp"

namespace nasrl {

struct StageConfig {
  int layers = 5;
  int channels = 16;
  int keep_normal = 10;     // candidates per normal edge during this stage
  int keep_reduction = 6;   // candidates per reduction edge during this stage
  int epochs = 25;
  int pretrain_epochs = 5;  // α updates start once epoch > pretrain_epochs
  int rl_interval = 10;     // weight steps between α updates
  int samples = 4;          // M
  int batch_size = 64;
  SgdOptions sgd;
  double alpha_lr = 0.05;
};

enum class WeightPath {
  mixed,    // softmax(α)-weighted sum over every candidate
  sampled,  // one genotype drawn from the policy per step
};

struct SearchConfig {
  std::vector<StageConfig> stages;
  CellSpec cell;
  std::vector<OpKind> normal_ops = normal_catalog();
  std::vector<OpKind> reduction_ops = reduction_catalog();

  RewardMode reward_mode = RewardMode::scalarized;
  // reference_params <= 0 means "auto": the all-sep_conv_3x3 genotype of each stage.
  RewardSpec reward{0.0, -0.25, {}};
  double baseline_decay = 0.9;
  bool use_baseline = true;

  int val_batches = 2;
  int val_batch_size = 64;
  WeightPath weight_path = WeightPath::mixed;
  int workers = 1;
  std::uint64_t seed = 0;

  // Write a checkpoint every N α updates (0 disables) to checkpoint_path.
  int checkpoint_every = 0;
  std::filesystem::path checkpoint_path;

  // Schedule defaults: layers 5/8/11, channels 16/12/8, keep 10/6/4 and 6/4/3.
  static SearchConfig defaults();
  void validate() const;
};

struct MetricRecord {
  int iteration = 0;
  double mean_sampled_params = 0.0;
  double max_sampled_accuracy = 0.0;
  double argmax_genotype_accuracy = 0.0;
  double reward_mean = 0.0;
  double baseline = 0.0;
  friend bool operator==(const MetricRecord&, const MetricRecord&) = default;
};

// Snapshot of one finished stage.
struct StageSummary {
  int layers = 0;
  int channels = 0;
  CandidateSets sets;
  ArchAlphas final_alpha;
  double reference_params = 0.0;
  int alpha_updates = 0;
};

struct SearchResult {
  Genotype genotype;
  CandidateSets sets;
  NetworkConfig network;  // configuration of the last stage
  std::size_t params = 0;
  double accuracy = 0.0;  // argmax genotype on the validation split
  std::vector<MetricRecord> history;
  std::vector<StageSummary> stages;
};

// Layer count of stage k.
int grow_layers(const SearchConfig& config, std::size_t k);

// Candidate sets for the stage after `finished`, shrunk by its final α.
CandidateSets transition_stage(const CandidateSets& sets, const ArchAlphas& final_alpha, const StageConfig& next);

std::string format_metrics_csv(const std::vector<MetricRecord>& history);

// Runs the staged search. All mutable search state lives here so that it can
// be checkpointed at any α update and resumed bit-exactly.
class SearchEngine {
 public:
  SearchEngine(SearchConfig config, Dataset train, Dataset val);
  ~SearchEngine();
  SearchEngine(SearchEngine&&) noexcept;
  SearchEngine& operator=(SearchEngine&&) noexcept;

  // Restores a checkpoint written by save_checkpoint. The config and data
  // must be those the checkpoint was produced with.
  static SearchEngine resume(const std::filesystem::path& checkpoint, SearchConfig config, Dataset train,
                             Dataset val);

  // Runs until the search finishes or `max_alpha_updates` further α updates
  // have been applied. Returns true once the search has finished.
  bool run(std::optional<int> max_alpha_updates = std::nullopt);
  bool finished() const;
  SearchResult result() const;

  // Atomic: written to a sibling temp file, then renamed.
  void save_checkpoint(const std::filesystem::path& path) const;

  void set_progress_stream(std::ostream* os);
  void on_alpha_update(std::function<void(const MetricRecord&)> hook);

  const std::vector<MetricRecord>& history() const;
  const ArchAlphas& alpha() const;
  const CandidateSets& candidate_sets() const;
  const SuperNetwork& network() const;
  std::size_t stage_index() const;

 private:
  struct State;
  SearchEngine(SearchConfig config, Dataset train, Dataset val, bool fresh);

  void begin_stage(std::uint64_t network_seed);
  void weight_step(const Batch& batch);
  void alpha_update();
  void finish_stage();

  SearchConfig config_;
  Dataset train_;
  Dataset val_;
  std::unique_ptr<State> state_;
  std::ostream* progress_ = nullptr;
  std::function<void(const MetricRecord&)> hook_;
};

// Convenience wrapper: one uninterrupted search.
SearchResult run_search(const SearchConfig& config, const Dataset& train, const Dataset& val);

struct StandaloneOptions {
  int layers = 8;
  int channels = 16;
  int epochs = 5;
  int batch_size = 32;
  SgdOptions sgd;
  std::uint64_t seed = 0;
};

struct StandaloneReport {
  NetworkConfig network;  // one candidate per edge: the chosen op, or none
  std::size_t params = 0;
  double accuracy = 0.0;  // eval-mode batch norm after training
};

// Builds the network holding only the genotype's ops and trains it from scratch.
StandaloneReport train_standalone(const Genotype& g, const CandidateSets& sets, const CellSpec& cell,
                                  const StandaloneOptions& options, const Dataset& train, const Dataset& val);

}  // namespace nasrl
