#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

#include "nasrl/data.hpp"
#include "nasrl/engine.hpp"

namespace nasrl::cli {

struct DataSpec {
  enum class Source { synthetic, idx } source = Source::synthetic;
  SyntheticSpec synthetic;
  std::filesystem::path images;
  std::filesystem::path labels;
  double train_fraction = 0.5;
  std::uint64_t split_seed = 0;
};

struct EvalSpec {
  std::optional<int> layers;    // defaults to the last stage
  std::optional<int> channels;  // defaults to the last stage
  int epochs = 5;
  int batch_size = 32;
  SgdOptions sgd;
};

struct SurfaceSpec {
  int resolution = 10;
  std::pair<double, double> accuracy{0.1, 1.0};
  std::pair<double, double> params_ratio{0.5, 5.0};  // multiples of the reference size
};

struct RunConfig {
  SearchConfig search = SearchConfig::defaults();
  DataSpec data;
  EvalSpec eval;
  SurfaceSpec surface;
  std::filesystem::path output_dir = "runs/latest";
};

// Invalid configuration. what() carries "source:line:column: message" when the
// problem can be pinned to a place in the document.
class RunConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Parses and fully validates a YAML document; unknown keys are rejected.
RunConfig parse_run_config(const std::string& text, const std::string& source);
RunConfig load_run_config(const std::filesystem::path& path);

// Loads the dataset and splits it. Missing files raise RunConfigError.
std::pair<Dataset, Dataset> load_splits(const DataSpec& spec);

}  // namespace nasrl::cli
