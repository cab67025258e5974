#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "nasrl/ops.hpp"
#include "nasrl/rng.hpp"
#include "nasrl/search_space.hpp"
#include "nasrl/tensor.hpp"

namespace nasrl {

struct NetworkConfig {
  CellSpec cell;
  int layers = 5;
  int channels = 16;
  int in_channels = 3;
  int classes = 10;
  int stem_multiplier = 3;
  CandidateSets candidates;

  void validate() const;
};

// Channel bookkeeping for one cell position.
struct CellLayout {
  bool reduction = false;
  bool reduction_prev = false;
  int c_prev_prev = 0;
  int c_prev = 0;
  int c = 0;
};

// Reduction cells sit at floor(L/3) and floor(2L/3).
std::vector<CellLayout> cell_layouts(const NetworkConfig& config);
int classifier_inputs(const NetworkConfig& config);

struct ForwardContext {
  BnMode mode = BnMode::train;
  double bn_momentum = 0.1;
};

// Affine or plain batchnorm with running statistics.
class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(int channels, bool affine);

  Tensor operator()(const Tensor& x, const ForwardContext& ctx) const;
  void collect_parameters(std::vector<Tensor>& out) const;
  void collect_buffers(std::vector<BatchNormStats*>& out);

 private:
  Tensor gamma_;
  Tensor beta_;
  // Written only by forwards in BnMode::train.
  mutable BatchNormStats stats_;
};

// One candidate operation of a mixed edge.
class Operation {
 public:
  virtual ~Operation() = default;

  virtual Tensor forward(const Tensor& x, const ForwardContext& ctx) const = 0;
  virtual void collect_parameters(std::vector<Tensor>&) const {}
  virtual void collect_buffers(std::vector<BatchNormStats*>&) {}

  OpKind kind() const noexcept { return kind_; }
  int stride() const noexcept { return stride_; }

 protected:
  Operation(OpKind kind, int stride) : kind_(kind), stride_(stride) {}

 private:
  OpKind kind_;
  int stride_;
};

std::unique_ptr<Operation> make_operation(OpKind kind, int channels, int stride, Rng& rng);

struct MixedEdge {
  EdgeId id;
  int stride = 1;
  std::vector<OpKind> candidates;
  std::vector<std::unique_ptr<Operation>> ops;  // one weight bundle per candidate
};

class Cell {
 public:
  Cell(const CellSpec& spec, const CellLayout& layout, const std::vector<std::vector<OpKind>>& candidates, Rng& rng);

  // Each edge outputs Σ_o p_o·o(x); nodes sum their incoming edges; the
  // output concatenates the trailing `multiplier` intermediate nodes.
  Tensor forward_mixed(const Tensor& s0, const Tensor& s1, std::span<const std::vector<double>> probs,
                       const ForwardContext& ctx) const;

  // Each edge applies exactly its chosen op with the shared weights.
  Tensor forward_discrete(const Tensor& s0, const Tensor& s1, std::span<const int> choices,
                          const ForwardContext& ctx) const;

  bool reduction() const noexcept { return layout_.reduction; }
  const CellLayout& layout() const noexcept { return layout_; }
  const std::vector<MixedEdge>& edges() const noexcept { return edges_; }

  void collect_parameters(std::vector<Tensor>& out) const;
  void collect_buffers(std::vector<BatchNormStats*>& out);

 private:
  struct Preprocess {
    Tensor weight;
    int stride = 1;
    BatchNorm bn;
    Tensor operator()(const Tensor& x, const ForwardContext& ctx) const;
  };

  std::pair<Tensor, Tensor> preprocess(const Tensor& s0, const Tensor& s1, const ForwardContext& ctx) const;
  Tensor zero_node(const Tensor& s1_processed) const;
  Tensor combine(std::vector<Tensor>& states) const;

  CellSpec spec_;
  CellLayout layout_;
  Preprocess pre0_;
  Preprocess pre1_;
  std::vector<MixedEdge> edges_;
};

using EdgeProbabilities = std::vector<std::vector<double>>;

// Stem, stacked cells and a global-average-pool + linear classifier. All
// normal cells read one set of edge probabilities / choices and all reduction
// cells another.
class SuperNetwork {
 public:
  SuperNetwork(NetworkConfig config, std::uint64_t seed);

  const NetworkConfig& config() const noexcept { return config_; }
  const std::vector<Cell>& cells() const noexcept { return cells_; }

  Tensor forward_mixed(const Tensor& x, const EdgeProbabilities& normal, const EdgeProbabilities& reduction,
                       const ForwardContext& ctx) const;
  Tensor forward_discrete(const Tensor& x, const Genotype& g, const ForwardContext& ctx) const;

  // Stem output (both initial cell states) for a batch.
  Tensor stem(const Tensor& x, const ForwardContext& ctx) const;

  // Handles sharing storage with the network, in a fixed order.
  std::vector<Tensor> parameters() const;
  std::vector<BatchNormStats*> buffers();

 private:
  Tensor classify(const Tensor& features) const;

  NetworkConfig config_;
  Tensor stem_weight_;
  BatchNorm stem_bn_;
  std::vector<Cell> cells_;
  Tensor classifier_weight_;
  Tensor classifier_bias_;
};

// Closed-form parameter counts.
std::size_t op_parameter_count(OpKind kind, int channels);
// Everything outside the edges: stem, per-cell input preprocessing, classifier.
std::size_t backbone_parameter_count(const NetworkConfig& config);
std::size_t count_parameters(const Genotype& g, const NetworkConfig& config);
std::size_t count_supernet_parameters(const NetworkConfig& config);
// Parameters of the subnetwork using `normal_op` on every normal edge and
// `reduction_op` on every reduction edge, independent of the candidate sets.
std::size_t uniform_genotype_parameters(const NetworkConfig& config, OpKind normal_op, OpKind reduction_op);

// Multiply-accumulate count of one forward pass of A(g) for a single image.
double count_macs(const Genotype& g, const NetworkConfig& config, int height, int width);

}  // namespace nasrl
