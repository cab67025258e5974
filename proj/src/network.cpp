#include "nasrl/network.hpp"

#include <cmath>

#include "nasrl/errors.hpp"

namespace nasrl {

namespace {

Tensor he_normal(Shape shape, int fan_in, Rng& rng) {
  Tensor t(std::move(shape), true);
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& v : t.data()) v = sd * standard_normal(rng);
  return t;
}

Tensor conv_weight(int cout, int cin_per_group, int kh, int kw, Rng& rng) {
  return he_normal({cout, cin_per_group, kh, kw}, cin_per_group * kh * kw, rng);
}

int reduced(int size, int stride) { return (size + stride - 1) / stride; }

// --- candidate operations ---------------------------------------------------

class ZeroOp final : public Operation {
 public:
  explicit ZeroOp(int stride) : Operation(OpKind::none, stride) {}
  Tensor forward(const Tensor& x, const ForwardContext&) const override {
    return Tensor::zeros({x.dim(0), x.dim(1), reduced(x.dim(2), stride()), reduced(x.dim(3), stride())});
  }
};

class SkipOp final : public Operation {
 public:
  explicit SkipOp(int stride) : Operation(OpKind::skip_connect, stride) {}
  Tensor forward(const Tensor& x, const ForwardContext&) const override {
    return stride() == 1 ? x : factorized_subsample(x);
  }
};

// ReLU -> depthwise k×k -> pointwise -> BN, applied twice (second pass stride 1).
class SepConvOp final : public Operation {
 public:
  SepConvOp(OpKind kind, int k, int c, int stride, Rng& rng) : Operation(kind, stride), k_(k) {
    for (auto& b : blocks_) {
      b.depthwise = conv_weight(c, 1, k, k, rng);
      b.pointwise = conv_weight(c, c, 1, 1, rng);
      b.bn = BatchNorm(c, true);
    }
  }
  Tensor forward(const Tensor& x, const ForwardContext& ctx) const override {
    Tensor y = x;
    for (int i = 0; i < 2; ++i) {
      const auto& b = blocks_[i];
      y = relu(y);
      y = conv2d(y, b.depthwise, Conv2dOptions::same(k_, i == 0 ? stride() : 1, 1, y.dim(1)));
      y = conv2d(y, b.pointwise, {});
      y = b.bn(y, ctx);
    }
    return y;
  }
  void collect_parameters(std::vector<Tensor>& out) const override {
    for (const auto& b : blocks_) {
      out.push_back(b.depthwise);
      out.push_back(b.pointwise);
      b.bn.collect_parameters(out);
    }
  }
  void collect_buffers(std::vector<BatchNormStats*>& out) override {
    for (auto& b : blocks_) b.bn.collect_buffers(out);
  }

 private:
  struct Block {
    Tensor depthwise, pointwise;
    BatchNorm bn;
  };
  int k_;
  Block blocks_[2];
};

// ReLU -> dilated (2) depthwise k×k -> pointwise -> BN.
class DilConvOp final : public Operation {
 public:
  DilConvOp(OpKind kind, int k, int c, int stride, Rng& rng)
      : Operation(kind, stride),
        k_(k),
        depthwise_(conv_weight(c, 1, k, k, rng)),
        pointwise_(conv_weight(c, c, 1, 1, rng)),
        bn_(c, true) {}
  Tensor forward(const Tensor& x, const ForwardContext& ctx) const override {
    Tensor y = relu(x);
    y = conv2d(y, depthwise_, Conv2dOptions::same(k_, stride(), 2, y.dim(1)));
    y = conv2d(y, pointwise_, {});
    return bn_(y, ctx);
  }
  void collect_parameters(std::vector<Tensor>& out) const override {
    out.push_back(depthwise_);
    out.push_back(pointwise_);
    bn_.collect_parameters(out);
  }
  void collect_buffers(std::vector<BatchNormStats*>& out) override { bn_.collect_buffers(out); }

 private:
  int k_;
  Tensor depthwise_, pointwise_;
  BatchNorm bn_;
};

// ReLU -> one or two full convolutions -> BN. conv_3x1_1x3 stacks a 3×1 and
// a 1×3 kernel inside the same wrapper.
class ReluConvBnOp final : public Operation {
 public:
  ReluConvBnOp(OpKind kind, int c, int stride, Rng& rng) : Operation(kind, stride), bn_(c, true) {
    switch (kind) {
      case OpKind::conv_1x1:
        weights_.push_back(conv_weight(c, c, 1, 1, rng));
        options_.push_back({stride, 0, 0, 1, 1});
        break;
      case OpKind::conv_3x3:
        weights_.push_back(conv_weight(c, c, 3, 3, rng));
        options_.push_back(Conv2dOptions::same(3, stride));
        break;
      case OpKind::conv_3x1_1x3:
        weights_.push_back(conv_weight(c, c, 3, 1, rng));
        options_.push_back({stride, 1, 0, 1, 1});
        weights_.push_back(conv_weight(c, c, 1, 3, rng));
        options_.push_back({1, 0, 1, 1, 1});
        break;
      default:
        throw ContractViolation("ReluConvBnOp: unsupported kind");
    }
  }
  Tensor forward(const Tensor& x, const ForwardContext& ctx) const override {
    Tensor y = relu(x);
    for (std::size_t i = 0; i < weights_.size(); ++i) y = conv2d(y, weights_[i], options_[i]);
    return bn_(y, ctx);
  }
  void collect_parameters(std::vector<Tensor>& out) const override {
    out.insert(out.end(), weights_.begin(), weights_.end());
    bn_.collect_parameters(out);
  }
  void collect_buffers(std::vector<BatchNormStats*>& out) override { bn_.collect_buffers(out); }

 private:
  std::vector<Tensor> weights_;
  std::vector<Conv2dOptions> options_;
  BatchNorm bn_;
};

// Pooling followed by a non-affine BN.
class PoolBnOp final : public Operation {
 public:
  PoolBnOp(OpKind kind, PoolKind pool, int k, int c, int stride)
      : Operation(kind, stride), pool_(pool), k_(k), bn_(c, false) {}
  Tensor forward(const Tensor& x, const ForwardContext& ctx) const override {
    return bn_(pool2d(x, pool_, k_, stride(), (k_ - 1) / 2), ctx);
  }
  void collect_buffers(std::vector<BatchNormStats*>& out) override { bn_.collect_buffers(out); }

 private:
  PoolKind pool_;
  int k_;
  BatchNorm bn_;
};

}  // namespace

// --- configuration ----------------------------------------------------------

void NetworkConfig::validate() const {
  cell.validate();
  if (layers < 3) throw ConfigError("network: layers must be >= 3 to place two reduction cells");
  if (channels < 2) throw ConfigError("network: channels must be >= 2");
  if (in_channels < 1) throw ConfigError("network: in_channels must be >= 1");
  if (classes < 2) throw ConfigError("network: classes must be >= 2");
  if (stem_multiplier < 1) throw ConfigError("network: stem_multiplier must be >= 1");
  const auto edges = cell_edges(cell).size();
  for (CellType t : {CellType::normal, CellType::reduction}) {
    const auto& c = candidates.of(t);
    if (c.size() != edges) {
      throw ConfigError(std::string("network: ") + std::string(cell_type_name(t)) + " candidate sets cover " +
                        std::to_string(c.size()) + " edges, cell has " + std::to_string(edges));
    }
    for (const auto& list : c)
      if (list.empty()) throw ConfigError("network: empty candidate list on an edge");
  }
}

std::vector<CellLayout> cell_layouts(const NetworkConfig& config) {
  std::vector<CellLayout> out;
  int c_pp = config.stem_multiplier * config.channels;
  int c_p = c_pp;
  int c = config.channels;
  bool reduction_prev = false;
  const int r1 = config.layers / 3, r2 = 2 * config.layers / 3;
  for (int i = 0; i < config.layers; ++i) {
    CellLayout l;
    l.reduction = i == r1 || i == r2;
    if (l.reduction) c *= 2;
    l.reduction_prev = reduction_prev;
    l.c_prev_prev = c_pp;
    l.c_prev = c_p;
    l.c = c;
    out.push_back(l);
    reduction_prev = l.reduction;
    c_pp = c_p;
    c_p = config.cell.multiplier * c;
  }
  return out;
}

int classifier_inputs(const NetworkConfig& config) {
  const auto layouts = cell_layouts(config);
  return config.cell.multiplier * layouts.back().c;
}

// --- BatchNorm --------------------------------------------------------------

BatchNorm::BatchNorm(int channels, bool affine) : stats_(channels) {
  if (affine) {
    gamma_ = Tensor::full({channels}, 1.0, true);
    beta_ = Tensor::zeros({channels}, true);
  }
}

Tensor BatchNorm::operator()(const Tensor& x, const ForwardContext& ctx) const {
  return batchnorm2d(x, gamma_, beta_, &stats_, ctx.mode, ctx.bn_momentum);
}

void BatchNorm::collect_parameters(std::vector<Tensor>& out) const {
  if (gamma_.defined()) {
    out.push_back(gamma_);
    out.push_back(beta_);
  }
}

void BatchNorm::collect_buffers(std::vector<BatchNormStats*>& out) { out.push_back(&stats_); }

std::unique_ptr<Operation> make_operation(OpKind kind, int c, int stride, Rng& rng) {
  switch (kind) {
    case OpKind::none: return std::make_unique<ZeroOp>(stride);
    case OpKind::skip_connect: return std::make_unique<SkipOp>(stride);
    case OpKind::sep_conv_3x3: return std::make_unique<SepConvOp>(kind, 3, c, stride, rng);
    case OpKind::sep_conv_5x5: return std::make_unique<SepConvOp>(kind, 5, c, stride, rng);
    case OpKind::sep_conv_7x7: return std::make_unique<SepConvOp>(kind, 7, c, stride, rng);
    case OpKind::dil_conv_3x3: return std::make_unique<DilConvOp>(kind, 3, c, stride, rng);
    case OpKind::dil_conv_5x5: return std::make_unique<DilConvOp>(kind, 5, c, stride, rng);
    case OpKind::conv_1x1:
    case OpKind::conv_3x3:
    case OpKind::conv_3x1_1x3: return std::make_unique<ReluConvBnOp>(kind, c, stride, rng);
    case OpKind::max_pool_3x3: return std::make_unique<PoolBnOp>(kind, PoolKind::max, 3, c, stride);
    case OpKind::avg_pool_3x3: return std::make_unique<PoolBnOp>(kind, PoolKind::avg, 3, c, stride);
    case OpKind::max_pool_5x5: return std::make_unique<PoolBnOp>(kind, PoolKind::max, 5, c, stride);
    case OpKind::max_pool_7x7: return std::make_unique<PoolBnOp>(kind, PoolKind::max, 7, c, stride);
  }
  throw ContractViolation("make_operation: unknown kind");
}

// --- Cell -------------------------------------------------------------------

Tensor Cell::Preprocess::operator()(const Tensor& x, const ForwardContext& ctx) const {
  return bn(conv2d(relu(x), weight, {stride, 0, 0, 1, 1}), ctx);
}

Cell::Cell(const CellSpec& spec, const CellLayout& layout, const std::vector<std::vector<OpKind>>& candidates,
           Rng& rng)
    : spec_(spec), layout_(layout) {
  pre0_.weight = conv_weight(layout.c, layout.c_prev_prev, 1, 1, rng);
  pre0_.stride = layout.reduction_prev ? 2 : 1;
  pre0_.bn = BatchNorm(layout.c, true);
  pre1_.weight = conv_weight(layout.c, layout.c_prev, 1, 1, rng);
  pre1_.bn = BatchNorm(layout.c, true);

  const auto ids = cell_edges(spec);
  if (candidates.size() != ids.size()) throw ContractViolation("Cell: candidate list count != edge count");
  edges_.reserve(ids.size());
  for (std::size_t e = 0; e < ids.size(); ++e) {
    MixedEdge edge;
    edge.id = ids[e];
    edge.stride = layout.reduction && ids[e].from < spec.input_nodes ? 2 : 1;
    edge.candidates = candidates[e];
    for (OpKind k : edge.candidates) edge.ops.push_back(make_operation(k, layout.c, edge.stride, rng));
    edges_.push_back(std::move(edge));
  }
}

std::pair<Tensor, Tensor> Cell::preprocess(const Tensor& s0, const Tensor& s1, const ForwardContext& ctx) const {
  return {pre0_(s0, ctx), pre1_(s1, ctx)};
}

Tensor Cell::zero_node(const Tensor& s1) const {
  const int s = layout_.reduction ? 2 : 1;
  return Tensor::zeros({s1.dim(0), s1.dim(1), reduced(s1.dim(2), s), reduced(s1.dim(3), s)});
}

Tensor Cell::combine(std::vector<Tensor>& states) const {
  std::vector<Tensor> tail(states.end() - spec_.multiplier, states.end());
  return concat(tail, 1);
}

Tensor Cell::forward_mixed(const Tensor& s0, const Tensor& s1, std::span<const std::vector<double>> probs,
                           const ForwardContext& ctx) const {
  if (probs.size() != edges_.size()) {
    throw ContractViolation("forward_mixed: " + std::to_string(probs.size()) + " probability vectors for " +
                            std::to_string(edges_.size()) + " edges");
  }
  auto [p0, p1] = preprocess(s0, s1, ctx);
  std::vector<Tensor> states{p0, p1};
  std::size_t e = 0;
  for (int j = 0; j < spec_.intermediate_nodes; ++j) {
    std::vector<Tensor> incoming;
    const int to = spec_.input_nodes + j;
    for (int from = 0; from < to; ++from, ++e) {
      const auto& edge = edges_[e];
      const auto& p = probs[e];
      if (p.size() != edge.ops.size()) {
        throw ContractViolation("forward_mixed: edge " + std::to_string(e) + " has " + std::to_string(edge.ops.size()) +
                                " candidates but " + std::to_string(p.size()) + " probabilities");
      }
      std::vector<Tensor> outs;
      std::vector<double> weights;
      for (std::size_t o = 0; o < edge.ops.size(); ++o) {
        if (p[o] == 0.0) continue;
        outs.push_back(edge.ops[o]->forward(states[from], ctx));
        weights.push_back(p[o]);
      }
      incoming.push_back(outs.empty() ? zero_node(states[1]) : weighted_sum(outs, weights));
    }
    states.push_back(add(incoming));
  }
  return combine(states);
}

Tensor Cell::forward_discrete(const Tensor& s0, const Tensor& s1, std::span<const int> choices,
                              const ForwardContext& ctx) const {
  if (choices.size() != edges_.size()) throw InvalidGenotype("forward_discrete: genotype edge count mismatch");
  auto [p0, p1] = preprocess(s0, s1, ctx);
  std::vector<Tensor> states{p0, p1};
  std::size_t e = 0;
  for (int j = 0; j < spec_.intermediate_nodes; ++j) {
    std::vector<Tensor> incoming;
    const int to = spec_.input_nodes + j;
    for (int from = 0; from < to; ++from, ++e) {
      const int c = choices[e];
      if (c == Genotype::kPruned) continue;
      if (c < 0 || c >= static_cast<int>(edges_[e].ops.size())) {
        throw InvalidGenotype("forward_discrete: edge " + std::to_string(e) + " selects index " + std::to_string(c) +
                              " outside its " + std::to_string(edges_[e].ops.size()) + " candidates");
      }
      const auto& op = *edges_[e].ops[static_cast<std::size_t>(c)];
      if (op.kind() == OpKind::none) continue;
      incoming.push_back(op.forward(states[from], ctx));
    }
    states.push_back(incoming.empty() ? zero_node(states[1]) : add(incoming));
  }
  return combine(states);
}

void Cell::collect_parameters(std::vector<Tensor>& out) const {
  out.push_back(pre0_.weight);
  pre0_.bn.collect_parameters(out);
  out.push_back(pre1_.weight);
  pre1_.bn.collect_parameters(out);
  for (const auto& edge : edges_)
    for (const auto& op : edge.ops) op->collect_parameters(out);
}

void Cell::collect_buffers(std::vector<BatchNormStats*>& out) {
  pre0_.bn.collect_buffers(out);
  pre1_.bn.collect_buffers(out);
  for (auto& edge : edges_)
    for (auto& op : edge.ops) op->collect_buffers(out);
}

// --- SuperNetwork -----------------------------------------------------------

SuperNetwork::SuperNetwork(NetworkConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  const int stem_c = config_.stem_multiplier * config_.channels;
  stem_weight_ = conv_weight(stem_c, config_.in_channels, 3, 3, rng);
  stem_bn_ = BatchNorm(stem_c, true);
  for (const auto& layout : cell_layouts(config_)) {
    const auto& cands = layout.reduction ? config_.candidates.reduction : config_.candidates.normal;
    cells_.emplace_back(config_.cell, layout, cands, rng);
  }
  const int features = classifier_inputs(config_);
  classifier_weight_ = he_normal({config_.classes, features}, features, rng);
  classifier_bias_ = Tensor::zeros({config_.classes}, true);
}

Tensor SuperNetwork::stem(const Tensor& x, const ForwardContext& ctx) const {
  if (x.rank() != 4 || x.dim(1) != config_.in_channels) {
    throw DimensionError("network input must be [N," + std::to_string(config_.in_channels) + ",H,W], got " +
                         shape_str(x.shape()));
  }
  return stem_bn_(conv2d(x, stem_weight_, Conv2dOptions::same(3)), ctx);
}

Tensor SuperNetwork::classify(const Tensor& features) const {
  return linear(global_avg_pool(features), classifier_weight_, classifier_bias_);
}

Tensor SuperNetwork::forward_mixed(const Tensor& x, const EdgeProbabilities& normal,
                                   const EdgeProbabilities& reduction, const ForwardContext& ctx) const {
  Tensor s0 = stem(x, ctx);
  Tensor s1 = s0;
  for (const auto& cell : cells_) {
    Tensor next = cell.forward_mixed(s0, s1, cell.reduction() ? reduction : normal, ctx);
    s0 = s1;
    s1 = next;
  }
  return classify(s1);
}

Tensor SuperNetwork::forward_discrete(const Tensor& x, const Genotype& g, const ForwardContext& ctx) const {
  validate_genotype(g, config_.candidates);
  Tensor s0 = stem(x, ctx);
  Tensor s1 = s0;
  for (const auto& cell : cells_) {
    Tensor next = cell.forward_discrete(s0, s1, cell.reduction() ? g.reduction : g.normal, ctx);
    s0 = s1;
    s1 = next;
  }
  return classify(s1);
}

std::vector<Tensor> SuperNetwork::parameters() const {
  std::vector<Tensor> out{stem_weight_};
  stem_bn_.collect_parameters(out);
  for (const auto& cell : cells_) cell.collect_parameters(out);
  out.push_back(classifier_weight_);
  out.push_back(classifier_bias_);
  return out;
}

std::vector<BatchNormStats*> SuperNetwork::buffers() {
  std::vector<BatchNormStats*> out;
  stem_bn_.collect_buffers(out);
  for (auto& cell : cells_) cell.collect_buffers(out);
  return out;
}

// --- counting ---------------------------------------------------------------

std::size_t op_parameter_count(OpKind kind, int channels) {
  const std::size_t c = static_cast<std::size_t>(channels);
  const std::size_t bn = 2 * c;
  switch (kind) {
    case OpKind::sep_conv_3x3: return 2 * (c * 9 + c * c + bn);
    case OpKind::sep_conv_5x5: return 2 * (c * 25 + c * c + bn);
    case OpKind::sep_conv_7x7: return 2 * (c * 49 + c * c + bn);
    case OpKind::dil_conv_3x3: return c * 9 + c * c + bn;
    case OpKind::dil_conv_5x5: return c * 25 + c * c + bn;
    case OpKind::conv_1x1: return c * c + bn;
    case OpKind::conv_3x3: return 9 * c * c + bn;
    case OpKind::conv_3x1_1x3: return 6 * c * c + bn;
    default: return 0;
  }
}

std::size_t backbone_parameter_count(const NetworkConfig& config) {
  const std::size_t stem_c = static_cast<std::size_t>(config.stem_multiplier) * config.channels;
  std::size_t total = stem_c * config.in_channels * 9 + 2 * stem_c;
  for (const auto& l : cell_layouts(config)) {
    const std::size_t c = static_cast<std::size_t>(l.c);
    total += c * l.c_prev_prev + 2 * c;
    total += c * l.c_prev + 2 * c;
  }
  const std::size_t features = static_cast<std::size_t>(classifier_inputs(config));
  total += features * config.classes + config.classes;
  return total;
}

std::size_t count_parameters(const Genotype& g, const NetworkConfig& config) {
  validate_genotype(g, config.candidates);
  std::size_t total = backbone_parameter_count(config);
  const auto normal_ops = resolve_ops(g.normal, config.candidates.normal);
  const auto reduction_ops = resolve_ops(g.reduction, config.candidates.reduction);
  for (const auto& l : cell_layouts(config)) {
    for (OpKind k : l.reduction ? reduction_ops : normal_ops) total += op_parameter_count(k, l.c);
  }
  return total;
}

std::size_t count_supernet_parameters(const NetworkConfig& config) {
  std::size_t total = backbone_parameter_count(config);
  for (const auto& l : cell_layouts(config)) {
    for (const auto& list : l.reduction ? config.candidates.reduction : config.candidates.normal)
      for (OpKind k : list) total += op_parameter_count(k, l.c);
  }
  return total;
}

std::size_t uniform_genotype_parameters(const NetworkConfig& config, OpKind normal_op, OpKind reduction_op) {
  const std::size_t edges = cell_edges(config.cell).size();
  std::size_t total = backbone_parameter_count(config);
  for (const auto& l : cell_layouts(config)) {
    total += edges * op_parameter_count(l.reduction ? reduction_op : normal_op, l.c);
  }
  return total;
}

namespace {

double conv_macs(double cout, double cin_per_group, double kh, double kw, double oh, double ow) {
  return cout * cin_per_group * kh * kw * oh * ow;
}

double op_macs(OpKind kind, int channels, int stride, int h, int w) {
  const double c = channels;
  const double oh = reduced(h, stride), ow = reduced(w, stride);
  switch (kind) {
    case OpKind::sep_conv_3x3:
    case OpKind::sep_conv_5x5:
    case OpKind::sep_conv_7x7: {
      const double k = kind == OpKind::sep_conv_3x3 ? 3 : kind == OpKind::sep_conv_5x5 ? 5 : 7;
      return 2 * (conv_macs(c, 1, k, k, oh, ow) + conv_macs(c, c, 1, 1, oh, ow));
    }
    case OpKind::dil_conv_3x3:
    case OpKind::dil_conv_5x5: {
      const double k = kind == OpKind::dil_conv_3x3 ? 3 : 5;
      return conv_macs(c, 1, k, k, oh, ow) + conv_macs(c, c, 1, 1, oh, ow);
    }
    case OpKind::conv_1x1: return conv_macs(c, c, 1, 1, oh, ow);
    case OpKind::conv_3x3: return conv_macs(c, c, 3, 3, oh, ow);
    case OpKind::conv_3x1_1x3: return conv_macs(c, c, 3, 1, oh, ow) + conv_macs(c, c, 1, 3, oh, ow);
    default: return 0.0;
  }
}

}  // namespace

double count_macs(const Genotype& g, const NetworkConfig& config, int height, int width) {
  validate_genotype(g, config.candidates);
  const auto normal_ops = resolve_ops(g.normal, config.candidates.normal);
  const auto reduction_ops = resolve_ops(g.reduction, config.candidates.reduction);
  const auto edges = cell_edges(config.cell);
  const double stem_c = static_cast<double>(config.stem_multiplier) * config.channels;
  double total = conv_macs(stem_c, config.in_channels, 3, 3, height, width);
  int h = height, w = width;
  for (const auto& l : cell_layouts(config)) {
    total += conv_macs(l.c, l.c_prev_prev, 1, 1, h, w) + conv_macs(l.c, l.c_prev, 1, 1, h, w);
    const auto& ops = l.reduction ? reduction_ops : normal_ops;
    for (std::size_t e = 0; e < edges.size(); ++e) {
      const int stride = l.reduction && edges[e].from < config.cell.input_nodes ? 2 : 1;
      total += op_macs(ops[e], l.c, stride, h, w);
    }
    if (l.reduction) {
      h = reduced(h, 2);
      w = reduced(w, 2);
    }
  }
  total += static_cast<double>(classifier_inputs(config)) * config.classes;
  return total;
}

}  // namespace nasrl
