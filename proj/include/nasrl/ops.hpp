#pragma once

#include <span>
#include <vector>

#include "nasrl/tensor.hpp"

namespace nasrl {

struct Conv2dOptions {
  int stride = 1;
  int pad_h = 0;
  int pad_w = 0;
  int dilation = 1;
  int groups = 1;

  // "same" padding for an odd square kernel at stride 1.
  static Conv2dOptions same(int kernel, int stride = 1, int dilation = 1, int groups = 1) {
    const int pad = dilation * (kernel - 1) / 2;
    return {stride, pad, pad, dilation, groups};
  }
};

// Cross-correlation. x: [N,Cin,H,W], w: [Cout,Cin/groups,kh,kw]; no bias.
Tensor conv2d(const Tensor& x, const Tensor& w, const Conv2dOptions& opt);

enum class PoolKind { max, avg };

// Average pooling excludes padded positions from the divisor.
Tensor pool2d(const Tensor& x, PoolKind kind, int kernel, int stride, int padding);

// Per-channel running statistics, updated as running = (1-m)·running + m·batch.
struct BatchNormStats {
  std::vector<double> mean;
  std::vector<double> var;

  explicit BatchNormStats(int channels = 0)
      : mean(static_cast<std::size_t>(channels), 0.0), var(static_cast<std::size_t>(channels), 1.0) {}
};

enum class BnMode {
  train,        // batch statistics, running stats updated
  batch_stats,  // batch statistics, running stats untouched (read-only forward)
  eval,         // running statistics
};

// gamma/beta may be empty tensors for a non-affine normalization. `running`
// may be null unless mode is train or eval.
Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats* running,
                   BnMode mode, double momentum = 0.1, double eps = 1e-5);

Tensor relu(const Tensor& x);

// x: [N,in], w: [out,in], b: [out] or empty.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = {});

Tensor concat(std::span<const Tensor> xs, int axis);
Tensor add(std::span<const Tensor> xs);
Tensor add(const Tensor& a, const Tensor& b);

// Σ_i weights[i] · xs[i] with constant (non-differentiated) weights.
Tensor weighted_sum(std::span<const Tensor> xs, std::span<const double> weights);
Tensor scale(const Tensor& x, double factor);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor sum(const Tensor& x);

// [N,C,H,W] -> [N,C]
Tensor global_avg_pool(const Tensor& x);

// Parameter-free stride-2 reduction: the first half of the channels is sampled
// at even offsets, the second half at odd offsets (zero beyond the border).
// Output is [N,C,ceil(H/2),ceil(W/2)].
Tensor factorized_subsample(const Tensor& x);

// Mean over the batch of -log softmax(logits)[label].
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace nasrl
