#pragma once

#include <vector>

#include "nasrl/tensor.hpp"

namespace nasrl {

struct SgdOptions {
  double learning_rate = 0.025;
  double momentum = 0.9;
  double weight_decay = 3e-4;
};

// Momentum SGD over a fixed parameter list:
//   v <- momentum*v + grad + weight_decay*param;  param <- param - lr*v
// Velocity buffers are created lazily, one per parameter, in list order.
class SgdState {
 public:
  SgdState() = default;
  explicit SgdState(SgdOptions options);

  const SgdOptions& options() const noexcept { return options_; }
  void set_learning_rate(double lr);

  std::vector<std::vector<double>>& velocity() noexcept { return velocity_; }
  const std::vector<std::vector<double>>& velocity() const noexcept { return velocity_; }

 private:
  SgdOptions options_;
  std::vector<std::vector<double>> velocity_;
};

// Applies one update and zeroes the grads. Throws ContractViolation if any
// parameter has no gradient buffer.
void sgd_step(std::vector<Tensor>& params, SgdState& state);

}  // namespace nasrl
