#include "nasrl/sgd.hpp"

#include "nasrl/errors.hpp"

namespace nasrl {

SgdState::SgdState(SgdOptions options) : options_(options) { set_learning_rate(options.learning_rate); }

void SgdState::set_learning_rate(double lr) {
  if (!(lr > 0.0)) throw ConfigError("sgd: learning rate must be positive");
  options_.learning_rate = lr;
  if (options_.momentum < 0.0 || options_.momentum >= 1.0) throw ConfigError("sgd: momentum must lie in [0,1)");
  if (options_.weight_decay < 0.0) throw ConfigError("sgd: weight decay must be non-negative");
}

void sgd_step(std::vector<Tensor>& params, SgdState& state) {
  auto& velocity = state.velocity();
  if (velocity.empty()) {
    velocity.reserve(params.size());
    for (const auto& p : params) velocity.emplace_back(p.numel(), 0.0);
  }
  if (velocity.size() != params.size()) {
    throw ContractViolation("sgd_step: parameter list changed size since the first step");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) throw ContractViolation("sgd_step: parameter " + std::to_string(i) + " has no grad");
    if (velocity[i].size() != params[i].numel()) throw ContractViolation("sgd_step: velocity shape mismatch");
  }
  const auto& opt = state.options();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto data = params[i].data();
    auto grad = params[i].grad();
    auto& v = velocity[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      v[j] = opt.momentum * v[j] + grad[j] + opt.weight_decay * data[j];
      data[j] -= opt.learning_rate * v[j];
    }
    params[i].zero_grad();
  }
}

}  // namespace nasrl
