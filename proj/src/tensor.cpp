#include "nasrl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "nasrl/errors.hpp"

namespace nasrl {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw DimensionError("negative dimension in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, bool requires_grad) : storage_(std::make_shared<detail::Storage>()) {
  storage_->data.assign(shape_numel(shape), 0.0);
  storage_->shape = std::move(shape);
  storage_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : storage_(std::make_shared<detail::Storage>()) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " holds " + std::to_string(shape_numel(shape)) +
                         " elements, got " + std::to_string(values.size()));
  }
  storage_->shape = std::move(shape);
  storage_->data = std::move(values);
  storage_->requires_grad = requires_grad;
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  std::fill(t.storage_->data.begin(), t.storage_->data.end(), value);
  return t;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractViolation("item() on tensor of shape " + shape_str(shape()));
  return storage_->data[0];
}

std::span<double> Tensor::grad() {
  storage_->ensure_grad();
  return storage_->grad;
}

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ContractViolation("tensor has no gradient");
  return storage_->grad;
}

void Tensor::zero_grad() {
  if (has_grad()) std::fill(storage_->grad.begin(), storage_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  Tensor t(storage_->shape, storage_->data, storage_->requires_grad);
  if (has_grad()) t.storage_->grad = storage_->grad;
  return t;
}

Tensor Tensor::detach() const { return Tensor(storage_->shape, storage_->data, false); }

// ---------------------------------------------------------------------------

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* active_tape() noexcept { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!g_active_tape) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t && t->defined() && t->requires_grad(); });
}

bool should_record(std::span<const Tensor> inputs) {
  if (!g_active_tape) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor& t) { return t.defined() && t.requires_grad(); });
}

void Tape::record(std::vector<Tensor> inputs, const Tensor& output, BackwardFn backward) {
  Node node;
  node.inputs.reserve(inputs.size());
  for (auto& t : inputs) {
    if (t.defined()) node.inputs.push_back(t.storage());
  }
  node.output = output.storage();
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractViolation("backward() requires a scalar loss");
  }
  auto it = std::find_if(nodes_.rbegin(), nodes_.rend(),
                         [&](const Node& n) { return n.output == loss.storage(); });
  if (it == nodes_.rend()) throw ContractViolation("backward(): loss was not produced on this tape");

  auto& seed = *loss.storage();
  seed.ensure_grad();
  seed.grad[0] += 1.0;
  for (; it != nodes_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward();
  }
}

void backward(const Tensor& loss) {
  Tape* tape = active_tape();
  if (!tape) throw ContractViolation("backward() called with no active tape");
  tape->backward(loss);
}

}  // namespace nasrl
