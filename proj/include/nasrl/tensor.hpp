#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace nasrl {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Storage {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass or sgd touches it
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

// Reference-counted handle to an n-dimensional array of doubles. Copies share
// storage; use clone() for a deep copy. A default-constructed Tensor is empty
// and stands for "absent" in optional operands (e.g. non-affine batchnorm).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(std::move(shape), requires_grad);
  }
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  bool defined() const noexcept { return static_cast<bool>(storage_); }
  explicit operator bool() const noexcept { return defined(); }

  const Shape& shape() const { return storage_->shape; }
  int dim(std::size_t axis) const { return storage_->shape.at(axis); }
  std::size_t rank() const { return storage_->shape.size(); }
  std::size_t numel() const { return storage_->data.size(); }

  std::span<double> data() { return storage_->data; }
  std::span<const double> data() const { return storage_->data; }
  double item() const;

  bool requires_grad() const { return storage_->requires_grad; }
  void set_requires_grad(bool on) { storage_->requires_grad = on; }

  bool has_grad() const { return storage_->grad.size() == storage_->data.size(); }
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();

  Tensor clone() const;
  // Same values, no gradient tracking, independent storage.
  Tensor detach() const;

  bool same_storage(const Tensor& other) const { return storage_ == other.storage_; }
  const std::shared_ptr<detail::Storage>& storage() const { return storage_; }

 private:
  std::shared_ptr<detail::Storage> storage_;
};

// Records differentiable operations in execution order, which is already a
// topological order of the graph. A tape is confined to one thread; ops look
// up the calling thread's active tape, so independent tapes may run
// concurrently over read-only shared weights.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::vector<Tensor> inputs, const Tensor& output, BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1 and runs every node at or before the node that
  // produced `loss`, newest first. Parameter grads accumulate.
  void backward(const Tensor& loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  void clear() noexcept { nodes_.clear(); }

 private:
  struct Node {
    std::vector<std::shared_ptr<detail::Storage>> inputs;
    std::shared_ptr<detail::Storage> output;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

Tape* active_tape() noexcept;

class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// True when an op over `inputs` must be recorded on the active tape.
bool should_record(std::initializer_list<const Tensor*> inputs);
bool should_record(std::span<const Tensor> inputs);

void backward(const Tensor& loss);

}  // namespace nasrl
