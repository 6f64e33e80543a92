#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dctm {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised when operand shapes are incompatible with an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a forward op produces NaN/Inf from finite inputs, or when a
/// numeric precondition (eps > 0, label range, ...) is violated.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Tape;

namespace detail {

struct NodeBase {
  std::uint64_t id = 0;
  const Tape* owner = nullptr;  // tape that produced this node, if any
  bool requires_grad = false;
};

template <typename T>
struct Node : NodeBase {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something is accumulated
};

std::uint64_t next_node_id();

}  // namespace detail

/// Dense row-major n-d array with optional gradient tracking.
///
/// A Tensor is a shared handle: copies alias the same storage, as with most
/// autograd frameworks. Use clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(T v) { return Tensor(Shape{1}, v); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  T& operator[](std::size_t i) { return node_->data[i]; }
  const T& operator[](std::size_t i) const { return node_->data[i]; }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
  }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient storage; empty span when no gradient has been accumulated.
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> grad_mut() { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  /// Deep copy that is detached from any tape.
  Tensor clone() const;
  bool same_node(const Tensor& other) const { return node_ == other.node_; }
  std::uint64_t id() const { return node_->id; }

  // Internal access for ops and the tape.
  const std::shared_ptr<detail::Node<T>>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node<T>> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

/// Define-by-run record of differentiable operations.
///
/// Ops executed while a TapeScope is active, with at least one input that
/// requires grad, append an entry here. backward() replays the entries in
/// reverse, then clears the tape.
class Tape {
 public:
  struct Entry {
    std::vector<std::uint64_t> inputs;
    std::uint64_t output = 0;
    std::function<void()> rule;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::vector<std::uint64_t> inputs, std::uint64_t output,
              std::function<void()> rule);
  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  void clear() { entries_.clear(); }

  template <typename T>
  void backward(const Tensor<T>& loss);

  /// Tape receiving records on the calling thread, or nullptr.
  static Tape* active();

 private:
  friend class TapeScope;
  std::vector<Entry> entries_;
};

/// Makes a tape the active recorder for the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Adds `src` into the gradient buffer of `dst`, allocating it on first use.
template <typename T>
void accumulate_grad(detail::Node<T>& dst, std::span<const T> src);

/// Convenience: record a result against the active tape when needed.
/// Returns true when `out` is tracked and the caller should attach a rule.
template <typename T>
bool should_record(std::initializer_list<const Tensor<T>*> inputs);

}  // namespace dctm
