#include "dctm/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>

namespace dctm {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {
std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

namespace {
void validate_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
  for (auto e : shape)
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
}
}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : node_(std::make_shared<detail::Node<T>>()) {
  validate_shape(shape);
  node_->id = detail::next_node_id();
  node_->data.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<detail::Node<T>>()) {
  validate_shape(shape);
  if (shape_numel(shape) != values.size())
    throw ShapeError("shape " + shape_str(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  node_->id = detail::next_node_id();
  node_->shape = std::move(shape);
  node_->data = std::move(values);
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
  return node_->data[0];
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor<T> out(shape(), std::vector<T>(node_->data));
  out.node_->requires_grad = node_->requires_grad;
  return out;
}

template class Tensor<float>;
template class Tensor<double>;

// ---------------------------------------------------------------------------

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* Tape::active() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

void Tape::record(std::vector<std::uint64_t> inputs, std::uint64_t output,
                  std::function<void()> rule) {
  entries_.push_back(Entry{std::move(inputs), output, std::move(rule)});
}

template <typename T>
void Tape::backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ShapeError("backward() needs a scalar loss, got " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  if (loss.node()->owner != this) throw std::logic_error("backward(): loss was not recorded on this tape");
  auto& node = *loss.node();
  node.grad.assign(1, T(1));
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->rule();
  entries_.clear();
}

template void Tape::backward<float>(const Tensor<float>&);
template void Tape::backward<double>(const Tensor<double>&);

template <typename T>
void accumulate_grad(detail::Node<T>& dst, std::span<const T> src) {
  if (dst.grad.empty()) {
    dst.grad.assign(src.begin(), src.end());
    return;
  }
  for (std::size_t i = 0; i < src.size(); ++i) dst.grad[i] += src[i];
}

template void accumulate_grad<float>(detail::Node<float>&, std::span<const float>);
template void accumulate_grad<double>(detail::Node<double>&, std::span<const double>);

template <typename T>
bool should_record(std::initializer_list<const Tensor<T>*> inputs) {
  if (Tape::active() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor<T>* t) { return t && t->defined() && t->requires_grad(); });
}

template bool should_record<float>(std::initializer_list<const Tensor<float>*>);
template bool should_record<double>(std::initializer_list<const Tensor<double>*>);

}  // namespace dctm
