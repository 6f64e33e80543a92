#pragma once

// Helpers for implementing differentiable ops on top of Tensor/Tape.

#include <bit>
#include <cmath>
#include <cstdint>
#include <type_traits>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "dctm/tensor.hpp"

namespace dctm::detail {

template <typename T>
void check_finite(const char* op, std::span<const T> values) {
  // A value is non-finite exactly when its exponent bits are all set.
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  constexpr Bits exp_mask = sizeof(T) == 4 ? Bits(0x7f800000u) : Bits(0x7ff0000000000000ull);
  Bits bad = 0;
  for (const T v : values) bad |= Bits((std::bit_cast<Bits>(v) & exp_mask) == exp_mask);
  if (bad) throw NumericError(std::string(op) + ": produced a non-finite value");
}

/// Wraps `data` as the output of `op`. When any input is tracked on the active
/// tape, `rule(upstream_grad)` is registered to run during backward.
template <typename T, typename Rule>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                      std::initializer_list<const Tensor<T>*> inputs, Rule&& rule) {
  check_finite<T>(op, data);
  auto node = std::make_shared<Node<T>>();
  node->id = next_node_id();
  node->shape = std::move(shape);
  node->data = std::move(data);
  if (should_record<T>(inputs)) {
    Tape* tape = Tape::active();
    node->requires_grad = true;
    node->owner = tape;
    std::vector<std::uint64_t> ids;
    for (const auto* in : inputs)
      if (in && in->defined()) ids.push_back(in->id());
    tape->record(std::move(ids), node->id,
                 [node, r = std::forward<Rule>(rule)]() mutable {
                   if (node->grad.empty()) return;
                   r(std::span<const T>(node->grad));
                 });
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
void accumulate(const Tensor<T>& t, std::span<const T> g) {
  if (t.defined() && t.requires_grad()) accumulate_grad(*t.node(), g);
}

template <typename T>
void accumulate(const Tensor<T>& t, const std::vector<T>& g) {
  accumulate(t, std::span<const T>(g));
}

}  // namespace dctm::detail
