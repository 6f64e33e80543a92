#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>

#include "dctm/ops.hpp"
#include "dctm/random.hpp"
#include "dctm/tensor.hpp"

namespace dctm {

template <typename T>
using ParamVisitor = std::function<void(const std::string& name, Tensor<T>& param)>;

template <typename T>
Tensor<T> uniform_param(Shape shape, double bound, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  t.set_requires_grad(true);
  return t;
}

template <typename T>
Tensor<T> constant_param(Shape shape, T value) {
  Tensor<T> t(std::move(shape), value);
  t.set_requires_grad(true);
  return t;
}

/// y = x W + b over the last axis; W is [in, out].
template <typename T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;

  static Linear init(std::size_t in, std::size_t out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Linear l;
    l.weight = uniform_param<T>({in, out}, bound, rng);
    l.bias = uniform_param<T>({out}, bound, rng);
    return l;
  }
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".weight", weight);
    fn(prefix + ".bias", bias);
  }
};

/// Affine parameters of a layer norm (gain = 1, bias = 0 at init).
template <typename T>
struct NormAffine {
  Tensor<T> gain;
  Tensor<T> bias;

  static NormAffine init(std::size_t n) { return {constant_param<T>({n}, T(1)), constant_param<T>({n}, T(0))}; }
  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".gain", gain);
    fn(prefix + ".bias", bias);
  }
};

}  // namespace dctm
