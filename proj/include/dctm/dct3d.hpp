#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "dctm/tensor.hpp"

namespace dctm {

/// Frequency triple (i, j, k) along the (depth, height, width) axes.
struct FreqIndex {
  std::size_t i = 0, j = 0, k = 0;
  bool operator==(const FreqIndex&) const = default;
};

using Extents3 = std::array<std::size_t, 3>;

/// Orthonormal 3-D DCT-II basis.
///
/// kernel(i,j,k)(x,y,z) = a_i a_j a_k cos(pi(2x+1)i / 2Nd) cos(pi(2y+1)j / 2Nh)
/// cos(pi(2z+1)k / 2Nw), with a_0 = sqrt(1/N) and a_n = sqrt(2/N) otherwise.
/// Kernels are stored in the canonical order: ascending total frequency
/// i+j+k, ties broken lexicographically on (i, j, k). Immutable after
/// construction.
class DctBasis3D {
 public:
  static DctBasis3D make(std::size_t nd, std::size_t nh, std::size_t nw);

  const Extents3& extents() const { return extents_; }
  std::size_t volume() const { return extents_[0] * extents_[1] * extents_[2]; }
  std::size_t count() const { return ordering_.size(); }
  const std::vector<FreqIndex>& ordering() const { return ordering_; }

  /// Kernel at canonical position `n`, a row-major Nd x Nh x Nw volume.
  std::span<const double> kernel(std::size_t n) const;
  std::span<const double> kernel(FreqIndex f) const;
  /// Canonical position of a frequency triple.
  std::size_t position(FreqIndex f) const;

  /// 1-D orthonormal DCT-II matrix for `axis`: row n holds a_n cos(pi(2x+1)n / 2N).
  std::span<const double> axis_matrix(std::size_t axis) const { return axis_[axis]; }

  static double alpha(std::size_t n, std::size_t extent);

 private:
  Extents3 extents_{};
  std::vector<FreqIndex> ordering_;
  std::vector<std::size_t> position_;  // natural (i,j,k) row-major -> canonical
  std::vector<double> kernels_;        // count x volume
  std::array<std::vector<double>, 3> axis_;
};

/// Transform coefficients in natural (i, j, k) layout: coefficients[i][j][k].
template <typename T>
struct FreqCube {
  Tensor<T> coefficients;
  Extents3 layout{};  // extents of the basis that produced the coefficients
  FreqIndex frequency_at(std::size_t flat) const {
    return {flat / (layout[1] * layout[2]), (flat / layout[2]) % layout[1], flat % layout[2]};
  }
};

/// Separable forward transform (three 1-D passes).
template <typename T>
FreqCube<T> dct3_forward(const Tensor<T>& block, const DctBasis3D& basis);

template <typename T>
Tensor<T> dct3_inverse(const FreqCube<T>& freq, const DctBasis3D& basis);

/// Frozen filter bank [count, 1, Nd, Nh, Nw] in canonical frequency order.
template <typename T>
Tensor<T> basis_as_filter_bank(const DctBasis3D& basis);

}  // namespace dctm
