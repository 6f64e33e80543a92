#include "dctm/dct3d.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <tuple>

namespace dctm {

double DctBasis3D::alpha(std::size_t n, std::size_t extent) {
  return n == 0 ? std::sqrt(1.0 / static_cast<double>(extent)) : std::sqrt(2.0 / static_cast<double>(extent));
}

DctBasis3D DctBasis3D::make(std::size_t nd, std::size_t nh, std::size_t nw) {
  if (nd == 0 || nh == 0 || nw == 0)
    throw std::invalid_argument("DctBasis3D: extents must be positive, got " + std::to_string(nd) + "x" +
                                std::to_string(nh) + "x" + std::to_string(nw));
  DctBasis3D b;
  b.extents_ = {nd, nh, nw};
  for (std::size_t a = 0; a < 3; ++a) {
    const std::size_t N = b.extents_[a];
    auto& m = b.axis_[a];
    m.resize(N * N);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t x = 0; x < N; ++x)
        m[n * N + x] = alpha(n, N) * std::cos(std::numbers::pi * static_cast<double>((2 * x + 1) * n) /
                                              static_cast<double>(2 * N));
  }
  for (std::size_t i = 0; i < nd; ++i)
    for (std::size_t j = 0; j < nh; ++j)
      for (std::size_t k = 0; k < nw; ++k) b.ordering_.push_back({i, j, k});
  std::stable_sort(b.ordering_.begin(), b.ordering_.end(), [](const FreqIndex& l, const FreqIndex& r) {
    return std::make_tuple(l.i + l.j + l.k, l.i, l.j, l.k) < std::make_tuple(r.i + r.j + r.k, r.i, r.j, r.k);
  });
  const std::size_t vol = nd * nh * nw;
  b.position_.resize(vol);
  b.kernels_.resize(vol * vol);
  const auto& md = b.axis_[0];
  const auto& mh = b.axis_[1];
  const auto& mw = b.axis_[2];
  for (std::size_t n = 0; n < b.ordering_.size(); ++n) {
    const auto f = b.ordering_[n];
    b.position_[(f.i * nh + f.j) * nw + f.k] = n;
    double* dst = b.kernels_.data() + n * vol;
    for (std::size_t x = 0; x < nd; ++x)
      for (std::size_t y = 0; y < nh; ++y)
        for (std::size_t z = 0; z < nw; ++z)
          dst[(x * nh + y) * nw + z] = md[f.i * nd + x] * mh[f.j * nh + y] * mw[f.k * nw + z];
  }
  return b;
}

std::span<const double> DctBasis3D::kernel(std::size_t n) const {
  if (n >= count()) throw std::out_of_range("DctBasis3D::kernel: index " + std::to_string(n));
  return std::span<const double>(kernels_).subspan(n * volume(), volume());
}

std::size_t DctBasis3D::position(FreqIndex f) const {
  if (f.i >= extents_[0] || f.j >= extents_[1] || f.k >= extents_[2])
    throw std::out_of_range("DctBasis3D: frequency outside basis extents");
  return position_[(f.i * extents_[1] + f.j) * extents_[2] + f.k];
}

std::span<const double> DctBasis3D::kernel(FreqIndex f) const { return kernel(position(f)); }

namespace {

// Applies the 1-D matrix of `axis` along that axis of a row-major 3-d volume.
// Forward uses M, inverse uses M^T.
void transform_axis(std::vector<double>& vol, const Extents3& e, std::size_t axis, std::span<const double> m,
                    bool transpose) {
  const std::size_t N = e[axis];
  std::size_t stride = 1;
  for (std::size_t a = axis + 1; a < 3; ++a) stride *= e[a];
  const std::size_t outer = vol.size() / (N * stride);
  std::vector<double> line(N);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t s = 0; s < stride; ++s) {
      const std::size_t base = o * N * stride + s;
      for (std::size_t x = 0; x < N; ++x) line[x] = vol[base + x * stride];
      for (std::size_t n = 0; n < N; ++n) {
        double acc = 0;
        for (std::size_t x = 0; x < N; ++x) acc += (transpose ? m[x * N + n] : m[n * N + x]) * line[x];
        vol[base + n * stride] = acc;
      }
    }
}

void check_block(const Shape& shape, const Extents3& e, const char* op) {
  if (shape.size() != 3 || shape[0] != e[0] || shape[1] != e[1] || shape[2] != e[2])
    throw ShapeError(std::string(op) + ": block " + shape_str(shape) + " does not match basis extents " +
                     shape_str(Shape(e.begin(), e.end())));
}

}  // namespace

template <typename T>
FreqCube<T> dct3_forward(const Tensor<T>& block, const DctBasis3D& basis) {
  const auto& e = basis.extents();
  check_block(block.shape(), e, "dct3_forward");
  std::vector<double> vol(block.data().begin(), block.data().end());
  for (std::size_t a = 3; a-- > 0;) transform_axis(vol, e, a, basis.axis_matrix(a), false);
  return FreqCube<T>{Tensor<T>(block.shape(), std::vector<T>(vol.begin(), vol.end())), e};
}

template <typename T>
Tensor<T> dct3_inverse(const FreqCube<T>& freq, const DctBasis3D& basis) {
  const auto& e = basis.extents();
  if (freq.layout != e) throw ShapeError("dct3_inverse: frequency layout does not match basis extents");
  check_block(freq.coefficients.shape(), e, "dct3_inverse");
  std::vector<double> vol(freq.coefficients.data().begin(), freq.coefficients.data().end());
  for (std::size_t a = 0; a < 3; ++a) transform_axis(vol, e, a, basis.axis_matrix(a), true);
  return Tensor<T>(freq.coefficients.shape(), std::vector<T>(vol.begin(), vol.end()));
}

template <typename T>
Tensor<T> basis_as_filter_bank(const DctBasis3D& basis) {
  const auto& e = basis.extents();
  std::vector<T> values;
  values.reserve(basis.count() * basis.volume());
  for (std::size_t n = 0; n < basis.count(); ++n)
    for (double v : basis.kernel(n)) values.push_back(static_cast<T>(v));
  return Tensor<T>(Shape{basis.count(), 1, e[0], e[1], e[2]}, std::move(values));
}

template FreqCube<float> dct3_forward(const Tensor<float>&, const DctBasis3D&);
template FreqCube<double> dct3_forward(const Tensor<double>&, const DctBasis3D&);
template Tensor<float> dct3_inverse(const FreqCube<float>&, const DctBasis3D&);
template Tensor<double> dct3_inverse(const FreqCube<double>&, const DctBasis3D&);
template Tensor<float> basis_as_filter_bank(const DctBasis3D&);
template Tensor<double> basis_as_filter_bank(const DctBasis3D&);

}  // namespace dctm
