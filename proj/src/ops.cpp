#include "dctm/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "dctm/autograd.hpp"

namespace dctm {

using detail::accumulate;
using detail::make_result;

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

enum class Binary { add, sub, mul };

const char* binary_name(Binary op) {
  switch (op) {
    case Binary::add: return "add";
    case Binary::sub: return "sub";
    case Binary::mul: return "mul";
  }
  return "?";
}

template <typename T>
Tensor<T> binary(Binary op, const Tensor<T>& a, const Tensor<T>& b) {
  const bool same = a.shape() == b.shape();
  const bool a_scalar = a.numel() == 1 && !same;
  const bool b_scalar = b.numel() == 1 && !same;
  if (!same && !a_scalar && !b_scalar)
    throw ShapeError(std::string(binary_name(op)) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " are not broadcast-compatible");
  const Shape out_shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = shape_numel(out_shape);
  auto av = a.data();
  auto bv = b.data();
  auto at = [&](std::size_t i) { return a_scalar ? av[0] : av[i]; };
  auto bt = [&](std::size_t i) { return b_scalar ? bv[0] : bv[i]; };
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    switch (op) {
      case Binary::add: out[i] = at(i) + bt(i); break;
      case Binary::sub: out[i] = at(i) - bt(i); break;
      case Binary::mul: out[i] = at(i) * bt(i); break;
    }
  }
  return make_result<T>(binary_name(op), out_shape, std::move(out), {&a, &b},
                        [op, a, b, a_scalar, b_scalar, n](std::span<const T> g) {
                          auto av = a.data();
                          auto bv = b.data();
                          // d/da
                          if (a.requires_grad()) {
                            std::vector<T> ga(a.numel(), T(0));
                            for (std::size_t i = 0; i < n; ++i) {
                              T d = g[i];
                              if (op == Binary::mul) d *= b_scalar ? bv[0] : bv[i];
                              ga[a_scalar ? 0 : i] += d;
                            }
                            accumulate(a, ga);
                          }
                          if (b.requires_grad()) {
                            std::vector<T> gb(b.numel(), T(0));
                            for (std::size_t i = 0; i < n; ++i) {
                              T d = g[i];
                              if (op == Binary::sub) d = -d;
                              if (op == Binary::mul) d *= a_scalar ? av[0] : av[i];
                              gb[b_scalar ? 0 : i] += d;
                            }
                            accumulate(b, gb);
                          }
                        });
}

std::vector<long> pad_table(std::size_t n, std::size_t pad, Padding mode) {
  std::vector<long> table(n + 2 * pad);
  const long ln = static_cast<long>(n);
  for (std::size_t q = 0; q < table.size(); ++q) {
    long i = static_cast<long>(q) - static_cast<long>(pad);
    if (i < 0) {
      i = mode == Padding::reflect ? -i : -1;
    } else if (i >= ln) {
      i = mode == Padding::reflect ? 2 * (ln - 1) - i : -1;
    }
    table[q] = i;
  }
  return table;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(Binary::add, a, b);
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(Binary::sub, a, b);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(Binary::mul, a, b);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return make_result<T>("scale", a.shape(), std::move(out), {&a}, [a, factor](std::span<const T> g) {
    std::vector<T> ga(g.begin(), g.end());
    for (auto& v : ga) v *= factor;
    accumulate(a, ga);
  });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul: expected 2-d operands, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw ShapeError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  std::vector<T> out(m * n);
  MatMap<T>(out.data(), m, n).noalias() =
      ConstMatMap<T>(a.data().data(), m, k) * ConstMatMap<T>(b.data().data(), k, n);
  return make_result<T>("matmul", Shape{m, n}, std::move(out), {&a, &b},
                        [a, b, m, k, n](std::span<const T> g) {
                          ConstMatMap<T> G(g.data(), m, n);
                          if (a.requires_grad()) {
                            std::vector<T> ga(m * k);
                            MatMap<T>(ga.data(), m, k).noalias() =
                                G * ConstMatMap<T>(b.data().data(), k, n).transpose();
                            accumulate(a, ga);
                          }
                          if (b.requires_grad()) {
                            std::vector<T> gb(k * n);
                            MatMap<T>(gb.data(), k, n).noalias() =
                                ConstMatMap<T>(a.data().data(), m, k).transpose() * G;
                            accumulate(b, gb);
                          }
                        });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (weight.rank() != 2) throw ShapeError("linear: weight must be 2-d, got " + shape_str(weight.shape()));
  const auto in = weight.dim(0), out_f = weight.dim(1);
  if (x.shape().back() != in)
    throw ShapeError("linear: input " + shape_str(x.shape()) + " does not end in " +
                     std::to_string(in) + " features (weight " + shape_str(weight.shape()) + ")");
  if (bias.defined() && (bias.numel() != out_f))
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match " +
                     std::to_string(out_f) + " outputs");
  const std::size_t rows = x.numel() / in;
  std::vector<T> out(rows * out_f);
  MatMap<T> Y(out.data(), rows, out_f);
  Y.noalias() = ConstMatMap<T>(x.data().data(), rows, in) * ConstMatMap<T>(weight.data().data(), in, out_f);
  if (bias.defined()) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bv(bias.data().data(), out_f);
    Y.rowwise() += bv;
  }
  Shape shape = x.shape();
  shape.back() = out_f;
  return make_result<T>("linear", shape, std::move(out), {&x, &weight, &bias},
                        [x, weight, bias, rows, in, out_f](std::span<const T> g) {
                          ConstMatMap<T> G(g.data(), rows, out_f);
                          if (x.requires_grad()) {
                            std::vector<T> gx(rows * in);
                            MatMap<T>(gx.data(), rows, in).noalias() =
                                G * ConstMatMap<T>(weight.data().data(), in, out_f).transpose();
                            accumulate(x, gx);
                          }
                          if (weight.requires_grad()) {
                            std::vector<T> gw(in * out_f);
                            MatMap<T>(gw.data(), in, out_f).noalias() =
                                ConstMatMap<T>(x.data().data(), rows, in).transpose() * G;
                            accumulate(weight, gw);
                          }
                          if (bias.defined() && bias.requires_grad()) {
                            std::vector<T> gb(out_f);
                            Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb.data(), out_f) =
                                G.colwise().sum();
                            accumulate(bias, gb);
                          }
                        });
}

// Stride-1 convolution on a padded copy of each channel. Outputs are
// accumulated in the padded row/plane layout, so every tap is one contiguous
// axpy over the whole volume; the valid region is cropped afterwards.
template <typename T>
Tensor<T> conv3d_unit_stride(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias,
                             std::size_t groups, const std::vector<long>& tz, const std::vector<long>& ty,
                             const std::vector<long>& tx, const Shape& out_shape) {
  using Vec = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
  using ConstVec = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;
  const auto B = input.dim(0), Cin = input.dim(1), D = input.dim(2), H = input.dim(3), W = input.dim(4);
  const auto Cout = kernels.dim(0), Cg = kernels.dim(1);
  const auto kd = kernels.dim(2), kh = kernels.dim(3), kw = kernels.dim(4);
  const auto Do = out_shape[2], Ho = out_shape[3], Wo = out_shape[4];
  const std::size_t PD = tz.size(), PH = ty.size(), PW = tx.size();
  const std::size_t pplane = PD * PH * PW, in_plane = D * H * W, out_plane = Do * Ho * Wo;
  const std::size_t span = (Do - 1) * PH * PW + (Ho - 1) * PW + Wo;
  const std::size_t ktaps = kd * kh * kw, cout_g = Cout / groups;
  std::vector<std::size_t> offsets(ktaps);
  for (std::size_t kz = 0; kz < kd; ++kz)
    for (std::size_t ky = 0; ky < kh; ++ky)
      for (std::size_t kx = 0; kx < kw; ++kx) offsets[(kz * kh + ky) * kw + kx] = (kz * PH + ky) * PW + kx;

  // Visits (padded index, source index) for every padded voxel backed by input.
  auto for_each_source = [=](auto&& fn) {
    for (std::size_t z = 0; z < PD; ++z) {
      if (tz[z] < 0) continue;
      for (std::size_t y = 0; y < PH; ++y) {
        if (ty[y] < 0) continue;
        const std::size_t prow = (z * PH + y) * PW;
        const std::size_t srow = (static_cast<std::size_t>(tz[z]) * H + static_cast<std::size_t>(ty[y])) * W;
        for (std::size_t x = 0; x < PW; ++x)
          if (tx[x] >= 0) fn(prow + x, srow + static_cast<std::size_t>(tx[x]));
      }
    }
  };
  auto for_each_output = [=](auto&& fn) {
    for (std::size_t oz = 0; oz < Do; ++oz)
      for (std::size_t oy = 0; oy < Ho; ++oy)
        for (std::size_t ox = 0; ox < Wo; ++ox) fn((oz * PH + oy) * PW + ox, (oz * Ho + oy) * Wo + ox);
  };
  auto padded_input = [=]() {
    std::vector<T> padded(B * Cin * pplane, T(0));
    const T* in = input.data().data();
    for (std::size_t c = 0; c < B * Cin; ++c)
      for_each_source([&](std::size_t pi, std::size_t si) { padded[c * pplane + pi] = in[c * in_plane + si]; });
    return padded;
  };

  const auto padded = padded_input();
  const T* K = kernels.data().data();
  std::vector<T> out(B * Cout * out_plane);
  std::vector<T> acc(span);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t co = 0; co < Cout; ++co) {
      Vec A(acc.data(), span);
      A.setConstant(bias.defined() ? bias.data()[co] : T(0));
      const std::size_t grp = co / cout_g;
      for (std::size_t cl = 0; cl < Cg; ++cl) {
        const T* src = padded.data() + (b * Cin + grp * Cg + cl) * pplane;
        const T* kp = K + (co * Cg + cl) * ktaps;
        for (std::size_t t = 0; t < ktaps; ++t) A += kp[t] * ConstVec(src + offsets[t], span);
      }
      T* op = out.data() + (b * Cout + co) * out_plane;
      for_each_output([&](std::size_t pi, std::size_t oi) { op[oi] = acc[pi]; });
    }

  return make_result<T>(
      "conv3d", out_shape, std::move(out), {&input, &kernels, &bias},
      [=](std::span<const T> g) {
        const bool want_in = input.requires_grad(), want_k = kernels.requires_grad();
        const T* K = kernels.data().data();
        std::vector<T> padded;
        if (want_k) padded = padded_input();
        std::vector<T> gpad(want_in ? B * Cin * pplane : 0, T(0));
        std::vector<T> gk(want_k ? kernels.numel() : 0, T(0));
        std::vector<T> gacc(span, T(0));
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t co = 0; co < Cout; ++co) {
            const T* gp = g.data() + (b * Cout + co) * out_plane;
            for_each_output([&](std::size_t pi, std::size_t oi) { gacc[pi] = gp[oi]; });
            const ConstVec G(gacc.data(), span);
            const std::size_t grp = co / cout_g;
            for (std::size_t cl = 0; cl < Cg; ++cl) {
              const std::size_t c = (b * Cin + grp * Cg + cl) * pplane;
              const std::size_t k_off = (co * Cg + cl) * ktaps;
              for (std::size_t t = 0; t < ktaps; ++t) {
                if (want_k) gk[k_off + t] += (G * ConstVec(padded.data() + c + offsets[t], span)).sum();
                if (want_in) Vec(gpad.data() + c + offsets[t], span) += K[k_off + t] * G;
              }
            }
          }
        if (want_in) {
          std::vector<T> gin(input.numel(), T(0));
          for (std::size_t c = 0; c < B * Cin; ++c)
            for_each_source([&](std::size_t pi, std::size_t si) { gin[c * in_plane + si] += gpad[c * pplane + pi]; });
          accumulate(input, gin);
        }
        if (want_k) accumulate(kernels, gk);
        if (bias.defined() && bias.requires_grad()) {
          std::vector<T> gb(Cout, T(0));
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t co = 0; co < Cout; ++co) {
              const T* gp = g.data() + (b * Cout + co) * out_plane;
              gb[co] += std::accumulate(gp, gp + out_plane, T(0));
            }
          accumulate(bias, gb);
        }
      });
}

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernels, const Conv3dOptions& opt,
                 const Tensor<T>& bias) {
  if (input.rank() != 5 || kernels.rank() != 5)
    throw ShapeError("conv3d: expected 5-d input and kernels, got " + shape_str(input.shape()) +
                     " and " + shape_str(kernels.shape()));
  if (opt.stride == 0 || opt.groups == 0) throw ShapeError("conv3d: stride and groups must be positive");
  const auto B = input.dim(0), Cin = input.dim(1), D = input.dim(2), H = input.dim(3), W = input.dim(4);
  const auto Cout = kernels.dim(0), Cg = kernels.dim(1);
  const auto kd = kernels.dim(2), kh = kernels.dim(3), kw = kernels.dim(4);
  const auto groups = opt.groups;
  if (Cin % groups != 0 || Cout % groups != 0 || Cg != Cin / groups)
    throw ShapeError("conv3d: kernels " + shape_str(kernels.shape()) + " incompatible with input " +
                     shape_str(input.shape()) + " and groups=" + std::to_string(groups));
  if (bias.defined() && bias.numel() != Cout)
    throw ShapeError("conv3d: bias " + shape_str(bias.shape()) + " does not match Cout=" + std::to_string(Cout));
  const auto p = opt.padding;
  if (opt.mode == Padding::reflect && p > 0 && (p >= D || p >= H || p >= W))
    throw ShapeError("conv3d: reflect padding " + std::to_string(p) + " needs every extent > padding, got " +
                     shape_str(input.shape()));
  auto out_extent = [&](std::size_t n, std::size_t k) -> std::size_t {
    if (n + 2 * p < k)
      throw ShapeError("conv3d: non-positive output extent (input " + shape_str(input.shape()) +
                       ", kernels " + shape_str(kernels.shape()) + ", padding " + std::to_string(p) + ")");
    return (n + 2 * p - k) / opt.stride + 1;
  };
  const auto Do = out_extent(D, kd), Ho = out_extent(H, kh), Wo = out_extent(W, kw);
  const auto tz = pad_table(D, p, opt.mode), ty = pad_table(H, p, opt.mode), tx = pad_table(W, p, opt.mode);
  const auto s = opt.stride;
  const auto cout_g = Cout / groups;
  const std::size_t in_plane = D * H * W, out_plane = Do * Ho * Wo;

  if (s == 1) return conv3d_unit_stride(input, kernels, bias, groups, tz, ty, tx, Shape{B, Cout, Do, Ho, Wo});

  const std::size_t ktaps = kd * kh * kw;
  const std::size_t rows = Cg * ktaps;

  // Column matrix [Cg * taps, out_plane] of one (batch, group) slice; padded taps stay zero.
  auto im2col = [=](const T* ip, T* cols) {
    std::fill(cols, cols + rows * out_plane, T(0));
    for (std::size_t cl = 0; cl < Cg; ++cl)
      for (std::size_t kz = 0; kz < kd; ++kz)
        for (std::size_t ky = 0; ky < kh; ++ky)
          for (std::size_t kx = 0; kx < kw; ++kx) {
            T* row = cols + (cl * ktaps + (kz * kh + ky) * kw + kx) * out_plane;
            const T* src = ip + cl * in_plane;
            for (std::size_t oz = 0; oz < Do; ++oz) {
              const long iz = tz[oz * s + kz];
              if (iz < 0) continue;
              for (std::size_t oy = 0; oy < Ho; ++oy) {
                const long iy = ty[oy * s + ky];
                if (iy < 0) continue;
                const T* in_row = src + (static_cast<std::size_t>(iz) * H + static_cast<std::size_t>(iy)) * W;
                T* out_row = row + (oz * Ho + oy) * Wo;
                for (std::size_t ox = 0; ox < Wo; ++ox) {
                  const long ix = tx[ox * s + kx];
                  if (ix >= 0) out_row[ox] = in_row[ix];
                }
              }
            }
          }
  };
  auto col2im = [=](const T* cols, T* gp) {
    for (std::size_t cl = 0; cl < Cg; ++cl)
      for (std::size_t kz = 0; kz < kd; ++kz)
        for (std::size_t ky = 0; ky < kh; ++ky)
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const T* row = cols + (cl * ktaps + (kz * kh + ky) * kw + kx) * out_plane;
            T* dst = gp + cl * in_plane;
            for (std::size_t oz = 0; oz < Do; ++oz) {
              const long iz = tz[oz * s + kz];
              if (iz < 0) continue;
              for (std::size_t oy = 0; oy < Ho; ++oy) {
                const long iy = ty[oy * s + ky];
                if (iy < 0) continue;
                T* in_row = dst + (static_cast<std::size_t>(iz) * H + static_cast<std::size_t>(iy)) * W;
                const T* out_row = row + (oz * Ho + oy) * Wo;
                for (std::size_t ox = 0; ox < Wo; ++ox) {
                  const long ix = tx[ox * s + kx];
                  if (ix >= 0) in_row[ix] += out_row[ox];
                }
              }
            }
          }
  };

  std::vector<T> out(B * Cout * out_plane, T(0));
  std::vector<T> cols(rows * out_plane);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t g = 0; g < groups; ++g) {
      im2col(input.data().data() + (b * Cin + g * Cg) * in_plane, cols.data());
      MatMap<T> Y(out.data() + (b * Cout + g * cout_g) * out_plane, cout_g, out_plane);
      Y.noalias() = ConstMatMap<T>(kernels.data().data() + g * cout_g * rows, cout_g, rows) *
                    ConstMatMap<T>(cols.data(), rows, out_plane);
      if (bias.defined())
        for (std::size_t c = 0; c < cout_g; ++c) Y.row(c).array() += bias.data()[g * cout_g + c];
    }

  Shape out_shape{B, Cout, Do, Ho, Wo};
  return make_result<T>(
      "conv3d", out_shape, std::move(out), {&input, &kernels, &bias},
      [=](std::span<const T> g) {
        const bool want_in = input.requires_grad();
        const bool want_k = kernels.requires_grad();
        std::vector<T> gin(want_in ? input.numel() : 0, T(0));
        std::vector<T> gk(want_k ? kernels.numel() : 0, T(0));
        std::vector<T> cols(rows * out_plane);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t grp = 0; grp < groups; ++grp) {
            ConstMatMap<T> G(g.data() + (b * Cout + grp * cout_g) * out_plane, cout_g, out_plane);
            if (want_k) {
              im2col(input.data().data() + (b * Cin + grp * Cg) * in_plane, cols.data());
              MatMap<T>(gk.data() + grp * cout_g * rows, cout_g, rows).noalias() +=
                  G * ConstMatMap<T>(cols.data(), rows, out_plane).transpose();
            }
            if (want_in) {
              MatMap<T>(cols.data(), rows, out_plane).noalias() =
                  ConstMatMap<T>(kernels.data().data() + grp * cout_g * rows, cout_g, rows).transpose() * G;
              col2im(cols.data(), gin.data() + (b * Cin + grp * Cg) * in_plane);
            }
          }
        if (want_in) accumulate(input, gin);
        if (want_k) accumulate(kernels, gk);
        if (bias.defined() && bias.requires_grad()) {
          std::vector<T> gb(Cout, T(0));
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t co = 0; co < Cout; ++co) {
              const T* gp = g.data() + (b * Cout + co) * out_plane;
              gb[co] += std::accumulate(gp, gp + out_plane, T(0));
            }
          accumulate(bias, gb);
        }
      });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  using Arr = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
  using ConstArr = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;
  const auto n = static_cast<Eigen::Index>(x.numel());
  std::vector<T> out(x.numel());
  const ConstArr X(x.data().data(), n);
  Arr(out.data(), n) = X / (T(1) + (-X).exp());
  return make_result<T>("silu", x.shape(), std::move(out), {&x}, [x, n](std::span<const T> g) {
    const ConstArr X(x.data().data(), n);
    std::vector<T> gx(x.numel());
    const Eigen::Array<T, Eigen::Dynamic, 1> sg = T(1) / (T(1) + (-X).exp());
    Arr(gx.data(), n) = ConstArr(g.data(), n) * sg * (T(1) + X * (T(1) - sg));
    accumulate(x, gx);
  });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::max(xv[i], T(0)) + std::log1p(std::exp(-std::abs(xv[i])));
  return make_result<T>("softplus", x.shape(), std::move(out), {&x}, [x](std::span<const T> g) {
    auto xv = x.data();
    std::vector<T> gx(xv.size());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = g[i] / (T(1) + std::exp(-xv[i]));
    accumulate(x, gx);
  });
}

namespace {
struct AxisSplit {
  std::size_t outer, n, inner;
};
AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size())
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}
}  // namespace

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, std::size_t axis, const Tensor<T>& gain, const Tensor<T>& bias,
                     double eps) {
  if (!(eps > 0)) throw NumericError("layer_norm: eps must be positive");
  const auto sp = split_axis(x.shape(), axis, "layer_norm");
  if (gain.defined() && gain.numel() != sp.n)
    throw ShapeError("layer_norm: gain " + shape_str(gain.shape()) + " does not match axis extent " +
                     std::to_string(sp.n));
  if (bias.defined() && bias.numel() != sp.n)
    throw ShapeError("layer_norm: bias " + shape_str(bias.shape()) + " does not match axis extent " +
                     std::to_string(sp.n));
  auto xv = x.data();
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(sp.outer * sp.inner);
  std::vector<T> out(x.numel());
  const T teps = static_cast<T>(eps);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.n * sp.inner + i;
      T mu = 0;
      for (std::size_t k = 0; k < sp.n; ++k) mu += xv[base + k * sp.inner];
      mu /= static_cast<T>(sp.n);
      T var = 0;
      for (std::size_t k = 0; k < sp.n; ++k) {
        const T d = xv[base + k * sp.inner] - mu;
        var += d * d;
      }
      var /= static_cast<T>(sp.n);
      const T is = T(1) / std::sqrt(var + teps);
      inv_std[o * sp.inner + i] = is;
      for (std::size_t k = 0; k < sp.n; ++k) {
        const std::size_t idx = base + k * sp.inner;
        const T h = (xv[idx] - mu) * is;
        xhat[idx] = h;
        T y = h;
        if (gain.defined()) y *= gain.data()[k];
        if (bias.defined()) y += bias.data()[k];
        out[idx] = y;
      }
    }
  return make_result<T>(
      "layer_norm", x.shape(), std::move(out), {&x, &gain, &bias},
      [x, gain, bias, sp, xhat = std::move(xhat), inv_std = std::move(inv_std)](std::span<const T> g) {
        if (gain.defined() && gain.requires_grad()) {
          std::vector<T> gg(sp.n, T(0));
          for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t k = 0; k < sp.n; ++k)
              for (std::size_t i = 0; i < sp.inner; ++i) {
                const std::size_t idx = (o * sp.n + k) * sp.inner + i;
                gg[k] += g[idx] * xhat[idx];
              }
          accumulate(gain, gg);
        }
        if (bias.defined() && bias.requires_grad()) {
          std::vector<T> gb(sp.n, T(0));
          for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t k = 0; k < sp.n; ++k)
              for (std::size_t i = 0; i < sp.inner; ++i) gb[k] += g[(o * sp.n + k) * sp.inner + i];
          accumulate(bias, gb);
        }
        if (!x.requires_grad()) return;
        std::vector<T> gx(x.numel());
        std::vector<T> dxhat(sp.n);
        const T inv_n = T(1) / static_cast<T>(sp.n);
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t i = 0; i < sp.inner; ++i) {
            const std::size_t base = o * sp.n * sp.inner + i;
            T m1 = 0, m2 = 0;
            for (std::size_t k = 0; k < sp.n; ++k) {
              const std::size_t idx = base + k * sp.inner;
              T d = g[idx];
              if (gain.defined()) d *= gain.data()[k];
              dxhat[k] = d;
              m1 += d;
              m2 += d * xhat[idx];
            }
            m1 *= inv_n;
            m2 *= inv_n;
            const T is = inv_std[o * sp.inner + i];
            for (std::size_t k = 0; k < sp.n; ++k) {
              const std::size_t idx = base + k * sp.inner;
              gx[idx] = is * (dxhat[k] - m1 - xhat[idx] * m2);
            }
          }
        accumulate(x, gx);
      });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  const auto sp = split_axis(x.shape(), axis, "softmax");
  auto xv = x.data();
  std::vector<T> out(x.numel());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.n * sp.inner + i;
      T mx = xv[base];
      for (std::size_t k = 1; k < sp.n; ++k) mx = std::max(mx, xv[base + k * sp.inner]);
      T z = 0;
      for (std::size_t k = 0; k < sp.n; ++k) {
        const T e = std::exp(xv[base + k * sp.inner] - mx);
        out[base + k * sp.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < sp.n; ++k) out[base + k * sp.inner] /= z;
    }
  std::vector<T> saved = out;
  return make_result<T>("softmax", x.shape(), std::move(out), {&x},
                        [x, sp, y = std::move(saved)](std::span<const T> g) {
                          std::vector<T> gx(y.size());
                          for (std::size_t o = 0; o < sp.outer; ++o)
                            for (std::size_t i = 0; i < sp.inner; ++i) {
                              const std::size_t base = o * sp.n * sp.inner + i;
                              T dot = 0;
                              for (std::size_t k = 0; k < sp.n; ++k)
                                dot += g[base + k * sp.inner] * y[base + k * sp.inner];
                              for (std::size_t k = 0; k < sp.n; ++k) {
                                const std::size_t idx = base + k * sp.inner;
                                gx[idx] = y[idx] * (g[idx] - dot);
                              }
                            }
                          accumulate(x, gx);
                        });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be [B, K], got " + shape_str(logits.shape()));
  const auto B = logits.dim(0), K = logits.dim(1);
  if (labels.size() != B)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(B));
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= K)
      throw std::out_of_range("cross_entropy: label " + std::to_string(l) + " outside [0, " + std::to_string(K) + ")");
  auto lv = logits.data();
  std::vector<T> prob(B * K);
  T total = 0;
  for (std::size_t b = 0; b < B; ++b) {
    const T* row = lv.data() + b * K;
    const T mx = *std::max_element(row, row + K);
    T z = 0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(row[k] - mx);
    const T lse = mx + std::log(z);
    total += lse - row[labels[b]];
    for (std::size_t k = 0; k < K; ++k) prob[b * K + k] = std::exp(row[k] - lse);
  }
  std::vector<int> lab(labels.begin(), labels.end());
  return make_result<T>("cross_entropy", Shape{1}, {total / static_cast<T>(B)}, {&logits},
                        [logits, B, K, prob = std::move(prob), lab = std::move(lab)](std::span<const T> g) {
                          std::vector<T> gl(prob);
                          const T s = g[0] / static_cast<T>(B);
                          for (std::size_t b = 0; b < B; ++b) gl[b * K + static_cast<std::size_t>(lab[b])] -= T(1);
                          for (auto& v : gl) v *= s;
                          accumulate(logits, gl);
                        });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (const T v : x.data()) total += v;
  return make_result<T>("sum", Shape{1}, {total}, {&x}, [x](std::span<const T> g) {
    accumulate(x, std::vector<T>(x.numel(), g[0]));
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  T total = 0;
  for (const T v : x.data()) total += v;
  const T n = static_cast<T>(x.numel());
  return make_result<T>("mean", Shape{1}, {total / n}, {&x}, [x, n](std::span<const T> g) {
    accumulate(x, std::vector<T>(x.numel(), g[0] / n));
  });
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, std::size_t axis) {
  const auto sp = split_axis(x.shape(), axis, "mean_axis");
  Shape shape;
  for (std::size_t i = 0; i < x.rank(); ++i)
    if (i != axis) shape.push_back(x.dim(i));
  if (shape.empty()) shape.push_back(1);
  auto xv = x.data();
  std::vector<T> out(sp.outer * sp.inner, T(0));
  const T inv = T(1) / static_cast<T>(sp.n);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t k = 0; k < sp.n; ++k) {
      const T* src = xv.data() + (o * sp.n + k) * sp.inner;
      T* dst = out.data() + o * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
    }
  for (auto& v : out) v *= inv;
  return make_result<T>("mean_axis", shape, std::move(out), {&x}, [x, sp, inv](std::span<const T> g) {
    std::vector<T> gx(x.numel());
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t k = 0; k < sp.n; ++k)
        for (std::size_t i = 0; i < sp.inner; ++i) gx[(o * sp.n + k) * sp.inner + i] = g[o * sp.inner + i] * inv;
    accumulate(x, gx);
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>("reshape", std::move(shape), std::move(out), {&x},
                        [x](std::span<const T> g) { accumulate(x, g); });
}

namespace {
// Gathers `src` (shape `in_shape`) into the layout given by `axes`.
template <typename T>
std::vector<T> permute_copy(std::span<const T> src, const Shape& in_shape, const std::vector<std::size_t>& axes) {
  const std::size_t r = in_shape.size();
  const auto in_strides = strides_of(in_shape);
  Shape out_shape(r);
  std::vector<std::size_t> step(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in_shape[axes[i]];
    step[i] = in_strides[axes[i]];
  }
  std::vector<T> out(src.size());
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  for (std::size_t n = 0; n < out.size(); ++n) {
    out[n] = src[off];
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      off += step[d];
      if (idx[d] < out_shape[d]) break;
      off -= step[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  return out;
}
}  // namespace

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  const std::size_t r = x.rank();
  std::vector<bool> seen(r, false);
  if (axes.size() != r) throw ShapeError("permute: axis list length differs from rank of " + shape_str(x.shape()));
  for (auto a : axes) {
    if (a >= r || seen[a]) throw ShapeError("permute: invalid axis permutation for " + shape_str(x.shape()));
    seen[a] = true;
  }
  Shape out_shape(r);
  std::vector<std::size_t> inverse(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = x.dim(axes[i]);
    inverse[axes[i]] = i;
  }
  auto out = permute_copy<T>(x.data(), x.shape(), axes);
  return make_result<T>("permute", out_shape, std::move(out), {&x},
                        [x, out_shape, inverse](std::span<const T> g) {
                          accumulate(x, permute_copy<T>(g, out_shape, inverse));
                        });
}

template <typename T>
Tensor<T> expand(const Tensor<T>& x, const Shape& shape) {
  if (shape.size() != x.rank())
    throw ShapeError("expand: rank mismatch between " + shape_str(x.shape()) + " and " + shape_str(shape));
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (x.dim(i) != shape[i] && x.dim(i) != 1)
      throw ShapeError("expand: cannot expand " + shape_str(x.shape()) + " to " + shape_str(shape));
  const auto in_strides = strides_of(x.shape());
  std::vector<std::size_t> step(shape.size());
  for (std::size_t i = 0; i < shape.size(); ++i) step[i] = x.dim(i) == 1 ? 0 : in_strides[i];
  const std::size_t n = shape_numel(shape);
  // Source offset for every output element.
  std::vector<std::size_t> src(n);
  {
    std::vector<std::size_t> idx(shape.size(), 0);
    std::size_t off = 0;
    for (std::size_t k = 0; k < n; ++k) {
      src[k] = off;
      for (std::size_t d = shape.size(); d-- > 0;) {
        ++idx[d];
        off += step[d];
        if (idx[d] < shape[d]) break;
        off -= step[d] * shape[d];
        idx[d] = 0;
      }
    }
  }
  auto xv = x.data();
  std::vector<T> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = xv[src[k]];
  return make_result<T>("expand", shape, std::move(out), {&x}, [x, src = std::move(src)](std::span<const T> g) {
    std::vector<T> gx(x.numel(), T(0));
    for (std::size_t k = 0; k < src.size(); ++k) gx[src[k]] += g[k];
    accumulate(x, gx);
  });
}

template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& gain) {
  const std::size_t n = x.shape().back();
  if (gain.numel() != n)
    throw ShapeError("scale_channels: gain " + shape_str(gain.shape()) + " does not match last axis of " +
                     shape_str(x.shape()));
  const std::size_t rows = x.numel() / n;
  using RowVec = Eigen::Map<const Eigen::Array<T, 1, Eigen::Dynamic>>;
  using Rows = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstRows = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  std::vector<T> out(x.numel());
  Rows(out.data(), rows, n) = ConstRows(x.data().data(), rows, n).rowwise() * RowVec(gain.data().data(), n);
  return make_result<T>("scale_channels", x.shape(), std::move(out), {&x, &gain},
                        [x, gain, n, rows](std::span<const T> g) {
                          ConstRows G(g.data(), rows, n);
                          if (x.requires_grad()) {
                            std::vector<T> gx(x.numel());
                            Rows(gx.data(), rows, n) = G.rowwise() * RowVec(gain.data().data(), n);
                            accumulate(x, gx);
                          }
                          if (gain.requires_grad()) {
                            std::vector<T> gg(n);
                            Eigen::Map<Eigen::Array<T, 1, Eigen::Dynamic>>(gg.data(), n) =
                                (G * ConstRows(x.data().data(), rows, n)).colwise().sum();
                            accumulate(gain, gg);
                          }
                        });
}

template <typename T>
Tensor<T> correlation_penalty(const Tensor<T>& features, double eps) {
  if (features.rank() != 2) throw ShapeError("correlation_penalty: expected [B, F], got " + shape_str(features.shape()));
  const auto B = features.dim(0), F = features.dim(1);
  if (B < 2) throw ShapeError("correlation_penalty: needs at least 2 samples, got " + std::to_string(B));
  if (F < 2) throw ShapeError("correlation_penalty: needs at least 2 channels, got " + std::to_string(F));
  // Z = column-standardized features (unit L2 norm per column), R = Z^T Z.
  RowMat<T> X = ConstMatMap<T>(features.data().data(), B, F);
  const Eigen::Matrix<T, 1, Eigen::Dynamic> mu = X.colwise().mean();
  X.rowwise() -= mu;
  Eigen::Matrix<T, 1, Eigen::Dynamic> norms(F);
  for (std::size_t j = 0; j < F; ++j) norms(j) = std::sqrt(X.col(j).squaredNorm() + static_cast<T>(eps));
  RowMat<T> Z = X;
  for (std::size_t j = 0; j < F; ++j) Z.col(j) /= norms(j);
  RowMat<T> R = Z.transpose() * Z;
  const T pairs = static_cast<T>(F * (F - 1));
  T total = 0;
  for (std::size_t j = 0; j < F; ++j)
    for (std::size_t k = 0; k < F; ++k)
      if (j != k) total += R(j, k) * R(j, k);
  return make_result<T>("correlation_penalty", Shape{1}, {total / pairs}, {&features},
                        [features, B, F, Z, R, norms, pairs](std::span<const T> g) {
                          // dL/dR_jk = 2 R_jk / pairs off the diagonal; dL/dZ = 2 Z G.
                          RowMat<T> G = R * (T(2) * g[0] / pairs);
                          G.diagonal().setZero();
                          const RowMat<T> dZ = T(2) * Z * G;
                          RowMat<T> dX(B, F);
                          for (std::size_t j = 0; j < F; ++j) {
                            const T dot = Z.col(j).dot(dZ.col(j));
                            dX.col(j) = (dZ.col(j) - dot * Z.col(j)) / norms(j);
                          }
                          const Eigen::Matrix<T, 1, Eigen::Dynamic> m = dX.colwise().mean();
                          dX.rowwise() -= m;
                          std::vector<T> gx(B * F);
                          MatMap<T>(gx.data(), B, F) = dX;
                          accumulate(features, gx);
                        });
}

#define DCTM_INSTANTIATE_OPS(T)                                                                   \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> scale(const Tensor<T>&, T);                                                  \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> conv3d(const Tensor<T>&, const Tensor<T>&, const Conv3dOptions&,             \
                            const Tensor<T>&);                                                    \
  template Tensor<T> silu(const Tensor<T>&);                                                      \
  template Tensor<T> softplus(const Tensor<T>&);                                                  \
  template Tensor<T> layer_norm(const Tensor<T>&, std::size_t, const Tensor<T>&,                  \
                                const Tensor<T>&, double);                                        \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                      \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const int>);                       \
  template Tensor<T> sum(const Tensor<T>&);                                                       \
  template Tensor<T> mean(const Tensor<T>&);                                                      \
  template Tensor<T> mean_axis(const Tensor<T>&, std::size_t);                                    \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                            \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);                  \
  template Tensor<T> expand(const Tensor<T>&, const Shape&);                                      \
  template Tensor<T> scale_channels(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> correlation_penalty(const Tensor<T>&, double);

DCTM_INSTANTIATE_OPS(float)
DCTM_INSTANTIATE_OPS(double)

}  // namespace dctm
