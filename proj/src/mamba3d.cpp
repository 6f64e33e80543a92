#include "dctm/mamba3d.hpp"

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>

#include "dctm/autograd.hpp"
#include "dctm/ops.hpp"

namespace dctm {

using detail::accumulate;

void MambaConfig::validate() const {
  if (d_model == 0 || d_state == 0 || depth == 0)
    throw std::invalid_argument("mamba: d_model, d_state and depth must be positive");
  if (!(norm_eps > 0)) throw std::invalid_argument("mamba: norm_eps must be positive");
}

template <typename T>
SsmParams<T> SsmParams<T>::init(std::size_t d_model, std::size_t d_state, Rng& rng) {
  SsmParams p;
  p.a_log = Tensor<T>({d_model, d_state});
  for (std::size_t c = 0; c < d_model; ++c)
    for (std::size_t s = 0; s < d_state; ++s) p.a_log[c * d_state + s] = static_cast<T>(std::log(double(s + 1)));
  p.a_log.set_requires_grad(true);
  p.delta = Linear<T>::init(d_model, d_model, rng);
  // Step sizes start log-uniform in [1e-3, 1e-1]: bias = softplus^-1(dt).
  for (auto& b : p.delta.bias.data()) {
    const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
    b = static_cast<T>(dt + std::log(-std::expm1(-dt)));
  }
  p.b_proj = Linear<T>::init(d_model, d_state, rng);
  p.c_proj = Linear<T>::init(d_model, d_state, rng);
  p.d_skip = constant_param<T>({d_model}, T(1));
  return p;
}

template <typename T>
void SsmParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& fn) {
  fn(prefix + ".a_log", a_log);
  delta.visit(prefix + ".delta", fn);
  b_proj.visit(prefix + ".b_proj", fn);
  c_proj.visit(prefix + ".c_proj", fn);
  fn(prefix + ".d_skip", d_skip);
}

template <typename T>
void check_stability(const SsmParams<T>& params) {
  for (const T v : params.a_log.data()) {
    const T a = -std::exp(v);
    if (!std::isfinite(a) || !(a < T(0)))
      throw NumericError("selective scan: state matrix left the stable region (a_log = " + std::to_string(v) + ")");
  }
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using CMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MMap = Eigen::Map<RowMat<T>>;

template <typename T>
T softplus_scalar(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace

template <typename T>
Tensor<T> selective_scan(const Tensor<T>& u, const SsmParams<T>& p, ScanDirection direction) {
  if (u.rank() != 3) throw ShapeError("selective_scan: expected [B, L, d_model], got " + shape_str(u.shape()));
  const std::size_t B = u.dim(0), L = u.dim(1), d = u.dim(2), n = p.d_state();
  if (L == 0) throw ShapeError("selective_scan: empty sequence");
  if (d != p.d_model())
    throw ShapeError("selective_scan: input channels " + std::to_string(d) + " != d_model " +
                     std::to_string(p.d_model()));
  const std::size_t rows = B * L;
  CMap<T> U(u.data().data(), rows, d);

  // Token-wise projections for all positions at once.
  RowMat<T> draw = U * CMap<T>(p.delta.weight.data().data(), d, d);
  draw.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(p.delta.bias.data().data(), d);
  RowMat<T> Bt = U * CMap<T>(p.b_proj.weight.data().data(), d, n);
  Bt.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(p.b_proj.bias.data().data(), n);
  RowMat<T> Ct = U * CMap<T>(p.c_proj.weight.data().data(), d, n);
  Ct.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(p.c_proj.bias.data().data(), n);
  RowMat<T> delta(rows, d);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < d; ++c) delta(r, c) = softplus_scalar(draw(r, c));
  std::vector<T> A(d * n);
  for (std::size_t i = 0; i < d * n; ++i) A[i] = -std::exp(p.a_log.data()[i]);

  const auto pos = [L, direction](std::size_t step) { return direction == ScanDirection::forward ? step : L - 1 - step; };
  std::vector<T> states(rows * d * n);  // h_t after consuming token t
  std::vector<T> abar(rows * d * n);
  std::vector<T> y(rows * d);
  const T* uv = u.data().data();
  const T* dskip = p.d_skip.data().data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t k = 0; k < n; ++k) abar[(r * d + c) * n + k] = delta(r, c) * A[c * n + k];
  {
    Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> ab(abar.data(), static_cast<Eigen::Index>(abar.size()));
    ab = ab.exp();
  }
  std::vector<T> h(d * n);
  for (std::size_t b = 0; b < B; ++b) {
    std::fill(h.begin(), h.end(), T(0));
    for (std::size_t s = 0; s < L; ++s) {
      const std::size_t r = b * L + pos(s);
      T* hs = states.data() + r * d * n;
      T* as = abar.data() + r * d * n;
      for (std::size_t c = 0; c < d; ++c) {
        const T dt = delta(r, c);
        const T uc = uv[r * d + c];
        T acc = 0;
        for (std::size_t k = 0; k < n; ++k) {
          const T hv = as[c * n + k] * h[c * n + k] + dt * Bt(r, k) * uc;
          h[c * n + k] = hv;
          hs[c * n + k] = hv;
          acc += Ct(r, k) * hv;
        }
        y[r * d + c] = acc + dskip[c] * uc;
      }
    }
  }

  const Tensor<T> a_log = p.a_log, wd = p.delta.weight, bd = p.delta.bias, wb = p.b_proj.weight,
                  bb = p.b_proj.bias, wc = p.c_proj.weight, bc = p.c_proj.bias, dsk = p.d_skip;
  return detail::make_result<T>(
      "selective_scan", u.shape(), std::move(y), {&u, &a_log, &wd, &bd, &wb, &bb, &wc, &bc, &dsk},
      [=, states = std::move(states), abar = std::move(abar), draw = std::move(draw), Bt = std::move(Bt),
       Ct = std::move(Ct), delta = std::move(delta), A = std::move(A)](std::span<const T> gy) {
        const T* uv = u.data().data();
        const T* dskip = dsk.data().data();
        RowMat<T> gU(rows, d);
        RowMat<T> gDelta = RowMat<T>::Zero(rows, d);
        RowMat<T> gB = RowMat<T>::Zero(rows, n);
        RowMat<T> gC = RowMat<T>::Zero(rows, n);
        std::vector<T> gA(d * n, T(0));
        std::vector<T> gD(d, T(0));
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < d; ++c) {
            gU(r, c) = gy[r * d + c] * dskip[c];
            gD[c] += gy[r * d + c] * uv[r * d + c];
          }
        std::vector<T> dh(d * n);
        for (std::size_t b = 0; b < B; ++b) {
          std::fill(dh.begin(), dh.end(), T(0));
          for (std::size_t s = L; s-- > 0;) {
            const std::size_t r = b * L + pos(s);
            const T* hs = states.data() + r * d * n;
            const T* as = abar.data() + r * d * n;
            const T* hprev = s > 0 ? states.data() + (b * L + pos(s - 1)) * d * n : nullptr;
            for (std::size_t c = 0; c < d; ++c) {
              const T g = gy[r * d + c];
              const T dt = delta(r, c);
              const T uc = uv[r * d + c];
              T gdt = 0, guc = 0;
              for (std::size_t k = 0; k < n; ++k) {
                const std::size_t ck = c * n + k;
                gC(r, k) += g * hs[ck];
                const T dhv = dh[ck] + g * Ct(r, k);
                const T hp = hprev ? hprev[ck] : T(0);
                const T ga = dhv * hp * as[ck];  // d/d(dt*A) of exp(dt*A) h_prev
                gdt += ga * A[ck] + dhv * Bt(r, k) * uc;
                gA[ck] += ga * dt;
                gB(r, k) += dhv * dt * uc;
                guc += dhv * dt * Bt(r, k);
                dh[ck] = dhv * as[ck];
              }
              gDelta(r, c) += gdt;
              gU(r, c) += guc;
            }
          }
        }
        RowMat<T> gRaw(rows, d);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < d; ++c) gRaw(r, c) = gDelta(r, c) / (T(1) + std::exp(-draw(r, c)));

        CMap<T> Uc(uv, rows, d);
        auto emit = [](const Tensor<T>& t, const auto& mat) {
          if (!t.requires_grad()) return;
          std::vector<T> buf(static_cast<std::size_t>(mat.size()));
          MMap<T>(buf.data(), mat.rows(), mat.cols()) = mat;
          accumulate(t, buf);
        };
        if (u.requires_grad()) {
          gU.noalias() += gRaw * CMap<T>(wd.data().data(), d, d).transpose();
          gU.noalias() += gB * CMap<T>(wb.data().data(), d, n).transpose();
          gU.noalias() += gC * CMap<T>(wc.data().data(), d, n).transpose();
          emit(u, gU);
        }
        emit(wd, RowMat<T>(Uc.transpose() * gRaw));
        emit(bd, RowMat<T>(gRaw.colwise().sum()));
        emit(wb, RowMat<T>(Uc.transpose() * gB));
        emit(bb, RowMat<T>(gB.colwise().sum()));
        emit(wc, RowMat<T>(Uc.transpose() * gC));
        emit(bc, RowMat<T>(gC.colwise().sum()));
        if (a_log.requires_grad()) {
          std::vector<T> g(d * n);
          for (std::size_t i = 0; i < d * n; ++i) g[i] = gA[i] * A[i];  // dA/da_log = A
          accumulate(a_log, g);
        }
        accumulate(dsk, gD);
      });
}

template <typename T>
BidirectionalSsm<T> BidirectionalSsm<T>::init(std::size_t d_model, std::size_t d_state, Rng& rng) {
  return {SsmParams<T>::init(d_model, d_state, rng), NormAffine<T>::init(d_model)};
}

template <typename T>
void BidirectionalSsm<T>::visit(const std::string& prefix, const ParamVisitor<T>& fn) {
  ssm.visit(prefix + ".ssm", fn);
  norm.visit(prefix + ".norm", fn);
}

template <typename T>
Tensor<T> bidirectional_ssm(const Tensor<T>& x, const BidirectionalSsm<T>& params, double norm_eps) {
  const auto u = silu(x);
  const auto both = add(selective_scan(u, params.ssm, ScanDirection::forward),
                        selective_scan(u, params.ssm, ScanDirection::backward));
  return layer_norm(both, both.rank() - 1, params.norm.gain, params.norm.bias, norm_eps);
}

template <typename T>
PatchEmbedding<T> PatchEmbedding<T>::init(std::size_t in_channels, std::size_t bands, std::size_t patch,
                                          std::size_t d_model, Rng& rng) {
  PatchEmbedding e;
  e.spatial = Linear<T>::init(bands * in_channels, d_model, rng);
  e.spectral = Linear<T>::init(patch * patch * in_channels, d_model, rng);
  e.residual = Linear<T>::init(in_channels, d_model, rng);
  return e;
}

template <typename T>
void PatchEmbedding<T>::visit(const std::string& prefix, const ParamVisitor<T>& fn) {
  spatial.visit(prefix + ".spatial", fn);
  spectral.visit(prefix + ".spectral", fn);
  residual.visit(prefix + ".residual", fn);
}

template <typename T>
Embeddings<T> patch_embeddings(const Tensor<T>& voxels, const PatchEmbedding<T>& embed) {
  if (voxels.rank() != 5)
    throw ShapeError("patch_embeddings: expected [B, C, h, w, Cin], got " + shape_str(voxels.shape()));
  const auto B = voxels.dim(0), C = voxels.dim(1), h = voxels.dim(2), w = voxels.dim(3), cin = voxels.dim(4);
  const auto sites = reshape(permute(voxels, {0, 2, 3, 1, 4}), Shape{B, h * w, C * cin});
  const auto bands = reshape(voxels, Shape{B, C, h * w * cin});
  return {embed.spatial(sites), embed.spectral(bands), embed.residual(voxels)};
}

template <typename T>
AggregationParams<T> AggregationParams<T>::init(std::size_t d_model, double branch_init) {
  AggregationParams a;
  a.gamma0 = constant_param<T>({d_model}, T(1));
  a.gamma1 = constant_param<T>({d_model}, static_cast<T>(branch_init));
  a.gamma2 = constant_param<T>({d_model}, static_cast<T>(branch_init));
  a.norm = NormAffine<T>::init(d_model);
  return a;
}

template <typename T>
void AggregationParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& fn) {
  fn(prefix + ".gamma0", gamma0);
  fn(prefix + ".gamma1", gamma1);
  fn(prefix + ".gamma2", gamma2);
  norm.visit(prefix + ".norm", fn);
}

template <typename T>
Tensor<T> aggregate(const Tensor<T>& h_spatial, const Tensor<T>& h_spectral, const Tensor<T>& x_residual,
                    const AggregationParams<T>& params, double norm_eps) {
  if (x_residual.rank() != 5)
    throw ShapeError("aggregate: residual must be [B, C, h, w, d], got " + shape_str(x_residual.shape()));
  const auto B = x_residual.dim(0), C = x_residual.dim(1), h = x_residual.dim(2), w = x_residual.dim(3),
             d = x_residual.dim(4);
  if (h_spatial.shape() != Shape{B, h * w, d})
    throw ShapeError("aggregate: spatial tokens " + shape_str(h_spatial.shape()) + " do not unflatten onto " +
                     shape_str(x_residual.shape()));
  if (h_spectral.shape() != Shape{B, C, d})
    throw ShapeError("aggregate: spectral tokens " + shape_str(h_spectral.shape()) + " do not broadcast onto " +
                     shape_str(x_residual.shape()));
  const Shape full{B, C, h, w, d};
  const auto spatial = expand(reshape(h_spatial, Shape{B, 1, h, w, d}), full);
  const auto spectral = expand(reshape(h_spectral, Shape{B, C, 1, 1, d}), full);
  auto mix = add(add(scale_channels(x_residual, params.gamma0), scale_channels(spatial, params.gamma1)),
                 scale_channels(spectral, params.gamma2));
  return layer_norm(mix, 4, params.norm.gain, params.norm.bias, norm_eps);
}

template <typename T>
MambaBlock<T> MambaBlock<T>::init(std::size_t in_channels, std::size_t bands, std::size_t patch,
                                  const MambaConfig& cfg, Rng& rng) {
  MambaBlock m;
  m.embed = PatchEmbedding<T>::init(in_channels, bands, patch, cfg.d_model, rng);
  m.spatial = BidirectionalSsm<T>::init(cfg.d_model, cfg.d_state, rng);
  m.spectral = BidirectionalSsm<T>::init(cfg.d_model, cfg.d_state, rng);
  m.agg = AggregationParams<T>::init(cfg.d_model, cfg.branch_gamma_init);
  return m;
}

template <typename T>
Tensor<T> MambaBlock<T>::forward(const Tensor<T>& voxels, double norm_eps) const {
  const auto e = patch_embeddings(voxels, embed);
  const auto hs = bidirectional_ssm(e.spatial, spatial, norm_eps);
  const auto hv = bidirectional_ssm(e.spectral, spectral, norm_eps);
  return aggregate(hs, hv, e.residual, agg, norm_eps);
}

template <typename T>
void MambaBlock<T>::visit(const std::string& prefix, const ParamVisitor<T>& fn) {
  embed.visit(prefix + ".embed", fn);
  spatial.visit(prefix + ".spatial", fn);
  spectral.visit(prefix + ".spectral", fn);
  agg.visit(prefix + ".agg", fn);
}

#define DCTM_INSTANTIATE_MAMBA(T)                                                                          \
  template struct SsmParams<T>;                                                                            \
  template struct BidirectionalSsm<T>;                                                                     \
  template struct PatchEmbedding<T>;                                                                       \
  template struct AggregationParams<T>;                                                                    \
  template struct MambaBlock<T>;                                                                           \
  template Tensor<T> selective_scan(const Tensor<T>&, const SsmParams<T>&, ScanDirection);                 \
  template void check_stability(const SsmParams<T>&);                                                      \
  template Tensor<T> bidirectional_ssm(const Tensor<T>&, const BidirectionalSsm<T>&, double);              \
  template Embeddings<T> patch_embeddings(const Tensor<T>&, const PatchEmbedding<T>&);                     \
  template Tensor<T> aggregate(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                       \
                               const AggregationParams<T>&, double);

DCTM_INSTANTIATE_MAMBA(float)
DCTM_INSTANTIATE_MAMBA(double)

}  // namespace dctm
