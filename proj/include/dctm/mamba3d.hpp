#pragma once

#include <cstddef>
#include <string>

#include "dctm/layers.hpp"
#include "dctm/tensor.hpp"

namespace dctm {

struct MambaConfig {
  std::size_t d_model = 64;
  std::size_t d_state = 16;
  std::size_t depth = 1;
  double norm_eps = 1e-5;
  /// Initial value of the spatial/spectral branch weights; the residual
  /// weight starts at 1.
  double branch_gamma_init = 0.1;

  void validate() const;
};

/// Parameters of one selective state-space scan with diagonal state matrix
/// A = -exp(a_log). Per token t with input u_t:
///   delta_t = softplus(delta(u_t)),  B_t = b_proj(u_t),  C_t = c_proj(u_t)
///   h_t = exp(delta_t * A) . h_{t-1} + (delta_t * B_t) u_t
///   y_t = C_t . h_t + d_skip . u_t
template <typename T>
struct SsmParams {
  Tensor<T> a_log;  // [d_model, d_state]
  Linear<T> delta;  // d_model -> d_model
  Linear<T> b_proj; // d_model -> d_state
  Linear<T> c_proj; // d_model -> d_state
  Tensor<T> d_skip; // [d_model]

  static SsmParams init(std::size_t d_model, std::size_t d_state, Rng& rng);
  std::size_t d_model() const { return a_log.dim(0); }
  std::size_t d_state() const { return a_log.dim(1); }
  void visit(const std::string& prefix, const ParamVisitor<T>& fn);
};

enum class ScanDirection { forward, backward };

/// u [B, L, d_model] -> y [B, L, d_model]. The backward direction scans the
/// reversed sequence and writes outputs back at their original positions.
template <typename T>
Tensor<T> selective_scan(const Tensor<T>& u, const SsmParams<T>& params, ScanDirection direction);

/// Throws NumericError unless A = -exp(a_log) is finite and strictly
/// negative, which keeps every discretized exp(delta * A) inside (0, 1).
template <typename T>
void check_stability(const SsmParams<T>& params);

/// Scan parameters shared by both directions plus the output norm.
template <typename T>
struct BidirectionalSsm {
  SsmParams<T> ssm;
  NormAffine<T> norm;

  static BidirectionalSsm init(std::size_t d_model, std::size_t d_state, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor<T>& fn);
};

/// LN(scan_fwd(SiLU(x)) + scan_bwd(SiLU(x))) over the channel axis.
template <typename T>
Tensor<T> bidirectional_ssm(const Tensor<T>& x, const BidirectionalSsm<T>& params, double norm_eps);

/// Three learnable embeddings of a channels-last voxel grid [B, C, h, w, Cin]:
///   spatial:  one token per (row, col) site, features (band, channel) -> d
///   spectral: one token per band, features (row, col, channel) -> d
///   residual: pointwise channel projection Cin -> d, layout preserved
template <typename T>
struct PatchEmbedding {
  Linear<T> spatial;
  Linear<T> spectral;
  Linear<T> residual;

  static PatchEmbedding init(std::size_t in_channels, std::size_t bands, std::size_t patch, std::size_t d_model,
                             Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor<T>& fn);
};

template <typename T>
struct Embeddings {
  Tensor<T> spatial;   // [B, h*w, d]
  Tensor<T> spectral;  // [B, C, d]
  Tensor<T> residual;  // [B, C, h, w, d]
};

template <typename T>
Embeddings<T> patch_embeddings(const Tensor<T>& voxels, const PatchEmbedding<T>& embed);

template <typename T>
struct AggregationParams {
  Tensor<T> gamma0;  // residual weight [d]
  Tensor<T> gamma1;  // spatial branch weight [d]
  Tensor<T> gamma2;  // spectral branch weight [d]
  NormAffine<T> norm;

  static AggregationParams init(std::size_t d_model, double branch_init);
  void visit(const std::string& prefix, const ParamVisitor<T>& fn);
};

/// LN(g0 . x_residual + g1 . h_spatial + g2 . h_spectral) with spatial tokens
/// unflattened to (h, w) and broadcast over bands, spectral tokens broadcast
/// over positions.
template <typename T>
Tensor<T> aggregate(const Tensor<T>& h_spatial, const Tensor<T>& h_spectral, const Tensor<T>& x_residual,
                    const AggregationParams<T>& params, double norm_eps);

/// One 3-D Mamba block: voxels [B, C, h, w, Cin] -> [B, C, h, w, d_model].
template <typename T>
struct MambaBlock {
  PatchEmbedding<T> embed;
  BidirectionalSsm<T> spatial;
  BidirectionalSsm<T> spectral;
  AggregationParams<T> agg;

  static MambaBlock init(std::size_t in_channels, std::size_t bands, std::size_t patch, const MambaConfig& cfg,
                         Rng& rng);
  Tensor<T> forward(const Tensor<T>& voxels, double norm_eps) const;
  void visit(const std::string& prefix, const ParamVisitor<T>& fn);
};

}  // namespace dctm
