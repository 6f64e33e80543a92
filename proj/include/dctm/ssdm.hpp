#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <span>
#include <string>

#include "dctm/dct3d.hpp"
#include "dctm/layers.hpp"
#include "dctm/tensor.hpp"

namespace dctm {

/// Spatial-spectral decorrelation stage: a shallow learnable stem followed by
/// the frozen 3-D DCT filter bank.
struct SsdmConfig {
  std::size_t stem_channels = 27;
  std::size_t patch_spatial = 13;
  Extents3 dct_extents{3, 3, 3};
  double norm_eps = 1e-5;

  /// Throws std::invalid_argument on an inconsistent configuration.
  void validate() const;
};

/// Pointwise 3-D conv (1 -> S channels) + layer norm over channels + SiLU.
template <typename T>
struct StemParams {
  Tensor<T> weight;  // [S, 1, 1, 1, 1]
  Tensor<T> bias;    // [S]
  NormAffine<T> norm;

  static StemParams init(std::size_t channels, Rng& rng);
  std::size_t channels() const { return weight.dim(0); }
  void visit(const std::string& prefix, const ParamVisitor<T>& fn);
};

/// patch [B, 1, C, h, w] -> [B, S, C, h, w].
template <typename T>
Tensor<T> stem(const Tensor<T>& patch, const StemParams<T>& params, double norm_eps);

/// stem_out [B, S, C, h, w] -> X_freq [B, G, C, h, w] with G = number of DCT
/// kernels. Stem channels are split into G consecutive groups and averaged
/// to one plane per group; plane g is filtered by kernel g (reflect padding,
/// stride 1). `filter_bank` is the frozen [G, 1, n, n, n] bank.
template <typename T>
Tensor<T> ssdm_forward(const Tensor<T>& stem_out, const Tensor<T>& filter_bank);

template <typename T>
Tensor<T> ssdm_forward(const Tensor<T>& stem_out, const DctBasis3D& basis);

/// Reorders `x` so `channel_axis` is last and flattens the rest:
/// result is [samples, channels].
template <typename T>
Tensor<T> channels_last_matrix(const Tensor<T>& x, std::size_t channel_axis);

/// Spearman rank correlation between the columns of a row-major
/// [n_samples, n_channels] matrix. Ties receive average ranks; a constant
/// column correlates 0 with every other column.
Eigen::MatrixXd spearman_matrix(std::span<const double> samples, std::size_t n_samples, std::size_t n_channels);

struct CorrelationPair {
  Eigen::MatrixXd before;
  Eigen::MatrixXd after;
};

/// Channel-pair Spearman matrices for two [samples, channels] tensors.
template <typename T>
CorrelationPair band_correlation(const Tensor<T>& before, const Tensor<T>& after);

double mean_abs_off_diagonal(const Eigen::MatrixXd& m);

/// Writes a correlation matrix as CSV: header row "band,0,1,...", then one
/// row per band.
void write_correlation_csv(const std::string& path, const Eigen::MatrixXd& m);
Eigen::MatrixXd read_correlation_csv(const std::string& path);

}  // namespace dctm
