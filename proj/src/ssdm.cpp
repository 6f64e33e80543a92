#include "dctm/ssdm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "dctm/ops.hpp"

namespace dctm {

void SsdmConfig::validate() const {
  if (stem_channels == 0) throw std::invalid_argument("ssdm: stem_channels must be positive");
  if (patch_spatial == 0 || patch_spatial % 2 == 0)
    throw std::invalid_argument("ssdm: patch_spatial must be odd and positive, got " + std::to_string(patch_spatial));
  const auto n = dct_extents[0];
  if (n == 0 || n % 2 == 0 || dct_extents[1] != n || dct_extents[2] != n)
    throw std::invalid_argument("ssdm: dct_extents must be equal odd extents");
  const std::size_t kernels = n * n * n;
  if (stem_channels % kernels != 0)
    throw std::invalid_argument("ssdm: stem_channels (" + std::to_string(stem_channels) +
                                ") must be a multiple of the DCT kernel count (" + std::to_string(kernels) + ")");
  if (!(norm_eps > 0)) throw std::invalid_argument("ssdm: norm_eps must be positive");
}

template <typename T>
StemParams<T> StemParams<T>::init(std::size_t channels, Rng& rng) {
  StemParams p;
  p.weight = uniform_param<T>({channels, 1, 1, 1, 1}, 1.0, rng);
  p.bias = uniform_param<T>({channels}, 1.0, rng);
  p.norm = NormAffine<T>::init(channels);
  return p;
}

template <typename T>
void StemParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& fn) {
  fn(prefix + ".weight", weight);
  fn(prefix + ".bias", bias);
  norm.visit(prefix + ".norm", fn);
}

template <typename T>
Tensor<T> stem(const Tensor<T>& patch, const StemParams<T>& params, double norm_eps) {
  if (patch.rank() != 5 || patch.dim(1) != 1)
    throw ShapeError("stem: expected [B, 1, C, h, w], got " + shape_str(patch.shape()));
  auto h = conv3d(patch, params.weight, Conv3dOptions{}, params.bias);
  h = layer_norm(h, 1, params.norm.gain, params.norm.bias, norm_eps);
  return silu(h);
}

template <typename T>
Tensor<T> ssdm_forward(const Tensor<T>& stem_out, const Tensor<T>& filter_bank) {
  if (stem_out.rank() != 5) throw ShapeError("ssdm_forward: expected [B, S, C, h, w], got " + shape_str(stem_out.shape()));
  if (filter_bank.rank() != 5 || filter_bank.dim(1) != 1)
    throw ShapeError("ssdm_forward: filter bank must be [G, 1, n, n, n], got " + shape_str(filter_bank.shape()));
  const auto n = filter_bank.dim(2);
  if (filter_bank.dim(3) != n || filter_bank.dim(4) != n || n % 2 == 0)
    throw ShapeError("ssdm_forward: filter bank kernels must be odd cubes, got " + shape_str(filter_bank.shape()));
  const auto B = stem_out.dim(0), S = stem_out.dim(1), C = stem_out.dim(2), h = stem_out.dim(3), w = stem_out.dim(4);
  const auto G = filter_bank.dim(0);
  if (S % G != 0)
    throw ShapeError("ssdm_forward: " + std::to_string(S) + " stem channels cannot be grouped onto " +
                     std::to_string(G) + " DCT kernels");
  Tensor<T> planes = stem_out;
  if (S != G) {
    planes = reshape(stem_out, Shape{B, G, S / G, C * h * w});
    planes = reshape(mean_axis(planes, 2), Shape{B, G, C, h, w});
  }
  Conv3dOptions opt;
  opt.padding = n / 2;
  opt.mode = Padding::reflect;
  opt.groups = G;
  return conv3d(planes, filter_bank, opt);
}

template <typename T>
Tensor<T> ssdm_forward(const Tensor<T>& stem_out, const DctBasis3D& basis) {
  return ssdm_forward(stem_out, basis_as_filter_bank<T>(basis));
}

template <typename T>
Tensor<T> channels_last_matrix(const Tensor<T>& x, std::size_t channel_axis) {
  if (channel_axis >= x.rank()) throw ShapeError("channels_last_matrix: axis out of range for " + shape_str(x.shape()));
  std::vector<std::size_t> axes;
  for (std::size_t a = 0; a < x.rank(); ++a)
    if (a != channel_axis) axes.push_back(a);
  axes.push_back(channel_axis);
  const auto channels = x.dim(channel_axis);
  return reshape(permute(x, axes), Shape{x.numel() / channels, channels});
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && v[order[j]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j - 1) + 1.0;
    for (std::size_t k = i; k < j; ++k) rank[order[k]] = r;
    i = j;
  }
  return rank;
}

}  // namespace

Eigen::MatrixXd spearman_matrix(std::span<const double> samples, std::size_t n_samples, std::size_t n_channels) {
  if (n_samples < 2) throw std::invalid_argument("spearman_matrix: needs at least 2 samples");
  if (samples.size() != n_samples * n_channels)
    throw std::invalid_argument("spearman_matrix: sample buffer does not match dimensions");
  Eigen::MatrixXd ranks(n_samples, n_channels);
  std::vector<double> col(n_samples);
  for (std::size_t c = 0; c < n_channels; ++c) {
    for (std::size_t s = 0; s < n_samples; ++s) col[s] = samples[s * n_channels + c];
    const auto r = average_ranks(col);
    for (std::size_t s = 0; s < n_samples; ++s) ranks(s, c) = r[s];
  }
  ranks.rowwise() -= ranks.colwise().mean();
  Eigen::VectorXd norms = ranks.colwise().norm();
  Eigen::MatrixXd corr = ranks.transpose() * ranks;
  for (std::size_t a = 0; a < n_channels; ++a)
    for (std::size_t b = 0; b < n_channels; ++b) {
      if (a == b) {
        corr(a, b) = 1.0;
      } else if (norms(a) == 0.0 || norms(b) == 0.0) {
        corr(a, b) = 0.0;
      } else {
        corr(a, b) = std::clamp(corr(a, b) / (norms(a) * norms(b)), -1.0, 1.0);
      }
    }
  return corr;
}

template <typename T>
CorrelationPair band_correlation(const Tensor<T>& before, const Tensor<T>& after) {
  auto one = [](const Tensor<T>& m) {
    if (m.rank() != 2) throw ShapeError("band_correlation: expected [samples, channels], got " + shape_str(m.shape()));
    if (m.dim(0) < 2) throw std::invalid_argument("band_correlation: fewer than 2 samples");
    std::vector<double> v(m.data().begin(), m.data().end());
    return spearman_matrix(v, m.dim(0), m.dim(1));
  };
  return {one(before), one(after)};
}

double mean_abs_off_diagonal(const Eigen::MatrixXd& m) {
  const auto n = m.rows();
  if (n < 2) return 0.0;
  double total = 0;
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = 0; b < n; ++b)
      if (a != b) total += std::abs(m(a, b));
  return total / static_cast<double>(n * (n - 1));
}

void write_correlation_csv(const std::string& path, const Eigen::MatrixXd& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(std::numeric_limits<double>::max_digits10);
  out << "band";
  for (Eigen::Index c = 0; c < m.cols(); ++c) out << ',' << c;
  out << '\n';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    out << r;
    for (Eigen::Index c = 0; c < m.cols(); ++c) out << ',' << m(r, c);
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

Eigen::MatrixXd read_correlation_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(std::move(row));
  }
  Eigen::MatrixXd m(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != static_cast<std::size_t>(m.cols())) throw std::runtime_error("ragged correlation CSV: " + path);
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c];
  }
  return m;
}

#define DCTM_INSTANTIATE_SSDM(T)                                                     \
  template struct StemParams<T>;                                                     \
  template Tensor<T> stem(const Tensor<T>&, const StemParams<T>&, double);           \
  template Tensor<T> ssdm_forward(const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> ssdm_forward(const Tensor<T>&, const DctBasis3D&);              \
  template Tensor<T> channels_last_matrix(const Tensor<T>&, std::size_t);            \
  template CorrelationPair band_correlation(const Tensor<T>&, const Tensor<T>&);

DCTM_INSTANTIATE_SSDM(float)
DCTM_INSTANTIATE_SSDM(double)

}  // namespace dctm
