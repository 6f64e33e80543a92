#include "dctm/synth.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace dctm {

void SynthConfig::validate() const {
  if (classes < 2) throw std::invalid_argument("synth: need at least 2 classes");
  if (bands == 0 || height == 0 || width == 0) throw std::invalid_argument("synth: extents must be positive");
  if (classes > height * width) throw std::invalid_argument("synth: more classes than pixels");
  if (!(band_correlation >= 0 && band_correlation < 1))
    throw std::invalid_argument("synth: band correlation must lie in [0, 1), got " + std::to_string(band_correlation));
  if (!(noise >= 0)) throw std::invalid_argument("synth: noise must be non-negative");
}

HsiCube synthesize(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const std::size_t K = cfg.classes, C = cfg.bands, H = cfg.height, W = cfg.width;

  // Region seeds: the first K cover every class, the rest are random.
  const std::size_t n_seeds = 3 * K;
  struct Site {
    double r, c;
    std::size_t cls;
  };
  std::vector<Site> sites;
  for (std::size_t s = 0; s < n_seeds; ++s)
    sites.push_back({rng.uniform(0, double(H)), rng.uniform(0, double(W)), s < K ? s : rng.index(K)});

  // Signatures: a gentle baseline plus three Gaussian bumps over the band axis.
  std::vector<double> signature(K * C);
  for (std::size_t k = 0; k < K; ++k) {
    const double base = rng.uniform(0.2, 0.5);
    double centers[3], widths[3], amps[3];
    for (int g = 0; g < 3; ++g) {
      centers[g] = rng.uniform(0, double(C));
      widths[g] = rng.uniform(0.1, 0.3) * double(C);
      amps[g] = rng.uniform(-0.3, 0.5);
    }
    for (std::size_t b = 0; b < C; ++b) {
      double v = base;
      for (int g = 0; g < 3; ++g) v += amps[g] * std::exp(-0.5 * std::pow((double(b) - centers[g]) / widths[g], 2));
      signature[k * C + b] = v;
    }
  }

  HsiCube cube;
  cube.height = H;
  cube.width = W;
  cube.bands = C;
  cube.reflectance.resize(H * W * C);
  cube.labels.resize(H * W);
  for (std::size_t k = 0; k < K; ++k) cube.class_names.push_back("class_" + std::to_string(k + 1));
  for (std::size_t b = 0; b < C; ++b)
    cube.wavelengths.push_back(C == 1 ? 400.0 : 400.0 + 2100.0 * double(b) / double(C - 1));

  const double rho = cfg.band_correlation, innov = std::sqrt(1 - rho * rho);
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c) {
      double best = std::numeric_limits<double>::max();
      std::size_t cls = 0;
      for (const auto& s : sites) {
        const double d = std::pow(double(r) + 0.5 - s.r, 2) + std::pow(double(c) + 0.5 - s.c, 2);
        if (d < best) {
          best = d;
          cls = s.cls;
        }
      }
      cube.labels[r * W + c] = static_cast<std::uint16_t>(cls + 1);
      double e = rng.normal();
      for (std::size_t b = 0; b < C; ++b) {
        if (b > 0) e = rho * e + innov * rng.normal();
        cube.reflectance[(r * W + c) * C + b] = static_cast<float>(signature[cls * C + b] + cfg.noise * e);
      }
    }

  // A seed can be shadowed by its neighbours; force each class onto its own seed pixel.
  for (std::size_t k = 0; k < K; ++k) {
    bool present = false;
    for (auto l : cube.labels) present = present || l == k + 1;
    if (present) continue;
    const auto r = std::min(H - 1, std::size_t(sites[k].r)), c = std::min(W - 1, std::size_t(sites[k].c));
    const auto old = cube.labels[r * W + c] - 1u;
    cube.labels[r * W + c] = static_cast<std::uint16_t>(k + 1);
    for (std::size_t b = 0; b < C; ++b)
      cube.reflectance[(r * W + c) * C + b] +=
          static_cast<float>(signature[k * C + b] - signature[old * C + b]);
  }
  cube.validate();
  return cube;
}

double adjacent_band_noise_correlation(const HsiCube& cube) {
  const std::size_t C = cube.bands, P = cube.height * cube.width, K = cube.num_classes();
  if (C < 2) throw std::invalid_argument("adjacent-band correlation needs at least 2 bands");
  std::vector<double> mean((K + 1) * C, 0.0);
  std::vector<std::size_t> count(K + 1, 0);
  for (std::size_t p = 0; p < P; ++p) {
    ++count[cube.labels[p]];
    for (std::size_t b = 0; b < C; ++b) mean[cube.labels[p] * C + b] += cube.reflectance[p * C + b];
  }
  for (std::size_t k = 0; k <= K; ++k)
    for (std::size_t b = 0; b < C; ++b)
      if (count[k]) mean[k * C + b] /= double(count[k]);
  double total = 0;
  for (std::size_t b = 0; b + 1 < C; ++b) {
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t p = 0; p < P; ++p) {
      const auto k = cube.labels[p];
      const double x = cube.reflectance[p * C + b] - mean[k * C + b];
      const double y = cube.reflectance[p * C + b + 1] - mean[k * C + b + 1];
      sxy += x * y;
      sxx += x * x;
      syy += y * y;
    }
    total += sxx > 0 && syy > 0 ? sxy / std::sqrt(sxx * syy) : 0.0;
  }
  return total / double(C - 1);
}

}  // namespace dctm
