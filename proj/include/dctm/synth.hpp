#pragma once

#include <cstddef>
#include <cstdint>

#include "dctm/data_io.hpp"

namespace dctm {

struct SynthConfig {
  std::size_t classes = 4;
  std::size_t bands = 16;
  std::size_t height = 64, width = 64;
  double band_correlation = 0.9;  // AR(1) coefficient between adjacent bands
  double noise = 0.3;             // noise standard deviation per band
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument (e.g. correlation outside [0, 1)).
  void validate() const;
};

/// Voronoi class regions, smooth per-class spectral signatures, and
/// unit-variance AR(1) band noise scaled by `noise`. Every pixel is labeled
/// and every class appears.
HsiCube synthesize(const SynthConfig& cfg);

/// Mean over adjacent band pairs of the Pearson correlation of the noise,
/// i.e. reflectance with each pixel's class-mean spectrum removed.
double adjacent_band_noise_correlation(const HsiCube& cube);

}  // namespace dctm
