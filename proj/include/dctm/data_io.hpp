#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dctm/random.hpp"
#include "dctm/tensor.hpp"

namespace dctm {

class FormatError : public std::runtime_error {
 public:
  enum class Kind { bad_magic, truncated_payload, shape_mismatch, unsupported_feature, malformed };
  FormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

std::string to_string(FormatError::Kind k);

/// Scene with reflectance in band-interleaved-by-pixel order:
/// reflectance[(row * width + col) * bands + band]. Label 0 is background.
struct HsiCube {
  std::size_t height = 0, width = 0, bands = 0;
  std::vector<float> reflectance;
  std::vector<std::uint16_t> labels;
  std::vector<std::string> class_names;
  std::vector<double> wavelengths;

  float at(std::size_t row, std::size_t col, std::size_t band) const {
    return reflectance[(row * width + col) * bands + band];
  }
  std::uint16_t label(std::size_t row, std::size_t col) const { return labels[row * width + col]; }
  /// Highest label present.
  std::size_t num_classes() const;
  /// Throws std::invalid_argument on non-finite reflectance, inconsistent
  /// sizes, or a class in 1..K with no pixel.
  void validate() const;
};

// "HSIC" container: magic, u32 version, u32 header length, JSON header,
// float32 cube, u16 labels; all little-endian.
void write_container(const std::string& path, const HsiCube& cube);
HsiCube read_container(const std::string& path);
std::vector<std::uint8_t> encode_container(const HsiCube& cube);
HsiCube decode_container(std::span<const std::uint8_t> bytes);

/// Numeric array from a MAT file, values in column-major order as stored.
struct MatArray {
  std::string name;
  std::string mclass;  // "double", "single", "uint8", ...
  std::vector<std::size_t> dims;
  std::vector<double> values;

  double at(std::size_t row, std::size_t col, std::size_t page = 0) const {
    return values[(page * dims[1] + col) * dims[0] + row];
  }
};

/// Level-5 MAT file subset: uncompressed, real, full numeric arrays.
std::vector<MatArray> read_mat_v5(const std::string& path);
std::vector<MatArray> parse_mat_v5(std::span<const std::uint8_t> bytes);

/// Builds a cube from an H x W x C array and an H x W label array.
HsiCube cube_from_mat(const std::vector<MatArray>& arrays, const std::string& cube_var, const std::string& label_var);

struct Coord {
  std::size_t row = 0, col = 0;
  bool operator==(const Coord&) const = default;
};

/// Labeled pixel windows over a shared cube. Patches are gathered on demand.
class PatchSet {
 public:
  PatchSet() = default;
  PatchSet(std::shared_ptr<const HsiCube> cube, std::size_t patch, std::vector<Coord> coords, std::vector<int> labels);

  std::size_t size() const { return coords_.size(); }
  std::size_t patch() const { return patch_; }
  std::size_t bands() const { return cube_->bands; }
  const std::vector<Coord>& coords() const { return coords_; }
  const std::vector<int>& labels() const { return labels_; }  // 0-based
  const HsiCube& cube() const { return *cube_; }

  /// [n, 1, C, p, p] for the listed sample indices, reflect-padded at borders.
  template <typename T>
  Tensor<T> batch(std::span<const std::size_t> indices) const;
  std::vector<int> batch_labels(std::span<const std::size_t> indices) const;
  PatchSet subset(std::span<const std::size_t> indices) const;
  PatchSet with_cube(std::shared_ptr<const HsiCube> cube) const;

 private:
  std::shared_ptr<const HsiCube> cube_;
  std::size_t patch_ = 0;
  std::vector<Coord> coords_;
  std::vector<int> labels_;
};

/// Mirror index without repeating the edge: -1 -> 1, n -> n-2.
std::size_t reflect_index(long i, std::size_t n);

/// One patch per labeled pixel in row-major order.
PatchSet extract_patches(std::shared_ptr<const HsiCube> cube, std::size_t patch);

struct Split {
  PatchSet train;
  PatchSet test;
};

/// Per class: ceil(fraction * n) samples (at least 1) to train, the rest to test.
Split stratified_split(const PatchSet& set, double train_fraction, std::uint64_t seed);
/// Train count for a class of n samples.
std::size_t train_count(std::size_t n, double fraction);

struct BandStats {
  std::vector<double> mean;
  std::vector<double> stddev;  // population; 0 marks a constant band
};

/// Statistics of the center pixels of `set`.
BandStats band_stats(const PatchSet& set);
BandStats band_stats(const HsiCube& cube, const std::vector<Coord>& pixels);
/// (x - mean) / std per band; constant bands become 0.
HsiCube normalize(const HsiCube& cube, const BandStats& stats);

/// Writes row,col,label rows.
void write_label_map(const std::string& path, const std::vector<Coord>& coords, const std::vector<int>& labels);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace dctm
