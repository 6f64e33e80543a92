#pragma once

// Small scenes, configurations and hand-assembled MAT-v5 files shared by the
// unit and acceptance suites.

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "dctm/data_io.hpp"
#include "dctm/model.hpp"
#include "dctm/random.hpp"

namespace dctm::testing {

// H x W x C cube with random reflectance; labels cycle through 1..K over
// every pixel unless `background` marks the first pixel of each row as 0.
inline HsiCube random_cube(std::size_t H, std::size_t W, std::size_t C, std::size_t K, std::uint64_t seed,
                           bool background = false) {
  Rng rng(seed);
  HsiCube cube;
  cube.height = H;
  cube.width = W;
  cube.bands = C;
  cube.reflectance.resize(H * W * C);
  for (auto& v : cube.reflectance) v = static_cast<float>(rng.uniform(0, 1));
  cube.labels.resize(H * W);
  for (std::size_t i = 0; i < H * W; ++i) cube.labels[i] = static_cast<std::uint16_t>(i % K + 1);
  if (background)
    for (std::size_t r = 0; r < H; ++r) cube.labels[r * W] = 0;
  return cube;
}

// The end-to-end micro model: patch 5, 8 bands, 2 classes.
inline ModelConfig micro_config(Ablation ablation = Ablation::full) {
  ModelConfig cfg;
  cfg.ssdm.patch_spatial = 5;
  cfg.mamba.d_model = 4;
  cfg.mamba.d_state = 2;
  cfg.num_classes = 2;
  cfg.bands = 8;
  cfg.ablation = ablation;
  return cfg;
}

// ---- MAT-v5 byte assembly -------------------------------------------------

class MatWriter {
 public:
  MatWriter() {
    std::string text = "MATLAB 5.0 MAT-file, Platform: test";
    text.resize(116, ' ');
    bytes_.assign(text.begin(), text.end());
    bytes_.resize(124, 0);  // subsystem offset
    put16(0x0100);          // version
    bytes_.push_back('I');
    bytes_.push_back('M');
  }

  // Column-major real array of class `mclass` (6 double, 7 single, 9 uint8 ...)
  // with payload elements of mi type `mtype`.
  void add_array(const std::string& name, std::vector<std::int32_t> dims, std::uint8_t mclass, std::uint32_t mtype,
                 const std::vector<std::uint8_t>& payload, std::uint32_t flag_bits = 0, bool small_payload = false) {
    std::vector<std::uint8_t> body;
    auto flags = le32(mclass | flag_bits);
    append(flags, le32(0));
    append_element(body, 6 /*miUINT32*/, flags);
    std::vector<std::uint8_t> d;
    for (auto v : dims) append(d, le32(static_cast<std::uint32_t>(v)));
    append_element(body, 5 /*miINT32*/, d);
    const std::vector<std::uint8_t> name_bytes(name.begin(), name.end());
    if (name.size() <= 4)
      append_small(body, 1 /*miINT8*/, name_bytes);
    else
      append_element(body, 1 /*miINT8*/, name_bytes);
    if (small_payload)
      append_small(body, mtype, payload);
    else
      append_element(body, mtype, payload);
    append_element(bytes_, 14 /*miMATRIX*/, body);
  }

  void add_raw_element(std::uint32_t type, const std::vector<std::uint8_t>& payload) {
    append_element(bytes_, type, payload);
  }

  std::vector<std::uint8_t>& bytes() { return bytes_; }

  static std::vector<std::uint8_t> le32(std::uint32_t v) {
    return {std::uint8_t(v), std::uint8_t(v >> 8), std::uint8_t(v >> 16), std::uint8_t(v >> 24)};
  }
  static std::vector<std::uint8_t> doubles(const std::vector<double>& v) {
    std::vector<std::uint8_t> out(v.size() * 8);
    std::memcpy(out.data(), v.data(), out.size());
    return out;
  }

 private:
  static void append(std::vector<std::uint8_t>& dst, const std::vector<std::uint8_t>& src) {
    dst.insert(dst.end(), src.begin(), src.end());
  }
  static void append_element(std::vector<std::uint8_t>& dst, std::uint32_t type, const std::vector<std::uint8_t>& p) {
    append(dst, le32(type));
    append(dst, le32(static_cast<std::uint32_t>(p.size())));
    append(dst, p);
    while (dst.size() % 8) dst.push_back(0);
  }
  // Small data element: bytes in the upper half of the first tag word.
  static void append_small(std::vector<std::uint8_t>& dst, std::uint32_t type, const std::vector<std::uint8_t>& p) {
    append(dst, le32((static_cast<std::uint32_t>(p.size()) << 16) | type));
    append(dst, p);
    while (dst.size() % 8) dst.push_back(0);
  }
  void put16(std::uint16_t v) {
    bytes_.push_back(std::uint8_t(v));
    bytes_.push_back(std::uint8_t(v >> 8));
  }

  std::vector<std::uint8_t> bytes_;
};

// [[1,2,3],[4,5,6]] as a 2x3 double plus a 1x1 int32 holding 42 in a small
// data element.
inline std::vector<std::uint8_t> mat_fixture() {
  MatWriter w;
  w.add_array("A", {2, 3}, 6, 9 /*miDOUBLE*/, MatWriter::doubles({1, 4, 2, 5, 3, 6}));
  w.add_array("n", {1, 1}, 12 /*mxINT32*/, 5 /*miINT32*/, MatWriter::le32(42), 0, true);
  return w.bytes();
}

struct MalformedFixture {
  std::string name;
  bool mat = false;  // parse with the MAT reader, else the container reader
  std::vector<std::uint8_t> bytes;
  FormatError::Kind kind;
  std::string message;  // substring the error must contain
};

inline std::vector<MalformedFixture> malformed_fixtures() {
  using K = FormatError::Kind;
  std::vector<MalformedFixture> out;
  const auto good = encode_container(random_cube(4, 3, 10, 2, 9));

  auto bytes = good;
  bytes[0] = 'X';
  out.push_back({"container bad magic", false, bytes, K::bad_magic, "bad magic"});
  bytes = good;
  bytes.pop_back();
  out.push_back({"container truncated", false, bytes, K::truncated_payload, "truncated payload"});
  bytes = good;
  bytes.resize(bytes.size() - 12 * 4);  // one band short over 12 pixels
  out.push_back({"container 10 bands declared, 9 present", false, bytes, K::shape_mismatch, "9"});
  bytes = good;
  bytes.push_back(0);
  out.push_back({"container trailing bytes", false, bytes, K::shape_mismatch, "shape mismatch"});
  bytes = good;
  bytes[4] = 7;
  out.push_back({"container version", false, bytes, K::unsupported_feature, "version"});
  bytes = good;
  bytes[12] = '!';
  out.push_back({"container header json", false, bytes, K::malformed, "malformed"});

  auto mat = mat_fixture();
  mat[0] = 'm';
  out.push_back({"mat header text", true, mat, K::bad_magic, "MATLAB 5.0 MAT-file"});
  mat = mat_fixture();
  mat[126] = 'M';
  mat[127] = 'I';
  out.push_back({"mat big-endian", true, mat, K::unsupported_feature, "big-endian"});
  {
    MatWriter w;
    w.add_raw_element(15, {0x78, 0x9c, 0x03, 0x00});
    out.push_back({"mat compressed", true, w.bytes(), K::unsupported_feature, "compressed"});
  }
  const std::pair<std::uint8_t, const char*> classes[] = {{1, "cell"}, {2, "struct"}, {3, "object"}, {4, "char"}, {5, "sparse"}};
  for (const auto& [mclass, label] : classes) {
    MatWriter w;
    w.add_array("bad", {1, 1}, mclass, 9, MatWriter::doubles({1.0}));
    out.push_back({std::string("mat ") + label, true, w.bytes(), K::unsupported_feature, std::string(label) + " array 'bad'"});
  }
  {
    MatWriter w;
    w.add_array("z", {1, 2}, 6, 9, MatWriter::doubles({1.0, 2.0}), 0x0800);
    out.push_back({"mat complex", true, w.bytes(), K::unsupported_feature, "complex array 'z'"});
  }
  mat = mat_fixture();
  mat.resize(mat.size() - 20);
  out.push_back({"mat truncated", true, mat, K::truncated_payload, "truncated payload"});
  {
    MatWriter w;
    w.add_array("A", {2, 3}, 6, 9, MatWriter::doubles({1, 2, 3, 4, 5}));
    out.push_back({"mat element count", true, w.bytes(), K::shape_mismatch, "'A'"});
  }
  return out;
}

}  // namespace dctm::testing
