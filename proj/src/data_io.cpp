#include "dctm/data_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <json.hpp>

namespace dctm {

using json = nlohmann::json;
using Kind = FormatError::Kind;

std::string to_string(FormatError::Kind k) {
  switch (k) {
    case Kind::bad_magic: return "bad magic";
    case Kind::truncated_payload: return "truncated payload";
    case Kind::shape_mismatch: return "shape mismatch";
    case Kind::unsupported_feature: return "unsupported MAT feature";
    case Kind::malformed: return "malformed input";
  }
  return "?";
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint16_t get_u16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}

std::uint64_t get_u64(const std::uint8_t* p) { return std::uint64_t(get_u32(p)) | (std::uint64_t(get_u32(p + 4)) << 32); }

constexpr char kContainerMagic[4] = {'H', 'S', 'I', 'C'};
constexpr std::uint32_t kContainerVersion = 1;

}  // namespace

std::size_t HsiCube::num_classes() const {
  std::size_t k = 0;
  for (auto l : labels) k = std::max<std::size_t>(k, l);
  return k;
}

void HsiCube::validate() const {
  if (height == 0 || width == 0 || bands == 0) throw std::invalid_argument("cube: extents must be positive");
  if (reflectance.size() != height * width * bands)
    throw std::invalid_argument("cube: reflectance holds " + std::to_string(reflectance.size()) + " values, expected " +
                                std::to_string(height * width * bands));
  if (labels.size() != height * width) throw std::invalid_argument("cube: label map size mismatch");
  for (float v : reflectance)
    if (!std::isfinite(v)) throw std::invalid_argument("cube: reflectance contains non-finite values");
  const auto k = num_classes();
  std::vector<bool> seen(k + 1, false);
  for (auto l : labels) seen[l] = true;
  for (std::size_t c = 1; c <= k; ++c)
    if (!seen[c]) throw std::invalid_argument("cube: class " + std::to_string(c) + " has no labeled pixel");
  if (!wavelengths.empty() && wavelengths.size() != bands)
    throw std::invalid_argument("cube: wavelength count differs from band count");
}

std::vector<std::uint8_t> encode_container(const HsiCube& cube) {
  cube.validate();
  json header = {{"H", cube.height},         {"W", cube.width},
                 {"C", cube.bands},          {"dtype", "float32"},
                 {"class_names", cube.class_names}, {"wavelengths", cube.wavelengths}};
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(kContainerMagic, kContainerMagic + 4);
  out.reserve(12 + text.size() + cube.reflectance.size() * 4 + cube.labels.size() * 2);
  put_u32(out, kContainerVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (float v : cube.reflectance) put_u32(out, std::bit_cast<std::uint32_t>(v));
  for (auto l : cube.labels) put_u16(out, l);
  return out;
}

HsiCube decode_container(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kContainerMagic, 4) != 0)
    throw FormatError(Kind::bad_magic, "bad magic: not an HSIC container");
  if (bytes.size() < 12) throw FormatError(Kind::truncated_payload, "truncated payload: header incomplete");
  const auto version = get_u32(bytes.data() + 4);
  if (version != kContainerVersion)
    throw FormatError(Kind::unsupported_feature, "unsupported container version " + std::to_string(version));
  const std::size_t hlen = get_u32(bytes.data() + 8);
  if (bytes.size() < 12 + hlen) throw FormatError(Kind::truncated_payload, "truncated payload: JSON header cut short");

  HsiCube cube;
  try {
    const auto header = json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(hlen));
    cube.height = header.at("H").get<std::size_t>();
    cube.width = header.at("W").get<std::size_t>();
    cube.bands = header.at("C").get<std::size_t>();
    if (header.at("dtype").get<std::string>() != "float32")
      throw FormatError(Kind::unsupported_feature, "unsupported dtype " + header.at("dtype").dump());
    if (header.contains("class_names")) cube.class_names = header["class_names"].get<std::vector<std::string>>();
    if (header.contains("wavelengths")) cube.wavelengths = header["wavelengths"].get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw FormatError(Kind::malformed, std::string("malformed container header: ") + e.what());
  }
  if (cube.height == 0 || cube.width == 0 || cube.bands == 0)
    throw FormatError(Kind::malformed, "malformed container header: zero extent");

  const std::size_t pixels = cube.height * cube.width;
  const std::size_t expected = pixels * (4 * cube.bands + 2);
  const std::size_t actual = bytes.size() - 12 - hlen;
  if (actual > expected)
    throw FormatError(Kind::shape_mismatch, "shape mismatch: " + std::to_string(actual - expected) +
                                                " bytes beyond the declared " + std::to_string(cube.height) + "x" +
                                                std::to_string(cube.width) + "x" + std::to_string(cube.bands) + " cube");
  if (actual < expected) {
    if (actual % pixels == 0 && actual / pixels > 2 && (actual / pixels - 2) % 4 == 0)
      throw FormatError(Kind::shape_mismatch, "shape mismatch: header declares " + std::to_string(cube.bands) +
                                                  " bands, payload holds " + std::to_string((actual / pixels - 2) / 4));
    throw FormatError(Kind::truncated_payload, "truncated payload: " + std::to_string(actual) + " of " +
                                                   std::to_string(expected) + " bytes present");
  }
  const std::uint8_t* p = bytes.data() + 12 + hlen;
  cube.reflectance.resize(pixels * cube.bands);
  for (auto& v : cube.reflectance) {
    v = std::bit_cast<float>(get_u32(p));
    p += 4;
  }
  cube.labels.resize(pixels);
  for (auto& l : cube.labels) {
    l = get_u16(p);
    p += 2;
  }
  try {
    cube.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(Kind::malformed, std::string("malformed container: ") + e.what());
  }
  return cube;
}

void write_container(const std::string& path, const HsiCube& cube) { write_file(path, encode_container(cube)); }

HsiCube read_container(const std::string& path) { return decode_container(read_file(path)); }

// ---- MAT v5 -------------------------------------------------------------

namespace {

enum MiType : std::uint32_t {
  miINT8 = 1, miUINT8 = 2, miINT16 = 3, miUINT16 = 4, miINT32 = 5, miUINT32 = 6,
  miSINGLE = 7, miDOUBLE = 9, miINT64 = 12, miUINT64 = 13, miMATRIX = 14,
  miCOMPRESSED = 15, miUTF8 = 16, miUTF16 = 17, miUTF32 = 18
};

std::size_t mi_size(std::uint32_t type) {
  switch (type) {
    case miINT8: case miUINT8: case miUTF8: return 1;
    case miINT16: case miUINT16: case miUTF16: return 2;
    case miINT32: case miUINT32: case miSINGLE: case miUTF32: return 4;
    case miDOUBLE: case miINT64: case miUINT64: return 8;
    default: return 0;
  }
}

const char* mx_class_name(std::uint8_t c) {
  static const char* names[] = {"unknown", "cell",  "struct", "object", "char",   "sparse", "double",  "single",
                                "int8",    "uint8", "int16",  "uint16", "int32",  "uint32", "int64",   "uint64"};
  return c < 16 ? names[c] : "unknown";
}

struct Element {
  std::uint32_t type = 0;
  std::span<const std::uint8_t> data;
};

class ElementReader {
 public:
  ElementReader(std::span<const std::uint8_t> bytes, std::string where) : bytes_(bytes), where_(std::move(where)) {}
  bool done() const { return pos_ >= bytes_.size(); }

  Element next() {
    if (bytes_.size() - pos_ < 8) throw FormatError(Kind::truncated_payload, "truncated payload: element tag in " + where_);
    const auto* p = bytes_.data() + pos_;
    const std::uint32_t first = get_u32(p);
    if (first >> 16) {  // small data element: 16-bit size, 16-bit type, 4 data bytes
      const std::uint32_t nbytes = first >> 16, type = first & 0xffff;
      if (nbytes > 4) throw FormatError(Kind::malformed, "malformed small data element in " + where_);
      pos_ += 8;
      return {type, bytes_.subspan(pos_ - 4, nbytes)};
    }
    const std::size_t nbytes = get_u32(p + 4);
    if (bytes_.size() - pos_ - 8 < nbytes)
      throw FormatError(Kind::truncated_payload, "truncated payload: element of " + std::to_string(nbytes) +
                                                     " bytes in " + where_);
    Element e{first, bytes_.subspan(pos_ + 8, nbytes)};
    pos_ += 8 + nbytes;
    if (first != miCOMPRESSED) pos_ = std::min(bytes_.size(), (pos_ + 7) & ~std::size_t(7));
    return e;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::string where_;
  std::size_t pos_ = 0;
};

std::vector<double> numeric_values(const Element& e, const std::string& what) {
  const auto width = mi_size(e.type);
  if (width == 0 || e.type == miUTF8 || e.type == miUTF16 || e.type == miUTF32)
    throw FormatError(Kind::unsupported_feature,
                      "unsupported MAT feature: data type " + std::to_string(e.type) + " in " + what);
  if (e.data.size() % width != 0) throw FormatError(Kind::malformed, "malformed numeric data in " + what);
  std::vector<double> out(e.data.size() / width);
  const auto* p = e.data.data();
  for (std::size_t i = 0; i < out.size(); ++i, p += width) {
    switch (e.type) {
      case miINT8: out[i] = static_cast<std::int8_t>(p[0]); break;
      case miUINT8: out[i] = p[0]; break;
      case miINT16: out[i] = static_cast<std::int16_t>(get_u16(p)); break;
      case miUINT16: out[i] = get_u16(p); break;
      case miINT32: out[i] = static_cast<std::int32_t>(get_u32(p)); break;
      case miUINT32: out[i] = get_u32(p); break;
      case miSINGLE: out[i] = std::bit_cast<float>(get_u32(p)); break;
      case miDOUBLE: out[i] = std::bit_cast<double>(get_u64(p)); break;
      case miINT64: out[i] = static_cast<double>(static_cast<std::int64_t>(get_u64(p))); break;
      case miUINT64: out[i] = static_cast<double>(get_u64(p)); break;
    }
  }
  return out;
}

MatArray parse_matrix(std::span<const std::uint8_t> body, std::size_t index) {
  const std::string where = "array #" + std::to_string(index);
  ElementReader r(body, where);
  MatArray a;

  const auto flags = r.next();
  if (flags.type != miUINT32 || flags.data.size() != 8) throw FormatError(Kind::malformed, "malformed array flags in " + where);
  const auto word = get_u32(flags.data.data());
  const std::uint8_t mclass = word & 0xff;

  const auto dims = r.next();
  if (dims.type != miINT32 || dims.data.size() < 8) throw FormatError(Kind::malformed, "malformed dimensions in " + where);
  for (std::size_t i = 0; i < dims.data.size() / 4; ++i) {
    const auto d = static_cast<std::int32_t>(get_u32(dims.data.data() + 4 * i));
    if (d < 0) throw FormatError(Kind::malformed, "negative dimension in " + where);
    a.dims.push_back(static_cast<std::size_t>(d));
  }
  const auto name = r.next();
  if (name.type != miINT8) throw FormatError(Kind::malformed, "malformed array name in " + where);
  a.name.assign(name.data.begin(), name.data.end());
  const std::string label = "'" + a.name + "' (" + where + ")";

  if (mclass < 6 || mclass > 15)
    throw FormatError(Kind::unsupported_feature,
                      std::string("unsupported MAT feature: ") + mx_class_name(mclass) + " array " + label);
  if (word & 0x0800) throw FormatError(Kind::unsupported_feature, "unsupported MAT feature: complex array " + label);
  a.mclass = mx_class_name(mclass);
  if (word & 0x0200) a.mclass = "logical";

  std::size_t count = 1;
  for (auto d : a.dims) count *= d;
  if (count == 0) return a;
  if (r.done()) throw FormatError(Kind::truncated_payload, "truncated payload: missing real part of " + label);
  a.values = numeric_values(r.next(), label);
  if (a.values.size() != count)
    throw FormatError(Kind::shape_mismatch, "shape mismatch: " + label + " holds " + std::to_string(a.values.size()) +
                                                " values for " + std::to_string(count) + " elements");
  return a;
}

}  // namespace

std::vector<MatArray> parse_mat_v5(std::span<const std::uint8_t> bytes) {
  static const std::string kText = "MATLAB 5.0 MAT-file";
  if (bytes.size() < 128 || std::memcmp(bytes.data(), kText.data(), kText.size()) != 0)
    throw FormatError(Kind::bad_magic, "bad magic: header text does not start with \"" + kText + "\"");
  if (bytes[126] == 'M' && bytes[127] == 'I')
    throw FormatError(Kind::unsupported_feature, "unsupported MAT feature: big-endian file");
  if (bytes[126] != 'I' || bytes[127] != 'M') throw FormatError(Kind::malformed, "malformed endian indicator");

  std::vector<MatArray> out;
  ElementReader r(bytes.subspan(128), "file body");
  while (!r.done()) {
    const auto e = r.next();
    const auto index = out.size();
    if (e.type == miCOMPRESSED)
      throw FormatError(Kind::unsupported_feature,
                        "unsupported MAT feature: compressed element (array #" + std::to_string(index) + ")");
    if (e.type != miMATRIX)
      throw FormatError(Kind::unsupported_feature,
                        "unsupported MAT feature: top-level data type " + std::to_string(e.type));
    if (e.data.empty()) continue;
    out.push_back(parse_matrix(e.data, index));
  }
  return out;
}

std::vector<MatArray> read_mat_v5(const std::string& path) { return parse_mat_v5(read_file(path)); }

HsiCube cube_from_mat(const std::vector<MatArray>& arrays, const std::string& cube_var, const std::string& label_var) {
  auto find = [&](const std::string& name) -> const MatArray& {
    for (const auto& a : arrays)
      if (a.name == name) return a;
    throw std::invalid_argument("MAT file has no variable '" + name + "'");
  };
  const auto& c = find(cube_var);
  const auto& l = find(label_var);
  if (c.dims.size() != 3) throw FormatError(Kind::shape_mismatch, "shape mismatch: cube variable must be H x W x C");
  if (l.dims.size() != 2 || l.dims[0] != c.dims[0] || l.dims[1] != c.dims[1])
    throw FormatError(Kind::shape_mismatch, "shape mismatch: label variable must be H x W matching the cube");
  HsiCube cube;
  cube.height = c.dims[0];
  cube.width = c.dims[1];
  cube.bands = c.dims[2];
  cube.reflectance.resize(cube.height * cube.width * cube.bands);
  cube.labels.resize(cube.height * cube.width);
  for (std::size_t r = 0; r < cube.height; ++r)
    for (std::size_t col = 0; col < cube.width; ++col) {
      for (std::size_t b = 0; b < cube.bands; ++b)
        cube.reflectance[(r * cube.width + col) * cube.bands + b] = static_cast<float>(c.at(r, col, b));
      const double v = l.at(r, col);
      if (v < 0 || v > 65535 || v != std::floor(v))
        throw std::invalid_argument("label variable holds a non-label value " + std::to_string(v));
      cube.labels[r * cube.width + col] = static_cast<std::uint16_t>(v);
    }
  cube.validate();
  return cube;
}

// ---- patches ------------------------------------------------------------

std::size_t reflect_index(long i, std::size_t n) {
  const long last = static_cast<long>(n) - 1;
  if (i < 0) i = -i;
  if (i > last) i = 2 * last - i;
  if (i < 0 || i > last) throw std::out_of_range("reflect_index: offset beyond a single reflection");
  return static_cast<std::size_t>(i);
}

PatchSet::PatchSet(std::shared_ptr<const HsiCube> cube, std::size_t patch, std::vector<Coord> coords,
                   std::vector<int> labels)
    : cube_(std::move(cube)), patch_(patch), coords_(std::move(coords)), labels_(std::move(labels)) {
  if (!cube_) throw std::invalid_argument("PatchSet: null cube");
  if (patch_ == 0 || patch_ % 2 == 0) throw std::invalid_argument("PatchSet: patch size must be odd");
  if (patch_ > 2 * cube_->height || patch_ > 2 * cube_->width)
    throw std::invalid_argument("PatchSet: patch " + std::to_string(patch_) + " larger than twice the scene extent");
  if (coords_.size() != labels_.size()) throw std::invalid_argument("PatchSet: coords/labels size mismatch");
}

template <typename T>
Tensor<T> PatchSet::batch(std::span<const std::size_t> indices) const {
  const std::size_t C = cube_->bands, p = patch_, half = p / 2;
  Tensor<T> out(Shape{indices.size(), 1, C, p, p});
  auto dst = out.data();
  for (std::size_t n = 0; n < indices.size(); ++n) {
    const auto& c = coords_.at(indices[n]);
    for (std::size_t y = 0; y < p; ++y) {
      const auto r = reflect_index(long(c.row) + long(y) - long(half), cube_->height);
      for (std::size_t x = 0; x < p; ++x) {
        const auto col = reflect_index(long(c.col) + long(x) - long(half), cube_->width);
        const float* px = &cube_->reflectance[(r * cube_->width + col) * C];
        for (std::size_t b = 0; b < C; ++b) dst[((n * C + b) * p + y) * p + x] = static_cast<T>(px[b]);
      }
    }
  }
  return out;
}

template Tensor<float> PatchSet::batch<float>(std::span<const std::size_t>) const;
template Tensor<double> PatchSet::batch<double>(std::span<const std::size_t>) const;

std::vector<int> PatchSet::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels_.at(i));
  return out;
}

PatchSet PatchSet::subset(std::span<const std::size_t> indices) const {
  std::vector<Coord> c;
  std::vector<int> l;
  for (auto i : indices) {
    c.push_back(coords_.at(i));
    l.push_back(labels_.at(i));
  }
  return PatchSet(cube_, patch_, std::move(c), std::move(l));
}

PatchSet PatchSet::with_cube(std::shared_ptr<const HsiCube> cube) const {
  if (!cube || cube->height != cube_->height || cube->width != cube_->width || cube->bands != cube_->bands)
    throw ShapeError("PatchSet::with_cube: replacement cube has different extents");
  return PatchSet(std::move(cube), patch_, coords_, labels_);
}

PatchSet extract_patches(std::shared_ptr<const HsiCube> cube, std::size_t patch) {
  std::vector<Coord> coords;
  std::vector<int> labels;
  for (std::size_t r = 0; r < cube->height; ++r)
    for (std::size_t c = 0; c < cube->width; ++c)
      if (const auto l = cube->label(r, c); l != 0) {
        coords.push_back({r, c});
        labels.push_back(static_cast<int>(l) - 1);
      }
  return PatchSet(std::move(cube), patch, std::move(coords), std::move(labels));
}

std::size_t train_count(std::size_t n, double fraction) {
  const auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  return std::clamp<std::size_t>(k, 1, n);
}

Split stratified_split(const PatchSet& set, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0 && train_fraction <= 1)) throw std::invalid_argument("split: fraction must be in (0, 1]");
  std::map<int, std::vector<std::size_t>> by_class;
  int max_label = -1;
  for (std::size_t i = 0; i < set.size(); ++i) {
    by_class[set.labels()[i]].push_back(i);
    max_label = std::max(max_label, set.labels()[i]);
  }
  for (int k = 0; k <= max_label; ++k)
    if (!by_class.count(k)) throw std::invalid_argument("split: class " + std::to_string(k + 1) + " has no samples");
  Rng rng(seed);
  std::vector<std::size_t> train, test;
  for (auto& [label, idx] : by_class) {
    rng.shuffle(idx.begin(), idx.end());
    const auto k = train_count(idx.size(), train_fraction);
    train.insert(train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
    test.insert(test.end(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {set.subset(train), set.subset(test)};
}

BandStats band_stats(const HsiCube& cube, const std::vector<Coord>& pixels) {
  if (pixels.empty()) throw std::invalid_argument("band_stats: no pixels");
  BandStats s{std::vector<double>(cube.bands, 0.0), std::vector<double>(cube.bands, 0.0)};
  for (const auto& c : pixels)
    for (std::size_t b = 0; b < cube.bands; ++b) s.mean[b] += cube.at(c.row, c.col, b);
  for (auto& m : s.mean) m /= static_cast<double>(pixels.size());
  for (const auto& c : pixels)
    for (std::size_t b = 0; b < cube.bands; ++b) {
      const double d = cube.at(c.row, c.col, b) - s.mean[b];
      s.stddev[b] += d * d;
    }
  for (auto& v : s.stddev) v = std::sqrt(v / static_cast<double>(pixels.size()));
  return s;
}

BandStats band_stats(const PatchSet& set) { return band_stats(set.cube(), set.coords()); }

HsiCube normalize(const HsiCube& cube, const BandStats& stats) {
  if (stats.mean.size() != cube.bands || stats.stddev.size() != cube.bands)
    throw ShapeError("normalize: statistics cover " + std::to_string(stats.mean.size()) + " bands, cube has " +
                     std::to_string(cube.bands));
  HsiCube out = cube;
  for (std::size_t px = 0; px < cube.height * cube.width; ++px)
    for (std::size_t b = 0; b < cube.bands; ++b) {
      auto& v = out.reflectance[px * cube.bands + b];
      v = stats.stddev[b] > 0 ? static_cast<float>((v - stats.mean[b]) / stats.stddev[b]) : 0.0f;
    }
  return out;
}

void write_label_map(const std::string& path, const std::vector<Coord>& coords, const std::vector<int>& labels) {
  if (coords.size() != labels.size()) throw std::invalid_argument("write_label_map: size mismatch");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "row,col,label\n";
  for (std::size_t i = 0; i < coords.size(); ++i) out << coords[i].row << ',' << coords[i].col << ',' << labels[i] << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace dctm
