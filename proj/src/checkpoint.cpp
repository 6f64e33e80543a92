#include "dctm/checkpoint.hpp"

#include <bit>
#include <cstring>

namespace dctm {

using json = nlohmann::json;
using Kind = FormatError::Kind;

namespace {

constexpr char kMagic[4] = {'D', 'C', 'M', '3'};
constexpr std::uint32_t kVersion = 1;

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(const std::uint8_t* p, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= std::uint64_t(p[i]) << (8 * i);
  return v;
}

}  // namespace

const StoredTensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw std::out_of_range("checkpoint has no tensor '" + name + "'");
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  json manifest = json::array();
  std::uint64_t offset = 0;
  for (const auto& t : ck.tensors) {
    if (shape_numel(t.shape) != t.data.size())
      throw ShapeError("checkpoint tensor " + t.name + " does not match its shape " + shape_str(t.shape));
    const std::uint64_t nbytes = t.data.size() * 4;
    manifest.push_back({{"name", t.name}, {"shape", t.shape}, {"dtype", "f32"}, {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
  }
  const json header = {{"config", ck.config},     {"step", ck.step}, {"epoch", ck.epoch},
                       {"adam_steps", ck.adam_steps}, {"rng", ck.rng_state}, {"meta", ck.meta},
                       {"tensors", manifest}};
  const auto text = header.dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.reserve(16 + text.size() + offset);
  put_le(out, kVersion, 4);
  put_le(out, text.size(), 8);
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& t : ck.tensors)
    for (float v : t.data) put_le(out, std::bit_cast<std::uint32_t>(v), 4);
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw FormatError(Kind::bad_magic, "bad magic: not a checkpoint");
  if (bytes.size() < 16) throw FormatError(Kind::truncated_payload, "truncated payload: checkpoint header");
  const auto version = get_le(bytes.data() + 4, 4);
  if (version != kVersion)
    throw FormatError(Kind::unsupported_feature, "unsupported checkpoint version " + std::to_string(version));
  const auto hlen = get_le(bytes.data() + 8, 8);
  if (bytes.size() - 16 < hlen) throw FormatError(Kind::truncated_payload, "truncated payload: checkpoint header");
  const std::size_t base = 16 + hlen;
  Checkpoint ck;
  try {
    const auto header = json::parse(bytes.begin() + 16, bytes.begin() + static_cast<std::ptrdiff_t>(base));
    ck.config = header.at("config");
    ck.step = header.at("step").get<std::uint64_t>();
    ck.epoch = header.at("epoch").get<std::uint64_t>();
    ck.adam_steps = header.at("adam_steps").get<std::uint64_t>();
    ck.rng_state = header.at("rng").get<std::string>();
    ck.meta = header.at("meta");
    std::uint64_t expected_offset = 0;
    for (const auto& entry : header.at("tensors")) {
      StoredTensor t;
      t.name = entry.at("name").get<std::string>();
      t.shape = entry.at("shape").get<Shape>();
      if (entry.at("dtype").get<std::string>() != "f32")
        throw FormatError(Kind::unsupported_feature, "unsupported tensor dtype for " + t.name);
      const auto offset = entry.at("offset").get<std::uint64_t>(), nbytes = entry.at("nbytes").get<std::uint64_t>();
      if (offset != expected_offset || nbytes != shape_numel(t.shape) * 4)
        throw FormatError(Kind::shape_mismatch, "shape mismatch: manifest entry for " + t.name);
      if (bytes.size() - base < offset + nbytes)
        throw FormatError(Kind::truncated_payload, "truncated payload: tensor " + t.name);
      t.data.resize(nbytes / 4);
      const auto* p = bytes.data() + base + offset;
      for (auto& v : t.data) {
        v = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(p, 4)));
        p += 4;
      }
      expected_offset += nbytes;
      ck.tensors.push_back(std::move(t));
    }
    if (bytes.size() - base != expected_offset)
      throw FormatError(Kind::shape_mismatch, "shape mismatch: trailing bytes after checkpoint payload");
  } catch (const json::exception& e) {
    throw FormatError(Kind::malformed, std::string("malformed checkpoint header: ") + e.what());
  }
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) { write_file(path, encode_checkpoint(ck)); }

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

Checkpoint make_checkpoint(const TrainState& state, const RunConfig& cfg, const json& meta) {
  Checkpoint ck;
  ck.config = to_json(cfg);
  ck.config["model"] = to_json(state.model.config);
  ck.step = state.step;
  ck.epoch = state.epoch;
  ck.adam_steps = state.adam.steps();
  ck.rng_state = state.rng.state();
  ck.meta = meta;
  for (const auto& s : state.adam.slots())
    ck.tensors.push_back({"param." + s.name, s.param.shape(), {s.param.data().begin(), s.param.data().end()}});
  for (const auto& s : state.adam.slots()) ck.tensors.push_back({"adam.m." + s.name, s.param.shape(), s.m});
  for (const auto& s : state.adam.slots()) ck.tensors.push_back({"adam.v." + s.name, s.param.shape(), s.v});
  return ck;
}

RunConfig checkpoint_config(const Checkpoint& ck) { return parse_run_config(ck.config); }

TrainState restore_state(const Checkpoint& ck) {
  const auto cfg = checkpoint_config(ck);
  auto state = TrainState::init(cfg.model, cfg.optimizer, cfg.seed);
  for (auto& s : state.adam.slots()) {
    auto load = [&](const std::string& name, std::span<float> dst) {
      const auto& t = ck.tensor(name);
      if (t.shape != s.param.shape())
        throw FormatError(Kind::shape_mismatch, "shape mismatch: " + name + " stored as " + shape_str(t.shape) +
                                                    ", model expects " + shape_str(s.param.shape()));
      std::copy(t.data.begin(), t.data.end(), dst.begin());
    };
    load("param." + s.name, s.param.data());
    load("adam.m." + s.name, s.m);
    load("adam.v." + s.name, s.v);
  }
  state.adam.set_steps(ck.adam_steps);
  state.rng.set_state(ck.rng_state);
  state.step = ck.step;
  state.epoch = ck.epoch;
  return state;
}

}  // namespace dctm
