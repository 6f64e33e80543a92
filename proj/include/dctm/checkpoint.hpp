#pragma once

#include <cstdint>
#include <json.hpp>
#include <span>
#include <string>
#include <vector>

#include "dctm/config.hpp"
#include "dctm/train.hpp"

namespace dctm {

struct StoredTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

/// "DCM3" container: magic, u32 version, u64 header length, JSON header
/// {config, step, epoch, adam_steps, rng, meta, tensors: [{name, shape,
/// dtype, offset, nbytes}]}, then raw little-endian float32 payloads.
struct Checkpoint {
  nlohmann::json config;
  std::uint64_t step = 0, epoch = 0, adam_steps = 0;
  std::string rng_state;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<StoredTensor> tensors;

  const StoredTensor& tensor(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

/// Snapshot of parameters ("param.<name>") and Adam moments
/// ("adam.m.<name>", "adam.v.<name>").
Checkpoint make_checkpoint(const TrainState& state, const RunConfig& cfg, const nlohmann::json& meta);
/// Rebuilds a training state (model, optimizer, RNG, counters).
TrainState restore_state(const Checkpoint& ck);
RunConfig checkpoint_config(const Checkpoint& ck);

}  // namespace dctm
