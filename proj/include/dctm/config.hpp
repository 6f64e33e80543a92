#pragma once

#include <cstdint>
#include <json.hpp>
#include <stdexcept>
#include <string>

#include "dctm/model.hpp"
#include "dctm/train.hpp"

namespace dctm {

/// Schema violation; pointer() is the JSON pointer of the offending key.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string pointer, const std::string& what)
      : std::invalid_argument(pointer + ": " + what), pointer_(std::move(pointer)) {}
  const std::string& pointer() const { return pointer_; }

 private:
  std::string pointer_;
};

struct RunConfig {
  std::string data;  // required
  std::string output_dir = "run";
  std::uint64_t seed = 0;
  double train_fraction = 0.1;
  std::size_t eval_batch = 256;
  std::size_t checkpoint_every = 0;  // epochs; 0 keeps only the final checkpoint
  ModelConfig model;
  OptimizerConfig optimizer;
};

/// Strict: unknown keys, wrong types and invalid values are rejected.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
nlohmann::json to_json(const RunConfig& cfg);
nlohmann::json to_json(const ModelConfig& cfg);
nlohmann::json to_json(const OptimizerConfig& cfg);

}  // namespace dctm
