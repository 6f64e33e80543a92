#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dctm/model.hpp"

namespace dctm {

struct ModuleCost {
  std::string module;  // ssdm, mamba3d, gre, head
  std::uint64_t params = 0;
  std::uint64_t macs = 0;  // multiply-adds for one patch
};

struct Complexity {
  std::vector<ModuleCost> modules;
  std::uint64_t total_params() const;
  std::uint64_t total_macs() const;
};

/// Analytic count over the graph wired by `cfg.ablation`. Multiply-adds
/// cover convolutions, linear layers and the scan recurrences; norms,
/// activations and element-wise gates are not counted. The frozen DCT
/// kernels are buffers, not parameters.
Complexity count_complexity(const ModelConfig& cfg);

/// module,params,macs rows plus a total row.
std::string complexity_csv(const Complexity& c);

}  // namespace dctm
