#include "dctm/complexity.hpp"

#include <sstream>

namespace dctm {

std::uint64_t Complexity::total_params() const {
  std::uint64_t t = 0;
  for (const auto& m : modules) t += m.params;
  return t;
}

std::uint64_t Complexity::total_macs() const {
  std::uint64_t t = 0;
  for (const auto& m : modules) t += m.macs;
  return t;
}

namespace {

using u64 = std::uint64_t;

u64 linear_params(u64 in, u64 out) { return in * out + out; }

// One shared-parameter bidirectional scan over `tokens` tokens.
void add_bidirectional(ModuleCost& m, u64 d, u64 n, u64 tokens) {
  m.params += d * n + linear_params(d, d) + 2 * linear_params(d, n) + d + 2 * d;
  m.macs += 2 * tokens * (d * d + 5 * d * n + d);
}

}  // namespace

Complexity count_complexity(const ModelConfig& cfg) {
  cfg.validate();
  const u64 S = cfg.ssdm.stem_channels, C = cfg.bands, p = cfg.ssdm.patch_spatial, voxels = C * p * p;
  const u64 G = cfg.kernel_count(), taps = G;  // n^3 taps per kernel, n^3 kernels
  const u64 d = cfg.mamba.d_model, n = cfg.mamba.d_state, K = cfg.num_classes;
  const auto a = cfg.ablation;

  ModuleCost ssdm{"ssdm"}, mamba{"mamba3d"}, gre{"gre"}, head{"head"};
  ssdm.params = 4 * S;  // pointwise weight, bias, norm gain and bias
  ssdm.macs = S * voxels;
  if (a != Ablation::mamba_only) ssdm.macs += G * taps * voxels;

  if (a == Ablation::ssdm_only) {
    head.params = linear_params(G, K);
    head.macs = G * K;
  } else {
    u64 in = cfg.mamba_input_channels();
    for (std::size_t b = 0; b < cfg.mamba.depth; ++b) {
      mamba.params += linear_params(C * in, d) + linear_params(p * p * in, d) + linear_params(in, d);
      mamba.macs += p * p * (C * in) * d + C * (p * p * in) * d + voxels * in * d;
      add_bidirectional(mamba, d, n, p * p);
      add_bidirectional(mamba, d, n, C);
      mamba.params += 5 * d;  // three gammas, norm gain and bias
      in = d;
    }
    if (a != Ablation::no_gre) {
      const u64 gin = cfg.mamba_input_channels();
      gre.params = linear_params(gin, d) + 1;
      gre.macs = voxels * gin * d;
    }
    head.params = linear_params(d, K);
    head.macs = d * K;
  }
  return {{ssdm, mamba, gre, head}};
}

std::string complexity_csv(const Complexity& c) {
  std::ostringstream os;
  os << "module,params,macs\n";
  for (const auto& m : c.modules) os << m.module << ',' << m.params << ',' << m.macs << '\n';
  os << "total," << c.total_params() << ',' << c.total_macs() << '\n';
  return os.str();
}

}  // namespace dctm
