#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dctm/layers.hpp"
#include "dctm/mamba3d.hpp"
#include "dctm/ssdm.hpp"

namespace dctm {

enum class Ablation { full, ssdm_only, mamba_only, no_gre };

std::string to_string(Ablation a);
/// Throws std::invalid_argument on an unknown name.
Ablation parse_ablation(const std::string& name);
const std::vector<Ablation>& all_ablations();

struct ModelConfig {
  SsdmConfig ssdm;
  MambaConfig mamba;
  double gre_alpha_init = 0.1;
  std::size_t num_classes = 0;  // 0: infer from data
  std::size_t bands = 0;        // 0: infer from data
  double lambda_reg = 0.0;
  Ablation ablation = Ablation::full;

  /// Requires num_classes and bands to be resolved.
  void validate() const;
  std::size_t kernel_count() const;
  /// Channel count entering the first Mamba block (and the GRE projection).
  std::size_t mamba_input_channels() const;
};

/// F_out = y + alpha * proj(x_freq); both channels-last, alpha a one-element tensor.
template <typename T>
Tensor<T> gre_fuse(const Tensor<T>& y_mamba, const Tensor<T>& x_freq, const Linear<T>& proj, const Tensor<T>& alpha);

/// Mean over every axis between batch and channels: [B, ..., F] -> [B, F].
template <typename T>
Tensor<T> global_pool(const Tensor<T>& x);

/// Mean cross-entropy plus lambda times the feature correlation penalty.
/// With lambda = 0 the cross-entropy tensor itself is returned.
template <typename T>
Tensor<T> composite_loss(const Tensor<T>& logits, std::span<const int> labels, const Tensor<T>& features, double lambda);

template <typename T>
struct ModelOutput {
  Tensor<T> logits;    // [B, K]
  Tensor<T> features;  // pooled features fed to the head [B, F]
};

/// Stem -> frozen DCT bank -> Mamba blocks -> GRE -> pooled linear head.
/// Every module is constructed for every ablation; bypassed ones simply do
/// not take part in the graph.
template <typename T>
struct Model {
  ModelConfig config;
  StemParams<T> stem;
  Tensor<T> filter_bank;  // frozen [G, 1, n, n, n]
  std::vector<MambaBlock<T>> blocks;
  Linear<T> gre_proj;  // mamba input channels -> d_model
  Tensor<T> alpha;     // [1]
  Linear<T> head;      // d_model -> K
  Linear<T> ssdm_head; // G -> K, used by ssdm_only

  static Model init(const ModelConfig& cfg, Rng& rng);

  /// patches [B, 1, C, p, p].
  ModelOutput<T> forward(const Tensor<T>& patches) const;
  Tensor<T> loss(const ModelOutput<T>& out, std::span<const int> labels) const;

  /// Learnable parameters with stable dotted names. Module prefixes are
  /// "ssdm.", "mamba3d.", "gre." and "head.".
  void visit(const ParamVisitor<T>& fn);
  std::size_t parameter_count();
  void check_stability() const;
};

/// Module a parameter name belongs to (its first dotted component).
std::string module_of(const std::string& param_name);

}  // namespace dctm
