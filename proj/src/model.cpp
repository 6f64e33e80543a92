#include "dctm/model.hpp"

#include <stdexcept>

#include "dctm/ops.hpp"

namespace dctm {

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::ssdm_only: return "ssdm_only";
    case Ablation::mamba_only: return "mamba_only";
    case Ablation::no_gre: return "no_gre";
  }
  return "?";
}

Ablation parse_ablation(const std::string& name) {
  for (auto a : all_ablations())
    if (to_string(a) == name) return a;
  throw std::invalid_argument("unknown ablation '" + name + "' (expected full, ssdm_only, mamba_only or no_gre)");
}

const std::vector<Ablation>& all_ablations() {
  static const std::vector<Ablation> all{Ablation::full, Ablation::ssdm_only, Ablation::mamba_only, Ablation::no_gre};
  return all;
}

void ModelConfig::validate() const {
  ssdm.validate();
  mamba.validate();
  if (num_classes < 2) throw std::invalid_argument("model: num_classes must be at least 2");
  if (bands == 0) throw std::invalid_argument("model: bands must be positive");
  if (bands < ssdm.dct_extents[0] / 2 + 1)
    throw std::invalid_argument("model: " + std::to_string(bands) + " bands are too few for reflect padding");
  if (!(lambda_reg >= 0)) throw std::invalid_argument("model: lambda_reg must be non-negative");
}

std::size_t ModelConfig::kernel_count() const {
  return ssdm.dct_extents[0] * ssdm.dct_extents[1] * ssdm.dct_extents[2];
}

std::size_t ModelConfig::mamba_input_channels() const {
  return ablation == Ablation::mamba_only ? ssdm.stem_channels : kernel_count();
}

std::string module_of(const std::string& param_name) { return param_name.substr(0, param_name.find('.')); }

template <typename T>
Tensor<T> gre_fuse(const Tensor<T>& y_mamba, const Tensor<T>& x_freq, const Linear<T>& proj, const Tensor<T>& alpha) {
  auto projected = proj(x_freq);
  if (projected.shape() != y_mamba.shape())
    throw ShapeError("gre_fuse: projected features " + shape_str(projected.shape()) + " do not match " +
                     shape_str(y_mamba.shape()));
  if (alpha.numel() != 1) throw ShapeError("gre_fuse: alpha must hold one element");
  return add(y_mamba, mul(projected, alpha));
}

template <typename T>
Tensor<T> global_pool(const Tensor<T>& x) {
  if (x.rank() < 2) throw ShapeError("global_pool: expected [B, ..., F], got " + shape_str(x.shape()));
  const auto B = x.dim(0), F = x.dim(x.rank() - 1);
  return mean_axis(reshape(x, Shape{B, x.numel() / (B * F), F}), 1);
}

template <typename T>
Tensor<T> composite_loss(const Tensor<T>& logits, std::span<const int> labels, const Tensor<T>& features,
                         double lambda) {
  if (lambda < 0) throw std::invalid_argument("composite_loss: lambda must be non-negative");
  auto ce = cross_entropy(logits, labels);
  if (lambda == 0) return ce;
  if (features.dim(0) < 2) throw ShapeError("composite_loss: correlation penalty needs a batch of at least 2");
  return add(ce, scale(correlation_penalty(features), static_cast<T>(lambda)));
}

template <typename T>
Model<T> Model<T>::init(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  Model m;
  m.config = cfg;
  const auto& ex = cfg.ssdm.dct_extents;
  m.stem = StemParams<T>::init(cfg.ssdm.stem_channels, rng);
  m.filter_bank = basis_as_filter_bank<T>(DctBasis3D::make(ex[0], ex[1], ex[2]));
  std::size_t in = cfg.mamba_input_channels();
  for (std::size_t i = 0; i < cfg.mamba.depth; ++i) {
    m.blocks.push_back(MambaBlock<T>::init(in, cfg.bands, cfg.ssdm.patch_spatial, cfg.mamba, rng));
    in = cfg.mamba.d_model;
  }
  m.gre_proj = Linear<T>::init(cfg.mamba_input_channels(), cfg.mamba.d_model, rng);
  m.alpha = constant_param<T>({1}, static_cast<T>(cfg.gre_alpha_init));
  m.head = Linear<T>::init(cfg.mamba.d_model, cfg.num_classes, rng);
  m.ssdm_head = Linear<T>::init(cfg.kernel_count(), cfg.num_classes, rng);
  return m;
}

template <typename T>
ModelOutput<T> Model<T>::forward(const Tensor<T>& patches) const {
  const auto p = config.ssdm.patch_spatial;
  if (patches.rank() != 5 || patches.dim(1) != 1 || patches.dim(2) != config.bands || patches.dim(3) != p ||
      patches.dim(4) != p)
    throw ShapeError("model: expected patches [B, 1, " + std::to_string(config.bands) + ", " + std::to_string(p) +
                     ", " + std::to_string(p) + "], got " + shape_str(patches.shape()));
  const auto eps_s = config.ssdm.norm_eps, eps_m = config.mamba.norm_eps;
  const auto stem_out = dctm::stem(patches, stem, eps_s);
  const auto x = config.ablation == Ablation::mamba_only ? stem_out : ssdm_forward(stem_out, filter_bank);

  if (config.ablation == Ablation::ssdm_only) {
    const auto B = x.dim(0), G = x.dim(1);
    auto pooled = mean_axis(reshape(x, Shape{B, G, x.numel() / (B * G)}), 2);
    return {ssdm_head(pooled), pooled};
  }

  const auto voxels = permute(x, {0, 2, 3, 4, 1});  // [B, C, h, w, Cin]
  auto y = voxels;
  for (const auto& block : blocks) y = block.forward(y, eps_m);
  const auto fused = config.ablation == Ablation::no_gre ? y : gre_fuse(y, voxels, gre_proj, alpha);
  auto pooled = global_pool(fused);
  return {head(pooled), pooled};
}

template <typename T>
Tensor<T> Model<T>::loss(const ModelOutput<T>& out, std::span<const int> labels) const {
  return composite_loss(out.logits, labels, out.features, config.lambda_reg);
}

template <typename T>
void Model<T>::visit(const ParamVisitor<T>& fn) {
  stem.visit("ssdm.stem", fn);
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit("mamba3d.block" + std::to_string(i), fn);
  gre_proj.visit("gre.proj", fn);
  fn("gre.alpha", alpha);
  head.visit("head.linear", fn);
  ssdm_head.visit("head.ssdm_linear", fn);
}

template <typename T>
std::size_t Model<T>::parameter_count() {
  std::size_t n = 0;
  visit([&](const std::string&, Tensor<T>& t) { n += t.numel(); });
  return n;
}

template <typename T>
void Model<T>::check_stability() const {
  for (const auto& b : blocks) {
    dctm::check_stability(b.spatial.ssm);
    dctm::check_stability(b.spectral.ssm);
  }
}

#define DCTM_INSTANTIATE_MODEL(T)                                                                       \
  template Tensor<T> gre_fuse(const Tensor<T>&, const Tensor<T>&, const Linear<T>&, const Tensor<T>&); \
  template Tensor<T> global_pool(const Tensor<T>&);                                                     \
  template Tensor<T> composite_loss(const Tensor<T>&, std::span<const int>, const Tensor<T>&, double);  \
  template struct Model<T>;

DCTM_INSTANTIATE_MODEL(float)
DCTM_INSTANTIATE_MODEL(double)

}  // namespace dctm
