#include "dctm/config.hpp"

#include <fstream>
#include <set>

namespace dctm {

using json = nlohmann::json;

namespace {

class Fields {
 public:
  Fields(const json& j, std::string pointer) : j_(j), ptr_(std::move(pointer)) {
    if (!j_.is_object()) throw ConfigError(ptr_.empty() ? "/" : ptr_, "expected an object");
  }

  std::string at(const std::string& key) const { return ptr_ + "/" + key; }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  void get(const std::string& key, std::size_t& out) {
    if (!has(key)) return;
    const auto& v = j_[key];
    if (!v.is_number_unsigned()) throw ConfigError(at(key), "expected a non-negative integer");
    out = v.get<std::size_t>();
  }
  void get(const std::string& key, std::uint64_t& out, int) {
    if (!has(key)) return;
    const auto& v = j_[key];
    if (!v.is_number_unsigned()) throw ConfigError(at(key), "expected a non-negative integer");
    out = v.get<std::uint64_t>();
  }
  void get(const std::string& key, double& out) {
    if (!has(key)) return;
    const auto& v = j_[key];
    if (!v.is_number()) throw ConfigError(at(key), "expected a number");
    out = v.get<double>();
  }
  void get(const std::string& key, std::string& out) {
    if (!has(key)) return;
    const auto& v = j_[key];
    if (!v.is_string()) throw ConfigError(at(key), "expected a string");
    out = v.get<std::string>();
  }
  const json& object(const std::string& key) {
    seen_.insert(key);
    return j_[key];
  }

  /// Rejects every key that was never asked for.
  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw ConfigError(at(key), "unknown key");
  }

 private:
  const json& j_;
  std::string ptr_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& pointer, const std::string& what) {
  if (!ok) throw ConfigError(pointer, what);
}

ModelConfig parse_model(const json& j, const std::string& ptr) {
  Fields f(j, ptr);
  ModelConfig m;
  f.get("stem_channels", m.ssdm.stem_channels);
  f.get("patch_spatial", m.ssdm.patch_spatial);
  std::size_t extent = m.ssdm.dct_extents[0];
  f.get("dct_extent", extent);
  m.ssdm.dct_extents = {extent, extent, extent};
  double eps = m.ssdm.norm_eps;
  f.get("norm_eps", eps);
  m.ssdm.norm_eps = m.mamba.norm_eps = eps;
  f.get("d_model", m.mamba.d_model);
  f.get("d_state", m.mamba.d_state);
  f.get("depth", m.mamba.depth);
  f.get("branch_gamma_init", m.mamba.branch_gamma_init);
  f.get("gre_alpha_init", m.gre_alpha_init);
  f.get("num_classes", m.num_classes);
  f.get("bands", m.bands);
  f.get("lambda_reg", m.lambda_reg);
  std::string ablation = to_string(m.ablation);
  f.get("ablation", ablation);
  try {
    m.ablation = parse_ablation(ablation);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(f.at("ablation"), e.what());
  }
  f.finish();

  require(m.ssdm.patch_spatial % 2 == 1, f.at("patch_spatial"), "must be odd");
  require(extent % 2 == 1, f.at("dct_extent"), "must be odd");
  require(m.ssdm.stem_channels > 0 && m.ssdm.stem_channels % (extent * extent * extent) == 0, f.at("stem_channels"),
          "must be a positive multiple of the DCT kernel count");
  require(eps > 0, f.at("norm_eps"), "must be positive");
  require(m.mamba.d_model > 0, f.at("d_model"), "must be positive");
  require(m.mamba.d_state > 0, f.at("d_state"), "must be positive");
  require(m.mamba.depth > 0, f.at("depth"), "must be positive");
  require(m.num_classes != 1, f.at("num_classes"), "must be at least 2 (or 0 to infer)");
  require(m.lambda_reg >= 0, f.at("lambda_reg"), "must be non-negative");
  return m;
}

OptimizerConfig parse_optimizer(const json& j, const std::string& ptr) {
  Fields f(j, ptr);
  OptimizerConfig o;
  f.get("lr", o.lr);
  f.get("beta1", o.beta1);
  f.get("beta2", o.beta2);
  f.get("eps", o.eps);
  f.get("batch_size", o.batch_size);
  f.get("epochs", o.epochs);
  f.get("max_steps", o.max_steps);
  f.finish();
  require(o.lr > 0, f.at("lr"), "must be positive");
  require(o.beta1 >= 0 && o.beta1 < 1, f.at("beta1"), "must lie in [0, 1)");
  require(o.beta2 >= 0 && o.beta2 < 1, f.at("beta2"), "must lie in [0, 1)");
  require(o.eps > 0, f.at("eps"), "must be positive");
  require(o.batch_size > 0, f.at("batch_size"), "must be positive");
  return o;
}

}  // namespace

RunConfig parse_run_config(const json& j) {
  Fields f(j, "");
  RunConfig c;
  require(j.contains("data"), "/data", "required key missing");
  f.get("data", c.data);
  f.get("output_dir", c.output_dir);
  f.get("seed", c.seed, 0);
  f.get("train_fraction", c.train_fraction);
  f.get("eval_batch", c.eval_batch);
  f.get("checkpoint_every", c.checkpoint_every);
  if (f.has("model")) c.model = parse_model(f.object("model"), "/model");
  if (f.has("optimizer")) c.optimizer = parse_optimizer(f.object("optimizer"), "/optimizer");
  f.finish();
  require(!c.data.empty(), "/data", "must not be empty");
  require(c.train_fraction > 0 && c.train_fraction <= 1, "/train_fraction", "must lie in (0, 1]");
  require(c.eval_batch > 0, "/eval_batch", "must be positive");
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("/", std::string("invalid JSON: ") + e.what());
  }
  return parse_run_config(j);
}

json to_json(const ModelConfig& m) {
  return {{"stem_channels", m.ssdm.stem_channels},
          {"patch_spatial", m.ssdm.patch_spatial},
          {"dct_extent", m.ssdm.dct_extents[0]},
          {"norm_eps", m.ssdm.norm_eps},
          {"d_model", m.mamba.d_model},
          {"d_state", m.mamba.d_state},
          {"depth", m.mamba.depth},
          {"branch_gamma_init", m.mamba.branch_gamma_init},
          {"gre_alpha_init", m.gre_alpha_init},
          {"num_classes", m.num_classes},
          {"bands", m.bands},
          {"lambda_reg", m.lambda_reg},
          {"ablation", to_string(m.ablation)}};
}

json to_json(const OptimizerConfig& o) {
  return {{"lr", o.lr},
          {"beta1", o.beta1},
          {"beta2", o.beta2},
          {"eps", o.eps},
          {"batch_size", o.batch_size},
          {"epochs", o.epochs},
          {"max_steps", o.max_steps}};
}

json to_json(const RunConfig& c) {
  return {{"data", c.data},
          {"output_dir", c.output_dir},
          {"seed", c.seed},
          {"train_fraction", c.train_fraction},
          {"eval_batch", c.eval_batch},
          {"checkpoint_every", c.checkpoint_every},
          {"model", to_json(c.model)},
          {"optimizer", to_json(c.optimizer)}};
}

}  // namespace dctm
