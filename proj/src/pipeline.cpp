#include "dctm/pipeline.hpp"

#include <fstream>
#include <limits>
#include <sstream>

#include "dctm/ops.hpp"

namespace dctm {

using json = nlohmann::json;

namespace {

PreparedData split_only(const HsiCube& cube, std::size_t patch, double train_fraction, std::uint64_t seed) {
  auto raw = std::make_shared<const HsiCube>(cube);
  PreparedData d;
  d.split = stratified_split(extract_patches(raw, patch), train_fraction, seed);
  d.num_classes = cube.num_classes();
  d.class_names = cube.class_names;
  return d;
}

void apply_stats(PreparedData& d, const HsiCube& cube) {
  auto norm = std::make_shared<const HsiCube>(normalize(cube, d.stats));
  d.split.train = d.split.train.with_cube(norm);
  d.split.test = d.split.test.with_cube(norm);
}

}  // namespace

PreparedData prepare_data(const HsiCube& cube, std::size_t patch, double train_fraction, std::uint64_t seed) {
  auto d = split_only(cube, patch, train_fraction, seed);
  d.stats = band_stats(d.split.train);
  apply_stats(d, cube);
  return d;
}

PreparedData prepare_data(const HsiCube& cube, std::size_t patch, double train_fraction, std::uint64_t seed,
                          const BandStats& stats) {
  auto d = split_only(cube, patch, train_fraction, seed);
  d.stats = stats;
  apply_stats(d, cube);
  return d;
}

ModelConfig resolve_model_config(ModelConfig cfg, const HsiCube& cube) {
  const auto k = cube.num_classes();
  if (cfg.num_classes == 0) cfg.num_classes = k;
  if (cfg.num_classes < k)
    throw ConfigError("/model/num_classes", "data holds " + std::to_string(k) + " classes, config allows " +
                                                std::to_string(cfg.num_classes));
  if (cfg.bands == 0) cfg.bands = cube.bands;
  if (cfg.bands != cube.bands)
    throw ConfigError("/model/bands", "data has " + std::to_string(cube.bands) + " bands, config says " +
                                          std::to_string(cfg.bands));
  cfg.validate();
  return cfg;
}

Evaluation evaluate(const Model<float>& model, const PatchSet& set, std::size_t batch) {
  Evaluation e;
  e.predictions = predict(model, set, batch);
  e.cm = confusion(e.predictions, set.labels(), model.config.num_classes);
  e.scores = scores(e.cm);
  return e;
}

json checkpoint_meta(const PreparedData& data) {
  return {{"band_mean", data.stats.mean}, {"band_std", data.stats.stddev}, {"class_names", data.class_names}};
}

BandStats stats_from_meta(const json& meta) {
  try {
    return {meta.at("band_mean").get<std::vector<double>>(), meta.at("band_std").get<std::vector<double>>()};
  } catch (const json::exception& e) {
    throw FormatError(FormatError::Kind::malformed, std::string("checkpoint lacks normalization statistics: ") + e.what());
  }
}

RunResult run_experiment(RunConfig cfg, const HsiCube& cube, const RunHooks& hooks) {
  cfg.model = resolve_model_config(cfg.model, cube);
  RunResult r{TrainState::init(cfg.model, cfg.optimizer, cfg.seed), {},
              prepare_data(cube, cfg.model.ssdm.patch_spatial, cfg.train_fraction, cfg.seed), {}, cfg};
  std::function<void(const TrainState&)> on_epoch;
  if (hooks.on_epoch) on_epoch = [&](const TrainState& s) { hooks.on_epoch(s, r.config, r.data); };
  r.loss_curve = train(r.state, r.data.split.train, cfg.optimizer, hooks.on_step, on_epoch);
  r.test = evaluate(r.state.model, r.data.split.test, cfg.eval_batch);
  return r;
}

void write_loss_csv(const std::string& path, const std::vector<double>& curve) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(std::numeric_limits<double>::max_digits10);
  out << "step,loss\n";
  for (std::size_t i = 0; i < curve.size(); ++i) out << i + 1 << ',' << curve[i] << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<double> read_loss_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::string line;
  std::getline(in, line);
  if (line != "step,loss") throw std::runtime_error("unexpected header in " + path);
  std::vector<double> curve;
  while (std::getline(in, line))
    if (!line.empty()) curve.push_back(std::stod(line.substr(line.find(',') + 1)));
  return curve;
}

std::vector<AblationRow> run_ablation(const RunConfig& base, const HsiCube& cube, const std::vector<Ablation>& modes,
                                      const std::vector<std::uint64_t>& seeds,
                                      const std::function<void(const std::string&)>& log) {
  if (seeds.empty()) throw std::invalid_argument("ablation: no seeds");
  std::vector<AblationRow> rows;
  for (auto mode : modes) {
    AblationRow row{mode};
    for (auto seed : seeds) {
      auto cfg = base;
      cfg.model.ablation = mode;
      cfg.seed = seed;
      const auto r = run_experiment(cfg, cube);
      row.oa += r.test.scores.oa;
      row.aa += r.test.scores.aa;
      row.kappa += r.test.scores.kappa;
      ++row.seeds;
      if (log) log(to_string(mode) + " seed " + std::to_string(seed) + ": OA " + percent(r.test.scores.oa));
    }
    row.oa /= double(row.seeds);
    row.aa /= double(row.seeds);
    row.kappa /= double(row.seeds);
    rows.push_back(row);
  }
  return rows;
}

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "mode,oa,aa,kappa,seeds\n";
  for (const auto& r : rows)
    out << to_string(r.mode) << ',' << percent(r.oa) << ',' << percent(r.aa) << ',' << percent(r.kappa) << ','
        << r.seeds << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

Eigen::MatrixXd raw_band_correlation(const HsiCube& cube) {
  std::vector<double> m(cube.reflectance.begin(), cube.reflectance.end());
  return spearman_matrix(m, cube.height * cube.width, cube.bands);
}

Eigen::MatrixXd ssdm_channel_correlation(const HsiCube& normalized, const StemParams<float>& stem_params,
                                         const SsdmConfig& cfg) {
  const std::size_t C = normalized.bands, H = normalized.height, W = normalized.width;
  Tensor<float> x(Shape{1, 1, C, H, W});
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c)
      for (std::size_t b = 0; b < C; ++b) x[(b * H + r) * W + c] = normalized.at(r, c, b);
  const auto& e = cfg.dct_extents;
  const auto freq = ssdm_forward(stem(x, stem_params, cfg.norm_eps), DctBasis3D::make(e[0], e[1], e[2]));
  const auto m = channels_last_matrix(freq, 1);
  std::vector<double> v(m.data().begin(), m.data().end());
  return spearman_matrix(v, m.dim(0), m.dim(1));
}

}  // namespace dctm
