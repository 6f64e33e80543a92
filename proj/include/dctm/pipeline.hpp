#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dctm/checkpoint.hpp"
#include "dctm/config.hpp"
#include "dctm/data_io.hpp"
#include "dctm/metrics.hpp"
#include "dctm/train.hpp"

namespace dctm {

/// Normalized patches split into train and test. Statistics come from the
/// training centers only and are applied to the whole cube.
struct PreparedData {
  BandStats stats;
  Split split;
  std::size_t num_classes = 0;
  std::vector<std::string> class_names;
};

PreparedData prepare_data(const HsiCube& cube, std::size_t patch, double train_fraction, std::uint64_t seed);
/// Same split as prepare_data but with fixed statistics (evaluation path).
PreparedData prepare_data(const HsiCube& cube, std::size_t patch, double train_fraction, std::uint64_t seed,
                          const BandStats& stats);

/// Fills num_classes and bands from the data; rejects conflicting values.
ModelConfig resolve_model_config(ModelConfig cfg, const HsiCube& cube);

struct Evaluation {
  ConfusionMatrix cm;
  Scores scores;
  std::vector<int> predictions;
};

Evaluation evaluate(const Model<float>& model, const PatchSet& set, std::size_t batch);

struct RunResult {
  TrainState state;
  std::vector<double> loss_curve;
  PreparedData data;
  Evaluation test;
  RunConfig config;  // with resolved model config
};

struct RunHooks {
  std::function<void(const StepInfo&)> on_step;
  std::function<void(const TrainState&, const RunConfig&, const PreparedData&)> on_epoch;
};

RunResult run_experiment(RunConfig cfg, const HsiCube& cube, const RunHooks& hooks = {});

nlohmann::json checkpoint_meta(const PreparedData& data);
BandStats stats_from_meta(const nlohmann::json& meta);

/// Writes step,loss rows.
void write_loss_csv(const std::string& path, const std::vector<double>& curve);
std::vector<double> read_loss_csv(const std::string& path);

struct AblationRow {
  Ablation mode;
  double oa = 0, aa = 0, kappa = 0;
  std::size_t seeds = 0;
};

/// Trains every requested mode for each seed and averages the test scores.
std::vector<AblationRow> run_ablation(const RunConfig& base, const HsiCube& cube, const std::vector<Ablation>& modes,
                                      const std::vector<std::uint64_t>& seeds,
                                      const std::function<void(const std::string&)>& log = {});
/// mode,oa,aa,kappa,seeds with percentages to two decimals.
void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows);

/// Spearman matrix over the raw bands of every pixel.
Eigen::MatrixXd raw_band_correlation(const HsiCube& cube);
/// Spearman matrix over the frequency channels of the whole normalized
/// cube passed through the stem and the DCT bank as a single patch.
Eigen::MatrixXd ssdm_channel_correlation(const HsiCube& normalized, const StemParams<float>& stem,
                                         const SsdmConfig& cfg);

}  // namespace dctm
