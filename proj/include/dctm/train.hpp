#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "dctm/data_io.hpp"
#include "dctm/model.hpp"

namespace dctm {

struct OptimizerConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 64;
  std::size_t epochs = 100;
  std::size_t max_steps = 0;  // 0: no cap beyond epochs

  void validate() const;
};

/// Adam over every visited parameter; bypassed parameters (no gradient)
/// keep zero moments and do not move.
class Adam {
 public:
  Adam() = default;
  Adam(const OptimizerConfig& cfg, Model<float>& model);

  void step();
  void zero_grad();
  std::size_t steps() const { return t_; }

  struct Slot {
    std::string name;
    Tensor<float> param;
    std::vector<float> m, v;
  };
  std::vector<Slot>& slots() { return slots_; }
  const std::vector<Slot>& slots() const { return slots_; }
  void set_steps(std::size_t t) { t_ = t; }

 private:
  OptimizerConfig cfg_;
  std::vector<Slot> slots_;
  std::size_t t_ = 0;
};

struct TrainState {
  Model<float> model;
  Adam adam;
  Rng rng;
  std::size_t step = 0;
  std::size_t epoch = 0;

  static TrainState init(const ModelConfig& model_cfg, const OptimizerConfig& opt, std::uint64_t seed);
};

struct StepInfo {
  std::size_t step = 0, epoch = 0;
  double loss = 0;
};

/// Runs the remaining epochs (up to opt.epochs / opt.max_steps) and returns
/// the per-step loss. Throws NumericError when the loss or a gradient stops
/// being finite. `on_epoch` runs after each completed epoch.
std::vector<double> train(TrainState& state, const PatchSet& train_set, const OptimizerConfig& opt,
                          const std::function<void(const StepInfo&)>& on_step = {},
                          const std::function<void(const TrainState&)>& on_epoch = {});

/// One optimization step on an explicit batch; returns the loss.
double train_step(TrainState& state, const Tensor<float>& patches, const std::vector<int>& labels);

/// Arg-max predictions, evaluated in chunks without recording a tape.
template <typename T>
std::vector<int> predict(const Model<T>& model, const PatchSet& set, std::size_t batch = 256);

}  // namespace dctm
