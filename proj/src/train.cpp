#include "dctm/train.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "dctm/ops.hpp"

namespace dctm {

void OptimizerConfig::validate() const {
  if (!(lr > 0)) throw std::invalid_argument("optimizer: lr must be positive");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
    throw std::invalid_argument("optimizer: betas must lie in [0, 1)");
  if (!(eps > 0)) throw std::invalid_argument("optimizer: eps must be positive");
  if (batch_size == 0) throw std::invalid_argument("optimizer: batch_size must be positive");
}

Adam::Adam(const OptimizerConfig& cfg, Model<float>& model) : cfg_(cfg) {
  cfg.validate();
  model.visit([&](const std::string& name, Tensor<float>& p) {
    slots_.push_back({name, p, std::vector<float>(p.numel(), 0.0f), std::vector<float>(p.numel(), 0.0f)});
  });
}

void Adam::step() {
  ++t_;
  const double c1 = 1 - std::pow(cfg_.beta1, double(t_)), c2 = 1 - std::pow(cfg_.beta2, double(t_));
  const float b1 = float(cfg_.beta1), b2 = float(cfg_.beta2);
  const double step_size = cfg_.lr / c1;
  for (auto& s : slots_) {
    if (!s.param.has_grad()) continue;
    const auto g = s.param.grad();
    auto w = s.param.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      s.m[i] = b1 * s.m[i] + (1 - b1) * g[i];
      s.v[i] = b2 * s.v[i] + (1 - b2) * g[i] * g[i];
      const double denom = std::sqrt(double(s.v[i]) / c2) + cfg_.eps;
      w[i] = static_cast<float>(w[i] - step_size * s.m[i] / denom);
    }
  }
}

void Adam::zero_grad() {
  for (auto& s : slots_) s.param.zero_grad();
}

TrainState TrainState::init(const ModelConfig& model_cfg, const OptimizerConfig& opt, std::uint64_t seed) {
  TrainState s;
  s.rng = Rng(seed);
  s.model = Model<float>::init(model_cfg, s.rng);
  s.adam = Adam(opt, s.model);
  return s;
}

double train_step(TrainState& state, const Tensor<float>& patches, const std::vector<int>& labels) {
  state.adam.zero_grad();
  double value = 0;
  {
    Tape tape;
    TapeScope scope(tape);
    const auto out = state.model.forward(patches);
    const auto loss = state.model.loss(out, labels);
    value = loss.item();
    tape.backward(loss);
  }
  if (!std::isfinite(value)) throw NumericError("training diverged: loss is " + std::to_string(value));
  for (const auto& s : state.adam.slots())
    if (s.param.has_grad())
      for (float g : s.param.grad())
        if (!std::isfinite(g)) throw NumericError("training diverged: non-finite gradient in " + s.name);
  state.adam.step();
  state.model.check_stability();
  ++state.step;
  return value;
}

std::vector<double> train(TrainState& state, const PatchSet& train_set, const OptimizerConfig& opt,
                          const std::function<void(const StepInfo&)>& on_step,
                          const std::function<void(const TrainState&)>& on_epoch) {
  opt.validate();
  if (train_set.size() == 0) throw std::invalid_argument("train: empty training set");
  std::vector<double> curve;
  const bool needs_pairs = state.model.config.lambda_reg > 0;
  std::vector<std::size_t> order(train_set.size());
  auto capped = [&] { return opt.max_steps != 0 && state.step >= opt.max_steps; };
  while (state.epoch < opt.epochs && !capped()) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    state.rng.shuffle(order.begin(), order.end());
    std::vector<std::pair<std::size_t, std::size_t>> batches;
    for (std::size_t lo = 0; lo < order.size(); lo += opt.batch_size)
      batches.emplace_back(lo, std::min(order.size(), lo + opt.batch_size));
    // A lone trailing sample cannot form a correlation; fold it into the previous batch.
    if (needs_pairs && batches.size() > 1 && batches.back().second - batches.back().first < 2) {
      batches[batches.size() - 2].second = batches.back().second;
      batches.pop_back();
    }
    bool complete = true;
    for (const auto& [lo, hi] : batches) {
      if (capped()) {
        complete = false;
        break;
      }
      const std::span<const std::size_t> idx(order.data() + lo, hi - lo);
      const double loss = train_step(state, train_set.batch<float>(idx), train_set.batch_labels(idx));
      curve.push_back(loss);
      if (on_step) on_step({state.step, state.epoch, loss});
    }
    if (!complete) break;
    ++state.epoch;
    if (on_epoch) on_epoch(state);
  }
  return curve;
}

template <typename T>
std::vector<int> predict(const Model<T>& model, const PatchSet& set, std::size_t batch) {
  if (batch == 0) throw std::invalid_argument("predict: batch must be positive");
  std::vector<int> preds;
  preds.reserve(set.size());
  std::vector<std::size_t> idx;
  for (std::size_t lo = 0; lo < set.size(); lo += batch) {
    idx.clear();
    for (std::size_t i = lo; i < std::min(set.size(), lo + batch); ++i) idx.push_back(i);
    const auto logits = model.forward(set.batch<T>(idx)).logits;
    const auto K = logits.dim(1);
    for (std::size_t n = 0; n < idx.size(); ++n) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < K; ++k)
        if (logits[n * K + k] > logits[n * K + best]) best = k;
      preds.push_back(static_cast<int>(best));
    }
  }
  return preds;
}

template std::vector<int> predict(const Model<float>&, const PatchSet&, std::size_t);
template std::vector<int> predict(const Model<double>&, const PatchSet&, std::size_t);

}  // namespace dctm
