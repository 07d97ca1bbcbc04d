#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "irdrop/datagen.hpp"
#include "irdrop/error.hpp"
#include "irdrop/grid.hpp"
#include "irdrop/unet.hpp"

namespace irdrop::train {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  double val_fraction = 0.1;
  std::uint64_t seed = 42;

  void validate() const {
    using irdrop::detail::require;
    require(learning_rate > 0.0 && std::isfinite(learning_rate), ErrorKind::kInvalidParameter,
            "learning rate must be positive");
    require(batch_size >= 1, ErrorKind::kInvalidParameter, "batch size must be at least 1");
    require(max_epochs >= 1, ErrorKind::kInvalidParameter, "max_epochs must be at least 1");
    require(patience >= 1, ErrorKind::kInvalidParameter, "patience must be at least 1");
    require(val_fraction > 0.0 && val_fraction < 1.0, ErrorKind::kInvalidParameter,
            "val_fraction must lie strictly between 0 and 1");
  }
};

template <typename T>
struct LossResult {
  double loss = 0.0;
  unet::Activation<T> grad;
};

// Per-pixel mean squared error of one sample. The gradient is additionally
// divided by `batch` so that summing over a batch yields the gradient of
// the batch-mean loss.
template <typename T>
LossResult<T> mse_loss(const unet::Activation<T>& pred, const Grid2D& target, std::size_t batch = 1) {
  if (pred.channels != 1 || pred.height != target.height() || pred.width != target.width()) {
    irdrop::detail::fail(ErrorKind::kShape, "prediction and target shapes disagree");
  }
  irdrop::detail::require(batch >= 1, ErrorKind::kInvalidParameter, "batch must be at least 1");
  LossResult<T> res;
  res.grad = unet::Activation<T>(1, pred.height, pred.width);
  const auto n = static_cast<double>(target.size());
  const double scale = 2.0 / (n * static_cast<double>(batch));
  const auto t = target.values();
  double sum = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double diff = static_cast<double>(pred.values[i]) - t[i];
    sum += diff * diff;
    res.grad.values[i] = static_cast<T>(scale * diff);
  }
  res.loss = sum / n;
  return res;
}

inline std::pair<double, Tensor3> mse_loss(const Tensor3& pred, const Grid2D& target, std::size_t batch = 1) {
  auto res = mse_loss(unet::to_activation<double>(pred), target, batch);
  return {res.loss, unet::to_tensor(res.grad)};
}

template <typename T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  unet::UNetParams<T> m;
  unet::UNetParams<T> v;

  explicit AdamState(const unet::Widths& w = {}) : m(w), v(w) {}
};

// Bias-corrected Adam. Non-finite gradients abort before any parameter is
// touched.
template <typename T>
void adam_step(unet::UNetParams<T>& params, const unet::UNetParams<T>& grads, AdamState<T>& state, double lr) {
  if (!(grads.widths == params.widths) || !(state.m.widths == params.widths)) {
    irdrop::detail::fail(ErrorKind::kShape, "gradient/optimizer state shapes do not match the parameters");
  }
  for (std::size_t l = 0; l < unet::kLayerCount; ++l) {
    auto check = [&](const std::vector<T>& g, const char* what) {
      for (T x : g) {
        if (!std::isfinite(static_cast<double>(x))) {
          irdrop::detail::fail(ErrorKind::kTraining, std::string("non-finite gradient in ") + unet::kLayerNames[l] +
                                                         "." + what + " at optimizer step " +
                                                         std::to_string(state.step + 1));
        }
      }
    };
    check(grads.layers[l].weight, "weight");
    check(grads.layers[l].bias, "bias");
  }

  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  auto update = [&](std::vector<T>& p, const std::vector<T>& g, std::vector<T>& m, std::vector<T>& v) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = state.beta1 * static_cast<double>(m[i]) + (1.0 - state.beta1) * gi;
      const double vi = state.beta2 * static_cast<double>(v[i]) + (1.0 - state.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double m_hat = mi / c1;
      const double v_hat = vi / c2;
      p[i] = static_cast<T>(static_cast<double>(p[i]) - lr * m_hat / (std::sqrt(v_hat) + state.eps));
    }
  };
  for (std::size_t l = 0; l < unet::kLayerCount; ++l) {
    update(params.layers[l].weight, grads.layers[l].weight, state.m.layers[l].weight, state.v.layers[l].weight);
    update(params.layers[l].bias, grads.layers[l].bias, state.m.layers[l].bias, state.v.layers[l].bias);
  }
}

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

// Seeded shuffle of 0..n-1; the first round(n * val_fraction) indices
// (clamped to [1, n-1]) form the validation set.
inline Split split_dataset(std::size_t n, double val_fraction, std::uint64_t seed) {
  irdrop::detail::require(n >= 2, ErrorKind::kInvalidInput, "need at least 2 samples to split");
  irdrop::detail::require(val_fraction > 0.0 && val_fraction < 1.0, ErrorKind::kInvalidParameter,
                          "val_fraction must lie strictly between 0 and 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix64(seed ^ 0x5eed5111ULL));
  std::shuffle(order.begin(), order.end(), rng);
  auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * val_fraction));
  n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
  Split s;
  s.validation.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  return s;
}

struct EpochReport {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double seconds = 0.0;
};

enum class StopReason { kMaxEpochs, kEarlyStopped, kAborted };

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::kMaxEpochs: return "max_epochs";
    case StopReason::kEarlyStopped: return "early_stopped";
    case StopReason::kAborted: return "aborted";
  }
  return "unknown";
}

// Tracks the best validation loss and says when patience has run out.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  // Returns true when `val_loss` is a new best.
  bool observe(double val_loss) {
    if (val_loss < best_) {
      best_ = val_loss;
      stale_ = 0;
      return true;
    }
    ++stale_;
    return false;
  }

  bool should_stop() const noexcept { return stale_ >= patience_; }
  double best() const noexcept { return best_; }

 private:
  std::size_t patience_;
  std::size_t stale_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

template <typename T>
struct TrainResult {
  unet::UNetParams<T> best_params;
  std::size_t best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<EpochReport> history;
  StopReason stop_reason = StopReason::kMaxEpochs;
  std::string message;
};

struct TrainHooks {
  std::function<void(const EpochReport&)> on_epoch;
  // Test seam: rewrites the measured validation loss of an epoch.
  std::function<double(std::size_t epoch, double val_loss)> override_val_loss;
};

struct PreparedSample {
  Tensor3 input;
  Grid2D target;
};

inline std::vector<PreparedSample> prepare(const Dataset& ds) {
  std::vector<PreparedSample> out;
  out.reserve(ds.size());
  for (const auto& s : ds.samples) {
    if (s.ir_drop.empty()) irdrop::detail::fail(ErrorKind::kInvalidInput, "training sample without a label");
    out.push_back({preprocess_maps(s.power_grid, s.cell_density, s.switching), s.ir_drop});
  }
  return out;
}

template <typename T>
double mean_loss(const unet::UNetParams<T>& params, const std::vector<unet::Activation<T>>& inputs,
                 const std::vector<PreparedSample>& samples, const std::vector<std::size_t>& indices) {
  double total = 0.0;
  for (std::size_t idx : indices) {
    const auto fwd = unet::forward(params, inputs[idx]);
    total += mse_loss(fwd.output, samples[idx].target).loss;
  }
  return total / static_cast<double>(indices.size());
}

inline std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch) {
  return sample_seed(seed ^ 0xe9c4ULL, static_cast<std::uint64_t>(epoch));
}

template <typename T>
TrainResult<T> train(const Dataset& ds, const TrainConfig& cfg, const TrainHooks& hooks = {},
                     const unet::Widths& widths = {}) {
  cfg.validate();
  irdrop::detail::require(!ds.empty(), ErrorKind::kInvalidInput, "training dataset is empty");
  const auto samples = prepare(ds);
  std::vector<unet::Activation<T>> inputs;
  inputs.reserve(samples.size());
  for (const auto& s : samples) inputs.push_back(unet::to_activation<T>(s.input));

  const Split split = split_dataset(samples.size(), cfg.val_fraction, cfg.seed);
  Rng init_rng(mix64(cfg.seed));
  unet::UNetParams<T> params = unet::he_init<T>(init_rng, widths);
  AdamState<T> adam(widths);
  unet::UNetParams<T> grads(widths);
  EarlyStopping stopper(cfg.patience);

  TrainResult<T> result;
  result.best_params = params;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<std::size_t> order = split.train;
    Rng shuffle_rng(epoch_seed(cfg.seed, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double train_total = 0.0;
    bool finite = true;
    for (std::size_t first = 0; first < order.size() && finite; first += cfg.batch_size) {
      const std::size_t last = std::min(first + cfg.batch_size, order.size());
      const std::size_t batch = last - first;
      grads.set_zero();
      for (std::size_t k = first; k < last; ++k) {
        const std::size_t idx = order[k];
        const auto fwd = unet::forward(params, inputs[idx]);
        const auto loss = mse_loss(fwd.output, samples[idx].target, batch);
        if (!std::isfinite(loss.loss)) {
          finite = false;
          break;
        }
        train_total += loss.loss;
        unet::backward_accumulate(params, fwd.cache, loss.grad, grads, nullptr);
      }
      if (!finite) break;
      try {
        adam_step(params, grads, adam, cfg.learning_rate);
      } catch (const Error& e) {
        result.stop_reason = StopReason::kAborted;
        result.message = e.what();
        return result;
      }
    }
    if (!finite) {
      result.stop_reason = StopReason::kAborted;
      result.message = "non-finite training loss in epoch " + std::to_string(epoch);
      return result;
    }

    EpochReport rep;
    rep.epoch = epoch;
    rep.train_loss = train_total / static_cast<double>(order.size());
    rep.val_loss = mean_loss(params, inputs, samples, split.validation);
    if (hooks.override_val_loss) rep.val_loss = hooks.override_val_loss(epoch, rep.val_loss);
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.push_back(rep);
    if (hooks.on_epoch) hooks.on_epoch(rep);

    if (!std::isfinite(rep.val_loss)) {
      result.stop_reason = StopReason::kAborted;
      result.message = "non-finite validation loss in epoch " + std::to_string(epoch);
      return result;
    }
    if (stopper.observe(rep.val_loss)) {
      result.best_params = params;
      result.best_epoch = epoch;
      result.best_val_loss = rep.val_loss;
    } else if (stopper.should_stop()) {
      result.stop_reason = StopReason::kEarlyStopped;
      return result;
    }
  }
  result.stop_reason = StopReason::kMaxEpochs;
  return result;
}

}  // namespace irdrop::train
