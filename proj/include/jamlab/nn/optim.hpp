#pragma once

// Adam with decoupled weight decay, and the warmup + cosine learning-rate schedule.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "jamlab/nn/layers.hpp"

namespace jamlab::nn {

inline constexpr double kBaseLr = 5e-4;
inline constexpr double kWeightDecay = 1e-5;
inline constexpr int kTotalEpochs = 30;
inline constexpr int kWarmupEpochs = 3;
inline constexpr double kWarmupStartFraction = 0.01;

template <typename T>
struct OptimizerState {
  std::vector<std::vector<T>> m, v;  // one entry per parameter, in ParameterSet order
  std::int64_t step = 0;
  double base_lr = kBaseLr;
  double weight_decay = kWeightDecay;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  OptimizerState() = default;
  explicit OptimizerState(const ParameterSet<T>& ps) {
    for (const auto& p : ps.params()) {
      m.emplace_back(p.value.size(), T{0});
      v.emplace_back(p.value.size(), T{0});
    }
  }
};

/// One Adam step at learning rate `lr`:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2,
///   p <- p - lr * (m/(1-b1^t)) / (sqrt(v/(1-b2^t)) + eps) - lr * wd * p.
/// Throws NumericError naming the parameter if any gradient is not finite.
template <typename T>
void adam_step(OptimizerState<T>& st, ParameterSet<T>& ps, double lr) {
  auto& params = ps.params();
  if (st.m.size() != params.size()) throw ShapeError("optimizer state does not match the parameter set");
  for (const auto& p : params)
    for (T g : p.grad.data)
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
  ++st.step;
  const double t = static_cast<double>(st.step);
  const double c1 = 1.0 - std::pow(st.beta1, t);
  const double c2 = 1.0 - std::pow(st.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    auto& m = st.m[k];
    auto& v = st.v[k];
    if (m.size() != p.value.size()) throw ShapeError("optimizer moments do not match '" + p.name + "'");
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double g = static_cast<double>(p.grad.data[i]);
      const double mi = st.beta1 * static_cast<double>(m[i]) + (1.0 - st.beta1) * g;
      const double vi = st.beta2 * static_cast<double>(v[i]) + (1.0 - st.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double w = static_cast<double>(p.value.data[i]);
      const double update = lr * (mi / c1) / (std::sqrt(vi / c2) + st.eps) + lr * st.weight_decay * w;
      p.value.data[i] = static_cast<T>(w - update);
    }
  }
}

/// Learning rate at optimizer step `step` (0-based) when an epoch has
/// `steps_per_epoch` steps: linear warmup from 1% of base to base over
/// `warmup_epochs`, then cosine decay to 0 at `total_epochs`.
inline double lr_at(std::int64_t step, std::int64_t steps_per_epoch, int total_epochs = kTotalEpochs,
                    int warmup_epochs = kWarmupEpochs, double base_lr = kBaseLr) {
  if (steps_per_epoch <= 0 || total_epochs <= warmup_epochs || warmup_epochs < 0)
    throw ShapeError("lr_at: invalid schedule geometry");
  if (step < 0 || step > steps_per_epoch * total_epochs) throw ShapeError("lr_at: step outside the schedule");
  const double epoch = static_cast<double>(step) / static_cast<double>(steps_per_epoch);
  if (epoch < warmup_epochs)
    return base_lr * (kWarmupStartFraction + (1.0 - kWarmupStartFraction) * epoch / warmup_epochs);
  const double frac = (epoch - warmup_epochs) / static_cast<double>(total_epochs - warmup_epochs);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace jamlab::nn
