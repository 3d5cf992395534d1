#pragma once

// AdamW with decoupled weight decay, and the warmup + cosine schedule.

#include <cmath>
#include <cstddef>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "multimae/errors.hpp"
#include "multimae/params.hpp"

namespace multimae {

/// Linear scaling rule.
inline double effective_lr(double base_lr, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  return base_lr * static_cast<double>(batch_size) / 256.0;
}

/// Linear warmup from warmup_lr to peak_lr over warmup_steps, then cosine
/// decay to 0 at total_steps.
inline double lr_at(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double peak_lr,
                    double warmup_lr) {
  if (step > total_steps) throw ContractError("lr_at: step " + std::to_string(step) + " past " + std::to_string(total_steps));
  if (step < warmup_steps) {
    return warmup_lr + (peak_lr - warmup_lr) * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  if (total_steps == warmup_steps) return peak_lr;
  const double progress = static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

struct AdamWConfig {
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
};

template <typename T>
struct AdamWState {
  std::size_t step = 0;
  std::map<std::string, std::vector<T>> m;
  std::map<std::string, std::vector<T>> v;
};

/// One update of every parameter in `params`. Each parameter must hold a
/// gradient; decay is applied to names accepted by decays().
template <typename T>
void adamw_step(ParamMap<T>& params, AdamWState<T>& state, double lr, const AdamWConfig& config) {
  for (const auto& [name, p] : params) {
    if (!p.has_grad()) throw ContractError("parameter '" + name + "' has no gradient");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    auto value = p.mutable_data();
    const auto grad = p.grad();
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) {
      m.assign(value.size(), T(0));
      v.assign(value.size(), T(0));
    }
    const double decay = decays(name) ? lr * config.weight_decay : 0.0;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i];
      const double mi = config.beta1 * m[i] + (1.0 - config.beta1) * g;
      const double vi = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      double x = value[i];
      x -= decay * x;
      x -= lr * (mi / bc1) / (std::sqrt(vi / bc2) + config.eps);
      value[i] = static_cast<T>(x);
    }
  }
}

}  // namespace multimae
