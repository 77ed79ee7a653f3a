#pragma once

#include <cmath>
#include <string>

#include "prefdiff/autodiff/tape.hpp"

namespace prefdiff {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamStepResult {
  bool applied = false;
  std::string diagnostic;
};

/// Bias-corrected Adam update. A non-finite gradient skips the whole step and
/// leaves both parameters and moments untouched.
inline AdamStepResult adam_step(ParamSet& params, const Grads& grads, const AdamConfig& cfg) {
  for (const auto& [name, g] : grads) {
    const Parameter& p = params.entry(name);
    if (g.size() != p.value.size()) {
      throw ShapeError("adam_step: gradient for '" + name + "' has shape " + g.shape_string() + ", parameter " +
                       p.value.shape_string());
    }
    if (!g.all_finite()) return {false, "adam_step skipped: non-finite gradient in '" + name + "'"};
  }
  const std::int64_t step = params.step() + 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (const auto& [name, g] : grads) {
    Parameter& p = params.mutable_entry(name);
    for (std::size_t i = 0; i < g.size(); ++i) {
      double& m = p.first_moment.data[i];
      double& v = p.second_moment.data[i];
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g.data[i];
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.data[i] * g.data[i];
      p.value.data[i] -= cfg.lr * (m / c1) / (std::sqrt(v / c2) + cfg.eps);
    }
  }
  params.set_step(step);
  return {true, {}};
}

/// In-place g += scale * other over matching keys.
inline void accumulate_grads(Grads& into, const Grads& other, double scale = 1.0) {
  for (const auto& [name, g] : other) {
    auto it = into.find(name);
    if (it == into.end()) {
      Tensor t = g;
      for (double& v : t.data) v *= scale;
      into.emplace(name, std::move(t));
      continue;
    }
    for (std::size_t i = 0; i < g.size(); ++i) it->second.data[i] += scale * g.data[i];
  }
}

}  // namespace prefdiff
