#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>

#include "prefdiff/autodiff/tape.hpp"

namespace prefdiff {

struct GradCheckReport {
  std::map<std::string, double> max_rel_error;  // per parameter
  double worst = 0.0;
  std::string worst_param;
  std::size_t entries_checked = 0;
  bool passed = false;
};

/// Builds the scalar loss on a fresh tape. Must be deterministic.
using LossBuilder = std::function<Var(Tape&, const ParamSet&)>;

/// Compares reverse-mode gradients against central differences.
///
/// Relative error is |a - n| / max(|a|, |n|, scale_floor); the floor keeps
/// entries whose true gradient is ~0 from dividing roundoff by roundoff.
/// `stride` > 1 checks every stride-th entry of each parameter.
inline GradCheckReport grad_check(const ParamSet& params, const LossBuilder& build, double tolerance, double h = 1e-5,
                                  std::size_t stride = 1, double scale_floor = 1e-6) {
  Grads analytic;
  {
    Tape tape;
    Var loss = build(tape, params);
    analytic = tape.backward(loss);
  }
  auto eval = [&](const ParamSet& p) {
    Tape tape;
    return build(tape, p).value().item();
  };

  GradCheckReport report;
  ParamSet probe = params;
  for (const auto& [name, entry] : params.entries()) {
    double worst = 0.0;
    const Tensor& a = analytic.at(name);
    for (std::size_t i = 0; i < entry.value.size(); i += std::max<std::size_t>(stride, 1)) {
      const double orig = entry.value.data[i];
      probe.mutable_value(name).data[i] = orig + h;
      const double up = eval(probe);
      probe.mutable_value(name).data[i] = orig - h;
      const double down = eval(probe);
      probe.mutable_value(name).data[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double denom = std::max({std::abs(a.data[i]), std::abs(numeric), scale_floor});
      worst = std::max(worst, std::abs(a.data[i] - numeric) / denom);
      ++report.entries_checked;
    }
    report.max_rel_error[name] = worst;
    if (worst >= report.worst) {
      report.worst = worst;
      report.worst_param = name;
    }
  }
  report.passed = report.worst < tolerance;
  return report;
}

}  // namespace prefdiff
