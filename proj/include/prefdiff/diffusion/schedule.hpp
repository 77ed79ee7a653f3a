#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace prefdiff {

/// DDPM variance schedule. Tables are 0-based in storage; the accessors take
/// the 1-based noise level t in {1..T}.
struct NoiseSchedule {
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;
  std::vector<double> sigmas;

  int steps() const { return static_cast<int>(betas.size()); }
  double beta(int t) const { return betas.at(index(t)); }
  double alpha(int t) const { return alphas.at(index(t)); }
  double alpha_bar(int t) const { return alpha_bars.at(index(t)); }
  double sigma(int t) const { return sigmas.at(index(t)); }

  static NoiseSchedule from_betas(std::vector<double> betas) {
    if (betas.empty()) throw std::invalid_argument("noise schedule needs at least one step");
    NoiseSchedule s;
    double running = 1.0;
    for (double b : betas) {
      if (!(b > 0.0 && b < 1.0)) throw std::invalid_argument("noise schedule betas must lie in (0, 1)");
      running *= 1.0 - b;
      s.alphas.push_back(1.0 - b);
      s.alpha_bars.push_back(running);
      s.sigmas.push_back(std::sqrt(b));
    }
    s.betas = std::move(betas);
    return s;
  }

 private:
  std::size_t index(int t) const {
    if (t < 1 || t > steps()) {
      throw std::out_of_range("noise level " + std::to_string(t) + " outside 1.." + std::to_string(steps()));
    }
    return static_cast<std::size_t>(t - 1);
  }
};

/// Linear beta interpolation from beta_start (t=1) to beta_end (t=T).
inline NoiseSchedule build_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw std::invalid_argument("schedule needs T >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw std::invalid_argument("schedule requires 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    betas[static_cast<std::size_t>(i)] = beta_start + frac * (beta_end - beta_start);
  }
  return NoiseSchedule::from_betas(std::move(betas));
}

}  // namespace prefdiff
