#pragma once

// Reduces K sampled plans to one. Candidates are flattened action vectors;
// a single cluster is seeded at the best-covering candidate and refined by
// density-weighted mean / diagonal covariance updates.

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "prefdiff/diffusion/actions.hpp"

namespace prefdiff {

struct CandidateSet {
  std::vector<std::vector<double>> mu;  // K vectors of equal dimension
  std::vector<double> q;                // weights, sum 1

  std::size_t size() const { return mu.size(); }
  std::size_t dim() const { return mu.empty() ? 0 : mu.front().size(); }

  static CandidateSet uniform(std::vector<std::vector<double>> mu) {
    CandidateSet c;
    c.q.assign(mu.size(), mu.empty() ? 0.0 : 1.0 / static_cast<double>(mu.size()));
    c.mu = std::move(mu);
    return c;
  }

  void validate() const {
    if (mu.empty()) throw std::invalid_argument("candidate set is empty");
    if (q.size() != mu.size()) throw std::invalid_argument("candidate set needs one weight per candidate");
    double s = 0.0;
    for (std::size_t k = 0; k < mu.size(); ++k) {
      if (mu[k].size() != dim()) throw std::invalid_argument("candidates differ in dimension");
      if (!(q[k] >= 0.0)) throw std::invalid_argument("candidate weights must be nonnegative");
      s += q[k];
    }
    if (std::abs(s - 1.0) > 1e-9) throw std::invalid_argument("candidate weights must sum to 1");
  }
};

struct ClusterState {
  double mass = 1.0;               // q̄
  std::vector<double> mean;        // μ̄
  std::vector<double> covariance;  // diagonal of Σ̄
  bool underflow = false;          // some iteration fell back to uniform weights
};

struct EmConfig {
  double coverage_radius = 2.0;  // d, meters
  int iterations = 25;
  double covariance_floor = 1e-4;  // ε_Σ, also the per-sample Σ_k
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

/// argmax_c Σ_k q_k 𝕀(‖μ_k - μ_c‖ ≤ d), lowest index on ties.
inline std::size_t init_centroid(const CandidateSet& c, double d) {
  c.validate();
  std::size_t best = 0;
  double best_cover = -1.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    double cover = 0.0;
    for (std::size_t k = 0; k < c.size(); ++k) {
      if (squared_distance(c.mu[k], c.mu[i]) <= d * d) cover += c.q[k];
    }
    if (cover > best_cover) {
      best_cover = cover;
      best = i;
    }
  }
  return best;
}

inline ClusterState initial_state(const CandidateSet& c, std::size_t centroid, double floor) {
  ClusterState s;
  s.mean = c.mu.at(centroid);
  s.covariance.assign(c.dim(), floor);
  return s;
}

/// log N(x; mean, diag(cov)).
inline double diag_gaussian_log_density(std::span<const double> x, std::span<const double> mean,
                                        std::span<const double> cov) {
  double lp = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - mean[i];
    lp += -0.5 * d * d / cov[i] - 0.5 * std::log(2.0 * std::numbers::pi * cov[i]);
  }
  return lp;
}

inline ClusterState em_iterate(ClusterState s, const CandidateSet& c, int iters, double floor = 1e-4) {
  c.validate();
  if (s.mean.size() != c.dim() || s.covariance.size() != c.dim()) {
    throw std::invalid_argument("cluster state dimension differs from candidates");
  }
  const std::size_t K = c.size(), D = c.dim();
  std::vector<double> w(K);
  for (int it = 0; it < iters; ++it) {
    double mass = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      w[k] = c.q[k] * std::exp(diag_gaussian_log_density(c.mu[k], s.mean, s.covariance));
      mass += w[k];
    }
    if (!(mass > 0.0) || !std::isfinite(mass)) {
      s.underflow = true;
      w = c.q;
      mass = 1.0;
    }
    s.mass = mass;
    std::vector<double> mean(D, 0.0), cov(D, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t i = 0; i < D; ++i) mean[i] += w[k] * c.mu[k][i];
    }
    for (double& m : mean) m /= mass;
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t i = 0; i < D; ++i) {
        const double d = c.mu[k][i] - mean[i];
        cov[i] += w[k] * (floor + d * d);
      }
    }
    for (double& v : cov) v = std::max(v / mass, floor);
    s.mean = std::move(mean);
    s.covariance = std::move(cov);
  }
  return s;
}

inline CandidateSet candidates_from(std::span<const Trajectory> trajs) {
  std::vector<std::vector<double>> mu;
  mu.reserve(trajs.size());
  for (const Trajectory& t : trajs) {
    const auto f = to_actions(t).flat();
    mu.emplace_back(f.begin(), f.end());
  }
  return CandidateSet::uniform(std::move(mu));
}

/// Representative plan for a set of sampled trajectories.
inline Trajectory aggregate(std::span<const Trajectory> trajs, const EmConfig& cfg = EmConfig{},
                            bool* underflow = nullptr) {
  if (trajs.empty()) throw std::invalid_argument("aggregate: need at least one candidate");
  const CandidateSet c = candidates_from(trajs);
  const std::size_t start = init_centroid(c, cfg.coverage_radius);
  const ClusterState s = em_iterate(initial_state(c, start, cfg.covariance_floor), c, cfg.iterations, cfg.covariance_floor);
  if (underflow) *underflow = s.underflow;
  return to_states(ActionSequence::from_flat(s.mean));
}

}  // namespace prefdiff
