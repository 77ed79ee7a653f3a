#pragma once

#include <algorithm>
#include <cmath>

#include "prefdiff/autodiff/ops.hpp"

namespace prefdiff {

/// -log σ(r_c - r_i) + max(0, m - (r_c - r_i)).
inline double bt_margin_loss(double r_chosen, double r_ignored, double margin = 1.0) {
  const double d = r_chosen - r_ignored;
  return ops::detail::softplus_value(-d) + std::max(0.0, margin - d);
}

/// Mean margin loss over paired score columns [n x 1]. The hinge uses relu,
/// so its subgradient at the kink is 0.
inline Var bt_margin_loss(Var r_chosen, Var r_ignored, double margin = 1.0) {
  Var neg_d = ops::sub(r_ignored, r_chosen);
  return ops::mean(ops::add(ops::softplus(neg_d), ops::relu(ops::shift(neg_d, margin))));
}

}  // namespace prefdiff
