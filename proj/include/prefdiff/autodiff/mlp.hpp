#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "prefdiff/autodiff/ops.hpp"

namespace prefdiff {

enum class Activation { relu, tanh };

/// Dense network layout. `widths` lists input, hidden..., output. Hidden
/// layers use `hidden`; the output layer is affine (identity activation).
struct MlpSpec {
  std::vector<std::size_t> widths;
  Activation hidden = Activation::relu;
  std::string prefix = "mlp";

  std::size_t input_width() const { return widths.front(); }
  std::size_t output_width() const { return widths.back(); }
  std::size_t layer_count() const { return widths.size() - 1; }
  std::string weight_name(std::size_t layer) const { return prefix + ".l" + std::to_string(layer) + ".w"; }
  std::string bias_name(std::size_t layer) const { return prefix + ".l" + std::to_string(layer) + ".b"; }

  void validate() const {
    if (widths.size() < 3) throw std::invalid_argument("MlpSpec '" + prefix + "' needs at least one hidden layer");
    for (std::size_t w : widths) {
      if (w == 0) throw std::invalid_argument("MlpSpec '" + prefix + "' has a zero width");
    }
  }
};

/// Adds the spec's weights to `params`: He-uniform for ReLU, Glorot-uniform
/// for tanh, zero biases. The output layer is scaled by `output_gain`.
template <class Rng>
void init_mlp(ParamSet& params, const MlpSpec& spec, Rng& rng, double output_gain = 1.0) {
  spec.validate();
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const std::size_t fan_in = spec.widths[l], fan_out = spec.widths[l + 1];
    const double limit = spec.hidden == Activation::relu ? std::sqrt(6.0 / static_cast<double>(fan_in))
                                                         : std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    const double gain = (l + 1 == spec.layer_count()) ? output_gain : 1.0;
    std::uniform_real_distribution<double> dist(-limit * gain, limit * gain);
    Tensor w = Tensor::zeros(fan_in, fan_out);
    for (double& v : w.data) v = dist(rng);
    params.add(spec.weight_name(l), std::move(w));
    params.add(spec.bias_name(l), Tensor::zeros(1, fan_out));
  }
}

/// Records the forward pass of `spec` on `tape`. Input is [batch x in].
inline Var mlp_forward(Tape& tape, const ParamSet& params, const MlpSpec& spec, Var input) {
  spec.validate();
  if (input.cols() != spec.input_width()) {
    throw ShapeError("mlp '" + spec.prefix + "': input has " + std::to_string(input.cols()) + " columns, spec expects " +
                     std::to_string(spec.input_width()));
  }
  Var h = input;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const Tensor& w = params.value(spec.weight_name(l));
    if (w.rows() != spec.widths[l] || w.cols() != spec.widths[l + 1]) {
      throw ShapeError("mlp '" + spec.prefix + "': parameter " + spec.weight_name(l) + " has shape " + w.shape_string());
    }
    h = ops::affine(h, tape.parameter(params, spec.weight_name(l)), tape.parameter(params, spec.bias_name(l)));
    if (l + 1 < spec.layer_count()) h = spec.hidden == Activation::relu ? ops::relu(h) : ops::tanh(h);
  }
  return h;
}

/// Forward-only convenience: evaluates the net on a constant input.
inline Tensor mlp_eval(const ParamSet& params, const MlpSpec& spec, const Tensor& input) {
  Tape tape;
  return mlp_forward(tape, params, spec, tape.constant(input)).value();
}

}  // namespace prefdiff
