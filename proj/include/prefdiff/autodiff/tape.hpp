#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "prefdiff/autodiff/tensor.hpp"

namespace prefdiff {

/// One trainable tensor plus its Adam moments.
struct Parameter {
  Tensor value;
  Tensor first_moment;
  Tensor second_moment;
};

/// Gradients keyed by parameter name.
using Grads = std::map<std::string, Tensor>;

/// Named parameters with per-parameter Adam state.
///
/// `version()` changes on every mutation so tapes recorded against an older
/// snapshot can be detected and rejected.
class ParamSet {
 public:
  void add(const std::string& name, Tensor init) {
    if (params_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
    Parameter p;
    p.first_moment = Tensor(init.shape, std::vector<double>(init.size(), 0.0));
    p.second_moment = p.first_moment;
    p.value = std::move(init);
    params_.emplace(name, std::move(p));
    bump();
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  const Tensor& value(const std::string& name) const { return entry(name).value; }

  /// Mutable access; bumps the version.
  Tensor& mutable_value(const std::string& name) {
    bump();
    return mutable_entry(name).value;
  }

  const Parameter& entry(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return it->second;
  }
  Parameter& mutable_entry(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    bump();
    return it->second;
  }

  const std::map<std::string, Parameter>& entries() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += p.value.size();
    return n;
  }

  std::int64_t step() const { return step_; }
  void set_step(std::int64_t s) {
    if (s < step_) throw std::invalid_argument("Adam step count may not decrease");
    step_ = s;
    bump();
  }
  std::uint64_t version() const { return version_; }

  /// Zero moments and step count, e.g. when a new training phase starts.
  void reset_optimizer() {
    for (auto& [_, p] : params_) {
      std::fill(p.first_moment.data.begin(), p.first_moment.data.end(), 0.0);
      std::fill(p.second_moment.data.begin(), p.second_moment.data.end(), 0.0);
    }
    step_ = 0;
    bump();
  }

  /// Zero-filled gradient map with one entry per parameter.
  Grads zero_grads() const {
    Grads g;
    for (const auto& [name, p] : params_) g.emplace(name, Tensor(p.value.shape, std::vector<double>(p.value.size(), 0.0)));
    return g;
  }

  /// Value equality (ignores optimizer state and version).
  bool same_values(const ParamSet& o) const {
    if (params_.size() != o.params_.size()) return false;
    for (const auto& [name, p] : params_) {
      auto it = o.params_.find(name);
      if (it == o.params_.end() || !(it->second.value == p.value)) return false;
    }
    return true;
  }

 private:
  // Versions come from one process-wide counter, so assignment from another
  // ParamSet can never reproduce a version a tape recorded.
  void bump() {
    static std::atomic<std::uint64_t> counter{0};
    version_ = ++counter;
  }

  std::map<std::string, Parameter> params_;
  std::int64_t step_ = 0;
  std::uint64_t version_ = 0;
};

class Tape;

/// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so reverse
/// insertion order is a valid topological order for backward.
///
/// A tape may be differentiated once. Any mutation of a bound ParamSet after
/// recording makes the tape stale and backward() rejects it.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), false, nullptr); }

  Var parameter(const ParamSet& params, const std::string& name) {
    bind(params);
    Node n;
    n.ref = &params.value(name);
    n.requires_grad = true;
    n.owner = &params;
    n.param_name = name;
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  /// Record an op result. `backward` receives the gradient w.r.t. this node.
  Var push(Tensor value, bool requires_grad, BackwardFn backward) {
    check_open();
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor& value(int id) const {
    const Node& n = nodes_.at(static_cast<std::size_t>(id));
    return n.ref ? *n.ref : n.value;
  }
  bool requires_grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).requires_grad; }

  /// Add `g` into the gradient slot of node `id` (no-op for constants).
  void accumulate(int id, const Tensor& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    Tensor& slot = grads_[static_cast<std::size_t>(id)];
    if (slot.data.empty()) {
      slot = g;
      slot.shape = value(id).shape;
      if (slot.size() != value(id).size()) throw ShapeError("gradient size mismatch in backward");
      return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) slot.data[i] += g.data[i];
  }

  /// Propagate `output_grad` from `output` to every bound parameter.
  /// Parameters of bound ParamSets that the output does not reach get zeros.
  Grads backward(Var output, const Tensor& output_grad) {
    if (output.tape != this) throw std::invalid_argument("backward: variable belongs to another tape");
    if (consumed_) throw std::logic_error("backward: tape already consumed");
    for (const auto& [ps, version] : bound_) {
      if (ps->version() != version) throw std::logic_error("backward: stale tape (parameters changed after forward)");
    }
    const Tensor& out = value(output.id);
    if (out.rows() != output_grad.rows() || out.cols() != output_grad.cols()) {
      throw ShapeError("backward: output grad " + output_grad.shape_string() + " vs output " + out.shape_string());
    }
    consumed_ = true;
    grads_.assign(nodes_.size(), Tensor{});
    accumulate(output.id, output_grad);

    for (int id = output.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      Tensor& g = grads_[static_cast<std::size_t>(id)];
      if (!n.requires_grad || g.data.empty() || !n.backward) continue;
      n.backward(*this, g);
    }

    Grads result;
    for (const auto& [ps, _] : bound_) {
      for (const auto& [name, p] : ps->entries()) {
        result.emplace(name, Tensor(p.value.shape, std::vector<double>(p.value.size(), 0.0)));
      }
    }
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
      const Node& n = nodes_[id];
      if (!n.owner || grads_[id].data.empty()) continue;
      Tensor& dst = result.at(n.param_name);
      for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += grads_[id].data[i];
    }
    return result;
  }

  /// Backward from a 1x1 output with unit seed.
  Grads backward(Var scalar_output) { return backward(scalar_output, Tensor::scalar(1.0)); }

  bool consumed() const { return consumed_; }
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* ref = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
    const ParamSet* owner = nullptr;
    std::string param_name;
  };

  void check_open() const {
    if (consumed_) throw std::logic_error("tape already consumed; record a new forward pass");
  }

  void bind(const ParamSet& params) {
    check_open();
    for (const auto& [ps, _] : bound_) {
      if (ps == &params) return;
    }
    for (const auto& [ps, _] : bound_) {
      for (const auto& [name, __] : params.entries()) {
        if (ps->contains(name)) throw std::invalid_argument("tape binds two ParamSets sharing name '" + name + "'");
      }
    }
    bound_.emplace_back(&params, params.version());
  }

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<std::pair<const ParamSet*, std::uint64_t>> bound_;
  bool consumed_ = false;
};

inline const Tensor& Var::value() const { return tape->value(id); }

}  // namespace prefdiff
