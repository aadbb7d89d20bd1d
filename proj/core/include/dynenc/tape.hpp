// SPDX-License-Identifier: Apache-2.0
//
// Define-by-run reverse-mode differentiation. A Tape records every operation
// in execution order; backward() walks it in reverse and accumulates
// gradients into the recorded nodes and, finally, into the Parameters that
// were read onto the tape.
#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dynenc/tensor.hpp"

namespace dynenc::grad {

/// A named trainable tensor with its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  std::vector<double> grad;

  void zero_grad();
};

/// Owns parameters with stable addresses, in insertion order.
class ParamStore {
 public:
  Parameter& add(std::string name, Tensor value);
  Parameter& get(std::string_view name);
  const Parameter& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  void zero_grad();

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::deque<Parameter> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const;
  double item() const;
};

/// Read/write view handed to a backward rule.
class BackwardContext {
 public:
  BackwardContext(Tape& tape, std::size_t out, std::span<const double> out_grad);

  std::span<const double> out_grad() const { return out_grad_; }
  const Tensor& out_value() const;
  const Tensor& input(std::size_t i) const;
  /// Gradient buffer of input i, or an empty span when the input does not
  /// require a gradient.
  std::span<double> input_grad(std::size_t i);

 private:
  Tape& tape_;
  std::size_t out_;
  std::span<const double> out_grad_;
};

using BackwardFn = std::function<void(BackwardContext&)>;

/// Names an op whose backward rule gets its output gradient negated. Used by
/// the verification suite to prove the gradient checks catch broken rules.
void set_backward_fault(std::string op);
void clear_backward_fault();

class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor value);
  Var leaf(Tensor value, bool requires_grad = true);
  /// Reads a parameter onto the tape. Repeated reads return the same node.
  Var param(Parameter& p);

  Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs,
             BackwardFn backward);
  Var record(std::string_view op, Tensor value, const std::vector<Var>& inputs,
             BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  /// Gradient of the last backward() with respect to v; zeros if v did not
  /// receive any.
  std::vector<double> grad(Var v) const;
  std::string_view op(Var v) const { return nodes_[v.id].op; }

  /// Propagates d(loss)/d(node) to every node that requires a gradient and
  /// adds the results into Parameter::grad for parameters on this tape.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  friend class BackwardContext;

  struct Node {
    Tensor value;
    std::vector<double> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::string op;
    bool requires_grad = false;
    Parameter* param = nullptr;
  };

  Var push(Node node);

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

}  // namespace dynenc::grad
