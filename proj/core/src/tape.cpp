// SPDX-License-Identifier: Apache-2.0
#include "dynenc/tape.hpp"

#include <algorithm>
#include <stdexcept>

namespace dynenc::grad {

namespace {
std::string& backward_fault() {
  static std::string op;
  return op;
}
}  // namespace

void set_backward_fault(std::string op) { backward_fault() = std::move(op); }
void clear_backward_fault() { backward_fault().clear(); }

void Parameter::zero_grad() { grad.assign(value.size(), 0.0); }

Parameter& ParamStore::add(std::string name, Tensor value) {
  if (index_.count(name)) {
    throw std::invalid_argument("duplicate parameter '" + name + "'");
  }
  index_.emplace(name, params_.size());
  Parameter& p = params_.emplace_back();
  p.name = std::move(name);
  p.value = std::move(value);
  p.zero_grad();
  return p;
}

Parameter& ParamStore::get(std::string_view name) {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw std::out_of_range("unknown parameter '" + std::string(name) + "'");
  }
  return params_[it->second];
}

const Parameter& ParamStore::get(std::string_view name) const {
  return const_cast<ParamStore*>(this)->get(name);
}

bool ParamStore::contains(std::string_view name) const {
  return index_.find(name) != index_.end();
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

const Tensor& Var::value() const { return tape->value(*this); }
const Shape& Var::shape() const { return tape->value(*this).shape; }

double Var::item() const {
  const Tensor& t = value();
  if (t.size() != 1) {
    throw ShapeError("item: tensor of shape " + to_string(t.shape) +
                     " is not a scalar");
  }
  return t.data[0];
}

BackwardContext::BackwardContext(Tape& tape, std::size_t out,
                                 std::span<const double> out_grad)
    : tape_(tape), out_(out), out_grad_(out_grad) {}

const Tensor& BackwardContext::out_value() const { return tape_.nodes_[out_].value; }

const Tensor& BackwardContext::input(std::size_t i) const {
  return tape_.nodes_[tape_.nodes_[out_].inputs.at(i)].value;
}

std::span<double> BackwardContext::input_grad(std::size_t i) {
  auto& node = tape_.nodes_[tape_.nodes_[out_].inputs.at(i)];
  if (!node.requires_grad) return {};
  if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.op = "constant";
  return push(std::move(n));
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.op = "leaf";
  n.requires_grad = requires_grad && grad_enabled_;
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) {
    return Var{this, it->second};
  }
  Node n;
  n.value = p.value;
  n.op = "param";
  n.requires_grad = grad_enabled_;
  n.param = &p;
  Var v = push(std::move(n));
  param_nodes_.emplace(&p, v.id);
  return v;
}

Var Tape::record(std::string_view op, Tensor value, std::initializer_list<Var> inputs,
                 BackwardFn backward) {
  return record(op, std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Tape::record(std::string_view op, Tensor value, const std::vector<Var>& inputs,
                 BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  n.op = std::string(op);
  n.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    if (in.tape != this) {
      throw std::invalid_argument(std::string(op) + ": input belongs to another tape");
    }
    n.inputs.push_back(in.id);
    n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

std::vector<double> Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.empty()) return std::vector<double>(n.value.size(), 0.0);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw std::invalid_argument("backward: loss from another tape");
  const Node& root = nodes_[loss.id];
  if (root.value.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     to_string(root.value.shape));
  }
  for (auto& n : nodes_) n.grad.clear();
  if (!root.requires_grad) return;
  nodes_[loss.id].grad.assign(1, 1.0);

  const std::string& fault = backward_fault();
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty() || !n.backward) continue;
    if (!fault.empty() && n.op == fault) {
      for (double& g : n.grad) g = -g;
    }
    // input_grad() only allocates other nodes' buffers; this span stays valid.
    BackwardContext ctx(*this, i, n.grad);
    n.backward(ctx);
  }

  for (auto& n : nodes_) {
    if (n.param == nullptr || n.grad.empty()) continue;
    auto& g = n.param->grad;
    if (g.size() != n.grad.size()) g.assign(n.grad.size(), 0.0);
    for (std::size_t j = 0; j < g.size(); ++j) g[j] += n.grad[j];
  }
}

}  // namespace dynenc::grad
