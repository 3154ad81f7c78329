#include "fedlgt/autodiff.hpp"

#include <stdexcept>

namespace fedlgt {

GradBuffer::GradBuffer(const Tape& tape)
    : tape_(tape), grads_(tape.size()), touched_(tape.size(), false) {}

Tensor& GradBuffer::at(Var v) {
  if (!touched_[v.id]) {
    grads_[v.id] = Tensor::zeros(tape_.nodes_[v.id].value.shape());
    touched_[v.id] = true;
  }
  return grads_[v.id];
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{"constant", std::move(value), {}, nullptr});
  return Var{nodes_.size() - 1};
}

Var Tape::parameter(std::string name, Tensor value) {
  if (params_.count(name)) throw std::invalid_argument("tape: duplicate parameter '" + name + "'");
  nodes_.push_back(Node{"parameter", std::move(value), {}, nullptr});
  Var v{nodes_.size() - 1};
  params_.emplace(std::move(name), v);
  return v;
}

Var Tape::record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  for (const Var& in : inputs) {
    if (!in.valid() || in.id >= nodes_.size()) {
      throw std::invalid_argument("tape: op '" + std::string(op) + "' has an unrecorded input");
    }
  }
  nodes_.push_back(Node{std::string(op), std::move(value), std::move(inputs), std::move(backward)});
  return Var{nodes_.size() - 1};
}

std::map<std::string, Tensor> Tape::gradients(Var loss) const {
  const Tensor& out = value(loss);
  if (out.size() != 1) {
    throw std::invalid_argument("gradients: loss must be a scalar, got shape " + out.shape_str());
  }
  GradBuffer buf(*this);
  buf.at(loss)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    const Tensor* g = buf.find(i);
    if (g == nullptr || !nodes_[i].backward) continue;
    // Inputs always have smaller ids, so slot i is never written while read.
    nodes_[i].backward(*this, *g, buf);
  }
  std::map<std::string, Tensor> result;
  for (const auto& [name, v] : params_) {
    const Tensor* g = buf.find(v.id);
    result.emplace(name, g ? *g : Tensor::zeros(nodes_[v.id].value.shape()));
  }
  return result;
}

}  // namespace fedlgt
