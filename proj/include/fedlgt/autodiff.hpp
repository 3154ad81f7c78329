#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fedlgt/tensor.hpp"

namespace fedlgt {

// Handle to a node recorded on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
  bool valid() const noexcept { return id != static_cast<std::size_t>(-1); }
};

class Tape;

// Lazily allocated per-node gradient storage used during one backward sweep.
class GradBuffer {
 public:
  explicit GradBuffer(const Tape& tape);

  // Gradient slot for `v`, zero-filled with the node's shape on first access.
  Tensor& at(Var v);
  const Tensor* find(std::size_t id) const { return touched_[id] ? &grads_[id] : nullptr; }

 private:
  const Tape& tape_;
  std::vector<Tensor> grads_;
  std::vector<bool> touched_;
};

// Reads the output gradient, accumulates into input gradients.
using BackwardFn = std::function<void(const Tape&, const Tensor& grad_out, GradBuffer&)>;

// Records primitive ops in execution (topological) order. Single writer.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var constant(Tensor value);
  Var parameter(std::string name, Tensor value);
  Var record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  std::string_view op(Var v) const { return nodes_.at(v.id).op; }
  std::size_t size() const noexcept { return nodes_.size(); }

  const std::map<std::string, Var>& parameters() const noexcept { return params_; }

  // Reverse sweep from a scalar node; visits nodes in exact reverse order.
  // Parameters the loss does not depend on get zero gradients.
  std::map<std::string, Tensor> gradients(Var loss) const;

 private:
  friend class GradBuffer;
  struct Node {
    std::string op;
    Tensor value;
    std::vector<Var> inputs;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::map<std::string, Var> params_;
};

using ParameterGrads = std::map<std::string, Tensor>;

}  // namespace fedlgt
