#pragma once

#include <cstddef>
#include <map>
#include <string>

#include "fedlgt/tensor.hpp"

namespace fedlgt {

// Named model tensors, iterated in name order.
class ParameterSet {
 public:
  using Map = std::map<std::string, Tensor>;

  ParameterSet() = default;
  explicit ParameterSet(Map tensors) : tensors_(std::move(tensors)) {}

  void set(const std::string& name, Tensor value) { tensors_[name] = std::move(value); }
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

  std::size_t size() const noexcept { return tensors_.size(); }
  std::size_t numel() const noexcept;
  Map::const_iterator begin() const { return tensors_.begin(); }
  Map::const_iterator end() const { return tensors_.end(); }
  Map::iterator begin() { return tensors_.begin(); }
  Map::iterator end() { return tensors_.end(); }
  const Map& tensors() const noexcept { return tensors_; }

  // Same names with the same shapes.
  bool same_layout(const ParameterSet& other) const;
  // Throws std::invalid_argument naming the first differing entry.
  void require_same_layout(const ParameterSet& other, const char* context) const;

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

 private:
  Map tensors_;
};

bool bitwise_equal(const ParameterSet& a, const ParameterSet& b) noexcept;

}  // namespace fedlgt
