#include "fedlgt/parameter_set.hpp"

#include <stdexcept>

namespace fedlgt {

const Tensor& ParameterSet::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("parameter set: no tensor named '" + name + "'");
  return it->second;
}

Tensor& ParameterSet::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("parameter set: no tensor named '" + name + "'");
  return it->second;
}

std::size_t ParameterSet::numel() const noexcept {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors_) n += t.size();
  return n;
}

bool ParameterSet::same_layout(const ParameterSet& other) const {
  if (tensors_.size() != other.tensors_.size()) return false;
  auto it = other.tensors_.begin();
  for (const auto& [name, t] : tensors_) {
    if (it->first != name || it->second.shape() != t.shape()) return false;
    ++it;
  }
  return true;
}

void ParameterSet::require_same_layout(const ParameterSet& other, const char* context) const {
  for (const auto& [name, t] : tensors_) {
    auto it = other.tensors_.find(name);
    if (it == other.tensors_.end()) {
      throw std::invalid_argument(std::string(context) + ": '" + name + "' missing from second set");
    }
    if (it->second.shape() != t.shape()) {
      throw std::invalid_argument(std::string(context) + ": '" + name + "' has shape " + t.shape_str() +
                                  " vs " + it->second.shape_str());
    }
  }
  for (const auto& [name, t] : other.tensors_) {
    if (!tensors_.count(name)) {
      throw std::invalid_argument(std::string(context) + ": unexpected tensor '" + name + "'");
    }
  }
}

bool bitwise_equal(const ParameterSet& a, const ParameterSet& b) noexcept {
  if (a.size() != b.size()) return false;
  auto it = b.begin();
  for (const auto& [name, t] : a) {
    if (it->first != name || !bitwise_equal(t, it->second)) return false;
    ++it;
  }
  return true;
}

}  // namespace fedlgt
