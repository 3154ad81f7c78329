#include "fedlgt/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace fedlgt {

void adam_step(ParameterSet& params, const std::map<std::string, Tensor>& grads, AdamState& state,
               const AdamConfig& cfg) {
  if (grads.size() != params.size()) {
    throw std::invalid_argument("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                                std::to_string(params.size()) + " parameters");
  }
  for (const auto& [name, p] : params) {
    auto it = grads.find(name);
    if (it == grads.end()) throw std::invalid_argument("adam_step: no gradient for '" + name + "'");
    if (it->second.shape() != p.shape()) {
      throw std::invalid_argument("adam_step: gradient for '" + name + "' has shape " +
                                  it->second.shape_str() + ", parameter has " + p.shape_str());
    }
  }
  if (state.step == 0) {
    for (const auto& [name, p] : params) {
      state.first_moment.set(name, Tensor::zeros(p.shape()));
      state.second_moment.set(name, Tensor::zeros(p.shape()));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, p] : params) {
    const Tensor& g = grads.at(name);
    Tensor& m = state.first_moment.at(name);
    Tensor& v = state.second_moment.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace fedlgt
