#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "fedlgt/parameter_set.hpp"

namespace fedlgt {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment estimates plus the step counter. Lazily sized on the
// first step.
struct AdamState {
  std::uint64_t step = 0;
  ParameterSet first_moment;
  ParameterSet second_moment;
};

// One bias-corrected Adam update in place. Gradients must be keyed exactly
// like the parameters.
void adam_step(ParameterSet& params, const std::map<std::string, Tensor>& grads, AdamState& state,
               const AdamConfig& cfg);

}  // namespace fedlgt
