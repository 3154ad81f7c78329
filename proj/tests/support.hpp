#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <string>

#include "fedlgt/autodiff.hpp"
#include "fedlgt/ops.hpp"
#include "fedlgt/util.hpp"

namespace testing {

using fedlgt::Tape;
using fedlgt::Tensor;
using fedlgt::Var;
using Inputs = std::map<std::string, Tensor>;
using Vars = std::map<std::string, Var>;
using Builder = std::function<Var(Tape&, const Vars&)>;

inline Tensor uniform_tensor(fedlgt::Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  fedlgt::Rng rng(seed);
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = lo + (hi - lo) * fedlgt::uniform01(rng);
  return t;
}

inline double evaluate(const Inputs& in, const Builder& f) {
  Tape tape;
  Vars v;
  for (auto& [k, t] : in) v[k] = tape.parameter(k, t);
  return tape.value(f(tape, v)).item();
}

// Largest per-tensor relative error ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-6)
// over all inputs, using central differences. The floor keeps structurally zero gradients
// (e.g. a bias shared by every attention key) from comparing round-off against round-off.
inline double gradient_error(const Inputs& in, const Builder& f, double step = 1e-5,
                             std::string* worst = nullptr) {
  Tape tape;
  Vars v;
  for (auto& [k, t] : in) v[k] = tape.parameter(k, t);
  auto grads = tape.gradients(f(tape, v));
  double max_err = 0.0;
  for (auto& [name, t] : in) {
    const Tensor& g = grads.at(name);
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      Inputs plus = in, minus = in;
      plus.at(name)[i] += step;
      minus.at(name)[i] -= step;
      double num = (evaluate(plus, f) - evaluate(minus, f)) / (2.0 * step);
      diff += (g[i] - num) * (g[i] - num);
      na += g[i] * g[i];
      nn += num * num;
    }
    double denom = std::max(std::sqrt(std::max(na, nn)), 1e-6);
    double err = std::sqrt(diff) / denom;
    if (err > max_err) {
      max_err = err;
      if (worst) *worst = name;
    }
  }
  return max_err;
}

// Projects an arbitrary-shape output to a scalar with fixed random weights.
inline Var project(Tape& tape, Var out, std::uint64_t seed = 99) {
  Tensor w = uniform_tensor(tape.value(out).shape(), seed);
  return fedlgt::ops::sum(tape, fedlgt::ops::mul(tape, out, tape.constant(w)));
}

// Fresh per-test path under the system temp directory.
inline std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "fedlgt_tests";
  std::filesystem::create_directories(dir);
  std::filesystem::remove_all(dir / name);
  return dir / name;
}

}  // namespace testing
