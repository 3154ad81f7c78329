#include "fedlgt/camle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "fedlgt/util.hpp"

namespace fedlgt {

void CalibrationConfig::validate() const {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("calibration: tau must lie in (0, 1)");
  if (!(epsilon >= 0.0 && epsilon < std::min(tau, 1.0 - tau))) {
    throw std::invalid_argument("calibration: epsilon must lie in [0, min(tau, 1 - tau))");
  }
}

LabelStateVector states_from_targets(std::span<const double> targets) {
  LabelStateVector s(targets.size());
  for (std::size_t c = 0; c < targets.size(); ++c) {
    s[c] = targets[c] != 0.0 ? LabelState::positive : LabelState::negative;
  }
  return s;
}

LabelStateVector calibrate_states(std::span<const double> global_probs, const LabelStateVector& base,
                                  const CalibrationConfig& cfg) {
  cfg.validate();
  if (global_probs.size() != base.size()) {
    throw std::invalid_argument("calibrate_states: " + std::to_string(global_probs.size()) +
                                " probabilities for " + std::to_string(base.size()) + " states");
  }
  const double lo = cfg.tau - cfg.epsilon;
  const double hi = cfg.tau + cfg.epsilon;
  LabelStateVector out = base;
  for (std::size_t c = 0; c < base.size(); ++c) {
    const double p = global_probs[c];
    if (!(p >= 0.0 && p <= 1.0)) {
      throw std::invalid_argument("calibrate_states: probability " + format_double(p) + " for class " +
                                  std::to_string(c) + " is outside [0, 1]");
    }
    if (lo <= p && p <= hi) out[c] = LabelState::unknown;
  }
  return out;
}

EmbeddingMatrix compose_masked_embeddings(const EmbeddingMatrix& labels, const LabelStateVector& states,
                                          const StateEmbeddings& state_embeddings) {
  const std::size_t C = labels.num_classes(), D = labels.dim();
  if (states.size() != C) {
    throw std::invalid_argument("compose_masked_embeddings: " + std::to_string(states.size()) +
                                " states for " + std::to_string(C) + " classes");
  }
  if (state_embeddings.dim() != D) {
    throw std::invalid_argument("compose_masked_embeddings: label width " + std::to_string(D) +
                                " vs state width " + std::to_string(state_embeddings.dim()));
  }
  EmbeddingMatrix out = labels;
  for (std::size_t c = 0; c < C; ++c) {
    const Tensor* s = nullptr;
    switch (states[c]) {
      case LabelState::unknown: s = &state_embeddings.unknown; break;
      case LabelState::positive: s = &state_embeddings.positive; break;
      case LabelState::negative: s = &state_embeddings.negative; break;
    }
    for (std::size_t j = 0; j < D; ++j) out.rows[c * D + j] += (*s)[j];
  }
  return out;
}

LabelStateVector random_label_mask(std::span<const double> targets, MaskFractionRange range,
                                   std::uint64_t seed) {
  if (!(range.lo >= 0.0 && range.hi <= 1.0 && range.lo <= range.hi)) {
    throw std::invalid_argument("random_label_mask: fraction range must satisfy 0 <= lo <= hi <= 1");
  }
  const std::size_t C = targets.size();
  LabelStateVector s = states_from_targets(targets);
  Rng rng(seed);
  const double f = range.lo == range.hi ? range.lo : range.lo + (range.hi - range.lo) * uniform01(rng);
  // Guard against f*C landing a hair above an integer through rounding.
  const double raw = f * static_cast<double>(C);
  const double nearest = std::round(raw);
  const auto k = static_cast<std::size_t>(std::abs(raw - nearest) < 1e-9 ? nearest : std::ceil(raw));
  std::vector<std::size_t> idx(C);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // Partial Fisher-Yates: the first k entries are a uniform k-subset.
  for (std::size_t i = 0; i < k && i < C; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (C - i));
    std::swap(idx[i], idx[j]);
    s[idx[i]] = LabelState::unknown;
  }
  return s;
}

LabelStateVector inference_mask(std::size_t num_classes) {
  if (num_classes < 1) throw std::invalid_argument("inference_mask: C must be >= 1");
  return LabelStateVector(num_classes, LabelState::unknown);
}

std::size_t count_unknown(const LabelStateVector& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), LabelState::unknown));
}

}  // namespace fedlgt
