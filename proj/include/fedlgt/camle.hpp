#pragma once

#include <cstdint>
#include <span>
#include <utility>

#include "fedlgt/label_embeddings.hpp"
#include "fedlgt/label_state.hpp"
#include "fedlgt/tensor.hpp"

// Client-aware masked label embeddings: state calibration from the global
// model's confidence, masked embedding composition, and the random-mask and
// inference masks it is compared against.
namespace fedlgt {

struct CalibrationConfig {
  double tau = 0.5;       // presence threshold
  double epsilon = 0.02;  // uncertainty half-width around tau

  // Throws std::invalid_argument unless 0 < tau < 1 and 0 <= eps < min(tau, 1 - tau).
  void validate() const;
};

// Ground-truth states: positive where y_c = 1, negative otherwise.
LabelStateVector states_from_targets(std::span<const double> targets);

// A class becomes unknown iff tau - eps <= p_c <= tau + eps; everything else
// keeps its base state.
LabelStateVector calibrate_states(std::span<const double> global_probs, const LabelStateVector& base,
                                  const CalibrationConfig& cfg);

// Row c = L[c] + state_embedding(S[c]).
EmbeddingMatrix compose_masked_embeddings(const EmbeddingMatrix& labels, const LabelStateVector& states,
                                          const StateEmbeddings& state_embeddings);

// Random label-mask training: draws f ~ U[lo, hi], marks ceil(f * C) random
// classes unknown and the rest per their targets.
struct MaskFractionRange {
  double lo = 0.25;
  double hi = 1.0;
};
LabelStateVector random_label_mask(std::span<const double> targets, MaskFractionRange range,
                                   std::uint64_t seed);

LabelStateVector inference_mask(std::size_t num_classes);

std::size_t count_unknown(const LabelStateVector& s);

}  // namespace fedlgt
