#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

namespace fedlgt {

// Per-class label state. Serialized tokens: unknown -1, positive 1, negative 0.
enum class LabelState : std::int8_t { unknown = -1, negative = 0, positive = 1 };

using LabelStateVector = std::vector<LabelState>;

constexpr int state_token(LabelState s) noexcept { return static_cast<int>(s); }

// Row of a [3, d] state-embedding table: unknown 0, negative 1, positive 2.
constexpr std::size_t state_row(LabelState s) noexcept {
  return static_cast<std::size_t>(static_cast<int>(s) + 1);
}

constexpr std::string_view state_name(LabelState s) noexcept {
  switch (s) {
    case LabelState::unknown: return "unknown";
    case LabelState::negative: return "negative";
    case LabelState::positive: return "positive";
  }
  return "?";
}

}  // namespace fedlgt
