#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "fedlgt/model.hpp"
#include "fedlgt/parameter_set.hpp"

namespace fedlgt {

// Binary named-tensor container:
//   "FLGTCKPT" | u32 version | u32 len + config echo (key=value lines)
//   | u32 count | per tensor: u8 kind (0 param, 1 buffer) | u32 len + name
//   | u32 rank | u64 dims... | little-endian f64 data
// All integers little-endian.
struct Checkpoint {
  ModelConfig config;
  ParameterSet params;
  ModelBuffers buffers;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fedlgt
