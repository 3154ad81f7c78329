#include "fedlgt/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "fedlgt/util.hpp"

namespace fedlgt {
namespace {

constexpr char kMagic[8] = {'F', 'L', 'G', 'T', 'C', 'K', 'P', 'T'};

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_str(std::string& out, const std::string& s) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

void put_tensor(std::string& out, std::uint8_t kind, const std::string& name, const Tensor& t) {
  out.push_back(static_cast<char>(kind));
  put_str(out, name);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put_le<std::uint64_t>(out, d);
  for (double v : t.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : b_(bytes) {}

  template <typename U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }
  std::string str() {
    const auto n = le<std::uint32_t>();
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw CheckpointError("checkpoint: truncated at byte " + std::to_string(pos_));
  }
  const std::string& b_;
  std::size_t pos_ = 0;
};

std::string config_echo(const ModelConfig& c) {
  std::string s;
  for (const auto& [k, v] : c.to_kv()) s += k + "=" + v + "\n";
  return s;
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_str(out, config_echo(ckpt.config));
  std::uint32_t count = static_cast<std::uint32_t>(ckpt.params.size());
  if (!ckpt.buffers.label_embeddings.empty()) ++count;
  if (!ckpt.buffers.state_table.empty()) ++count;
  put_le<std::uint32_t>(out, count);
  for (const auto& [name, t] : ckpt.params) put_tensor(out, 0, name, t);
  if (!ckpt.buffers.label_embeddings.empty()) {
    put_tensor(out, 1, "buffer.label_embeddings", ckpt.buffers.label_embeddings);
  }
  if (!ckpt.buffers.state_table.empty()) put_tensor(out, 1, "buffer.state_table", ckpt.buffers.state_table);
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.raw(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw CheckpointError("checkpoint: bad magic");
  }
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  }
  std::map<std::string, std::string> kv;
  const std::string echo = r.str();
  for (auto line : split(echo, '\n')) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos) throw CheckpointError("checkpoint: malformed config echo");
    kv.emplace(std::string(line.substr(0, eq)), std::string(line.substr(eq + 1)));
  }
  Checkpoint ck;
  try {
    ck.config = ModelConfig::from_kv(kv);
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }
  const auto count = r.le<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto kind = r.le<std::uint8_t>();
    const std::string name = r.str();
    const auto rank = r.le<std::uint32_t>();
    if (rank > 8) throw CheckpointError("checkpoint: tensor '" + name + "' has implausible rank");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.le<std::uint64_t>());
    const std::size_t n = shape_numel(shape);
    if (n > (bytes.size() / 8)) throw CheckpointError("checkpoint: tensor '" + name + "' exceeds file size");
    std::vector<double> data(n);
    for (auto& v : data) v = std::bit_cast<double>(r.le<std::uint64_t>());
    Tensor t(std::move(shape), std::move(data));
    if (kind == 0) {
      ck.params.set(name, std::move(t));
    } else if (kind == 1 && name == "buffer.label_embeddings") {
      ck.buffers.label_embeddings = std::move(t);
    } else if (kind == 1 && name == "buffer.state_table") {
      ck.buffers.state_table = std::move(t);
    } else {
      throw CheckpointError("checkpoint: unknown record '" + name + "'");
    }
  }
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes");
  const auto layout = parameter_layout(ck.config);
  for (const auto& [name, shape] : layout) {
    if (!ck.params.contains(name) || ck.params.at(name).shape() != shape) {
      throw CheckpointError("checkpoint: parameter '" + name + "' missing or mis-shaped for its config");
    }
  }
  if (ck.params.size() != layout.size()) throw CheckpointError("checkpoint: unexpected parameters");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_text_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_text_file(path));
}

}  // namespace fedlgt
