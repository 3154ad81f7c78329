#include <cmath>
#include <cstring>
#include <limits>

#include "doctest.h"
#include "fedlgt/checkpoint.hpp"
#include "fedlgt/label_embeddings.hpp"
#include "support.hpp"

using namespace fedlgt;

namespace {

Checkpoint sample_checkpoint(LabelTokens tokens) {
  Checkpoint ck;
  ck.config.num_classes = 3;
  ck.config.embed_dim = 4;
  ck.config.feature_dim = 6;
  ck.config.num_feature_tokens = 2;
  ck.config.transformer_layers = 1;
  ck.config.attention_heads = 2;
  ck.config.label_tokens = tokens;
  ck.params = init_params(ck.config, 17);
  // Awkward values must survive bit for bit.
  auto& b = ck.params.at("head.bias");
  b[0] = 0.1;
  b[1] = -std::numeric_limits<double>::denorm_min();
  b[2] = std::nextafter(1.0, 2.0);
  const auto labels = synth_embeddings(3, 4, 2);
  const auto states = make_state_embeddings_synthetic(4, 2);
  ck.buffers = ModelBuffers::from(ck.config, &labels, &states);
  return ck;
}

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("checkpoint round trip is bit exact") {
  for (auto tokens : {LabelTokens::none, LabelTokens::frozen, LabelTokens::learned}) {
    const auto ck = sample_checkpoint(tokens);
    const auto bytes = encode_checkpoint(ck);
    const auto back = decode_checkpoint(bytes);
    CHECK(back.config == ck.config);
    CHECK(bitwise_equal(back.params, ck.params));
    CHECK(same_bits(back.buffers.label_embeddings, ck.buffers.label_embeddings));
    CHECK(same_bits(back.buffers.state_table, ck.buffers.state_table));
    CHECK(encode_checkpoint(back) == bytes);
  }
  const auto path = testing::scratch("ckpt.bin");
  const auto ck = sample_checkpoint(LabelTokens::frozen);
  save_checkpoint(path, ck);
  CHECK(encode_checkpoint(load_checkpoint(path)) == encode_checkpoint(ck));
}

TEST_CASE("checkpoint decode errors") {
  const auto bytes = encode_checkpoint(sample_checkpoint(LabelTokens::frozen));
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 1)), CheckpointError);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, 20)), CheckpointError);
  CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), CheckpointError);
  CHECK_THROWS_AS(decode_checkpoint(""), CheckpointError);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad_magic), CheckpointError);
  std::string bad_version = bytes;
  bad_version[8] = 9;
  CHECK_THROWS_AS(decode_checkpoint(bad_version), CheckpointError);
  CHECK_THROWS(load_checkpoint(testing::scratch("missing.bin")));
}
