#include <chrono>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "fedlgt/camle.hpp"
#include "fedlgt/model.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace fedlgt;
using testing::bce_oracle;
using testing::logit;
using testing::uniform_tensor;

namespace {

ModelConfig small_config(LabelTokens tokens) {
  ModelConfig c;
  c.num_classes = 4;
  c.embed_dim = 8;
  c.feature_dim = 6;
  c.num_feature_tokens = 2;
  c.transformer_layers = 1;
  c.attention_heads = 2;
  c.ffn_dim = 12;
  c.label_tokens = tokens;
  return c;
}

// Every tensor drawn at random so no gradient path is trivially zero.
ParameterSet random_params(const ModelConfig& cfg, std::uint64_t seed) {
  ParameterSet p;
  std::uint64_t s = seed;
  for (auto& [name, shape] : parameter_layout(cfg)) p.set(name, uniform_tensor(shape, ++s, -0.8, 0.8));
  return p;
}

ModelBuffers random_buffers(const ModelConfig& cfg, std::uint64_t seed) {
  auto labels = synth_embeddings(cfg.num_classes, cfg.embed_dim, seed);
  auto states = make_state_embeddings_synthetic(cfg.embed_dim, seed + 1);
  return ModelBuffers::from(cfg, &labels, &states);
}

}  // namespace

TEST_CASE("model gradients pass finite differences in every label-token mode") {
  for (auto mode : {LabelTokens::frozen, LabelTokens::learned, LabelTokens::none}) {
    CAPTURE(to_string(mode));
    auto cfg = small_config(mode);
    auto params = random_params(cfg, 3);
    auto buffers = random_buffers(cfg, 5);
    Tensor x = uniform_tensor({3, cfg.feature_dim}, 7);
    Tensor y = Tensor::matrix({{1, 0, 0, 1}, {0, 1, 0, 0}, {1, 1, 0, 1}});
    LabelStateVector states = {LabelState::unknown,  LabelState::negative, LabelState::unknown,
                               LabelState::positive, LabelState::unknown,  LabelState::unknown,
                               LabelState::negative, LabelState::unknown,  LabelState::positive,
                               LabelState::unknown,  LabelState::unknown,  LabelState::unknown};
    testing::Inputs in(params.begin(), params.end());
    auto f = [&](Tape& t, const testing::Vars& v) {
      return masked_bce_loss(t, forward_states(t, v, cfg, buffers, x, states), y, states).loss;
    };
    std::string worst;
    double err = testing::gradient_error(in, f, 1e-5, &worst);
    INFO(worst << " " << err);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("parameter layout follows the config") {
  auto cfg = small_config(LabelTokens::learned);
  auto layout = parameter_layout(cfg);
  CHECK(layout.at("label_embeddings") == Shape{4, 8});
  CHECK(layout.at("head.weight") == Shape{4, 8});
  CHECK(layout.at("blocks.0.ffn.0.weight") == Shape{8, 12});
  CHECK(layout.at("backbone.0.weight") == Shape{3, 8});
  CHECK_FALSE(parameter_layout(small_config(LabelTokens::frozen)).count("label_embeddings"));
  cfg.backbone = Backbone::tiny_patch_encoder;
  CHECK(parameter_layout(cfg).count("backbone.1.weight"));
  cfg.attention_heads = 3;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("init is deterministic with zero biases") {
  auto cfg = small_config(LabelTokens::frozen);
  auto a = init_params(cfg, 11), b = init_params(cfg, 11), c = init_params(cfg, 12);
  CHECK(bitwise_equal(a, b));
  CHECK_FALSE(bitwise_equal(a, c));
  for (auto& [name, t] : a) {
    if (name.ends_with(".bias") || name.ends_with(".shift")) CHECK(t == Tensor::zeros(t.shape()));
    if (name.ends_with(".gain")) CHECK(t == Tensor::full(t.shape(), 1.0));
  }
}

TEST_CASE("zero head predicts one half everywhere") {
  for (auto mode : {LabelTokens::frozen, LabelTokens::learned, LabelTokens::none}) {
    auto cfg = small_config(mode);
    auto p = init_params(cfg, 1);
    p.set("head.weight", Tensor::zeros({4, 8}));
    auto probs = predict(p, cfg, random_buffers(cfg, 2), uniform_tensor({5, 6}, 3));
    for (double v : probs.values()) CHECK(v == 0.5);
  }
}

TEST_CASE("predict equals sigmoid of forward with all-unknown composition") {
  auto cfg = small_config(LabelTokens::frozen);
  auto p = random_params(cfg, 4);
  auto labels = synth_embeddings(4, 8, 5);
  auto states = make_state_embeddings_synthetic(8, 6);
  auto buffers = ModelBuffers::from(cfg, &labels, &states);
  Tensor x = uniform_tensor({3, 6}, 7);
  auto composed = compose_masked_embeddings(labels, inference_mask(4), states);
  Tensor logits = forward(p, cfg, x, composed.rows);
  Tensor probs = predict(p, cfg, buffers, x);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    CHECK(probs[i] == doctest::Approx(1.0 / (1.0 + std::exp(-logits[i]))).epsilon(1e-14));
    CHECK(probs[i] > 0.0);
    CHECK(probs[i] < 1.0);
  }
  CHECK_THROWS(forward(p, cfg, x, synth_embeddings(3, 8, 1).rows));
}

TEST_CASE("a sample's logits do not depend on its batch") {
  auto cfg = small_config(LabelTokens::frozen);
  auto p = random_params(cfg, 8);
  auto buffers = random_buffers(cfg, 9);
  Tensor batch = uniform_tensor({4, 6}, 10);
  Tensor one({1, 6}, std::vector<double>(batch.values().begin() + 12, batch.values().begin() + 18));
  Tensor all = predict(p, cfg, buffers, batch);
  Tensor single = predict(p, cfg, buffers, one);
  for (std::size_t c = 0; c < 4; ++c) CHECK(single[c] == all[2 * 4 + c]);
}

TEST_CASE("without positional encoding, feature-token order does not matter") {
  auto cfg = small_config(LabelTokens::frozen);
  cfg.feature_dim = 9;
  cfg.num_feature_tokens = 3;
  cfg.feature_positional_encoding = false;
  auto p = random_params(cfg, 12);
  auto buffers = random_buffers(cfg, 13);
  Tensor x = uniform_tensor({2, 9}, 14);
  Tensor perm = x;
  const std::size_t order[3] = {2, 0, 1};
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t j = 0; j < 3; ++j) perm[b * 9 + t * 3 + j] = x[b * 9 + order[t] * 3 + j];
  Tensor a = predict(p, cfg, buffers, x), b = predict(p, cfg, buffers, perm);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));

  cfg.label_tokens = LabelTokens::none;
  auto q = random_params(cfg, 15);
  a = predict(q, cfg, {}, x);
  b = predict(q, cfg, {}, perm);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

TEST_CASE("raising one head bias raises only that class") {
  auto cfg = small_config(LabelTokens::frozen);
  auto p = random_params(cfg, 16);
  auto buffers = random_buffers(cfg, 17);
  Tensor x = uniform_tensor({3, 6}, 18);
  Tensor before = predict(p, cfg, buffers, x);
  Tensor bias = p.at("head.bias");
  bias[1] += 0.3;
  p.set("head.bias", bias);
  Tensor after = predict(p, cfg, buffers, x);
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t c = 0; c < 4; ++c) {
      if (c == 1) CHECK(after[b * 4 + c] > before[b * 4 + c]);
      else CHECK(after[b * 4 + c] == before[b * 4 + c]);
    }
}

TEST_CASE("masked loss examples") {
  // one unknown class at p = 0.5
  LabelStateVector s2 = {LabelState::unknown, LabelState::positive};
  auto r = masked_bce_loss(Tensor::matrix({{0.0, 3.0}}), Tensor::matrix({{1, 1}}), s2);
  CHECK(r.value == doctest::Approx(0.693147).epsilon(1e-6));
  CHECK(r.value == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  LabelStateVector s3(3, LabelState::unknown);
  Tensor z = Tensor::matrix({{logit(0.9), logit(0.1), logit(0.8)}});
  auto full = masked_bce_loss(z, Tensor::matrix({{1, 0, 1}}), s3);
  const double oracle = bce_oracle(0.9, 1) + bce_oracle(0.1, 0) + bce_oracle(0.8, 1);
  CHECK(std::abs(full.value - oracle) <= 1e-12);
  CHECK(full.value == doctest::Approx(0.433780).epsilon(1e-3));

  LabelStateVector known = {LabelState::positive, LabelState::negative, LabelState::positive};
  auto none = masked_bce_loss(z, Tensor::matrix({{1, 0, 1}}), known);
  CHECK(none.no_signal);
  CHECK(none.value == 0.0);
}

TEST_CASE("masked loss normalizes by samples with an unknown class") {
  Tensor z = uniform_tensor({3, 2}, 19, -2, 2);
  Tensor y = Tensor::matrix({{1, 0}, {0, 1}, {1, 1}});
  LabelStateVector s = {LabelState::unknown, LabelState::negative, LabelState::positive, LabelState::positive,
                        LabelState::unknown, LabelState::unknown};
  auto p = [&](std::size_t i) { return 1.0 / (1.0 + std::exp(-z[i])); };
  double oracle = (bce_oracle(p(0), 1) + bce_oracle(p(4), 1) + bce_oracle(p(5), 1)) / 2.0;
  CHECK(masked_bce_loss(z, y, s).value == doctest::Approx(oracle).epsilon(1e-13));
}

TEST_CASE("known-state logits receive exactly zero gradient") {
  Rng rng(20);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor z = uniform_tensor({4, 5}, 100 + trial, -4, 4);
    Tensor y(z.shape());
    LabelStateVector s(20);
    for (std::size_t i = 0; i < 20; ++i) {
      y[i] = uniform01(rng) < 0.4 ? 1.0 : 0.0;
      double u = uniform01(rng);
      s[i] = u < 0.4 ? LabelState::unknown : (y[i] == 1.0 ? LabelState::positive : LabelState::negative);
    }
    Tape tape;
    Var zl = tape.parameter("z", z);
    auto loss = masked_bce_loss(tape, zl, y, s);
    if (loss.no_signal) continue;
    auto g = tape.gradients(loss.loss).at("z");
    for (std::size_t i = 0; i < 20; ++i)
      if (s[i] != LabelState::unknown) CHECK(g[i] == 0.0);
  }
}

TEST_CASE("forward rejects mismatched embeddings") {
  auto cfg = small_config(LabelTokens::frozen);
  auto wrong = synth_embeddings(5, 8, 1);
  auto states = make_state_embeddings_synthetic(8, 2);
  CHECK_THROWS_WITH(ModelBuffers::from(cfg, &wrong, &states), doctest::Contains("label embeddings"));
  auto narrow = make_state_embeddings_synthetic(6, 2);
  auto ok = synth_embeddings(4, 8, 1);
  CHECK_THROWS(ModelBuffers::from(cfg, &ok, &narrow));
}
