#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fedlgt/autodiff.hpp"
#include "fedlgt/label_embeddings.hpp"
#include "fedlgt/label_state.hpp"
#include "fedlgt/parameter_set.hpp"
#include "fedlgt/tensor.hpp"

namespace fedlgt {

enum class Backbone { identity_features, tiny_patch_encoder };

// Where label tokens come from. `none` runs the transformer over feature
// tokens only and classifies from their mean.
enum class LabelTokens { none, frozen, learned };

std::string to_string(Backbone b);
std::string to_string(LabelTokens l);
Backbone parse_backbone(std::string_view s);
LabelTokens parse_label_tokens(std::string_view s);

struct ModelConfig {
  std::size_t num_classes = 16;
  std::size_t embed_dim = 64;
  std::size_t feature_dim = 32;        // length of each input feature vector
  std::size_t num_feature_tokens = 4;  // feature vector is split into this many tokens
  std::size_t transformer_layers = 2;
  std::size_t attention_heads = 4;
  std::size_t ffn_dim = 0;  // 0 means 2 * embed_dim
  Backbone backbone = Backbone::identity_features;
  LabelTokens label_tokens = LabelTokens::frozen;
  bool feature_positional_encoding = true;

  void validate() const;
  std::size_t token_width() const { return feature_dim / num_feature_tokens; }
  std::size_t hidden_dim() const { return ffn_dim ? ffn_dim : 2 * embed_dim; }

  std::map<std::string, std::string> to_kv() const;
  static ModelConfig from_kv(const std::map<std::string, std::string>& kv);
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Non-trainable tensors the forward pass needs. `label_embeddings` is set only
// for LabelTokens::frozen; `state_table` is [3, d] in state_row() order and is
// empty for LabelTokens::none.
struct ModelBuffers {
  Tensor label_embeddings;
  Tensor state_table;

  static ModelBuffers from(const ModelConfig& cfg, const EmbeddingMatrix* labels,
                           const StateEmbeddings* states);
  friend bool operator==(const ModelBuffers&, const ModelBuffers&) = default;
};

// Deterministic fan-in scaled uniform init; biases and layer-norm shifts zero,
// layer-norm gains one.
ParameterSet init_params(const ModelConfig& cfg, std::uint64_t seed);

// Parameter names and shapes implied by a config, in name order.
std::map<std::string, Shape> parameter_layout(const ModelConfig& cfg);

using ParamVars = std::map<std::string, Var>;
ParamVars bind_parameters(Tape& tape, const ParameterSet& params);

// Logits [B, C] given composed label tokens [B, C, d] (invalid Var when
// cfg.label_tokens == none). `features` is [B, feature_dim].
Var forward_tokens(Tape& tape, const ParamVars& vars, const ModelConfig& cfg, const Tensor& features,
                   Var label_tokens);

// Composes label tokens from the buffers or learned parameters plus the state
// embeddings of `states` (B * C entries, row-major), then runs forward_tokens.
Var forward_states(Tape& tape, const ParamVars& vars, const ModelConfig& cfg, const ModelBuffers& buffers,
                   const Tensor& features, std::span<const LabelState> states);

// Evaluates logits for already composed masked label embeddings, either one
// [C, d] matrix shared by the batch or one per sample as [B, C, d].
Tensor forward(const ParameterSet& params, const ModelConfig& cfg, const Tensor& features,
               const Tensor& masked_label_embeddings);

// sigmoid(logits) with every state unknown.
Tensor predict(const ParameterSet& params, const ModelConfig& cfg, const ModelBuffers& buffers,
               const Tensor& features);

struct MaskedLoss {
  Var loss;                    // scalar node; constant 0 when no_signal
  bool no_signal = false;      // every state in the batch was known
  std::size_t contributing = 0;  // samples with at least one unknown state
};

// Mean over samples that have at least one unknown class of the BCE summed
// over that sample's unknown classes. Known classes contribute nothing.
MaskedLoss masked_bce_loss(Tape& tape, Var logits, const Tensor& targets, std::span<const LabelState> states);

struct MaskedLossValue {
  double value = 0.0;
  bool no_signal = false;
};
MaskedLossValue masked_bce_loss(const Tensor& logits, const Tensor& targets, std::span<const LabelState> states);

}  // namespace fedlgt
