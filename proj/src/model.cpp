#include "fedlgt/model.hpp"

#include <cmath>
#include <stdexcept>

#include "fedlgt/ops.hpp"
#include "fedlgt/util.hpp"

namespace fedlgt {
namespace {

std::string block_name(std::size_t i, const char* leaf) {
  return "blocks." + std::to_string(i) + "." + leaf;
}

std::size_t kv_size(const std::map<std::string, std::string>& kv, const char* key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw std::invalid_argument(std::string("model config: missing '") + key + "'");
  const long long v = parse_int(it->second);
  if (v < 0) throw std::invalid_argument(std::string("model config: '") + key + "' must be >= 0");
  return static_cast<std::size_t>(v);
}

// Parameters in creation order with their fan-in; fan_in == 0 marks zeros and
// fan_in == SIZE_MAX marks ones.
struct ParamSpec {
  std::string name;
  Shape shape;
  std::size_t fan_in;
};
constexpr std::size_t kOnes = static_cast<std::size_t>(-1);

std::vector<ParamSpec> param_specs(const ModelConfig& cfg) {
  const std::size_t d = cfg.embed_dim, w = cfg.token_width(), h = cfg.hidden_dim();
  const std::size_t C = cfg.num_classes;
  std::vector<ParamSpec> s;
  s.push_back({"backbone.0.weight", {w, d}, w});
  s.push_back({"backbone.0.bias", {d}, 0});
  if (cfg.backbone == Backbone::tiny_patch_encoder) {
    s.push_back({"backbone.1.weight", {d, d}, d});
    s.push_back({"backbone.1.bias", {d}, 0});
  }
  if (cfg.feature_positional_encoding) s.push_back({"pos_embedding", {cfg.num_feature_tokens, d}, d});
  if (cfg.label_tokens == LabelTokens::learned) s.push_back({"label_embeddings", {C, d}, d});
  for (std::size_t i = 0; i < cfg.transformer_layers; ++i) {
    s.push_back({block_name(i, "ln1.gain"), {d}, kOnes});
    s.push_back({block_name(i, "ln1.shift"), {d}, 0});
    for (const char* p : {"attn.q", "attn.k", "attn.v", "attn.out"}) {
      s.push_back({block_name(i, p) + ".weight", {d, d}, d});
      s.push_back({block_name(i, p) + ".bias", {d}, 0});
    }
    s.push_back({block_name(i, "ln2.gain"), {d}, kOnes});
    s.push_back({block_name(i, "ln2.shift"), {d}, 0});
    s.push_back({block_name(i, "ffn.0.weight"), {d, h}, d});
    s.push_back({block_name(i, "ffn.0.bias"), {h}, 0});
    s.push_back({block_name(i, "ffn.1.weight"), {h, d}, h});
    s.push_back({block_name(i, "ffn.1.bias"), {d}, 0});
  }
  s.push_back({"final_ln.gain", {d}, kOnes});
  s.push_back({"final_ln.shift", {d}, 0});
  // zero head: every class starts at p = 0.5
  s.push_back({"head.weight", {C, d}, 0});
  s.push_back({"head.bias", {C}, 0});
  return s;
}

Var linear(Tape& tape, const ParamVars& v, const std::string& prefix, Var x) {
  return ops::add_broadcast(tape, ops::matmul(tape, x, v.at(prefix + ".weight")), v.at(prefix + ".bias"));
}

}  // namespace

std::string to_string(Backbone b) {
  return b == Backbone::identity_features ? "identity-features" : "tiny-patch-encoder";
}

std::string to_string(LabelTokens l) {
  switch (l) {
    case LabelTokens::none: return "none";
    case LabelTokens::frozen: return "frozen";
    case LabelTokens::learned: return "learned";
  }
  return "?";
}

Backbone parse_backbone(std::string_view s) {
  if (s == "identity-features") return Backbone::identity_features;
  if (s == "tiny-patch-encoder") return Backbone::tiny_patch_encoder;
  throw std::invalid_argument("unknown backbone '" + std::string(s) + "'");
}

LabelTokens parse_label_tokens(std::string_view s) {
  if (s == "none") return LabelTokens::none;
  if (s == "frozen") return LabelTokens::frozen;
  if (s == "learned") return LabelTokens::learned;
  throw std::invalid_argument("unknown label token source '" + std::string(s) + "'");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
  if (num_classes < 1) fail("num_classes must be >= 1");
  if (embed_dim < 1) fail("embed_dim must be >= 1");
  if (attention_heads < 1 || embed_dim % attention_heads != 0) {
    fail("embed_dim " + std::to_string(embed_dim) + " is not divisible by " +
         std::to_string(attention_heads) + " heads");
  }
  if (num_feature_tokens < 1) fail("num_feature_tokens must be >= 1");
  if (feature_dim < 1 || feature_dim % num_feature_tokens != 0) {
    fail("feature_dim " + std::to_string(feature_dim) + " is not divisible into " +
         std::to_string(num_feature_tokens) + " tokens");
  }
}

std::map<std::string, std::string> ModelConfig::to_kv() const {
  return {
      {"num_classes", std::to_string(num_classes)},
      {"embed_dim", std::to_string(embed_dim)},
      {"feature_dim", std::to_string(feature_dim)},
      {"num_feature_tokens", std::to_string(num_feature_tokens)},
      {"transformer_layers", std::to_string(transformer_layers)},
      {"attention_heads", std::to_string(attention_heads)},
      {"ffn_dim", std::to_string(ffn_dim)},
      {"backbone", to_string(backbone)},
      {"label_tokens", to_string(label_tokens)},
      {"feature_positional_encoding", feature_positional_encoding ? "true" : "false"},
  };
}

ModelConfig ModelConfig::from_kv(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  c.num_classes = kv_size(kv, "num_classes");
  c.embed_dim = kv_size(kv, "embed_dim");
  c.feature_dim = kv_size(kv, "feature_dim");
  c.num_feature_tokens = kv_size(kv, "num_feature_tokens");
  c.transformer_layers = kv_size(kv, "transformer_layers");
  c.attention_heads = kv_size(kv, "attention_heads");
  c.ffn_dim = kv_size(kv, "ffn_dim");
  c.backbone = parse_backbone(kv.at("backbone"));
  c.label_tokens = parse_label_tokens(kv.at("label_tokens"));
  const auto& pe = kv.at("feature_positional_encoding");
  if (pe != "true" && pe != "false") throw std::invalid_argument("model config: bad boolean '" + pe + "'");
  c.feature_positional_encoding = pe == "true";
  c.validate();
  return c;
}

ModelBuffers ModelBuffers::from(const ModelConfig& cfg, const EmbeddingMatrix* labels,
                                const StateEmbeddings* states) {
  ModelBuffers b;
  if (cfg.label_tokens == LabelTokens::none) return b;
  if (!states) throw std::invalid_argument("model buffers: state embeddings required for label tokens");
  if (states->dim() != cfg.embed_dim) {
    throw std::invalid_argument("model buffers: state width " + std::to_string(states->dim()) +
                                " vs embed_dim " + std::to_string(cfg.embed_dim));
  }
  b.state_table = states->table();
  if (cfg.label_tokens == LabelTokens::frozen) {
    if (!labels) throw std::invalid_argument("model buffers: frozen label embeddings required");
    if (labels->num_classes() != cfg.num_classes || labels->dim() != cfg.embed_dim) {
      throw std::invalid_argument("model buffers: label embeddings are " + labels->rows.shape_str() +
                                  ", model expects [" + std::to_string(cfg.num_classes) + ", " +
                                  std::to_string(cfg.embed_dim) + "]");
    }
    b.label_embeddings = labels->rows;
  }
  return b;
}

std::map<std::string, Shape> parameter_layout(const ModelConfig& cfg) {
  cfg.validate();
  std::map<std::string, Shape> out;
  for (auto& s : param_specs(cfg)) out.emplace(s.name, s.shape);
  return out;
}

ParameterSet init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(mix_seed(seed, {0x696e6974}));
  ParameterSet params;
  for (auto& s : param_specs(cfg)) {
    Tensor t(s.shape);
    if (s.fan_in == kOnes) {
      t = Tensor::full(s.shape, 1.0);
    } else if (s.fan_in > 0) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(s.fan_in));
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = bound * (2.0 * uniform01(rng) - 1.0);
    }
    params.set(s.name, std::move(t));
  }
  return params;
}

ParamVars bind_parameters(Tape& tape, const ParameterSet& params) {
  ParamVars vars;
  for (const auto& [name, t] : params) vars.emplace(name, tape.parameter(name, t));
  return vars;
}

Var forward_tokens(Tape& tape, const ParamVars& v, const ModelConfig& cfg, const Tensor& features,
                   Var label_tokens) {
  if (features.rank() != 2 || features.dim(1) != cfg.feature_dim) {
    throw ShapeError("forward: features " + features.shape_str() + " do not match feature_dim " +
                     std::to_string(cfg.feature_dim));
  }
  const std::size_t B = features.dim(0), Tf = cfg.num_feature_tokens, C = cfg.num_classes,
                    d = cfg.embed_dim;
  Var x = tape.constant(features.reshaped({B, Tf, cfg.token_width()}));
  x = linear(tape, v, "backbone.0", x);
  if (cfg.backbone == Backbone::tiny_patch_encoder) {
    x = linear(tape, v, "backbone.1", ops::relu(tape, x));
  }
  if (cfg.feature_positional_encoding) x = ops::add_broadcast(tape, x, v.at("pos_embedding"));

  const bool with_labels = cfg.label_tokens != LabelTokens::none;
  if (with_labels) {
    if (!label_tokens.valid()) throw std::invalid_argument("forward: label tokens required by config");
    const Shape want{B, C, d};
    if (tape.value(label_tokens).shape() != want) {
      throw ShapeError("forward: label tokens " + tape.value(label_tokens).shape_str() + " do not match " +
                       shape_to_string(want));
    }
    x = ops::concat_tokens(tape, x, label_tokens);
  }

  for (std::size_t i = 0; i < cfg.transformer_layers; ++i) {
    const std::string p = "blocks." + std::to_string(i) + ".";
    Var h = ops::layer_norm(tape, x, v.at(p + "ln1.gain"), v.at(p + "ln1.shift"));
    Var q = linear(tape, v, p + "attn.q", h);
    Var k = linear(tape, v, p + "attn.k", h);
    Var val = linear(tape, v, p + "attn.v", h);
    Var a = ops::attention(tape, q, k, val, cfg.attention_heads);
    x = ops::add(tape, x, linear(tape, v, p + "attn.out", a));
    Var h2 = ops::layer_norm(tape, x, v.at(p + "ln2.gain"), v.at(p + "ln2.shift"));
    Var f = ops::relu(tape, linear(tape, v, p + "ffn.0", h2));
    x = ops::add(tape, x, linear(tape, v, p + "ffn.1", f));
  }
  x = ops::layer_norm(tape, x, v.at("final_ln.gain"), v.at("final_ln.shift"));

  Var logits;
  if (with_labels) {
    Var out = ops::slice_tokens(tape, x, Tf, C);
    logits = ops::classwise_dot(tape, out, v.at("head.weight"));
  } else {
    Var pooled = ops::mean_tokens(tape, x, 0, Tf);
    logits = ops::matmul_bt(tape, pooled, v.at("head.weight"));
  }
  return ops::add_broadcast(tape, logits, v.at("head.bias"));
}

Var forward_states(Tape& tape, const ParamVars& vars, const ModelConfig& cfg, const ModelBuffers& buffers,
                   const Tensor& features, std::span<const LabelState> states) {
  if (cfg.label_tokens == LabelTokens::none) return forward_tokens(tape, vars, cfg, features, Var{});
  const std::size_t B = features.rank() == 2 ? features.dim(0) : 0;
  const std::size_t C = cfg.num_classes;
  if (states.size() != B * C) {
    throw std::invalid_argument("forward: " + std::to_string(states.size()) + " states for " +
                                std::to_string(B) + " samples of " + std::to_string(C) + " classes");
  }
  if (buffers.state_table.shape() != Shape{3, cfg.embed_dim}) {
    throw ShapeError("forward: state table " + buffers.state_table.shape_str() + " does not match embed_dim");
  }
  std::vector<std::size_t> rows(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) rows[i] = state_row(states[i]);
  Var state_tok = ops::embedding_lookup(tape, tape.constant(buffers.state_table), rows, {B, C});
  Var labels;
  if (cfg.label_tokens == LabelTokens::learned) {
    labels = ops::broadcast_batch(tape, vars.at("label_embeddings"), B);
  } else {
    if (buffers.label_embeddings.shape() != Shape{C, cfg.embed_dim}) {
      throw ShapeError("forward: label embeddings " + buffers.label_embeddings.shape_str() +
                       " do not match C=" + std::to_string(C) + ", d=" + std::to_string(cfg.embed_dim));
    }
    labels = ops::broadcast_batch(tape, tape.constant(buffers.label_embeddings), B);
  }
  return forward_tokens(tape, vars, cfg, features, ops::add(tape, labels, state_tok));
}

Tensor forward(const ParameterSet& params, const ModelConfig& cfg, const Tensor& features,
               const Tensor& masked_label_embeddings) {
  Tape tape;
  ParamVars vars = bind_parameters(tape, params);
  Var tokens;
  if (cfg.label_tokens != LabelTokens::none) {
    const Tensor& m = masked_label_embeddings;
    if (m.rank() == 2) {
      if (m.dim(0) != cfg.num_classes) {
        throw std::invalid_argument("forward: " + std::to_string(m.dim(0)) + " label rows for C=" +
                                    std::to_string(cfg.num_classes));
      }
      tokens = ops::broadcast_batch(tape, tape.constant(m), features.rank() == 2 ? features.dim(0) : 0);
    } else {
      if (m.rank() == 3 && m.dim(1) != cfg.num_classes) {
        throw std::invalid_argument("forward: " + std::to_string(m.dim(1)) + " label rows for C=" +
                                    std::to_string(cfg.num_classes));
      }
      tokens = tape.constant(m);
    }
  }
  return tape.value(forward_tokens(tape, vars, cfg, features, tokens));
}

Tensor predict(const ParameterSet& params, const ModelConfig& cfg, const ModelBuffers& buffers,
               const Tensor& features) {
  Tape tape;
  ParamVars vars = bind_parameters(tape, params);
  const std::size_t B = features.rank() == 2 ? features.dim(0) : 0;
  const LabelStateVector unknown(B * cfg.num_classes, LabelState::unknown);
  Var logits = forward_states(tape, vars, cfg, buffers, features, unknown);
  return tape.value(ops::sigmoid(tape, logits));
}

MaskedLoss masked_bce_loss(Tape& tape, Var logits, const Tensor& targets, std::span<const LabelState> states) {
  const Tensor& Z = tape.value(logits);
  const Tensor z2 = Z.rank() == 1 ? Z.reshaped({1, Z.size()}) : Z;
  if (z2.rank() != 2 || targets.size() != Z.size() || states.size() != Z.size()) {
    throw ShapeError("masked_bce_loss: logits " + Z.shape_str() + ", targets " + targets.shape_str() +
                     ", " + std::to_string(states.size()) + " states");
  }
  const std::size_t B = z2.dim(0), C = z2.dim(1);
  Tensor mask(Z.shape());
  std::size_t contributing = 0;
  for (std::size_t b = 0; b < B; ++b) {
    bool any = false;
    for (std::size_t c = 0; c < C; ++c) {
      if (states[b * C + c] == LabelState::unknown) {
        mask[b * C + c] = 1.0;
        any = true;
      }
    }
    if (any) ++contributing;
  }
  MaskedLoss out;
  out.contributing = contributing;
  if (contributing == 0) {
    out.no_signal = true;
    out.loss = tape.constant(Tensor::scalar(0.0));
    return out;
  }
  out.loss = ops::masked_bce_with_logits(tape, logits, targets.reshaped(Z.shape()), mask,
                                         static_cast<double>(contributing));
  return out;
}

MaskedLossValue masked_bce_loss(const Tensor& logits, const Tensor& targets, std::span<const LabelState> states) {
  Tape tape;
  auto r = masked_bce_loss(tape, tape.constant(logits), targets, states);
  return {tape.value(r.loss).item(), r.no_signal};
}

}  // namespace fedlgt
