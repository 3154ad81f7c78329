#pragma once

#include <cstddef>
#include <span>

#include "fedlgt/autodiff.hpp"
#include "fedlgt/tensor.hpp"

// Differentiable primitives recorded on a Tape. Every op checks shapes and
// throws ShapeError naming the op and the offending shapes. Reductions sum
// left to right so results are bitwise reproducible.
namespace fedlgt::ops {

// [..., k] x [k, m] -> [..., m]
Var matmul(Tape& tape, Var a, Var b);
// [n, k] x [m, k]^T -> [n, m]
Var matmul_bt(Tape& tape, Var a, Var b);

Var add(Tape& tape, Var a, Var b);
Var mul(Tape& tape, Var a, Var b);
Var scale(Tape& tape, Var x, double factor);
// Adds `b` to every trailing block of `x`; b's shape must equal x's trailing dims.
Var add_broadcast(Tape& tape, Var x, Var b);

Var relu(Tape& tape, Var x);
Var sigmoid(Tape& tape, Var x);
// Softmax over the last axis.
Var softmax(Tape& tape, Var x);
// Normalizes the last axis, then applies gain and shift.
Var layer_norm(Tape& tape, Var x, Var gamma, Var beta, double eps = 1e-5);

// Multi-head scaled dot-product self-attention over [batch, tokens, width]
// projections. Width must divide evenly into `heads`.
Var attention(Tape& tape, Var q, Var k, Var v, std::size_t heads);

// [B, Ta, d] ++ [B, Tb, d] along the token axis.
Var concat_tokens(Tape& tape, Var a, Var b);
Var slice_tokens(Tape& tape, Var x, std::size_t start, std::size_t count);
// Mean over tokens [start, start+count) of [B, T, d] -> [B, d].
Var mean_tokens(Tape& tape, Var x, std::size_t start, std::size_t count);

// Gathers rows of `table` [N, d]; result shape is `prefix` + [d].
Var embedding_lookup(Tape& tape, Var table, std::span<const std::size_t> indices, Shape prefix);
// [C, d] -> [B, C, d] by repetition.
Var broadcast_batch(Tape& tape, Var x, std::size_t batch);
// out[b, c] = <h[b, c, :], w[c, :]>.
Var classwise_dot(Tape& tape, Var h, Var w);

Var reshape(Tape& tape, Var x, Shape shape);
Var sum(Tape& tape, Var x);
Var mean(Tape& tape, Var x);

// Sum over mask=1 entries of the binary cross-entropy of sigmoid(logits)
// against targets, divided by `normalizer`. Masked-out entries receive an
// exactly zero gradient.
Var masked_bce_with_logits(Tape& tape, Var logits, const Tensor& targets, const Tensor& mask,
                           double normalizer);

}  // namespace fedlgt::ops
