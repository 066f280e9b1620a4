#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "transact/model.hpp"

namespace transact {

using Token = std::uint32_t;

/// Streaming consumer of transitional activations. Called once per layer with
/// act_A [T × A_n·A_d] (pre-W_O) and act_P [T × P] (pre-W_D). The references
/// are only valid for the duration of the call.
using TapSink = std::function<void(std::size_t layer, const Matrix& act_attn, const Matrix& act_mlp)>;

/// Which transitional activations to hand out. The default streams nothing
/// and materializes nothing.
struct TapSelection {
  TapSink sink;
  bool materialize_attn = false;
  bool materialize_mlp = false;
  bool attention_probs = false;
  std::vector<std::size_t> layers;  // empty selects every layer

  [[nodiscard]] bool selects(std::size_t layer) const;
};

/// Zeroes transitional channels before their contracting projection: heads
/// with keep_heads[l][k] == false have their act_A block zeroed, channels with
/// keep_channels[l][i] == false their act_P entry. Empty inner vectors keep
/// everything.
struct ActivationMask {
  std::vector<std::vector<bool>> keep_heads;
  std::vector<std::vector<bool>> keep_channels;
};

struct ForwardOptions {
  TapSelection taps;
  const ActivationMask* mask = nullptr;
  bool logits = true;
};

struct ForwardTrace {
  Matrix logits;                 // [T × vocab], empty when not requested
  std::vector<Matrix> act_attn;  // per layer; empty matrices for unselected layers
  std::vector<Matrix> act_mlp;
  std::vector<std::vector<float>> attn_probs;  // per layer, A_n·T·T
};

/// Deterministic forward pass with RMSNorm, RoPE, causal softmax attention
/// and a (gated) MLP. Throws InputError for empty, out-of-vocab or too-long
/// input, ConfigError for a config-only model, and NumericError naming the
/// layer when a non-finite value appears.
ForwardTrace forward(const ModelWeights& model, std::span<const Token> tokens, const ForwardOptions& opts = {});

}  // namespace transact
