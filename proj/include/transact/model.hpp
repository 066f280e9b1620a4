#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "transact/config.hpp"
#include "transact/tensor.hpp"

namespace transact {

/// Projection matrices of one decoder layer. Shapes use the x·W convention:
/// W_Q/W_K/W_V are H×A, W_O is A×H, W_G/W_U are H×P, W_D is P×H.
struct LayerWeights {
  Matrix wq, wk, wv, wo;
  Matrix wg;  // empty when the config has no gate
  Matrix wu, wd;
  std::vector<float> attn_norm;
  std::vector<float> mlp_norm;

  friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

struct ModelWeights {
  ModelConfig config;
  std::vector<LayerWeights> layers;
  Matrix embed;    // vocab × H
  std::vector<float> final_norm;
  Matrix lm_head;  // H × vocab; empty when tied (embedᵀ is used)

  /// True for a header-only model loaded from a config-only file.
  [[nodiscard]] bool config_only() const { return layers.empty() && embed.empty(); }

  friend bool operator==(const ModelWeights&, const ModelWeights&) = default;
};

/// Seeded random weights: Gaussian projections scaled by 1/√fan_in, unit norms.
ModelWeights random_model(const ModelConfig& cfg, std::uint64_t seed, float scale = 1.0f);

/// Throws ConfigError / NumericError if shapes disagree with the config or a
/// weight is non-finite.
void validate(const ModelWeights& model);

/// Number of stored scalars, the element count a saved file carries.
std::size_t element_count(const ModelWeights& model);

}  // namespace transact
