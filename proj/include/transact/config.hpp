#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include <json.hpp>

namespace transact {

enum class Activation { silu, relu, gelu };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view s);

/// Architectural shape of a decoder-only transformer.
struct ModelConfig {
  std::size_t n_layers = 0;    // L
  std::size_t hidden_dim = 0;  // H
  std::size_t n_heads = 0;     // A_n
  std::size_t head_dim = 0;    // A_d
  std::size_t mlp_dim = 0;     // P
  std::size_t vocab_size = 0;
  bool has_gate = true;
  Activation activation = Activation::silu;
  float norm_eps = 1e-5f;
  float rope_theta = 10000.0f;
  std::size_t max_seq_len = 2048;
  bool tied_embeddings = false;

  /// A = A_n·A_d, the transitional width of the attention block.
  [[nodiscard]] std::size_t attn_dim() const { return n_heads * head_dim; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Upper bound on A_n·A_d accepted by validation.
inline constexpr std::size_t kMaxAttnDim = std::size_t{1} << 20;

/// Throws ConfigError naming the first field that violates an invariant.
/// `allow_zero_layers` admits the degenerate L = 0 shape used by analytics.
void validate(const ModelConfig& cfg, bool allow_zero_layers = false);

nlohmann::json to_json(const ModelConfig& cfg);
/// Parses and validates. Missing optional fields take their defaults; missing
/// shape fields raise ConfigError.
ModelConfig config_from_json(const nlohmann::json& j, bool allow_zero_layers = false);

/// Reads a JSON config file, or the header of a TACTMDL1 container.
ModelConfig load_config(const std::string& path, bool allow_zero_layers = false);

}  // namespace transact
