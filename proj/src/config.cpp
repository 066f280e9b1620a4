#include "transact/config.hpp"

#include <cmath>
#include <fstream>

#include "transact/container.hpp"
#include "transact/error.hpp"

namespace transact {

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::silu: return "silu";
    case Activation::relu: return "relu";
    case Activation::gelu: return "gelu";
  }
  return "silu";
}

Activation parse_activation(std::string_view s) {
  if (s == "silu") return Activation::silu;
  if (s == "relu") return Activation::relu;
  if (s == "gelu") return Activation::gelu;
  throw ConfigError("activation: unknown kind '" + std::string(s) + "' (expected silu|relu|gelu)");
}

void validate(const ModelConfig& cfg, bool allow_zero_layers) {
  auto positive = [](std::size_t v, const char* name) {
    if (v < 1) throw ConfigError(std::string(name) + ": must be a positive integer");
  };
  if (!allow_zero_layers) positive(cfg.n_layers, "n_layers");
  positive(cfg.hidden_dim, "hidden_dim");
  positive(cfg.n_heads, "n_heads");
  positive(cfg.head_dim, "head_dim");
  positive(cfg.mlp_dim, "mlp_dim");
  positive(cfg.vocab_size, "vocab_size");
  positive(cfg.max_seq_len, "max_seq_len");
  if (cfg.head_dim % 2 != 0) throw ConfigError("head_dim: must be even for rotary embedding");
  if (cfg.attn_dim() > kMaxAttnDim) throw ConfigError("n_heads: n_heads*head_dim exceeds bound");
  if (!(cfg.norm_eps > 0.0f) || !std::isfinite(cfg.norm_eps))
    throw ConfigError("norm_eps: must be a positive real");
  if (!(cfg.rope_theta > 0.0f) || !std::isfinite(cfg.rope_theta))
    throw ConfigError("rope_theta: must be a positive real");
}

nlohmann::json to_json(const ModelConfig& cfg) {
  return {
      {"n_layers", cfg.n_layers},     {"hidden_dim", cfg.hidden_dim},
      {"n_heads", cfg.n_heads},       {"head_dim", cfg.head_dim},
      {"mlp_dim", cfg.mlp_dim},       {"vocab_size", cfg.vocab_size},
      {"has_gate", cfg.has_gate},     {"activation", std::string(to_string(cfg.activation))},
      {"norm_eps", cfg.norm_eps},     {"rope_theta", cfg.rope_theta},
      {"max_seq_len", cfg.max_seq_len}, {"tied_embeddings", cfg.tied_embeddings},
  };
}

namespace {

std::size_t required_size(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw ConfigError(std::string(key) + ": missing");
  const auto& v = j.at(key);
  if (!v.is_number_integer()) throw ConfigError(std::string(key) + ": must be an integer");
  if (v.get<std::int64_t>() < 0) throw ConfigError(std::string(key) + ": must be a positive integer");
  return v.get<std::size_t>();
}

}  // namespace

ModelConfig config_from_json(const nlohmann::json& j, bool allow_zero_layers) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  ModelConfig cfg;
  cfg.n_layers = required_size(j, "n_layers");
  cfg.hidden_dim = required_size(j, "hidden_dim");
  cfg.n_heads = required_size(j, "n_heads");
  cfg.head_dim = required_size(j, "head_dim");
  cfg.mlp_dim = required_size(j, "mlp_dim");
  cfg.vocab_size = required_size(j, "vocab_size");
  if (j.contains("max_seq_len")) cfg.max_seq_len = required_size(j, "max_seq_len");
  try {
    cfg.has_gate = j.value("has_gate", true);
    cfg.activation = parse_activation(j.value("activation", std::string("silu")));
    cfg.norm_eps = j.value("norm_eps", 1e-5f);
    cfg.rope_theta = j.value("rope_theta", 10000.0f);
    cfg.tied_embeddings = j.value("tied_embeddings", false);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  validate(cfg, allow_zero_layers);
  return cfg;
}

ModelConfig load_config(const std::string& path, bool allow_zero_layers) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config: " + path);
  char magic[8] = {};
  in.read(magic, 8);
  if (in.gcount() == 8 && std::string_view(magic, 8) == kContainerMagic) {
    in.close();
    const auto header = read_container_header(path);
    if (!header.meta.contains("config")) throw FormatError(path + ": container has no config");
    return config_from_json(header.meta.at("config"), allow_zero_layers);
  }
  in.clear();
  in.seekg(0);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": invalid JSON: " + e.what());
  }
  return config_from_json(j, allow_zero_layers);
}

}  // namespace transact
