#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "transact/config.hpp"

namespace transact::analytics {

/// Parameter counts. Norm vectors are counted; biases do not exist.
struct ParamCounts {
  std::uint64_t per_mha = 0;    // 3·H·A + A·H
  std::uint64_t per_mlp = 0;    // 3·H·P gated, 2·H·P otherwise
  std::uint64_t per_layer_norms = 0;
  std::uint64_t embed = 0;      // vocab·H
  std::uint64_t lm_head = 0;    // H·vocab, 0 when tied
  std::uint64_t final_norm = 0;
  std::uint64_t total = 0;
};

ParamCounts count_params(const ModelConfig& cfg);

/// K and V values cached for `seq_len` tokens: 2·L·A_n·A_d·seq_len.
std::uint64_t kv_cache_values(const ModelConfig& cfg, std::uint64_t seq_len);
inline std::uint64_t kv_cache_bytes(const ModelConfig& cfg, std::uint64_t seq_len, std::uint64_t dtype_bytes) {
  return kv_cache_values(cfg, seq_len) * dtype_bytes;
}

/// FLOPs accounting (multiply-accumulate = 2 FLOPs).
///
/// matmul, per token per layer: 2·(3HA + AH) + 2·(2HP + PH) gated
///                              (2·(HP + PH) ungated)
/// attention, per token at position t (t+1 visible keys): 4·A·(t+1)
/// LM head, per token: 2·H·vocab
///
/// Headline figures sum these. Softmax, norms, activation/gating and residual
/// adds form a separately reported secondary term:
///   softmax 5·A_n per visible key, RMSNorm 4·H per norm (2L+1 norms),
///   activation 4·P (+1·P gating) per layer, residual 2·H per layer.
/// Embedding lookups are free.
struct FlopsEstimate {
  std::uint64_t ctx_len = 0;
  std::uint64_t n_generated = 0;
  double prefill = 0.0;           // all ctx_len positions, logits at every position
  double decode_per_token = 0.0;  // one token at position ctx_len
  double generate_total = 0.0;    // prefill + decode of tokens 2..n_generated
  double secondary_prefill = 0.0;
  double secondary_decode = 0.0;
};

FlopsEstimate flops_estimate(const ModelConfig& cfg, std::uint64_t ctx_len, std::uint64_t n_generated = 1);

struct CostReport {
  std::string name;
  ModelConfig config;
  ParamCounts params;
  std::uint64_t seq_len = 0;
  std::uint64_t kv_cache_values = 0;
  std::uint64_t kv_cache_bytes = 0;
  std::vector<FlopsEstimate> flops;  // one per requested context length

  /// Signed percentage change vs. a reference report (−50 = half the size).
  std::optional<double> params_change_pct;
  std::optional<double> kv_change_pct;
  std::vector<double> flops_prefill_change_pct;
  std::vector<double> flops_decode_change_pct;
};

CostReport cost_report(const std::string& name, const ModelConfig& cfg, std::uint64_t seq_len,
                       const std::vector<std::uint64_t>& ctx_lens, std::uint64_t dtype_bytes = 2);

/// Fills the *_change_pct fields of `report` against `ref` (same ctx list).
void compare(CostReport& report, const CostReport& ref);

double change_pct(double value, double ref);

nlohmann::json to_json(const CostReport& r);
/// CSV header and one row per (report, ctx) pair.
std::string csv_header();
std::string csv_rows(const CostReport& r);

struct GridPoint {
  std::uint64_t attn_dim = 0;  // A
  std::uint64_t mlp_dim = 0;   // P
  CostReport report;
  std::size_t group = 0;       // equal-parameter group, numbered by ascending size
};

/// Cost of every (A, P) pair on top of `base`; A values must be multiples of
/// head_dim. Points whose total parameter counts agree within `group_rel_tol`
/// (relative) share a group.
std::vector<GridPoint> sweep_grid(const ModelConfig& base, const std::vector<std::uint64_t>& attn_values,
                                  const std::vector<std::uint64_t>& mlp_values, std::uint64_t seq_len = 4096,
                                  const std::vector<std::uint64_t>& ctx_lens = {}, double group_rel_tol = 0.0);

/// Architectures of the reference and pruned models (vocab 32000, untied).
ModelConfig llama2_7b();
ModelConfig transact_2_6b();
ModelConfig transact_1_3b();
ModelConfig sheared_llama_2_7b();
ModelConfig sheared_llama_1_3b();

}  // namespace transact::analytics
