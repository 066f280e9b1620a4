#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "transact/forward.hpp"

namespace transact {

/// Exact-length token windows drawn from a corpus stream.
struct CalibSet {
  std::vector<std::vector<Token>> samples;
  std::size_t seq_len = 0;
  std::uint64_t seed = 0;
};

inline constexpr std::size_t kDefaultCalibSamples = 128;

/// Draws `n_samples` windows of `seq_len` tokens at uniformly random offsets
/// (mt19937_64 seeded with `seed`). No padding: the corpus must hold at least
/// one full window.
CalibSet draw_calib_set(std::span<const Token> corpus, std::size_t n_samples, std::size_t seq_len,
                        std::uint64_t seed);

/// Streaming statistics of one layer's transitional activations. Head
/// channels are flattened as k·A_d + i.
struct LayerStats {
  std::vector<double> head_sumsq;   // Σ_tokens act_A²
  std::vector<double> head_maxabs;  // max_tokens |act_A|
  std::vector<double> mlp_sumsq;    // Σ_tokens act_P²
  std::vector<double> mlp_maxabs;   // max_tokens |act_P|

  friend bool operator==(const LayerStats&, const LayerStats&) = default;
};

struct CalibStats {
  std::size_t n_heads = 0;
  std::size_t head_dim = 0;
  std::size_t mlp_dim = 0;
  std::vector<LayerStats> layers;
  std::uint64_t token_count = 0;

  /// Zeroed accumulators shaped for `cfg`.
  static CalibStats zeros(const ModelConfig& cfg);
  /// True for the merge identity (no layers, no tokens).
  [[nodiscard]] bool empty() const { return layers.empty() && token_count == 0; }

  /// Folds one layer's activations ([T × A], [T × P]) into layer `l`. Does
  /// not touch token_count.
  void fold(std::size_t l, const Matrix& act_attn, const Matrix& act_mlp);

  friend bool operator==(const CalibStats&, const CalibStats&) = default;
};

/// Field-wise sum of the sum-of-squares, max of the max fields, and sum of
/// token counts. An empty operand is the identity. Shape mismatch throws
/// ConfigError.
CalibStats merge_stats(const CalibStats& a, const CalibStats& b);

/// Per-layer Gram matrices XᵀX of the transitional activations (row-major,
/// A×A and P×P), consumed by least-squares recovery.
struct LayerGram {
  std::size_t attn_dim = 0;
  std::size_t mlp_dim = 0;
  std::vector<double> attn;
  std::vector<double> mlp;
};

struct GramStats {
  std::vector<LayerGram> layers;
  std::uint64_t token_count = 0;

  static GramStats zeros(const ModelConfig& cfg);
  void fold(std::size_t l, const Matrix& act_attn, const Matrix& act_mlp);
  void merge(const GramStats& other);
};

/// Runs one forward per calibration sample and folds the act_A / act_P taps
/// into CalibStats (and, when `gram` is non-null, the Gram matrices).
/// Samples are processed in fixed chunks of kCalibChunk merged in chunk
/// order, so the result is independent of the thread count.
CalibStats collect_stats(const ModelWeights& model, const CalibSet& calib, GramStats* gram = nullptr);

inline constexpr std::size_t kCalibChunk = 8;

/// Restricts stats (and optionally Gram matrices) to kept heads/channels, so
/// stats collected before a prune describe the pruned model.
CalibStats slice_stats(const CalibStats& stats, const std::vector<std::vector<std::size_t>>& keep_heads,
                       const std::vector<std::vector<std::size_t>>& keep_channels);

/// Stats persistence in the TACTMDL1 container (f64 tensors
/// `stats.{l}.head_sumsq` [A_n, A_d], `stats.{l}.head_maxabs`,
/// `stats.{l}.mlp_sumsq` [P], `stats.{l}.mlp_maxabs`). `provenance` is stored
/// verbatim in the header.
void save_stats(const CalibStats& stats, const std::string& path, const nlohmann::json& provenance = {});
CalibStats load_stats(const std::string& path, nlohmann::json* provenance = nullptr);

}  // namespace transact

namespace transact {

/// Gram counterpart of slice_stats.
GramStats slice_gram(const GramStats& gram, std::size_t head_dim, const std::vector<std::vector<std::size_t>>& keep_heads,
                     const std::vector<std::vector<std::size_t>>& keep_channels);

/// Expands head indices to their A_d-wide channel indices (k·A_d + i).
std::vector<std::size_t> head_channels(const std::vector<std::size_t>& heads, std::size_t head_dim);

}  // namespace transact
