#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "transact/calib.hpp"
#include "transact/forward.hpp"
#include "transact/model.hpp"

namespace transact {

enum class Metric { transact, magnitude, random };

/// How the outlier term of the head score reads a channel's magnitude.
/// channel_norm: max over channels of the cross-token L2 norm √Σact².
/// token_peak: max over channels of the largest single |act|.
enum class OutlierMode { channel_norm, token_peak };

std::string_view to_string(Metric m);
Metric parse_metric(std::string_view s);
std::string_view to_string(OutlierMode m);
OutlierMode parse_outlier_mode(std::string_view s);

struct MetricConfig {
  double alpha = 1.0;
  Metric metric = Metric::transact;
  std::uint64_t random_seed = 0;
  OutlierMode outlier = OutlierMode::channel_norm;
};

void validate(const MetricConfig& cfg);

/// Per-layer architecture after a prune: A_n′ heads and P′ MLP channels.
struct PruneTarget {
  std::size_t n_heads = 0;
  std::size_t mlp_dim = 0;

  friend bool operator==(const PruneTarget&, const PruneTarget&) = default;
};

/// Rejects targets below one head / one channel or above the current shape.
void validate(const PruneTarget& target, const ModelConfig& cfg);

/// Head score: mean over the A_d channels of √sumsq plus α times the largest
/// channel magnitude (see OutlierMode). Requires token_count > 0.
std::vector<double> head_salience(const CalibStats& stats, std::size_t layer, const MetricConfig& cfg);

/// Channel score: √mlp_sumsq.
std::vector<double> mlp_salience(const CalibStats& stats, std::size_t layer);

/// Indices of the k largest scores, ties to the lower index, returned in
/// ascending index order.
std::vector<std::size_t> select_topk(std::span<const double> scores, std::size_t k);

struct BaselineScores {
  std::vector<double> heads;
  std::vector<double> channels;
};

/// Data-free comparators. magnitude: mean |w| over each head's Q/K/V columns
/// and O rows, and over each channel's G/U columns and D row. random: seeded
/// uniform [0,1) scores, a fresh stream per (seed, layer).
BaselineScores baseline_salience(const ModelWeights& model, std::size_t layer, const MetricConfig& cfg);

struct LayerSalience {
  std::vector<double> head_scores;
  std::vector<double> channel_scores;
  std::vector<std::size_t> keep_heads;
  std::vector<std::size_t> keep_channels;
};

struct SalienceReport {
  MetricConfig metric;
  PruneTarget target;
  std::uint64_t token_count = 0;
  nlohmann::json provenance = nlohmann::json::object();
  std::vector<LayerSalience> layers;
};

/// Scores every layer with the configured metric and selects uniform
/// per-layer keep-sets of the target size. `stats` is required for the
/// transact metric and ignored otherwise.
SalienceReport build_report(const ModelWeights& model, const CalibStats* stats, const MetricConfig& metric,
                            const PruneTarget& target);

nlohmann::json to_json(const SalienceReport& report);

using KeepSets = std::vector<std::vector<std::size_t>>;

/// Structurally slices every layer: W_Q/W_K/W_V keep the output columns of
/// kept heads (A_d-wide blocks), W_O the matching input rows; W_G/W_U keep
/// output columns of kept channels, W_D the matching input rows. Embeddings,
/// norms and the LM head are copied. The source is not modified.
ModelWeights prune_model(const ModelWeights& model, const KeepSets& keep_heads, const KeepSets& keep_channels);
ModelWeights prune_model(const ModelWeights& model, const SalienceReport& report);

/// Mask that zeroes every head/channel outside the keep-sets; forward() with
/// this mask is the reference for prune_model().
ActivationMask mask_from_keep(const ModelConfig& cfg, const KeepSets& keep_heads, const KeepSets& keep_channels);

}  // namespace transact
