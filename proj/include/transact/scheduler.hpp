#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "transact/calib.hpp"
#include "transact/pruner.hpp"
#include "transact/recovery.hpp"

namespace transact {

enum class Interpolation { linear, geometric };
enum class RecoveryKind { none, least_squares };

std::string_view to_string(Interpolation i);
Interpolation parse_interpolation(std::string_view s);
std::string_view to_string(RecoveryKind r);
RecoveryKind parse_recovery(std::string_view s);

/// MLP widths of intermediate shots are floored to this multiple.
inline constexpr std::size_t kMlpAlign = 64;

struct PruneSchedule {
  PruneTarget source;
  std::vector<PruneTarget> shots;
  std::vector<double> ratios;  // r_i: prunable-parameter reduction of shot i relative to the source
  double total_ratio = 0.0;    // R = Σ r_i
  Interpolation interpolation = Interpolation::linear;
  RecoveryKind recovery = RecoveryKind::none;
  bool recalibrate_each_shot = true;
  double lambda = 1e-3;
};

/// Per-layer prunable parameters (attention + MLP projections) at a shape.
double prunable_params(const ModelConfig& cfg, const PruneTarget& shape);

/// Interpolates per-shot (heads, MLP) targets between the source shape and
/// `target`. Head counts are floored to whole heads, MLP widths floored to a
/// multiple of kMlpAlign (never below the target); the last shot is exactly
/// the target. Throws ConfigError for an infeasible target or, when heads are
/// being pruned, more shots than the head-count gap.
PruneSchedule plan_schedule(const ModelConfig& source, const PruneTarget& target, std::size_t n_shots,
                            Interpolation interpolation = Interpolation::linear);

/// Checks integrality, monotonicity, exact final target and Σr_i = R.
void validate(const PruneSchedule& schedule, const ModelConfig& source, const PruneTarget& target);

struct LayerRecovery {
  std::size_t layer = 0;
  RecoveryFit attn;  // W_O refit (weights dropped after use)
  RecoveryFit mlp;   // W_D refit
};

struct RecoveryResult {
  std::size_t shot = 0;
  RecoveryKind kind = RecoveryKind::none;
  std::vector<LayerRecovery> layers;
};

nlohmann::json to_json(const RecoveryResult& r);

/// What a recovery step sees: the model before the shot, the keep-sets used,
/// and calibration Gram matrices of the pre-shot model (null when the
/// schedule's recovery does not request them).
struct RecoveryContext {
  const ModelWeights& before;
  const KeepSets& keep_heads;
  const KeepSets& keep_channels;
  const GramStats* gram;
  double lambda;
  std::size_t shot;
};

/// Pluggable recovery. Implementations may adjust the pruned model's values
/// but never its shapes.
using RecoveryFn = std::function<RecoveryResult(const RecoveryContext&, ModelWeights& pruned)>;

/// Built-in closed-form W_O / W_D refit.
RecoveryResult least_squares_recover(const RecoveryContext& ctx, ModelWeights& pruned);

struct ScheduleRunOptions {
  MetricConfig metric;
  std::size_t calib_samples = kDefaultCalibSamples;
  std::size_t calib_seqlen = 128;
  std::uint64_t calib_seed = 0;
  /// Where shot_{i}.model, shot_{i}.report.json and schedule.log.jsonl go;
  /// empty writes nothing.
  std::string outdir;
  /// Overrides the schedule's recovery kind when set.
  RecoveryFn recovery;
};

struct ScheduleOutcome {
  ModelWeights model;
  std::vector<SalienceReport> reports;
  std::vector<RecoveryResult> recovery;
  std::vector<nlohmann::json> log;
};

/// Executes the shots in order: (re)calibrate, score, prune, recover. Shot i
/// draws its calibration set with seed calib_seed + i and, for the random
/// metric, uses random_seed + i. On failure the exception propagates and the
/// checkpoints of completed shots remain on disk.
ScheduleOutcome run_schedule(const ModelWeights& model, std::span<const Token> corpus, const PruneSchedule& schedule,
                             const ScheduleRunOptions& options);

}  // namespace transact
