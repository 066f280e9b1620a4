#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "transact/forward.hpp"
#include "transact/pruner.hpp"
#include "transact/scheduler.hpp"

namespace transact {

struct EvalResult {
  double perplexity = 0.0;
  double mean_nll = 0.0;
  std::uint64_t token_count = 0;  // predicted positions
  std::vector<double> nll;        // per predicted position, when requested
  std::string model_hash;
};

/// Splits the stream into consecutive non-overlapping windows of `window`
/// tokens (the last may be shorter) and averages the next-token NLL over every
/// position that has a predecessor inside its window. A trailing window of a
/// single token predicts nothing. ppl = exp(mean NLL).
EvalResult perplexity(const ModelWeights& model, std::span<const Token> stream, std::size_t window,
                      bool keep_nll = false);

nlohmann::json to_json(const EvalResult& r);

/// One pipeline configuration of a metric comparison sweep.
struct SweepSpec {
  std::vector<PruneTarget> targets;
  std::vector<Metric> metrics{Metric::transact, Metric::magnitude, Metric::random};
  std::vector<std::size_t> shots{1};
  std::vector<std::size_t> calib_samples{kDefaultCalibSamples};
  std::size_t calib_seqlen = 64;
  std::size_t n_seeds = 5;
  std::uint64_t base_seed = 0;
  double alpha = 1.0;
  OutlierMode outlier = OutlierMode::channel_norm;
  Interpolation interpolation = Interpolation::linear;
  RecoveryKind recovery = RecoveryKind::none;
  double lambda = 1e-3;
  std::size_t window = 128;
};

SweepSpec sweep_spec_from_json(const nlohmann::json& j);

struct SweepRow {
  PruneTarget target;
  std::size_t shots = 1;
  std::size_t calib_samples = 0;
  Metric metric = Metric::transact;
  std::uint64_t seed = 0;
  EvalResult eval;
};

/// Runs identical prune pipelines that differ only in the swept settings.
/// Seed s drives both the calibration draw and the random metric. The
/// unpruned baseline is not included; evaluate it separately.
std::vector<SweepRow> compare_metrics(const ModelWeights& model, std::span<const Token> calib_corpus,
                                      std::span<const Token> heldout, const SweepSpec& spec);

std::string sweep_csv(const std::vector<SweepRow>& rows);

/// Mean perplexity over the rows matching `metric` (all targets/settings).
double mean_perplexity(const std::vector<SweepRow>& rows, Metric metric);

}  // namespace transact
