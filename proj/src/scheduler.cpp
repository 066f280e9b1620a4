#include "transact/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <spdlog/spdlog.h>

#include "transact/error.hpp"
#include "transact/model_io.hpp"

namespace transact {

std::string_view to_string(Interpolation i) { return i == Interpolation::linear ? "linear" : "geometric"; }

Interpolation parse_interpolation(std::string_view s) {
  if (s == "linear") return Interpolation::linear;
  if (s == "geometric") return Interpolation::geometric;
  throw ConfigError("interpolation: unknown '" + std::string(s) + "' (expected linear|geometric)");
}

std::string_view to_string(RecoveryKind r) { return r == RecoveryKind::none ? "none" : "least_squares"; }

RecoveryKind parse_recovery(std::string_view s) {
  if (s == "none") return RecoveryKind::none;
  if (s == "least_squares") return RecoveryKind::least_squares;
  throw ConfigError("recovery: unknown '" + std::string(s) + "' (expected none|least_squares)");
}

double prunable_params(const ModelConfig& cfg, const PruneTarget& shape) {
  const double H = static_cast<double>(cfg.hidden_dim);
  const double attn = 4.0 * H * static_cast<double>(cfg.head_dim * shape.n_heads);
  const double mlp = (cfg.has_gate ? 3.0 : 2.0) * H * static_cast<double>(shape.mlp_dim);
  return attn + mlp;
}

namespace {

std::size_t interpolate(std::size_t src, std::size_t dst, std::size_t i, std::size_t n, Interpolation mode) {
  if (i == n) return dst;
  if (mode == Interpolation::linear) {
    // floor(src − gap·i/n) = src − ceil(gap·i/n), in exact integer arithmetic.
    const std::size_t gap = src - dst;
    return src - (gap * i + n - 1) / n;
  }
  const double v = static_cast<double>(src) *
                   std::pow(static_cast<double>(dst) / static_cast<double>(src),
                            static_cast<double>(i) / static_cast<double>(n));
  return std::max(dst, static_cast<std::size_t>(std::floor(v + 1e-9)));
}

}  // namespace

PruneSchedule plan_schedule(const ModelConfig& source, const PruneTarget& target, std::size_t n_shots,
                            Interpolation interpolation) {
  validate(target, source);
  if (n_shots < 1) throw ConfigError("n_shots: must be at least 1");
  const std::size_t head_gap = source.n_heads - target.n_heads;
  if (head_gap > 0 && n_shots > head_gap)
    throw ConfigError("n_shots: " + std::to_string(n_shots) + " shots exceed the head-count gap of " +
                      std::to_string(head_gap));

  PruneSchedule s;
  s.source = {source.n_heads, source.mlp_dim};
  s.interpolation = interpolation;
  PruneTarget prev = s.source;
  const double base = prunable_params(source, s.source);
  for (std::size_t i = 1; i <= n_shots; ++i) {
    PruneTarget t;
    t.n_heads = std::min(prev.n_heads, interpolate(source.n_heads, target.n_heads, i, n_shots, interpolation));
    std::size_t mlp = interpolate(source.mlp_dim, target.mlp_dim, i, n_shots, interpolation);
    if (i < n_shots) mlp = std::max(target.mlp_dim, mlp / kMlpAlign * kMlpAlign);
    t.mlp_dim = std::min(prev.mlp_dim, mlp);
    s.ratios.push_back((prunable_params(source, prev) - prunable_params(source, t)) / base);
    s.shots.push_back(t);
    prev = t;
  }
  s.total_ratio = (base - prunable_params(source, target)) / base;
  validate(s, source, target);
  return s;
}

void validate(const PruneSchedule& schedule, const ModelConfig& source, const PruneTarget& target) {
  if (schedule.shots.empty()) throw ConfigError("schedule: no shots");
  if (schedule.ratios.size() != schedule.shots.size()) throw ConfigError("schedule: ratios do not match shots");
  PruneTarget prev{source.n_heads, source.mlp_dim};
  double sum = 0.0;
  for (std::size_t i = 0; i < schedule.shots.size(); ++i) {
    const auto& t = schedule.shots[i];
    if ((t.n_heads * source.head_dim) % source.head_dim != 0 || t.n_heads < 1)
      throw ConfigError("schedule: shot " + std::to_string(i + 1) + " attention width not a multiple of head_dim");
    if (t.n_heads > prev.n_heads || t.mlp_dim > prev.mlp_dim)
      throw ConfigError("schedule: shot " + std::to_string(i + 1) + " grows the model");
    if (t.mlp_dim < 1) throw ConfigError("schedule: shot " + std::to_string(i + 1) + " has no MLP channels");
    sum += schedule.ratios[i];
    prev = t;
  }
  if (!(schedule.shots.back() == target)) throw ConfigError("schedule: final shot does not match the target");
  if (std::abs(sum - schedule.total_ratio) > 1e-9) throw ConfigError("schedule: per-shot ratios do not sum to R");
  if (!(schedule.lambda >= 0.0)) throw ConfigError("lambda: must be non-negative");
}

nlohmann::json to_json(const RecoveryResult& r) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : r.layers) {
    auto fit = [](const RecoveryFit& f) {
      return nlohmann::json{{"mse_before", f.mse_before},
                            {"mse_after", f.mse_after},
                            {"lambda", f.lambda},
                            {"condition", f.condition}};
    };
    layers.push_back({{"layer", l.layer}, {"attn_out", fit(l.attn)}, {"mlp_down", fit(l.mlp)}});
  }
  return {{"shot", r.shot}, {"kind", std::string(to_string(r.kind))}, {"layers", layers}};
}

RecoveryResult least_squares_recover(const RecoveryContext& ctx, ModelWeights& pruned) {
  if (!ctx.gram) throw ConfigError("recovery: least_squares needs calibration Gram matrices");
  const auto& cfg = ctx.before.config;
  RecoveryResult res;
  res.shot = ctx.shot;
  res.kind = RecoveryKind::least_squares;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const auto& g = ctx.gram->layers.at(l);
    LayerRecovery lr;
    lr.layer = l;
    lr.attn = least_squares_recovery(g.attn, ctx.gram->token_count, head_channels(ctx.keep_heads[l], cfg.head_dim),
                                     ctx.before.layers[l].wo, ctx.lambda);
    lr.mlp = least_squares_recovery(g.mlp, ctx.gram->token_count, ctx.keep_channels[l], ctx.before.layers[l].wd,
                                    ctx.lambda);
    auto& pl = pruned.layers.at(l);
    if (lr.attn.weights.rows != pl.wo.rows || lr.mlp.weights.rows != pl.wd.rows)
      throw ConfigError("recovery: refit shape differs from pruned model");
    pl.wo = std::move(lr.attn.weights);
    pl.wd = std::move(lr.mlp.weights);
    lr.attn.weights = {};
    lr.mlp.weights = {};
    res.layers.push_back(std::move(lr));
  }
  return res;
}

namespace {

void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace

ScheduleOutcome run_schedule(const ModelWeights& model, std::span<const Token> corpus, const PruneSchedule& schedule,
                             const ScheduleRunOptions& options) {
  validate(options.metric);
  validate(schedule, model.config, schedule.shots.empty() ? PruneTarget{} : schedule.shots.back());
  const bool use_stats = options.metric.metric == Metric::transact;
  const bool use_recovery = options.recovery || schedule.recovery == RecoveryKind::least_squares;
  RecoveryFn recover = options.recovery ? options.recovery : RecoveryFn(least_squares_recover);

  std::filesystem::path outdir;
  std::ofstream log_file;
  if (!options.outdir.empty()) {
    outdir = options.outdir;
    std::filesystem::create_directories(outdir);
    log_file.open(outdir / "schedule.log.jsonl", std::ios::trunc);
    if (!log_file) throw IoError("cannot write " + (outdir / "schedule.log.jsonl").string());
  }

  ScheduleOutcome outcome;
  outcome.model = model;
  CalibStats stats;
  GramStats gram;
  for (std::size_t i = 0; i < schedule.shots.size(); ++i) {
    const std::size_t shot = i + 1;
    const auto& target = schedule.shots[i];
    try {
      const ModelWeights& current = outcome.model;
      const bool calibrate = (use_stats || use_recovery) && (schedule.recalibrate_each_shot || i == 0);
      if (calibrate) {
        const auto calib =
            draw_calib_set(corpus, options.calib_samples, options.calib_seqlen, options.calib_seed + i);
        stats = collect_stats(current, calib, use_recovery ? &gram : nullptr);
      }
      MetricConfig metric = options.metric;
      metric.random_seed += i;
      auto report = build_report(current, use_stats ? &stats : nullptr, metric, target);
      report.provenance = {{"shot", shot},
                           {"calib_seed", options.calib_seed + i},
                           {"calib_samples", options.calib_samples},
                           {"calib_seqlen", options.calib_seqlen},
                           {"recalibrated", calibrate}};
      KeepSets keep_heads, keep_channels;
      for (const auto& ls : report.layers) {
        keep_heads.push_back(ls.keep_heads);
        keep_channels.push_back(ls.keep_channels);
      }
      ModelWeights pruned = prune_model(current, keep_heads, keep_channels);

      RecoveryResult rec;
      rec.shot = shot;
      if (use_recovery) {
        const ModelConfig shape = pruned.config;
        RecoveryContext ctx{current, keep_heads, keep_channels, &gram, schedule.lambda, shot};
        rec = recover(ctx, pruned);
        if (pruned.config != shape)
          throw ConfigError("recovery: altered model shape");
        validate(pruned);
      }

      nlohmann::json entry = {{"shot", shot},
                              {"status", "ok"},
                              {"n_heads", target.n_heads},
                              {"mlp_dim", target.mlp_dim},
                              {"ratio", schedule.ratios[i]},
                              {"metric", std::string(to_string(metric.metric))},
                              {"token_count", report.token_count}};
      if (use_recovery) entry["recovery"] = to_json(rec);
      spdlog::info("shot {}/{}: heads={} mlp={}", shot, schedule.shots.size(), target.n_heads, target.mlp_dim);

      if (!outdir.empty()) {
        save_model(pruned, (outdir / ("shot_" + std::to_string(shot) + ".model")).string());
        auto rj = to_json(report);
        if (use_recovery) rj["recovery"] = to_json(rec);
        write_json(rj, outdir / ("shot_" + std::to_string(shot) + ".report.json"));
        log_file << entry.dump() << '\n';
        log_file.flush();
      }

      if (!schedule.recalibrate_each_shot) {
        if (use_stats || use_recovery) stats = slice_stats(stats, keep_heads, keep_channels);
        if (use_recovery) gram = slice_gram(gram, model.config.head_dim, keep_heads, keep_channels);
      }
      outcome.model = std::move(pruned);
      outcome.reports.push_back(std::move(report));
      outcome.recovery.push_back(std::move(rec));
      outcome.log.push_back(std::move(entry));
    } catch (const std::exception& e) {
      nlohmann::json entry = {{"shot", shot}, {"status", "failed"}, {"error", e.what()}};
      if (log_file.is_open()) log_file << entry.dump() << '\n';
      spdlog::error("shot {} failed: {}", shot, e.what());
      throw;
    }
  }
  return outcome;
}

}  // namespace transact
