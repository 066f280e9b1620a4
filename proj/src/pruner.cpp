#include "transact/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "transact/error.hpp"

namespace transact {

std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::transact: return "transact";
    case Metric::magnitude: return "magnitude";
    case Metric::random: return "random";
  }
  return "transact";
}

Metric parse_metric(std::string_view s) {
  if (s == "transact") return Metric::transact;
  if (s == "magnitude") return Metric::magnitude;
  if (s == "random") return Metric::random;
  throw ConfigError("metric: unknown '" + std::string(s) + "' (expected transact|magnitude|random)");
}

std::string_view to_string(OutlierMode m) { return m == OutlierMode::channel_norm ? "channel-norm" : "token-peak"; }

OutlierMode parse_outlier_mode(std::string_view s) {
  if (s == "channel-norm") return OutlierMode::channel_norm;
  if (s == "token-peak") return OutlierMode::token_peak;
  throw ConfigError("outlier_mode: unknown '" + std::string(s) + "' (expected channel-norm|token-peak)");
}

void validate(const MetricConfig& cfg) {
  if (!(cfg.alpha >= 0.0) || !std::isfinite(cfg.alpha)) throw ConfigError("alpha: must be a non-negative real");
}

void validate(const PruneTarget& target, const ModelConfig& cfg) {
  if (target.n_heads < 1) throw ConfigError("target_heads: must keep at least one head per layer");
  if (target.mlp_dim < 1) throw ConfigError("target_mlp: must keep at least one MLP channel per layer");
  if (target.n_heads > cfg.n_heads)
    throw ConfigError("target_heads: " + std::to_string(target.n_heads) + " exceeds current " +
                      std::to_string(cfg.n_heads));
  if (target.mlp_dim > cfg.mlp_dim)
    throw ConfigError("target_mlp: " + std::to_string(target.mlp_dim) + " exceeds current " +
                      std::to_string(cfg.mlp_dim));
}

std::vector<double> head_salience(const CalibStats& stats, std::size_t layer, const MetricConfig& cfg) {
  validate(cfg);
  if (stats.token_count == 0) throw InputError("head_salience: stats are empty (token_count = 0)");
  const auto& ls = stats.layers.at(layer);
  std::vector<double> scores(stats.n_heads);
  for (std::size_t k = 0; k < stats.n_heads; ++k) {
    double sum = 0.0, peak = 0.0;
    for (std::size_t i = 0; i < stats.head_dim; ++i) {
      const double norm = std::sqrt(ls.head_sumsq[k * stats.head_dim + i]);
      sum += norm;
      const double mag = cfg.outlier == OutlierMode::channel_norm ? norm : ls.head_maxabs[k * stats.head_dim + i];
      peak = std::max(peak, mag);
    }
    scores[k] = sum / static_cast<double>(stats.head_dim) + cfg.alpha * peak;
  }
  return scores;
}

std::vector<double> mlp_salience(const CalibStats& stats, std::size_t layer) {
  if (stats.token_count == 0) throw InputError("mlp_salience: stats are empty (token_count = 0)");
  const auto& ls = stats.layers.at(layer);
  std::vector<double> scores(ls.mlp_sumsq.size());
  std::transform(ls.mlp_sumsq.begin(), ls.mlp_sumsq.end(), scores.begin(), [](double s) { return std::sqrt(s); });
  return scores;
}

std::vector<std::size_t> select_topk(std::span<const double> scores, std::size_t k) {
  if (k < 1 || k > scores.size())
    throw ConfigError("select_topk: k = " + std::to_string(k) + " outside [1, " + std::to_string(scores.size()) + "]");
  for (double s : scores)
    if (std::isnan(s)) throw NumericError("select_topk: NaN score");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto better = [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); };
  std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k - 1), idx.end(), better);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

BaselineScores baseline_salience(const ModelWeights& model, std::size_t layer, const MetricConfig& cfg) {
  const auto& c = model.config;
  BaselineScores out;
  out.heads.assign(c.n_heads, 0.0);
  out.channels.assign(c.mlp_dim, 0.0);
  if (cfg.metric == Metric::random) {
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.random_seed), static_cast<std::uint32_t>(cfg.random_seed >> 32),
                      static_cast<std::uint32_t>(layer)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& s : out.heads) s = u(rng);
    for (auto& s : out.channels) s = u(rng);
    return out;
  }
  if (cfg.metric != Metric::magnitude) throw ConfigError("baseline_salience: metric must be magnitude or random");
  if (model.config_only()) throw ConfigError("baseline_salience: model has no weights");
  const auto& lw = model.layers.at(layer);
  const std::size_t H = c.hidden_dim, D = c.head_dim;
  for (std::size_t k = 0; k < c.n_heads; ++k) {
    double sum = 0.0;
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t j = k * D; j < (k + 1) * D; ++j)
        sum += std::abs(lw.wq(r, j)) + std::abs(lw.wk(r, j)) + std::abs(lw.wv(r, j));
    for (std::size_t j = k * D; j < (k + 1) * D; ++j)
      for (std::size_t h = 0; h < H; ++h) sum += std::abs(lw.wo(j, h));
    out.heads[k] = sum / static_cast<double>(4 * H * D);
  }
  const std::size_t per_channel = (c.has_gate ? 3 : 2) * H;
  for (std::size_t i = 0; i < c.mlp_dim; ++i) {
    double sum = 0.0;
    for (std::size_t r = 0; r < H; ++r) {
      sum += std::abs(lw.wu(r, i));
      if (c.has_gate) sum += std::abs(lw.wg(r, i));
    }
    for (std::size_t h = 0; h < H; ++h) sum += std::abs(lw.wd(i, h));
    out.channels[i] = sum / static_cast<double>(per_channel);
  }
  return out;
}

SalienceReport build_report(const ModelWeights& model, const CalibStats* stats, const MetricConfig& metric,
                            const PruneTarget& target) {
  validate(metric);
  const auto& cfg = model.config;
  validate(target, cfg);
  SalienceReport rep;
  rep.metric = metric;
  rep.target = target;
  if (metric.metric == Metric::transact) {
    if (!stats) throw ConfigError("metric: transact requires calibration stats");
    if (stats->layers.size() != cfg.n_layers || stats->n_heads != cfg.n_heads || stats->head_dim != cfg.head_dim ||
        stats->mlp_dim != cfg.mlp_dim)
      throw ConfigError("stats: shape does not match the model");
    rep.token_count = stats->token_count;
  }
  rep.layers.resize(cfg.n_layers);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    auto& ls = rep.layers[l];
    if (metric.metric == Metric::transact) {
      ls.head_scores = head_salience(*stats, l, metric);
      ls.channel_scores = mlp_salience(*stats, l);
    } else {
      auto b = baseline_salience(model, l, metric);
      ls.head_scores = std::move(b.heads);
      ls.channel_scores = std::move(b.channels);
    }
    ls.keep_heads = select_topk(ls.head_scores, target.n_heads);
    ls.keep_channels = select_topk(ls.channel_scores, target.mlp_dim);
  }
  return rep;
}

nlohmann::json to_json(const SalienceReport& report) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < report.layers.size(); ++l) {
    const auto& ls = report.layers[l];
    layers.push_back({{"layer", l},
                      {"head_scores", ls.head_scores},
                      {"channel_scores", ls.channel_scores},
                      {"keep_heads", ls.keep_heads},
                      {"keep_channels", ls.keep_channels}});
  }
  return {{"metric", std::string(to_string(report.metric.metric))},
          {"alpha", report.metric.alpha},
          {"outlier_mode", std::string(to_string(report.metric.outlier))},
          {"random_seed", report.metric.random_seed},
          {"target", {{"n_heads", report.target.n_heads}, {"mlp_dim", report.target.mlp_dim}}},
          {"token_count", report.token_count},
          {"provenance", report.provenance},
          {"layers", layers}};
}

namespace {

void check_keep(const std::vector<std::size_t>& keep, std::size_t bound, std::size_t expected_size,
                const std::string& what) {
  if (keep.size() != expected_size)
    throw ConfigError(what + ": layers must keep the same count (" + std::to_string(keep.size()) + " vs " +
                      std::to_string(expected_size) + ")");
  if (keep.empty()) throw ConfigError(what + ": keep-set is empty");
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (keep[i] >= bound)
      throw ConfigError(what + ": index " + std::to_string(keep[i]) + " exceeds dimension " + std::to_string(bound));
    if (i > 0 && keep[i] <= keep[i - 1]) throw ConfigError(what + ": keep-set must be sorted without duplicates");
  }
}

Matrix take_cols(const Matrix& m, const std::vector<std::size_t>& blocks, std::size_t width) {
  Matrix out(m.rows, blocks.size() * width);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const auto src = m.row(r);
    auto dst = out.row(r);
    for (std::size_t b = 0; b < blocks.size(); ++b)
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(blocks[b] * width), width,
                  dst.begin() + static_cast<std::ptrdiff_t>(b * width));
  }
  return out;
}

Matrix take_rows(const Matrix& m, const std::vector<std::size_t>& blocks, std::size_t width) {
  Matrix out(blocks.size() * width, m.cols);
  for (std::size_t b = 0; b < blocks.size(); ++b)
    std::copy_n(m.data.begin() + static_cast<std::ptrdiff_t>(blocks[b] * width * m.cols), width * m.cols,
                out.data.begin() + static_cast<std::ptrdiff_t>(b * width * m.cols));
  return out;
}

}  // namespace

ModelWeights prune_model(const ModelWeights& model, const KeepSets& keep_heads, const KeepSets& keep_channels) {
  if (model.config_only()) throw ConfigError("prune: model has no weights");
  const auto& cfg = model.config;
  if (keep_heads.size() != cfg.n_layers || keep_channels.size() != cfg.n_layers)
    throw ConfigError("prune: keep-sets must cover every layer");
  const std::size_t new_heads = keep_heads.empty() ? cfg.n_heads : keep_heads.front().size();
  const std::size_t new_mlp = keep_channels.empty() ? cfg.mlp_dim : keep_channels.front().size();
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    check_keep(keep_heads[l], cfg.n_heads, new_heads, "keep_heads");
    check_keep(keep_channels[l], cfg.mlp_dim, new_mlp, "keep_channels");
  }

  ModelWeights out;
  out.config = cfg;
  out.config.n_heads = new_heads;
  out.config.mlp_dim = new_mlp;
  out.embed = model.embed;
  out.final_norm = model.final_norm;
  out.lm_head = model.lm_head;
  out.layers.resize(cfg.n_layers);

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t li = 0; li < static_cast<std::ptrdiff_t>(cfg.n_layers); ++li) {
    const auto l = static_cast<std::size_t>(li);
    const auto& src = model.layers[l];
    auto& dst = out.layers[l];
    // One index set drives Q, K, V and O so head alignment holds by construction.
    const auto& heads = keep_heads[l];
    dst.wq = take_cols(src.wq, heads, cfg.head_dim);
    dst.wk = take_cols(src.wk, heads, cfg.head_dim);
    dst.wv = take_cols(src.wv, heads, cfg.head_dim);
    dst.wo = take_rows(src.wo, heads, cfg.head_dim);
    const auto& ch = keep_channels[l];
    if (cfg.has_gate) dst.wg = take_cols(src.wg, ch, 1);
    dst.wu = take_cols(src.wu, ch, 1);
    dst.wd = take_rows(src.wd, ch, 1);
    dst.attn_norm = src.attn_norm;
    dst.mlp_norm = src.mlp_norm;
  }
  validate(out);
  return out;
}

ModelWeights prune_model(const ModelWeights& model, const SalienceReport& report) {
  KeepSets heads, channels;
  for (const auto& ls : report.layers) {
    heads.push_back(ls.keep_heads);
    channels.push_back(ls.keep_channels);
  }
  return prune_model(model, heads, channels);
}

ActivationMask mask_from_keep(const ModelConfig& cfg, const KeepSets& keep_heads, const KeepSets& keep_channels) {
  ActivationMask m;
  m.keep_heads.assign(cfg.n_layers, std::vector<bool>(cfg.n_heads, false));
  m.keep_channels.assign(cfg.n_layers, std::vector<bool>(cfg.mlp_dim, false));
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    for (std::size_t k : keep_heads.at(l)) m.keep_heads[l].at(k) = true;
    for (std::size_t c : keep_channels.at(l)) m.keep_channels[l].at(c) = true;
  }
  return m;
}

}  // namespace transact
