#include "transact/eval.hpp"

#include <cmath>
#include <sstream>

#include "transact/error.hpp"
#include "transact/hash.hpp"

namespace transact {

EvalResult perplexity(const ModelWeights& model, std::span<const Token> stream, std::size_t window, bool keep_nll) {
  if (stream.size() < 2) throw InputError("perplexity: token stream needs at least 2 tokens");
  if (window < 2) throw ConfigError("window: must be at least 2");
  if (window > model.config.max_seq_len)
    throw ConfigError("window: " + std::to_string(window) + " exceeds max_seq_len " +
                      std::to_string(model.config.max_seq_len));

  const std::size_t n_windows = (stream.size() + window - 1) / window;
  std::vector<std::vector<double>> per_window(n_windows);
  std::vector<std::string> errors(n_windows);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t wi = 0; wi < static_cast<std::ptrdiff_t>(n_windows); ++wi) {
    const auto w = static_cast<std::size_t>(wi);
    const std::size_t begin = w * window;
    const std::size_t len = std::min(window, stream.size() - begin);
    if (len < 2) continue;
    try {
      const auto toks = stream.subspan(begin, len);
      const auto trace = forward(model, toks);
      auto& out = per_window[w];
      for (std::size_t t = 0; t + 1 < len; ++t) {
        const auto row = trace.logits.row(t);
        double mx = -INFINITY;
        for (float v : row) mx = std::max(mx, static_cast<double>(v));
        double z = 0.0;
        for (float v : row) z += std::exp(static_cast<double>(v) - mx);
        const double lse = mx + std::log(z);
        out.push_back(lse - static_cast<double>(row[toks[t + 1]]));
      }
    } catch (const std::exception& e) {
      errors[w] = e.what();
    }
  }
  for (std::size_t w = 0; w < n_windows; ++w)
    if (!errors[w].empty()) throw NumericError("perplexity: window " + std::to_string(w) + ": " + errors[w]);

  EvalResult r;
  double sum = 0.0;
  for (const auto& v : per_window) {
    for (double x : v) {
      if (!std::isfinite(x)) throw NumericError("perplexity: non-finite NLL");
      sum += x;
      if (keep_nll) r.nll.push_back(x);
    }
    r.token_count += v.size();
  }
  r.mean_nll = sum / static_cast<double>(r.token_count);
  r.perplexity = std::exp(r.mean_nll);
  r.model_hash = model_hash(model);
  return r;
}

nlohmann::json to_json(const EvalResult& r) {
  nlohmann::json j = {{"perplexity", r.perplexity},
                      {"mean_nll", r.mean_nll},
                      {"token_count", r.token_count},
                      {"model_hash", r.model_hash}};
  if (!r.nll.empty()) j["nll"] = r.nll;
  return j;
}

SweepSpec sweep_spec_from_json(const nlohmann::json& j) {
  SweepSpec s;
  try {
    if (!j.contains("targets") || !j["targets"].is_array() || j["targets"].empty())
      throw ConfigError("targets: a non-empty list of {heads, mlp} is required");
    for (const auto& t : j["targets"]) s.targets.push_back({t.at("heads").get<std::size_t>(), t.at("mlp").get<std::size_t>()});
    if (j.contains("metrics")) {
      s.metrics.clear();
      for (const auto& m : j["metrics"]) s.metrics.push_back(parse_metric(m.get<std::string>()));
    }
    if (j.contains("shots")) s.shots = j["shots"].get<std::vector<std::size_t>>();
    if (j.contains("calib_samples")) s.calib_samples = j["calib_samples"].get<std::vector<std::size_t>>();
    s.calib_seqlen = j.value("calib_seqlen", s.calib_seqlen);
    if (!j.contains("seed")) throw ConfigError("seed: required (no implicit seeds)");
    s.base_seed = j.at("seed").get<std::uint64_t>();
    s.alpha = j.value("alpha", s.alpha);
    s.outlier = parse_outlier_mode(j.value("outlier_mode", std::string("channel-norm")));
    s.interpolation = parse_interpolation(j.value("interpolation", std::string("linear")));
    s.recovery = parse_recovery(j.value("recovery", std::string("none")));
    s.lambda = j.value("lambda", s.lambda);
    s.window = j.value("window", s.window);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("grid: ") + e.what());
  }
  if (s.metrics.empty()) throw ConfigError("metrics: empty");
  if (s.shots.empty()) throw ConfigError("shots: empty");
  if (s.calib_samples.empty()) throw ConfigError("calib_samples: empty");
  return s;
}

std::vector<SweepRow> compare_metrics(const ModelWeights& model, std::span<const Token> calib_corpus,
                                      std::span<const Token> heldout, const SweepSpec& spec) {
  if (spec.n_seeds < 1) throw ConfigError("seeds: must be at least 1");
  std::vector<SweepRow> rows;
  for (const auto& target : spec.targets) {
    for (std::size_t shots : spec.shots) {
      auto schedule = plan_schedule(model.config, target, shots, spec.interpolation);
      schedule.recovery = spec.recovery;
      schedule.lambda = spec.lambda;
      for (std::size_t n_calib : spec.calib_samples) {
        for (Metric metric : spec.metrics) {
          for (std::size_t s = 0; s < spec.n_seeds; ++s) {
            const std::uint64_t seed = spec.base_seed + s;
            ScheduleRunOptions opts;
            opts.metric.metric = metric;
            opts.metric.alpha = spec.alpha;
            opts.metric.outlier = spec.outlier;
            opts.metric.random_seed = seed;
            opts.calib_samples = n_calib;
            opts.calib_seqlen = spec.calib_seqlen;
            opts.calib_seed = seed;
            const auto outcome = run_schedule(model, calib_corpus, schedule, opts);
            rows.push_back({target, shots, n_calib, metric, seed, perplexity(outcome.model, heldout, spec.window)});
          }
        }
      }
    }
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "target_heads,target_mlp,shots,calib_samples,metric,seed,perplexity,mean_nll,token_count\n";
  for (const auto& r : rows)
    os << r.target.n_heads << ',' << r.target.mlp_dim << ',' << r.shots << ',' << r.calib_samples << ','
       << to_string(r.metric) << ',' << r.seed << ',' << r.eval.perplexity << ',' << r.eval.mean_nll << ','
       << r.eval.token_count << '\n';
  return os.str();
}

double mean_perplexity(const std::vector<SweepRow>& rows, Metric metric) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows)
    if (r.metric == metric) {
      sum += r.eval.perplexity;
      ++n;
    }
  if (n == 0) throw ConfigError("mean_perplexity: no rows for metric");
  return sum / static_cast<double>(n);
}

}  // namespace transact
