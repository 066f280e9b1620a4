#include "transact/calib.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "transact/container.hpp"
#include "transact/error.hpp"

namespace transact {

CalibSet draw_calib_set(std::span<const Token> corpus, std::size_t n_samples, std::size_t seq_len,
                        std::uint64_t seed) {
  if (n_samples == 0) throw ConfigError("calib_samples: must be positive");
  if (seq_len == 0) throw ConfigError("calib_seqlen: must be positive");
  if (corpus.size() < seq_len)
    throw InputError("corpus: " + std::to_string(corpus.size()) + " tokens is shorter than one calibration window of " +
                     std::to_string(seq_len));
  CalibSet set;
  set.seq_len = seq_len;
  set.seed = seed;
  std::mt19937_64 rng(seed);
  const std::uint64_t span = corpus.size() - seq_len + 1;
  for (std::size_t s = 0; s < n_samples; ++s) {
    const std::size_t off = rng() % span;
    set.samples.emplace_back(corpus.begin() + static_cast<std::ptrdiff_t>(off),
                             corpus.begin() + static_cast<std::ptrdiff_t>(off + seq_len));
  }
  return set;
}

CalibStats CalibStats::zeros(const ModelConfig& cfg) {
  CalibStats s;
  s.n_heads = cfg.n_heads;
  s.head_dim = cfg.head_dim;
  s.mlp_dim = cfg.mlp_dim;
  const std::size_t A = cfg.attn_dim();
  s.layers.assign(cfg.n_layers, LayerStats{std::vector<double>(A, 0.0), std::vector<double>(A, 0.0),
                                           std::vector<double>(cfg.mlp_dim, 0.0),
                                           std::vector<double>(cfg.mlp_dim, 0.0)});
  return s;
}

void CalibStats::fold(std::size_t l, const Matrix& act_attn, const Matrix& act_mlp) {
  auto& ls = layers.at(l);
  for (std::size_t t = 0; t < act_attn.rows; ++t) {
    const auto r = act_attn.row(t);
    for (std::size_t c = 0; c < r.size(); ++c) {
      const double v = r[c];
      ls.head_sumsq[c] += v * v;
      ls.head_maxabs[c] = std::max(ls.head_maxabs[c], std::abs(v));
    }
  }
  for (std::size_t t = 0; t < act_mlp.rows; ++t) {
    const auto r = act_mlp.row(t);
    for (std::size_t c = 0; c < r.size(); ++c) {
      const double v = r[c];
      ls.mlp_sumsq[c] += v * v;
      ls.mlp_maxabs[c] = std::max(ls.mlp_maxabs[c], std::abs(v));
    }
  }
}

CalibStats merge_stats(const CalibStats& a, const CalibStats& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  if (a.n_heads != b.n_heads || a.head_dim != b.head_dim || a.mlp_dim != b.mlp_dim ||
      a.layers.size() != b.layers.size())
    throw ConfigError("merge_stats: architecture shape mismatch");
  CalibStats out = a;
  out.token_count += b.token_count;
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    auto& o = out.layers[l];
    const auto& y = b.layers[l];
    for (std::size_t c = 0; c < o.head_sumsq.size(); ++c) {
      o.head_sumsq[c] += y.head_sumsq[c];
      o.head_maxabs[c] = std::max(o.head_maxabs[c], y.head_maxabs[c]);
    }
    for (std::size_t c = 0; c < o.mlp_sumsq.size(); ++c) {
      o.mlp_sumsq[c] += y.mlp_sumsq[c];
      o.mlp_maxabs[c] = std::max(o.mlp_maxabs[c], y.mlp_maxabs[c]);
    }
  }
  return out;
}

GramStats GramStats::zeros(const ModelConfig& cfg) {
  GramStats g;
  const std::size_t A = cfg.attn_dim(), P = cfg.mlp_dim;
  g.layers.assign(cfg.n_layers, LayerGram{A, P, std::vector<double>(A * A, 0.0), std::vector<double>(P * P, 0.0)});
  return g;
}

namespace {

void fold_gram(std::vector<double>& g, const Matrix& x) {
  const std::size_t D = x.cols;
  std::vector<double> row(D);
  for (std::size_t t = 0; t < x.rows; ++t) {
    const auto r = x.row(t);
    std::copy(r.begin(), r.end(), row.begin());
    for (std::size_t i = 0; i < D; ++i) {
      const double xi = row[i];
      if (xi == 0.0) continue;
      double* gi = g.data() + i * D;
      for (std::size_t j = 0; j < D; ++j) gi[j] += xi * row[j];
    }
  }
}

}  // namespace

void GramStats::fold(std::size_t l, const Matrix& act_attn, const Matrix& act_mlp) {
  fold_gram(layers.at(l).attn, act_attn);
  fold_gram(layers.at(l).mlp, act_mlp);
}

void GramStats::merge(const GramStats& other) {
  if (layers.empty()) {
    *this = other;
    return;
  }
  if (other.layers.size() != layers.size()) throw ConfigError("gram merge: layer count mismatch");
  token_count += other.token_count;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (std::size_t i = 0; i < layers[l].attn.size(); ++i) layers[l].attn[i] += other.layers[l].attn[i];
    for (std::size_t i = 0; i < layers[l].mlp.size(); ++i) layers[l].mlp[i] += other.layers[l].mlp[i];
  }
}

CalibStats collect_stats(const ModelWeights& model, const CalibSet& calib, GramStats* gram) {
  if (calib.samples.empty()) throw InputError("calibration: empty calibration set");
  for (const auto& s : calib.samples) {
    if (s.empty()) throw InputError("calibration: empty sample");
    if (s.size() > model.config.max_seq_len)
      throw InputError("calibration: sample length " + std::to_string(s.size()) + " exceeds max_seq_len");
  }
  const std::size_t n_chunks = (calib.samples.size() + kCalibChunk - 1) / kCalibChunk;
  std::vector<CalibStats> chunk_stats(n_chunks);
  std::vector<GramStats> chunk_gram(gram ? n_chunks : 0);
  std::vector<std::string> errors(n_chunks);

#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(n_chunks); ++c) {
    try {
      CalibStats st = CalibStats::zeros(model.config);
      GramStats gs = gram ? GramStats::zeros(model.config) : GramStats{};
      ForwardOptions opts;
      opts.logits = false;
      opts.taps.sink = [&](std::size_t l, const Matrix& a, const Matrix& p) {
        st.fold(l, a, p);
        if (gram) gs.fold(l, a, p);
      };
      const std::size_t begin = static_cast<std::size_t>(c) * kCalibChunk;
      const std::size_t end = std::min(begin + kCalibChunk, calib.samples.size());
      for (std::size_t s = begin; s < end; ++s) {
        forward(model, calib.samples[s], opts);
        st.token_count += calib.samples[s].size();
        gs.token_count += calib.samples[s].size();
      }
      chunk_stats[static_cast<std::size_t>(c)] = std::move(st);
      if (gram) chunk_gram[static_cast<std::size_t>(c)] = std::move(gs);
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(c)] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw InputError("calibration: " + e);

  CalibStats total;
  for (const auto& s : chunk_stats) total = merge_stats(total, s);
  if (gram) {
    GramStats g;
    for (const auto& cg : chunk_gram) g.merge(cg);
    *gram = std::move(g);
  }
  return total;
}

CalibStats slice_stats(const CalibStats& stats, const std::vector<std::vector<std::size_t>>& keep_heads,
                       const std::vector<std::vector<std::size_t>>& keep_channels) {
  if (keep_heads.size() != stats.layers.size() || keep_channels.size() != stats.layers.size())
    throw ConfigError("slice_stats: keep-set layer count mismatch");
  CalibStats out;
  out.head_dim = stats.head_dim;
  out.token_count = stats.token_count;
  out.n_heads = keep_heads.empty() ? stats.n_heads : keep_heads.front().size();
  out.mlp_dim = keep_channels.empty() ? stats.mlp_dim : keep_channels.front().size();
  for (std::size_t l = 0; l < stats.layers.size(); ++l) {
    const auto& src = stats.layers[l];
    LayerStats dst;
    for (std::size_t k : keep_heads[l]) {
      for (std::size_t i = 0; i < stats.head_dim; ++i) {
        dst.head_sumsq.push_back(src.head_sumsq.at(k * stats.head_dim + i));
        dst.head_maxabs.push_back(src.head_maxabs.at(k * stats.head_dim + i));
      }
    }
    for (std::size_t c : keep_channels[l]) {
      dst.mlp_sumsq.push_back(src.mlp_sumsq.at(c));
      dst.mlp_maxabs.push_back(src.mlp_maxabs.at(c));
    }
    out.layers.push_back(std::move(dst));
  }
  return out;
}

void save_stats(const CalibStats& stats, const std::string& path, const nlohmann::json& provenance) {
  nlohmann::json meta = {{"kind", "stats"},
                         {"n_layers", stats.layers.size()},
                         {"n_heads", stats.n_heads},
                         {"head_dim", stats.head_dim},
                         {"mlp_dim", stats.mlp_dim},
                         {"token_count", stats.token_count}};
  if (!provenance.is_null()) meta["provenance"] = provenance;
  ContainerWriter w(meta);
  for (std::size_t l = 0; l < stats.layers.size(); ++l) {
    const auto& ls = stats.layers[l];
    const std::string p = "stats." + std::to_string(l) + ".";
    w.add(p + "head_sumsq", {stats.n_heads, stats.head_dim}, std::span<const double>(ls.head_sumsq));
    w.add(p + "head_maxabs", {stats.n_heads, stats.head_dim}, std::span<const double>(ls.head_maxabs));
    w.add(p + "mlp_sumsq", {stats.mlp_dim}, std::span<const double>(ls.mlp_sumsq));
    w.add(p + "mlp_maxabs", {stats.mlp_dim}, std::span<const double>(ls.mlp_maxabs));
  }
  w.write(path);
}

CalibStats load_stats(const std::string& path, nlohmann::json* provenance) {
  ContainerReader r(path);
  const auto& m = r.meta();
  if (m.value("kind", std::string()) != "stats") throw FormatError(path + ": not a stats container");
  CalibStats s;
  std::size_t L = 0;
  try {
    L = m.at("n_layers").get<std::size_t>();
    s.n_heads = m.at("n_heads").get<std::size_t>();
    s.head_dim = m.at("head_dim").get<std::size_t>();
    s.mlp_dim = m.at("mlp_dim").get<std::size_t>();
    s.token_count = m.at("token_count").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": malformed stats header: " + e.what());
  }
  for (std::size_t l = 0; l < L; ++l) {
    const std::string p = "stats." + std::to_string(l) + ".";
    LayerStats ls;
    ls.head_sumsq = r.read_f64(p + "head_sumsq", {s.n_heads, s.head_dim});
    ls.head_maxabs = r.read_f64(p + "head_maxabs", {s.n_heads, s.head_dim});
    ls.mlp_sumsq = r.read_f64(p + "mlp_sumsq", {s.mlp_dim});
    ls.mlp_maxabs = r.read_f64(p + "mlp_maxabs", {s.mlp_dim});
    s.layers.push_back(std::move(ls));
  }
  if (provenance) *provenance = m.value("provenance", nlohmann::json::object());
  return s;
}

}  // namespace transact

namespace transact {

std::vector<std::size_t> head_channels(const std::vector<std::size_t>& heads, std::size_t head_dim) {
  std::vector<std::size_t> out;
  out.reserve(heads.size() * head_dim);
  for (std::size_t k : heads)
    for (std::size_t i = 0; i < head_dim; ++i) out.push_back(k * head_dim + i);
  return out;
}

namespace {

std::vector<double> slice_square(const std::vector<double>& g, std::size_t d, const std::vector<std::size_t>& keep) {
  std::vector<double> out(keep.size() * keep.size());
  for (std::size_t a = 0; a < keep.size(); ++a)
    for (std::size_t b = 0; b < keep.size(); ++b) out[a * keep.size() + b] = g.at(keep[a] * d + keep[b]);
  return out;
}

}  // namespace

GramStats slice_gram(const GramStats& gram, std::size_t head_dim, const std::vector<std::vector<std::size_t>>& keep_heads,
                     const std::vector<std::vector<std::size_t>>& keep_channels) {
  if (keep_heads.size() != gram.layers.size() || keep_channels.size() != gram.layers.size())
    throw ConfigError("slice_gram: keep-set layer count mismatch");
  GramStats out;
  out.token_count = gram.token_count;
  for (std::size_t l = 0; l < gram.layers.size(); ++l) {
    const auto& src = gram.layers[l];
    const auto ch = head_channels(keep_heads[l], head_dim);
    out.layers.push_back(LayerGram{ch.size(), keep_channels[l].size(), slice_square(src.attn, src.attn_dim, ch),
                                   slice_square(src.mlp, src.mlp_dim, keep_channels[l])});
  }
  return out;
}

}  // namespace transact
