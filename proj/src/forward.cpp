#include "transact/forward.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "transact/activation.hpp"
#include "transact/error.hpp"
#include "transact/kernels.hpp"

namespace transact {

bool TapSelection::selects(std::size_t layer) const {
  return layers.empty() || std::find(layers.begin(), layers.end(), layer) != layers.end();
}

namespace {

void check_finite(const Matrix& x, std::size_t layer, const char* where) {
  for (float v : x.data)
    if (!std::isfinite(v))
      throw NumericError("non-finite activation in layer " + std::to_string(layer) + " (" + where + ")");
}

void add_inplace(Matrix& x, const Matrix& y) {
  for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += y.data[i];
}

void apply_head_mask(Matrix& act, const std::vector<bool>& keep, std::size_t head_dim) {
  if (keep.empty()) return;
  for (std::size_t t = 0; t < act.rows; ++t) {
    auto r = act.row(t);
    for (std::size_t k = 0; k < keep.size(); ++k)
      if (!keep[k]) std::fill_n(r.begin() + static_cast<std::ptrdiff_t>(k * head_dim), head_dim, 0.0f);
  }
}

void apply_channel_mask(Matrix& act, const std::vector<bool>& keep) {
  if (keep.empty()) return;
  for (std::size_t t = 0; t < act.rows; ++t) {
    auto r = act.row(t);
    for (std::size_t i = 0; i < keep.size(); ++i)
      if (!keep[i]) r[i] = 0.0f;
  }
}

}  // namespace

ForwardTrace forward(const ModelWeights& model, std::span<const Token> tokens, const ForwardOptions& opts) {
  const auto& cfg = model.config;
  if (model.config_only()) throw ConfigError("model: config-only file has no weights to run");
  if (tokens.empty()) throw InputError("forward: empty token sequence");
  if (tokens.size() > cfg.max_seq_len)
    throw InputError("forward: sequence length " + std::to_string(tokens.size()) + " exceeds max_seq_len " +
                     std::to_string(cfg.max_seq_len));
  for (std::size_t t = 0; t < tokens.size(); ++t)
    if (tokens[t] >= cfg.vocab_size)
      throw InputError("forward: token " + std::to_string(tokens[t]) + " at position " + std::to_string(t) +
                       " out of range for vocab " + std::to_string(cfg.vocab_size));
  if (opts.mask) {
    const auto& m = *opts.mask;
    if ((!m.keep_heads.empty() && m.keep_heads.size() != cfg.n_layers) ||
        (!m.keep_channels.empty() && m.keep_channels.size() != cfg.n_layers))
      throw ConfigError("mask: layer count mismatch");
  }

  const std::size_t T = tokens.size();
  const std::size_t H = cfg.hidden_dim;
  const auto& taps = opts.taps;

  ForwardTrace trace;
  if (taps.materialize_attn) trace.act_attn.resize(cfg.n_layers);
  if (taps.materialize_mlp) trace.act_mlp.resize(cfg.n_layers);
  if (taps.attention_probs) trace.attn_probs.resize(cfg.n_layers);

  Matrix x(T, H);
  for (std::size_t t = 0; t < T; ++t) std::copy_n(model.embed.row(tokens[t]).begin(), H, x.row(t).begin());

  Matrix normed, q, k, v, act_a, proj, gate, up;
  std::vector<float> probs;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const auto& lw = model.layers[l];
    const bool tapped = taps.selects(l);

    kernels::rmsnorm(x, lw.attn_norm, cfg.norm_eps, normed);
    kernels::matmul(normed, lw.wq, q);
    kernels::matmul(normed, lw.wk, k);
    kernels::matmul(normed, lw.wv, v);
    kernels::rope(q, cfg.head_dim, cfg.rope_theta);
    kernels::rope(k, cfg.head_dim, cfg.rope_theta);
    const bool want_probs = taps.attention_probs && tapped;
    probs.assign(want_probs ? cfg.n_heads * T * T : 0, 0.0f);
    kernels::causal_attention(q, k, v, cfg.n_heads, cfg.head_dim, act_a, probs);
    if (opts.mask && !opts.mask->keep_heads.empty()) apply_head_mask(act_a, opts.mask->keep_heads[l], cfg.head_dim);
    kernels::matmul(act_a, lw.wo, proj);
    add_inplace(x, proj);
    check_finite(x, l, "attention");

    kernels::rmsnorm(x, lw.mlp_norm, cfg.norm_eps, normed);
    kernels::matmul(normed, lw.wu, up);
    if (cfg.has_gate) {
      kernels::matmul(normed, lw.wg, gate);
      for (std::size_t i = 0; i < up.data.size(); ++i) up.data[i] *= activate(cfg.activation, gate.data[i]);
    } else {
      for (auto& u : up.data) u = activate(cfg.activation, u);
    }
    Matrix& act_p = up;
    if (opts.mask && !opts.mask->keep_channels.empty()) apply_channel_mask(act_p, opts.mask->keep_channels[l]);
    kernels::matmul(act_p, lw.wd, proj);
    add_inplace(x, proj);
    check_finite(x, l, "mlp");

    if (tapped) {
      if (taps.sink) taps.sink(l, act_a, act_p);
      if (taps.materialize_attn) trace.act_attn[l] = act_a;
      if (taps.materialize_mlp) trace.act_mlp[l] = act_p;
      if (want_probs) trace.attn_probs[l] = std::move(probs);
    }
  }

  if (opts.logits) {
    kernels::rmsnorm(x, model.final_norm, cfg.norm_eps, normed);
    if (cfg.tied_embeddings) kernels::matmul_bt(normed, model.embed, trace.logits);
    else kernels::matmul(normed, model.lm_head, trace.logits);
    check_finite(trace.logits, cfg.n_layers, "lm_head");
  }
  return trace;
}

}  // namespace transact
