#include "transact/model.hpp"

#include <cmath>
#include <random>

#include "transact/error.hpp"

namespace transact {
namespace {

Matrix gaussian(std::size_t r, std::size_t c, float stddev, std::mt19937_64& rng) {
  std::normal_distribution<float> dist(0.0f, stddev);
  Matrix m(r, c);
  for (auto& v : m.data) v = dist(rng);
  return m;
}

void check_shape(const Matrix& m, std::size_t r, std::size_t c, const std::string& name) {
  if (m.rows != r || m.cols != c || m.data.size() != r * c)
    throw ConfigError(name + ": shape " + std::to_string(m.rows) + "x" + std::to_string(m.cols) +
                      " does not match config " + std::to_string(r) + "x" + std::to_string(c));
  for (float v : m.data)
    if (!std::isfinite(v)) throw NumericError(name + ": non-finite weight");
}

void check_vec(const std::vector<float>& v, std::size_t n, const std::string& name) {
  if (v.size() != n) throw ConfigError(name + ": length " + std::to_string(v.size()) + " != " + std::to_string(n));
  for (float x : v)
    if (!std::isfinite(x)) throw NumericError(name + ": non-finite weight");
}

}  // namespace

ModelWeights random_model(const ModelConfig& cfg, std::uint64_t seed, float scale) {
  validate(cfg);
  std::mt19937_64 rng(seed);
  const std::size_t H = cfg.hidden_dim, A = cfg.attn_dim(), P = cfg.mlp_dim;
  const float sh = scale / std::sqrt(static_cast<float>(H));
  ModelWeights m;
  m.config = cfg;
  m.embed = gaussian(cfg.vocab_size, H, 1.0f, rng);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    LayerWeights lw;
    lw.wq = gaussian(H, A, sh, rng);
    lw.wk = gaussian(H, A, sh, rng);
    lw.wv = gaussian(H, A, sh, rng);
    lw.wo = gaussian(A, H, scale / std::sqrt(static_cast<float>(A)), rng);
    if (cfg.has_gate) lw.wg = gaussian(H, P, sh, rng);
    lw.wu = gaussian(H, P, sh, rng);
    lw.wd = gaussian(P, H, scale / std::sqrt(static_cast<float>(P)), rng);
    lw.attn_norm.assign(H, 1.0f);
    lw.mlp_norm.assign(H, 1.0f);
    m.layers.push_back(std::move(lw));
  }
  m.final_norm.assign(H, 1.0f);
  if (!cfg.tied_embeddings) m.lm_head = gaussian(H, cfg.vocab_size, sh, rng);
  return m;
}

void validate(const ModelWeights& model) {
  const auto& cfg = model.config;
  validate(cfg);
  if (model.layers.size() != cfg.n_layers)
    throw ConfigError("layers: model has " + std::to_string(model.layers.size()) + " layers, config says " +
                      std::to_string(cfg.n_layers));
  const std::size_t H = cfg.hidden_dim, A = cfg.attn_dim(), P = cfg.mlp_dim;
  check_shape(model.embed, cfg.vocab_size, H, "embed");
  check_vec(model.final_norm, H, "final_norm");
  if (cfg.tied_embeddings) {
    if (!model.lm_head.empty()) throw ConfigError("lm_head: must be empty for tied embeddings");
  } else {
    check_shape(model.lm_head, H, cfg.vocab_size, "lm_head");
  }
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& lw = model.layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    check_shape(lw.wq, H, A, p + "attn.wq");
    check_shape(lw.wk, H, A, p + "attn.wk");
    check_shape(lw.wv, H, A, p + "attn.wv");
    check_shape(lw.wo, A, H, p + "attn.wo");
    if (cfg.has_gate) check_shape(lw.wg, H, P, p + "mlp.wg");
    else if (!lw.wg.empty()) throw ConfigError(p + "mlp.wg: present but config has no gate");
    check_shape(lw.wu, H, P, p + "mlp.wu");
    check_shape(lw.wd, P, H, p + "mlp.wd");
    check_vec(lw.attn_norm, H, p + "attn.norm");
    check_vec(lw.mlp_norm, H, p + "mlp.norm");
  }
}

std::size_t element_count(const ModelWeights& model) {
  std::size_t n = model.embed.size() + model.final_norm.size() + model.lm_head.size();
  for (const auto& lw : model.layers) {
    n += lw.wq.size() + lw.wk.size() + lw.wv.size() + lw.wo.size();
    n += lw.wg.size() + lw.wu.size() + lw.wd.size();
    n += lw.attn_norm.size() + lw.mlp_norm.size();
  }
  return n;
}

}  // namespace transact
