#include "transact/model_io.hpp"

#include "transact/container.hpp"
#include "transact/error.hpp"

namespace transact {
namespace {

void add(ContainerWriter& w, const std::string& name, const Matrix& m) {
  w.add(name, {m.rows, m.cols}, std::span<const float>(m.data));
}

void add(ContainerWriter& w, const std::string& name, const std::vector<float>& v) {
  w.add(name, {v.size()}, std::span<const float>(v));
}

Matrix read(const ContainerReader& r, const std::string& name, std::size_t rows, std::size_t cols) {
  Matrix m;
  m.rows = rows;
  m.cols = cols;
  m.data = r.read_f32(name, {rows, cols});
  return m;
}

}  // namespace

void save_model(const ModelWeights& model, const std::string& path) {
  if (!model.config_only()) validate(model);
  ContainerWriter w({{"kind", "model"}, {"config", to_json(model.config)}, {"weights", !model.config_only()}});
  if (!model.config_only()) {
    add(w, "embed", model.embed);
    if (!model.config.tied_embeddings) add(w, "lm_head", model.lm_head);
    add(w, "final_norm", model.final_norm);
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
      const auto& lw = model.layers[l];
      const std::string p = "layers." + std::to_string(l) + ".";
      add(w, p + "attn.wq", lw.wq);
      add(w, p + "attn.wk", lw.wk);
      add(w, p + "attn.wv", lw.wv);
      add(w, p + "attn.wo", lw.wo);
      add(w, p + "attn.norm", lw.attn_norm);
      if (model.config.has_gate) add(w, p + "mlp.wg", lw.wg);
      add(w, p + "mlp.wu", lw.wu);
      add(w, p + "mlp.wd", lw.wd);
      add(w, p + "mlp.norm", lw.mlp_norm);
    }
  }
  w.write(path);
}

void save_config_only(const ModelConfig& cfg, const std::string& path) {
  ModelWeights m;
  m.config = cfg;
  save_model(m, path);
}

ModelWeights load_model(const std::string& path) {
  ContainerReader r(path);
  const auto& meta = r.meta();
  if (meta.value("kind", std::string("model")) != "model") throw FormatError(path + ": not a model container");
  if (!meta.contains("config")) throw FormatError(path + ": header has no config");
  ModelWeights m;
  m.config = config_from_json(meta.at("config"));
  if (!meta.value("weights", true)) {
    if (!r.header().tensors.empty()) throw FormatError(path + ": config-only file carries tensors");
    return m;
  }
  const auto& cfg = m.config;
  const std::size_t H = cfg.hidden_dim, A = cfg.attn_dim(), P = cfg.mlp_dim, V = cfg.vocab_size;
  m.embed = read(r, "embed", V, H);
  if (!cfg.tied_embeddings) m.lm_head = read(r, "lm_head", H, V);
  m.final_norm = r.read_f32("final_norm", {H});
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    LayerWeights lw;
    const std::string p = "layers." + std::to_string(l) + ".";
    lw.wq = read(r, p + "attn.wq", H, A);
    lw.wk = read(r, p + "attn.wk", H, A);
    lw.wv = read(r, p + "attn.wv", H, A);
    lw.wo = read(r, p + "attn.wo", A, H);
    lw.attn_norm = r.read_f32(p + "attn.norm", {H});
    if (cfg.has_gate) lw.wg = read(r, p + "mlp.wg", H, P);
    lw.wu = read(r, p + "mlp.wu", H, P);
    lw.wd = read(r, p + "mlp.wd", P, H);
    lw.mlp_norm = r.read_f32(p + "mlp.norm", {H});
    m.layers.push_back(std::move(lw));
  }
  validate(m);
  return m;
}

}  // namespace transact
