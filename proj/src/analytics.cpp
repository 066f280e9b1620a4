#include "transact/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "transact/error.hpp"

namespace transact::analytics {

ParamCounts count_params(const ModelConfig& cfg) {
  const std::uint64_t H = cfg.hidden_dim, A = cfg.attn_dim(), P = cfg.mlp_dim, V = cfg.vocab_size;
  ParamCounts c;
  c.per_mha = 3 * H * A + A * H;
  c.per_mlp = (cfg.has_gate ? 2 : 1) * H * P + P * H;
  c.per_layer_norms = 2 * H;
  c.embed = V * H;
  c.lm_head = cfg.tied_embeddings ? 0 : H * V;
  c.final_norm = H;
  c.total = cfg.n_layers * (c.per_mha + c.per_mlp + c.per_layer_norms) + c.embed + c.lm_head + c.final_norm;
  return c;
}

std::uint64_t kv_cache_values(const ModelConfig& cfg, std::uint64_t seq_len) {
  return 2 * static_cast<std::uint64_t>(cfg.n_layers) * cfg.n_heads * cfg.head_dim * seq_len;
}

namespace {

double matmul_per_token(const ModelConfig& cfg) {
  const double H = static_cast<double>(cfg.hidden_dim), A = static_cast<double>(cfg.attn_dim()),
               P = static_cast<double>(cfg.mlp_dim), V = static_cast<double>(cfg.vocab_size);
  const double mha = 2.0 * (3.0 * H * A + A * H);
  const double mlp = cfg.has_gate ? 2.0 * (2.0 * H * P + P * H) : 2.0 * (H * P + P * H);
  return static_cast<double>(cfg.n_layers) * (mha + mlp) + 2.0 * H * V;
}

double attention_per_key(const ModelConfig& cfg) {
  return 4.0 * static_cast<double>(cfg.n_layers) * static_cast<double>(cfg.attn_dim());
}

double secondary_per_token(const ModelConfig& cfg) {
  const double H = static_cast<double>(cfg.hidden_dim), P = static_cast<double>(cfg.mlp_dim),
               L = static_cast<double>(cfg.n_layers);
  const double norms = 4.0 * H * (2.0 * L + 1.0);
  const double act = L * (4.0 * P + (cfg.has_gate ? P : 0.0));
  const double resid = L * 2.0 * H;
  return norms + act + resid;
}

double softmax_per_key(const ModelConfig& cfg) {
  return 5.0 * static_cast<double>(cfg.n_layers) * static_cast<double>(cfg.n_heads);
}

}  // namespace

FlopsEstimate flops_estimate(const ModelConfig& cfg, std::uint64_t ctx_len, std::uint64_t n_generated) {
  FlopsEstimate f;
  f.ctx_len = ctx_len;
  f.n_generated = n_generated;
  const double mm = matmul_per_token(cfg), att = attention_per_key(cfg);
  const double sec = secondary_per_token(cfg), sm = softmax_per_key(cfg);
  const double n = static_cast<double>(ctx_len);
  // Σ_{t=0}^{n−1} (t+1) visible keys.
  const double keys = n * (n + 1.0) / 2.0;
  f.prefill = n * mm + att * keys;
  f.secondary_prefill = n * sec + sm * keys;
  f.decode_per_token = mm + att * (n + 1.0);
  f.secondary_decode = sec + sm * (n + 1.0);
  f.generate_total = f.prefill;
  for (std::uint64_t j = 1; j < n_generated; ++j) f.generate_total += mm + att * (n + static_cast<double>(j));
  return f;
}

double change_pct(double value, double ref) { return 100.0 * (value - ref) / ref; }

CostReport cost_report(const std::string& name, const ModelConfig& cfg, std::uint64_t seq_len,
                       const std::vector<std::uint64_t>& ctx_lens, std::uint64_t dtype_bytes) {
  validate(cfg, /*allow_zero_layers=*/true);
  CostReport r;
  r.name = name;
  r.config = cfg;
  r.params = count_params(cfg);
  r.seq_len = seq_len;
  r.kv_cache_values = kv_cache_values(cfg, seq_len);
  r.kv_cache_bytes = r.kv_cache_values * dtype_bytes;
  for (auto c : ctx_lens) r.flops.push_back(flops_estimate(cfg, c));
  return r;
}

void compare(CostReport& report, const CostReport& ref) {
  if (report.flops.size() != ref.flops.size()) throw ConfigError("compare: context lists differ");
  report.params_change_pct = change_pct(static_cast<double>(report.params.total), static_cast<double>(ref.params.total));
  report.kv_change_pct =
      ref.kv_cache_values == 0
          ? 0.0
          : change_pct(static_cast<double>(report.kv_cache_values), static_cast<double>(ref.kv_cache_values));
  report.flops_prefill_change_pct.clear();
  report.flops_decode_change_pct.clear();
  for (std::size_t i = 0; i < report.flops.size(); ++i) {
    report.flops_prefill_change_pct.push_back(
        ref.flops[i].prefill == 0.0 ? 0.0 : change_pct(report.flops[i].prefill, ref.flops[i].prefill));
    report.flops_decode_change_pct.push_back(change_pct(report.flops[i].decode_per_token, ref.flops[i].decode_per_token));
  }
}

nlohmann::json to_json(const CostReport& r) {
  nlohmann::json flops = nlohmann::json::array();
  for (std::size_t i = 0; i < r.flops.size(); ++i) {
    const auto& f = r.flops[i];
    nlohmann::json e = {{"ctx_len", f.ctx_len},
                        {"flops_prefill", f.prefill},
                        {"flops_decode_per_token", f.decode_per_token},
                        {"flops_secondary_prefill", f.secondary_prefill},
                        {"flops_secondary_decode", f.secondary_decode}};
    if (i < r.flops_prefill_change_pct.size()) {
      e["flops_prefill_change_pct"] = r.flops_prefill_change_pct[i];
      e["flops_decode_change_pct"] = r.flops_decode_change_pct[i];
    }
    flops.push_back(e);
  }
  nlohmann::json j = {
      {"name", r.name},
      {"config", to_json(r.config)},
      {"params_total", r.params.total},
      {"params_per_mha", r.params.per_mha},
      {"params_per_mlp", r.params.per_mlp},
      {"params_embed", r.params.embed},
      {"params_lm_head", r.params.lm_head},
      {"params_norms", r.params.per_layer_norms * r.config.n_layers + r.params.final_norm},
      {"seq_len", r.seq_len},
      {"kv_cache_values", r.kv_cache_values},
      {"kv_cache_bytes", r.kv_cache_bytes},
      {"flops", flops},
      {"flops_convention",
       "MAC=2; headline = layer matmuls 2(3HA+AH)+2(2HP+PH) per token + attention 4A per visible key + LM head 2HV "
       "per token; secondary (softmax, norms, activation, residual) reported separately; embedding lookup free"},
      {"embedding_tying", r.config.tied_embeddings ? "tied (lm_head shares embed)" : "untied (lm_head counted)"},
  };
  if (r.params_change_pct) j["params_change_pct"] = *r.params_change_pct;
  if (r.kv_change_pct) j["kv_change_pct"] = *r.kv_change_pct;
  return j;
}

std::string csv_header() {
  return "name,n_layers,hidden_dim,n_heads,head_dim,mlp_dim,vocab_size,params_total,params_per_mha,params_per_mlp,"
         "params_embed,seq_len,kv_cache_values,kv_cache_bytes,ctx_len,flops_prefill,flops_decode_per_token,"
         "flops_secondary_prefill,flops_secondary_decode,params_change_pct,kv_change_pct,flops_prefill_change_pct,"
         "flops_decode_change_pct\n";
}

std::string csv_rows(const CostReport& r) {
  std::ostringstream os;
  os.precision(17);
  auto opt = [&](const std::optional<double>& v) {
    if (v) os << *v;
  };
  const auto& c = r.config;
  for (std::size_t i = 0; i < std::max<std::size_t>(r.flops.size(), 1); ++i) {
    os << r.name << ',' << c.n_layers << ',' << c.hidden_dim << ',' << c.n_heads << ',' << c.head_dim << ','
       << c.mlp_dim << ',' << c.vocab_size << ',' << r.params.total << ',' << r.params.per_mha << ','
       << r.params.per_mlp << ',' << r.params.embed << ',' << r.seq_len << ',' << r.kv_cache_values << ','
       << r.kv_cache_bytes << ',';
    if (i < r.flops.size()) {
      const auto& f = r.flops[i];
      os << f.ctx_len << ',' << f.prefill << ',' << f.decode_per_token << ',' << f.secondary_prefill << ','
         << f.secondary_decode;
    } else {
      os << ",,,,";
    }
    os << ',';
    opt(r.params_change_pct);
    os << ',';
    opt(r.kv_change_pct);
    os << ',';
    if (i < r.flops_prefill_change_pct.size()) os << r.flops_prefill_change_pct[i];
    os << ',';
    if (i < r.flops_decode_change_pct.size()) os << r.flops_decode_change_pct[i];
    os << '\n';
  }
  return os.str();
}

std::vector<GridPoint> sweep_grid(const ModelConfig& base, const std::vector<std::uint64_t>& attn_values,
                                  const std::vector<std::uint64_t>& mlp_values, std::uint64_t seq_len,
                                  const std::vector<std::uint64_t>& ctx_lens, double group_rel_tol) {
  std::vector<GridPoint> grid;
  for (auto a : attn_values) {
    if (a == 0 || a % base.head_dim != 0)
      throw ConfigError("attn_values: " + std::to_string(a) + " is not a positive multiple of head_dim");
    for (auto p : mlp_values) {
      if (p == 0) throw ConfigError("mlp_values: must be positive");
      ModelConfig cfg = base;
      cfg.n_heads = a / base.head_dim;
      cfg.mlp_dim = p;
      GridPoint gp;
      gp.attn_dim = a;
      gp.mlp_dim = p;
      gp.report = cost_report(std::to_string(a) + "A-" + std::to_string(p) + "P", cfg, seq_len, ctx_lens);
      grid.push_back(std::move(gp));
    }
  }
  // Group by ascending parameter count; a point joins the current group when
  // it is within tolerance of the group's first member.
  std::vector<std::size_t> order(grid.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return grid[x].report.params.total < grid[y].report.params.total; });
  std::size_t group = 0;
  double anchor = -1.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const double p = static_cast<double>(grid[order[k]].report.params.total);
    if (k == 0) {
      anchor = p;
    } else if (std::abs(p - anchor) > group_rel_tol * anchor) {
      ++group;
      anchor = p;
    }
    grid[order[k]].group = group;
  }
  return grid;
}

namespace {

ModelConfig llama_shape(std::size_t L, std::size_t H, std::size_t heads, std::size_t P) {
  ModelConfig c;
  c.n_layers = L;
  c.hidden_dim = H;
  c.n_heads = heads;
  c.head_dim = 128;
  c.mlp_dim = P;
  c.vocab_size = 32000;
  c.has_gate = true;
  c.activation = Activation::silu;
  c.norm_eps = 1e-5f;
  c.rope_theta = 10000.0f;
  c.max_seq_len = 4096;
  c.tied_embeddings = false;
  return c;
}

}  // namespace

ModelConfig llama2_7b() { return llama_shape(32, 4096, 32, 11008); }
ModelConfig transact_2_6b() { return llama_shape(32, 4096, 16, 3072); }
ModelConfig transact_1_3b() { return llama_shape(32, 4096, 6, 1536); }
ModelConfig sheared_llama_2_7b() { return llama_shape(32, 2560, 20, 6912); }
ModelConfig sheared_llama_1_3b() { return llama_shape(24, 2048, 16, 5504); }

}  // namespace transact::analytics
