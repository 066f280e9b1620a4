#include "transact/toy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <spdlog/spdlog.h>

#include "transact/activation.hpp"
#include "transact/error.hpp"

namespace transact::toy {

std::vector<Token> generate_corpus(const CorpusSpec& spec, std::size_t n_tokens, std::uint64_t stream_seed) {
  if (spec.vocab < 2 || spec.branching < 1 || spec.branching > spec.vocab)
    throw ConfigError("corpus: invalid vocab/branching");
  std::mt19937_64 table_rng(spec.seed);
  auto make_table = [&] {
    std::vector<std::vector<Token>> t(spec.vocab);
    std::vector<Token> all(spec.vocab);
    std::iota(all.begin(), all.end(), Token{0});
    for (auto& row : t) {
      std::shuffle(all.begin(), all.end(), table_rng);
      row.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(spec.branching));
    }
    return t;
  };
  const auto bigram = make_table();
  const auto skip = make_table();
  std::vector<double> weights(spec.branching);
  for (std::size_t i = 0; i < spec.branching; ++i) weights[i] = std::pow(0.5, static_cast<double>(i));

  std::mt19937_64 rng(stream_seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::uniform_int_distribution<Token> any(0, static_cast<Token>(spec.vocab - 1));
  std::vector<Token> out;
  out.reserve(n_tokens);
  for (std::size_t t = 0; t < n_tokens; ++t) {
    if (t < 2) {
      out.push_back(any(rng));
      continue;
    }
    const auto& row = coin(rng) < spec.p_bigram ? bigram[out[t - 1]] : skip[out[t - 2]];
    out.push_back(row[pick(rng)]);
  }
  return out;
}

ModelConfig tiny_config(std::size_t vocab) {
  ModelConfig c;
  c.n_layers = 2;
  c.hidden_dim = 64;
  c.n_heads = 4;
  c.head_dim = 16;
  c.mlp_dim = 128;
  c.vocab_size = vocab;
  c.has_gate = true;
  c.activation = Activation::silu;
  c.max_seq_len = 256;
  return c;
}

FlatModel::FlatModel(const ModelWeights& w) : cfg_(w.config) {
  validate(w);
  auto push = [&](const std::vector<float>& v) {
    const std::size_t off = params.size();
    params.insert(params.end(), v.begin(), v.end());
    return off;
  };
  embed = push(w.embed.data);
  lm_head = push(w.lm_head.data);
  final_norm = push(w.final_norm);
  for (const auto& lw : w.layers) {
    LayerOffsets o{};
    o.wq = push(lw.wq.data);
    o.wk = push(lw.wk.data);
    o.wv = push(lw.wv.data);
    o.wo = push(lw.wo.data);
    o.wg = push(lw.wg.data);
    o.wu = push(lw.wu.data);
    o.wd = push(lw.wd.data);
    o.attn_norm = push(lw.attn_norm);
    o.mlp_norm = push(lw.mlp_norm);
    layers.push_back(o);
  }
}

ModelWeights FlatModel::to_weights() const {
  const auto& c = cfg_;
  const std::size_t H = c.hidden_dim, A = c.attn_dim(), P = c.mlp_dim, V = c.vocab_size;
  auto mat = [&](std::size_t off, std::size_t r, std::size_t cols) {
    Matrix m(r, cols);
    for (std::size_t i = 0; i < r * cols; ++i) m.data[i] = static_cast<float>(params[off + i]);
    return m;
  };
  auto vec = [&](std::size_t off, std::size_t n) {
    std::vector<float> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<float>(params[off + i]);
    return v;
  };
  ModelWeights w;
  w.config = c;
  w.embed = mat(embed, V, H);
  if (!c.tied_embeddings) w.lm_head = mat(lm_head, H, V);
  w.final_norm = vec(final_norm, H);
  for (const auto& o : layers) {
    LayerWeights lw;
    lw.wq = mat(o.wq, H, A);
    lw.wk = mat(o.wk, H, A);
    lw.wv = mat(o.wv, H, A);
    lw.wo = mat(o.wo, A, H);
    if (c.has_gate) lw.wg = mat(o.wg, H, P);
    lw.wu = mat(o.wu, H, P);
    lw.wd = mat(o.wd, P, H);
    lw.attn_norm = vec(o.attn_norm, H);
    lw.mlp_norm = vec(o.mlp_norm, H);
    w.layers.push_back(std::move(lw));
  }
  return w;
}

namespace {

using Vec = std::vector<double>;

// c[m×n] = a[m×k]·b[k×n]
void mm(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* br = b + p * n;
      double* cr = c + i * n;
      for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
}

// c[m×n] += a[m×k]·b[n×k]ᵀ
void mm_bt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] += s;
    }
}

// c[m×n] += a[k×m]ᵀ·b[k×n]
void mm_at_acc(const double* a, const double* b, double* c, std::size_t k, std::size_t m, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t i = 0; i < m; ++i) {
      const double av = a[p * m + i];
      if (av == 0.0) continue;
      const double* br = b + p * n;
      double* cr = c + i * n;
      for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
}

void rmsnorm_fwd(const Vec& x, const double* w, double eps, std::size_t T, std::size_t H, Vec& y, Vec& r) {
  y.assign(T * H, 0.0);
  r.assign(T, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    double ss = 0.0;
    for (std::size_t j = 0; j < H; ++j) ss += x[t * H + j] * x[t * H + j];
    r[t] = 1.0 / std::sqrt(ss / static_cast<double>(H) + eps);
    for (std::size_t j = 0; j < H; ++j) y[t * H + j] = x[t * H + j] * r[t] * w[j];
  }
}

// Adds dL/dx into dx and dL/dw into dw.
void rmsnorm_bwd(const Vec& x, const Vec& r, const double* w, const Vec& dy, std::size_t T, std::size_t H, Vec& dx,
                 double* dw) {
  for (std::size_t t = 0; t < T; ++t) {
    double dot = 0.0;
    for (std::size_t j = 0; j < H; ++j) {
      dot += dy[t * H + j] * w[j] * x[t * H + j];
      if (dw) dw[j] += dy[t * H + j] * x[t * H + j] * r[t];
    }
    const double r3 = r[t] * r[t] * r[t] / static_cast<double>(H);
    for (std::size_t j = 0; j < H; ++j) dx[t * H + j] += r[t] * w[j] * dy[t * H + j] - r3 * x[t * H + j] * dot;
  }
}

// Rotates (sign = +1) or un-rotates (sign = −1) every head_dim block.
void rope_apply(Vec& x, std::size_t T, std::size_t width, std::size_t d, double theta, double sign) {
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < d / 2; ++i) {
      const double angle = sign * static_cast<double>(t) * std::pow(theta, -2.0 * static_cast<double>(i) / static_cast<double>(d));
      const double c = std::cos(angle), s = std::sin(angle);
      for (std::size_t h = 0; h + d <= width; h += d) {
        double& a = x[t * width + h + 2 * i];
        double& b = x[t * width + h + 2 * i + 1];
        const double a0 = a, b0 = b;
        a = a0 * c - b0 * s;
        b = a0 * s + b0 * c;
      }
    }
}

struct LayerCache {
  Vec x_in, r1, n1, q, k, v, probs, o, x_mid, r2, n2, g, u, a;
};

}  // namespace

double loss_and_grad(const FlatModel& model, std::span<const Token> seq, std::vector<double>* grad) {
  const auto& c = model.config();
  const std::size_t T = seq.size();
  if (T < 2) throw InputError("loss_and_grad: sequence needs at least 2 tokens");
  const std::size_t H = c.hidden_dim, A = c.attn_dim(), P = c.mlp_dim, V = c.vocab_size, nh = c.n_heads,
                    d = c.head_dim;
  const double* p = model.params.data();
  const double eps = c.norm_eps;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (Token t : seq)
    if (t >= V) throw InputError("loss_and_grad: token out of range");

  // Forward.
  std::vector<LayerCache> cache(c.n_layers);
  Vec x(T * H);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < H; ++j) x[t * H + j] = p[model.embed + seq[t] * H + j];
  Vec tmp(T * H);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto& o = model.layers[l];
    auto& lc = cache[l];
    lc.x_in = x;
    rmsnorm_fwd(x, p + o.attn_norm, eps, T, H, lc.n1, lc.r1);
    lc.q.resize(T * A);
    lc.k.resize(T * A);
    lc.v.resize(T * A);
    mm(lc.n1.data(), p + o.wq, lc.q.data(), T, H, A);
    mm(lc.n1.data(), p + o.wk, lc.k.data(), T, H, A);
    mm(lc.n1.data(), p + o.wv, lc.v.data(), T, H, A);
    rope_apply(lc.q, T, A, d, c.rope_theta, 1.0);
    rope_apply(lc.k, T, A, d, c.rope_theta, 1.0);
    lc.probs.assign(nh * T * T, 0.0);
    lc.o.assign(T * A, 0.0);
    for (std::size_t h = 0; h < nh; ++h)
      for (std::size_t t = 0; t < T; ++t) {
        double* pr = lc.probs.data() + (h * T + t) * T;
        double mx = -INFINITY;
        for (std::size_t s = 0; s <= t; ++s) {
          double acc = 0.0;
          for (std::size_t e = 0; e < d; ++e) acc += lc.q[t * A + h * d + e] * lc.k[s * A + h * d + e];
          pr[s] = acc * scale;
          mx = std::max(mx, pr[s]);
        }
        double z = 0.0;
        for (std::size_t s = 0; s <= t; ++s) z += (pr[s] = std::exp(pr[s] - mx));
        for (std::size_t s = 0; s <= t; ++s) {
          pr[s] /= z;
          for (std::size_t e = 0; e < d; ++e) lc.o[t * A + h * d + e] += pr[s] * lc.v[s * A + h * d + e];
        }
      }
    mm(lc.o.data(), p + o.wo, tmp.data(), T, A, H);
    for (std::size_t i = 0; i < T * H; ++i) x[i] += tmp[i];
    lc.x_mid = x;
    rmsnorm_fwd(x, p + o.mlp_norm, eps, T, H, lc.n2, lc.r2);
    lc.u.resize(T * P);
    mm(lc.n2.data(), p + o.wu, lc.u.data(), T, H, P);
    lc.a.resize(T * P);
    if (c.has_gate) {
      lc.g.resize(T * P);
      mm(lc.n2.data(), p + o.wg, lc.g.data(), T, H, P);
      for (std::size_t i = 0; i < T * P; ++i) lc.a[i] = activate(c.activation, lc.g[i]) * lc.u[i];
    } else {
      for (std::size_t i = 0; i < T * P; ++i) lc.a[i] = activate(c.activation, lc.u[i]);
    }
    mm(lc.a.data(), p + o.wd, tmp.data(), T, P, H);
    for (std::size_t i = 0; i < T * H; ++i) x[i] += tmp[i];
  }
  Vec nf, rf;
  rmsnorm_fwd(x, p + model.final_norm, eps, T, H, nf, rf);
  Vec logits(T * V);
  if (c.tied_embeddings) {
    std::fill(logits.begin(), logits.end(), 0.0);
    mm_bt_acc(nf.data(), p + model.embed, logits.data(), T, H, V);
  } else {
    mm(nf.data(), p + model.lm_head, logits.data(), T, H, V);
  }

  const std::size_t n_pred = T - 1;
  double loss = 0.0;
  Vec dlogits(T * V, 0.0);
  for (std::size_t t = 0; t < n_pred; ++t) {
    const double* lr = logits.data() + t * V;
    const double mx = *std::max_element(lr, lr + V);
    double z = 0.0;
    for (std::size_t j = 0; j < V; ++j) z += std::exp(lr[j] - mx);
    const double lse = mx + std::log(z);
    loss += lse - lr[seq[t + 1]];
    for (std::size_t j = 0; j < V; ++j) dlogits[t * V + j] = std::exp(lr[j] - lse) / static_cast<double>(n_pred);
    dlogits[t * V + seq[t + 1]] -= 1.0 / static_cast<double>(n_pred);
  }
  loss /= static_cast<double>(n_pred);
  if (!grad) return loss;

  // Backward.
  auto& g = *grad;
  if (g.size() != model.params.size()) g.assign(model.params.size(), 0.0);
  double* gp = g.data();

  Vec dnf(T * H, 0.0);
  if (c.tied_embeddings) {
    mm(dlogits.data(), p + model.embed, dnf.data(), T, V, H);
    mm_at_acc(dlogits.data(), nf.data(), gp + model.embed, T, V, H);
  } else {
    mm_at_acc(nf.data(), dlogits.data(), gp + model.lm_head, T, H, V);
    mm_bt_acc(dlogits.data(), p + model.lm_head, dnf.data(), T, V, H);
  }
  Vec dx(T * H, 0.0);
  rmsnorm_bwd(x, rf, p + model.final_norm, dnf, T, H, dx, gp + model.final_norm);

  for (std::size_t li = c.n_layers; li-- > 0;) {
    const auto& o = model.layers[li];
    auto& lc = cache[li];
    // MLP: x_out = x_mid + a·W_D
    mm_at_acc(lc.a.data(), dx.data(), gp + o.wd, T, P, H);
    Vec da(T * P, 0.0);
    mm_bt_acc(dx.data(), p + o.wd, da.data(), T, H, P);
    Vec du(T * P), dg;
    if (c.has_gate) {
      dg.resize(T * P);
      for (std::size_t i = 0; i < T * P; ++i) {
        du[i] = da[i] * activate(c.activation, lc.g[i]);
        dg[i] = da[i] * lc.u[i] * activate_grad(c.activation, lc.g[i]);
      }
    } else {
      for (std::size_t i = 0; i < T * P; ++i) du[i] = da[i] * activate_grad(c.activation, lc.u[i]);
    }
    Vec dn2(T * H, 0.0);
    mm_at_acc(lc.n2.data(), du.data(), gp + o.wu, T, H, P);
    mm_bt_acc(du.data(), p + o.wu, dn2.data(), T, P, H);
    if (c.has_gate) {
      mm_at_acc(lc.n2.data(), dg.data(), gp + o.wg, T, H, P);
      mm_bt_acc(dg.data(), p + o.wg, dn2.data(), T, P, H);
    }
    rmsnorm_bwd(lc.x_mid, lc.r2, p + o.mlp_norm, dn2, T, H, dx, gp + o.mlp_norm);

    // Attention: x_mid = x_in + o·W_O
    mm_at_acc(lc.o.data(), dx.data(), gp + o.wo, T, A, H);
    Vec dout(T * A, 0.0);
    mm_bt_acc(dx.data(), p + o.wo, dout.data(), T, H, A);
    Vec dq(T * A, 0.0), dk(T * A, 0.0), dv(T * A, 0.0), dp(T);
    for (std::size_t h = 0; h < nh; ++h)
      for (std::size_t t = 0; t < T; ++t) {
        const double* pr = lc.probs.data() + (h * T + t) * T;
        double rowdot = 0.0;
        for (std::size_t s = 0; s <= t; ++s) {
          double acc = 0.0;
          for (std::size_t e = 0; e < d; ++e) {
            acc += dout[t * A + h * d + e] * lc.v[s * A + h * d + e];
            dv[s * A + h * d + e] += pr[s] * dout[t * A + h * d + e];
          }
          dp[s] = acc;
          rowdot += acc * pr[s];
        }
        for (std::size_t s = 0; s <= t; ++s) {
          const double ds = pr[s] * (dp[s] - rowdot) * scale;
          for (std::size_t e = 0; e < d; ++e) {
            dq[t * A + h * d + e] += ds * lc.k[s * A + h * d + e];
            dk[s * A + h * d + e] += ds * lc.q[t * A + h * d + e];
          }
        }
      }
    rope_apply(dq, T, A, d, c.rope_theta, -1.0);
    rope_apply(dk, T, A, d, c.rope_theta, -1.0);
    Vec dn1(T * H, 0.0);
    mm_at_acc(lc.n1.data(), dq.data(), gp + o.wq, T, H, A);
    mm_at_acc(lc.n1.data(), dk.data(), gp + o.wk, T, H, A);
    mm_at_acc(lc.n1.data(), dv.data(), gp + o.wv, T, H, A);
    mm_bt_acc(dq.data(), p + o.wq, dn1.data(), T, A, H);
    mm_bt_acc(dk.data(), p + o.wk, dn1.data(), T, A, H);
    mm_bt_acc(dv.data(), p + o.wv, dn1.data(), T, A, H);
    rmsnorm_bwd(lc.x_in, lc.r1, p + o.attn_norm, dn1, T, H, dx, gp + o.attn_norm);
  }
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < H; ++j) gp[model.embed + seq[t] * H + j] += dx[t * H + j];
  return loss;
}

TrainResult train(const ModelWeights& init, std::span<const Token> corpus, const TrainConfig& cfg) {
  if (corpus.size() < cfg.seq_len + 1) throw InputError("train: corpus shorter than one window");
  if (cfg.seq_len > init.config.max_seq_len) throw ConfigError("seq_len: exceeds max_seq_len");
  if (cfg.batch < 1 || cfg.steps < 1) throw ConfigError("train: batch and steps must be positive");
  FlatModel fm(init);
  const std::size_t n = fm.params.size();
  Vec m1(n, 0.0), m2(n, 0.0);
  std::mt19937_64 rng(cfg.seed);
  TrainResult res;
  std::vector<Vec> grads(cfg.batch);
  std::vector<double> losses(cfg.batch);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::vector<std::size_t> offsets(cfg.batch);
    for (auto& o : offsets) o = rng() % (corpus.size() - cfg.seq_len + 1);
#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(cfg.batch); ++b) {
      auto& gb = grads[static_cast<std::size_t>(b)];
      gb.assign(n, 0.0);
      losses[static_cast<std::size_t>(b)] =
          loss_and_grad(fm, corpus.subspan(offsets[static_cast<std::size_t>(b)], cfg.seq_len), &gb);
    }
    Vec g(n, 0.0);
    double loss = 0.0;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      loss += losses[b];
      for (std::size_t i = 0; i < n; ++i) g[i] += grads[b][i];
    }
    const double inv = 1.0 / static_cast<double>(cfg.batch);
    double norm = 0.0;
    for (auto& v : g) {
      v *= inv;
      norm += v * v;
    }
    norm = std::sqrt(norm);
    const double clip = (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) ? cfg.clip_norm / norm : 1.0;
    const double frac = static_cast<double>(step) / static_cast<double>(std::max<std::size_t>(cfg.steps - 1, 1));
    const double lr = cfg.lr * (1.0 - (1.0 - cfg.final_lr_frac) * frac);
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step + 1));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step + 1));
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = g[i] * clip;
      m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * gi;
      m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * gi * gi;
      fm.params[i] -= lr * (m1[i] / bc1) / (std::sqrt(m2[i] / bc2) + cfg.eps);
    }
    res.losses.push_back(loss * inv);
    if ((step + 1) % 100 == 0) spdlog::debug("train step {}: loss {:.4f}", step + 1, loss * inv);
  }
  res.model = fm.to_weights();
  return res;
}

}  // namespace transact::toy
