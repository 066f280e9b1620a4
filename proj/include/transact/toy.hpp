#pragma once

// Desk-scale fixtures: a seeded synthetic corpus with learnable structure and
// a small double-precision trainer, so tests and the CLI have a genuinely
// trained tiny model without external data.

#include <cstdint>
#include <span>
#include <vector>

#include "transact/forward.hpp"
#include "transact/model.hpp"

namespace transact::toy {

/// Token t+1 follows a sparse table keyed on token t with probability
/// `p_bigram`, otherwise a second table keyed on token t−1. Each table row
/// holds `branching` successors with geometrically decaying weights.
struct CorpusSpec {
  std::size_t vocab = 48;
  std::size_t branching = 2;
  double p_bigram = 0.6;
  std::uint64_t seed = 1;
};

std::vector<Token> generate_corpus(const CorpusSpec& spec, std::size_t n_tokens, std::uint64_t stream_seed);

/// Default tiny architecture: L=2, H=64, A_n=4, A_d=16, P=128, gated SiLU.
ModelConfig tiny_config(std::size_t vocab = 48);

/// All trainable parameters of a model flattened into one double vector.
class FlatModel {
 public:
  explicit FlatModel(const ModelWeights& w);

  [[nodiscard]] ModelWeights to_weights() const;
  [[nodiscard]] const ModelConfig& config() const { return cfg_; }

  std::vector<double> params;

  struct LayerOffsets {
    std::size_t wq, wk, wv, wo, wg, wu, wd, attn_norm, mlp_norm;
  };
  std::size_t embed = 0, lm_head = 0, final_norm = 0;
  std::vector<LayerOffsets> layers;

 private:
  ModelConfig cfg_;
};

/// Mean next-token NLL of `seq` under the double-precision forward. When
/// `grad` is non-null the gradient w.r.t. FlatModel::params is added into it.
double loss_and_grad(const FlatModel& model, std::span<const Token> seq, std::vector<double>* grad);

struct TrainConfig {
  std::size_t steps = 500;
  std::size_t batch = 16;
  std::size_t seq_len = 64;
  double lr = 1e-2;
  double final_lr_frac = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
};

struct TrainResult {
  ModelWeights model;
  std::vector<double> losses;  // mean batch loss per step
};

/// Adam with linear learning-rate decay on random corpus windows.
TrainResult train(const ModelWeights& init, std::span<const Token> corpus, const TrainConfig& cfg);

}  // namespace transact::toy
