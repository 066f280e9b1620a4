#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "transact/config.hpp"
#include "transact/forward.hpp"
#include "transact/tensor.hpp"

namespace testutil {

inline transact::ModelConfig small_config(std::size_t layers = 2, std::size_t heads = 4, std::size_t mlp = 64,
                                          std::size_t vocab = 32, std::size_t hidden = 32) {
  transact::ModelConfig c;
  c.n_layers = layers;
  c.hidden_dim = hidden;
  c.n_heads = heads;
  c.head_dim = 16;
  c.mlp_dim = mlp;
  c.vocab_size = vocab;
  c.max_seq_len = 256;
  return c;
}

inline std::vector<transact::Token> random_tokens(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<transact::Token> out(n);
  for (auto& t : out) t = static_cast<transact::Token>(rng() % vocab);
  return out;
}

inline transact::Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  transact::Matrix m(r, c);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist;
  for (auto& v : m.data) v = dist(rng);
  return m;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("transact_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline double max_abs_diff(const transact::Matrix& a, const transact::Matrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(double(a.data[i]) - b.data[i]));
  return m;
}

}  // namespace testutil
