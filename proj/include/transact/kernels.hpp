#pragma once

// Dense compute kernels. The functions in `transact::kernels` are the
// OpenMP-parallel versions used by the forward pass; `transact::kernels::ref`
// holds straight serial loops with the same contracts, kept as the reference
// for tests and benchmarks.
//
// Every parallel kernel partitions work by output row, and each output element
// is accumulated in the same order as its serial counterpart, so results are
// bitwise identical regardless of thread count.

#include <cstddef>
#include <span>

#include "transact/tensor.hpp"

namespace transact::kernels {

/// out[m×n] = a[m×k] · b[k×n]
void matmul(const Matrix& a, const Matrix& b, Matrix& out);
/// out[m×n] = a[m×k] · b[n×k]ᵀ
void matmul_bt(const Matrix& a, const Matrix& b, Matrix& out);
/// out = x / rms(x) ⊙ weight, row-wise.
void rmsnorm(const Matrix& x, std::span<const float> weight, float eps, Matrix& out);
/// In-place rotary embedding on each head_dim-wide block of every row. Row t
/// is position t. Adjacent pairs (2i, 2i+1) rotate by t·theta^(−2i/head_dim).
void rope(Matrix& x, std::size_t head_dim, float theta);
/// Causal softmax attention for all heads. q, k, v are [T × n_heads·head_dim];
/// out receives the concatenated per-head results. When `probs` is non-null
/// it receives n_heads·T·T attention weights (zeros above the diagonal).
void causal_attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t n_heads,
                      std::size_t head_dim, Matrix& out, std::span<float> probs = {});

/// Scaled dot products accumulate in this order in both versions:
/// sum over d of q[d]*k[d], then one multiply by the scale.
namespace ref {
void matmul(const Matrix& a, const Matrix& b, Matrix& out);
void matmul_bt(const Matrix& a, const Matrix& b, Matrix& out);
void rmsnorm(const Matrix& x, std::span<const float> weight, float eps, Matrix& out);
void rope(Matrix& x, std::size_t head_dim, float theta);
void causal_attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t n_heads,
                      std::size_t head_dim, Matrix& out, std::span<float> probs = {});
}  // namespace ref

/// Cap on OpenMP worker threads (the CLI's --threads). Values < 1 restore the
/// runtime default.
void set_num_threads(int n);
int max_threads();

}  // namespace transact::kernels
