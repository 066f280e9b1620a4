#include "transact/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cassert>
#include <cmath>
#include <vector>

namespace transact::kernels {
namespace {

void matmul_row(const Matrix& a, const Matrix& b, Matrix& out, std::size_t i) {
  float* o = out.data.data() + i * out.cols;
  std::fill(o, o + out.cols, 0.0f);
  const float* ar = a.data.data() + i * a.cols;
  for (std::size_t p = 0; p < a.cols; ++p) {
    const float av = ar[p];
    const float* br = b.data.data() + p * b.cols;
    for (std::size_t j = 0; j < b.cols; ++j) o[j] += av * br[j];
  }
}

void matmul_bt_row(const Matrix& a, const Matrix& b, Matrix& out, std::size_t i) {
  const float* ar = a.data.data() + i * a.cols;
  float* o = out.data.data() + i * out.cols;
  for (std::size_t j = 0; j < b.rows; ++j) {
    const float* br = b.data.data() + j * b.cols;
    float acc = 0.0f;
    for (std::size_t p = 0; p < a.cols; ++p) acc += ar[p] * br[p];
    o[j] = acc;
  }
}

void rmsnorm_row(const Matrix& x, std::span<const float> w, float eps, Matrix& out, std::size_t i) {
  const float* xr = x.data.data() + i * x.cols;
  float* o = out.data.data() + i * out.cols;
  float ss = 0.0f;
  for (std::size_t j = 0; j < x.cols; ++j) ss += xr[j] * xr[j];
  const float scale = 1.0f / std::sqrt(ss / static_cast<float>(x.cols) + eps);
  for (std::size_t j = 0; j < x.cols; ++j) o[j] = xr[j] * scale * w[j];
}

void rope_row(Matrix& x, std::size_t head_dim, float theta, std::size_t t) {
  float* r = x.data.data() + t * x.cols;
  const std::size_t half = head_dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::pow(static_cast<double>(theta), -2.0 * static_cast<double>(i) / head_dim);
    const double angle = static_cast<double>(t) * freq;
    const float c = static_cast<float>(std::cos(angle));
    const float s = static_cast<float>(std::sin(angle));
    for (std::size_t h = 0; h + head_dim <= x.cols; h += head_dim) {
      float& a = r[h + 2 * i];
      float& b = r[h + 2 * i + 1];
      const float a0 = a;
      const float b0 = b;
      a = a0 * c - b0 * s;
      b = a0 * s + b0 * c;
    }
  }
}

// One (head, query position) of causal attention. `scores` must hold T floats.
void attention_row(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t head,
                   std::size_t head_dim, std::size_t t, Matrix& out, float* scores) {
  const std::size_t off = head * head_dim;
  const float scale = 1.0f / std::sqrt(static_cast<float>(head_dim));
  const float* qr = q.data.data() + t * q.cols + off;
  float mx = -INFINITY;
  for (std::size_t u = 0; u <= t; ++u) {
    const float* kr = k.data.data() + u * k.cols + off;
    float acc = 0.0f;
    for (std::size_t d = 0; d < head_dim; ++d) acc += qr[d] * kr[d];
    scores[u] = acc * scale;
    mx = std::max(mx, scores[u]);
  }
  float denom = 0.0f;
  for (std::size_t u = 0; u <= t; ++u) {
    scores[u] = std::exp(scores[u] - mx);
    denom += scores[u];
  }
  const float inv = 1.0f / denom;
  for (std::size_t u = 0; u <= t; ++u) scores[u] *= inv;
  float* o = out.data.data() + t * out.cols + off;
  std::fill(o, o + head_dim, 0.0f);
  for (std::size_t u = 0; u <= t; ++u) {
    const float* vr = v.data.data() + u * v.cols + off;
    const float p = scores[u];
    for (std::size_t d = 0; d < head_dim; ++d) o[d] += p * vr[d];
  }
}

void prepare(Matrix& out, std::size_t rows, std::size_t cols) {
  if (out.rows != rows || out.cols != cols) {
    out.rows = rows;
    out.cols = cols;
    out.data.assign(rows * cols, 0.0f);
  }
}

void store_probs(std::span<float> probs, std::size_t head, std::size_t t, std::size_t T,
                 const float* scores) {
  if (probs.empty()) return;
  float* dst = probs.data() + (head * T + t) * T;
  std::copy(scores, scores + t + 1, dst);
  std::fill(dst + t + 1, dst + T, 0.0f);
}

}  // namespace

void matmul(const Matrix& a, const Matrix& b, Matrix& out) {
  assert(a.cols == b.rows);
  prepare(out, a.rows, b.cols);
  const auto m = static_cast<std::ptrdiff_t>(a.rows);
#pragma omp parallel for schedule(static) if (m > 1)
  for (std::ptrdiff_t i = 0; i < m; ++i) matmul_row(a, b, out, static_cast<std::size_t>(i));
}

void matmul_bt(const Matrix& a, const Matrix& b, Matrix& out) {
  assert(a.cols == b.cols);
  prepare(out, a.rows, b.rows);
  const auto m = static_cast<std::ptrdiff_t>(a.rows);
#pragma omp parallel for schedule(static) if (m > 1)
  for (std::ptrdiff_t i = 0; i < m; ++i) matmul_bt_row(a, b, out, static_cast<std::size_t>(i));
}

void rmsnorm(const Matrix& x, std::span<const float> weight, float eps, Matrix& out) {
  assert(weight.size() == x.cols);
  prepare(out, x.rows, x.cols);
  const auto m = static_cast<std::ptrdiff_t>(x.rows);
#pragma omp parallel for schedule(static) if (m > 1)
  for (std::ptrdiff_t i = 0; i < m; ++i) rmsnorm_row(x, weight, eps, out, static_cast<std::size_t>(i));
}

void rope(Matrix& x, std::size_t head_dim, float theta) {
  const auto m = static_cast<std::ptrdiff_t>(x.rows);
#pragma omp parallel for schedule(static) if (m > 1)
  for (std::ptrdiff_t t = 0; t < m; ++t) rope_row(x, head_dim, theta, static_cast<std::size_t>(t));
}

void causal_attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t n_heads,
                      std::size_t head_dim, Matrix& out, std::span<float> probs) {
  const std::size_t T = q.rows;
  prepare(out, T, n_heads * head_dim);
  assert(probs.empty() || probs.size() == n_heads * T * T);
  const auto work = static_cast<std::ptrdiff_t>(n_heads * T);
#pragma omp parallel if (work > 1)
  {
    std::vector<float> scores(T);
#pragma omp for schedule(static)
    for (std::ptrdiff_t w = 0; w < work; ++w) {
      const std::size_t h = static_cast<std::size_t>(w) / T;
      const std::size_t t = static_cast<std::size_t>(w) % T;
      attention_row(q, k, v, h, head_dim, t, out, scores.data());
      store_probs(probs, h, t, T, scores.data());
    }
  }
}

void set_num_threads(int n) {
  omp_set_num_threads(n < 1 ? omp_get_num_procs() : n);
}

int max_threads() { return omp_get_max_threads(); }

namespace ref {

void matmul(const Matrix& a, const Matrix& b, Matrix& out) {
  prepare(out, a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) matmul_row(a, b, out, i);
}

void matmul_bt(const Matrix& a, const Matrix& b, Matrix& out) {
  prepare(out, a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) matmul_bt_row(a, b, out, i);
}

void rmsnorm(const Matrix& x, std::span<const float> weight, float eps, Matrix& out) {
  prepare(out, x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) rmsnorm_row(x, weight, eps, out, i);
}

void rope(Matrix& x, std::size_t head_dim, float theta) {
  for (std::size_t t = 0; t < x.rows; ++t) rope_row(x, head_dim, theta, t);
}

void causal_attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t n_heads,
                      std::size_t head_dim, Matrix& out, std::span<float> probs) {
  const std::size_t T = q.rows;
  prepare(out, T, n_heads * head_dim);
  std::vector<float> scores(T);
  for (std::size_t h = 0; h < n_heads; ++h) {
    for (std::size_t t = 0; t < T; ++t) {
      attention_row(q, k, v, h, head_dim, t, out, scores.data());
      store_probs(probs, h, t, T, scores.data());
    }
  }
}

}  // namespace ref
}  // namespace transact::kernels
