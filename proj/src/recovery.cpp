#include "transact/recovery.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "transact/error.hpp"

namespace transact {
namespace {

// Solves (M)·X = B for symmetric positive definite M (n×n) and B (n×m), both
// row-major doubles. Returns the condition estimate; X overwrites B.
double cholesky_solve(std::vector<double> m, std::size_t n, std::vector<double>& b, std::size_t cols) {
  double max_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, m[i * n + i]);
  const double tol = std::max(max_diag, 1e-300) * 1e-12;
  double pmin = std::numeric_limits<double>::infinity(), pmax = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double d = m[j * n + j];
    for (std::size_t p = 0; p < j; ++p) d -= m[j * n + p] * m[j * n + p];
    if (!(d > tol))
      throw NumericError("least_squares_recovery: rank-deficient normal equations; use lambda > 0");
    const double l = std::sqrt(d);
    m[j * n + j] = l;
    pmin = std::min(pmin, l);
    pmax = std::max(pmax, l);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = m[i * n + j];
      for (std::size_t p = 0; p < j; ++p) s -= m[i * n + p] * m[j * n + p];
      m[i * n + j] = s / l;
    }
  }
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(cols); ++ci) {
    const auto c = static_cast<std::size_t>(ci);
    for (std::size_t i = 0; i < n; ++i) {
      double s = b[i * cols + c];
      for (std::size_t p = 0; p < i; ++p) s -= m[i * n + p] * b[p * cols + c];
      b[i * cols + c] = s / m[i * n + i];
    }
    for (std::size_t ii = n; ii-- > 0;) {
      double s = b[ii * cols + c];
      for (std::size_t p = ii + 1; p < n; ++p) s -= m[p * n + ii] * b[p * cols + c];
      b[ii * cols + c] = s / m[ii * n + ii];
    }
  }
  return (pmax / pmin) * (pmax / pmin);
}

// Minimizes Σ_h (w_hᵀ G w_h − 2 w_hᵀ c_h) + ‖Y‖² + λ_eff‖W − W_sliced‖². All
// inputs row-major doubles: gkk D′×D′, cross D′×H, anchor D′×H.
RecoveryFit solve_normal(const std::vector<double>& gkk, const std::vector<double>& cross, double y_norm,
                         const std::vector<double>& anchor, std::size_t dk, std::size_t h_dim,
                         std::size_t token_count, double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda: must be a non-negative real");
  auto objective = [&](const std::vector<double>& w) {
    double q = 0.0;
    for (std::size_t a = 0; a < dk; ++a)
      for (std::size_t b = 0; b < dk; ++b) {
        const double g = gkk[a * dk + b];
        if (g == 0.0) continue;
        for (std::size_t h = 0; h < h_dim; ++h) q += w[a * h_dim + h] * g * w[b * h_dim + h];
      }
    for (std::size_t i = 0; i < dk * h_dim; ++i) q -= 2.0 * w[i] * cross[i];
    return std::max(0.0, q + y_norm);
  };
  double trace = 0.0;
  for (std::size_t a = 0; a < dk; ++a) trace += gkk[a * dk + a];

  RecoveryFit fit;
  const double denom = static_cast<double>(std::max<std::size_t>(token_count, 1) * h_dim);
  fit.mse_before = objective(anchor) / denom;
  fit.lambda = lambda == 0.0 ? 0.0 : (trace > 0.0 ? lambda * trace / static_cast<double>(dk) : lambda);

  std::vector<double> m = gkk;
  for (std::size_t a = 0; a < dk; ++a) m[a * dk + a] += fit.lambda;
  std::vector<double> rhs(dk * h_dim);
  for (std::size_t i = 0; i < dk * h_dim; ++i) rhs[i] = cross[i] + fit.lambda * anchor[i];
  fit.condition = cholesky_solve(std::move(m), dk, rhs, h_dim);
  fit.mse_after = objective(rhs) / denom;

  fit.weights = Matrix(dk, h_dim);
  for (std::size_t i = 0; i < dk * h_dim; ++i) fit.weights.data[i] = static_cast<float>(rhs[i]);
  return fit;
}

}  // namespace

RecoveryFit least_squares_recovery(std::span<const double> gram, std::size_t token_count,
                                   const std::vector<std::size_t>& keep, const Matrix& w_full, double lambda) {
  const std::size_t D = w_full.rows, H = w_full.cols, Dk = keep.size();
  if (gram.size() != D * D) throw ConfigError("least_squares_recovery: Gram size does not match W rows");
  if (Dk == 0) throw ConfigError("least_squares_recovery: empty keep-set");
  for (std::size_t i = 0; i < Dk; ++i)
    if (keep[i] >= D || (i > 0 && keep[i] <= keep[i - 1]))
      throw ConfigError("least_squares_recovery: keep-set must be sorted and within range");

  // gw = G·W_full gives both the cross term (its kept rows) and ‖Y‖².
  std::vector<double> gw(D * H, 0.0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(D); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* out = gw.data() + i * H;
    for (std::size_t j = 0; j < D; ++j) {
      const double g = gram[i * D + j];
      if (g == 0.0) continue;
      const float* wr = w_full.data.data() + j * H;
      for (std::size_t h = 0; h < H; ++h) out[h] += g * static_cast<double>(wr[h]);
    }
  }
  double y_norm = 0.0;
  for (std::size_t i = 0; i < D * H; ++i) y_norm += static_cast<double>(w_full.data[i]) * gw[i];

  std::vector<double> gkk(Dk * Dk), cross(Dk * H), anchor(Dk * H);
  for (std::size_t a = 0; a < Dk; ++a) {
    for (std::size_t b = 0; b < Dk; ++b) gkk[a * Dk + b] = gram[keep[a] * D + keep[b]];
    for (std::size_t h = 0; h < H; ++h) {
      cross[a * H + h] = gw[keep[a] * H + h];
      anchor[a * H + h] = w_full(keep[a], h);
    }
  }
  return solve_normal(gkk, cross, y_norm, anchor, Dk, H, token_count, lambda);
}

RecoveryFit least_squares_recovery(const Matrix& full_acts, const Matrix& pruned_acts, const Matrix& w_full,
                                   const Matrix& w_sliced, double lambda) {
  if (full_acts.cols != w_full.rows || pruned_acts.cols != w_sliced.rows || w_full.cols != w_sliced.cols ||
      full_acts.rows != pruned_acts.rows)
    throw ConfigError("least_squares_recovery: inconsistent shapes");
  const std::size_t T = full_acts.rows, D = full_acts.cols, Dk = pruned_acts.cols, H = w_full.cols;
  if (Dk == 0) throw ConfigError("least_squares_recovery: empty keep-set");

  std::vector<double> gkk(Dk * Dk, 0.0), cross(Dk * H, 0.0), anchor(Dk * H), y(H);
  double y_norm = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    std::fill(y.begin(), y.end(), 0.0);
    for (std::size_t j = 0; j < D; ++j) {
      const double x = full_acts(t, j);
      if (x == 0.0) continue;
      for (std::size_t h = 0; h < H; ++h) y[h] += x * static_cast<double>(w_full(j, h));
    }
    for (double v : y) y_norm += v * v;
    for (std::size_t a = 0; a < Dk; ++a) {
      const double xa = pruned_acts(t, a);
      if (xa == 0.0) continue;
      for (std::size_t b = 0; b < Dk; ++b) gkk[a * Dk + b] += xa * static_cast<double>(pruned_acts(t, b));
      for (std::size_t h = 0; h < H; ++h) cross[a * H + h] += xa * y[h];
    }
  }
  for (std::size_t i = 0; i < Dk * H; ++i) anchor[i] = w_sliced.data[i];
  return solve_normal(gkk, cross, y_norm, anchor, Dk, H, T, lambda);
}

}  // namespace transact
