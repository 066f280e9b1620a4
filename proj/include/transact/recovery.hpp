#pragma once

#include <span>
#include <vector>

#include "transact/tensor.hpp"

namespace transact {

/// Closed-form ridge refit of a contracting projection (W_O or W_D) after its
/// input channels were pruned:
///
///   W′ = argmin_W ‖X_k·W − X·W_full‖²_F + λ_eff‖W − W_sliced‖²_F
///
/// where X holds the full transitional activations and X_k its kept columns.
/// λ_eff = lambda · trace(X_kᵀX_k)/D′ (lambda itself when that trace is zero).
struct RecoveryFit {
  Matrix weights;           // D′ × H
  double mse_before = 0.0;  // objective at W_sliced, per output element
  double mse_after = 0.0;   // objective at W′
  double lambda = 0.0;      // λ_eff
  double condition = 0.0;   // (max/min Cholesky pivot)², a cheap condition estimate
};

/// Gram form. `gram` is XᵀX (D×D row-major) over `token_count` tokens, `keep`
/// the sorted surviving input rows of `w_full` (D×H). Throws NumericError for
/// a rank-deficient system with lambda = 0.
RecoveryFit least_squares_recovery(std::span<const double> gram, std::size_t token_count,
                                   const std::vector<std::size_t>& keep, const Matrix& w_full, double lambda);

/// Explicit-activation form: full_acts [T×D], pruned_acts [T×D′] (the
/// surviving activations), w_full [D×H], w_sliced [D′×H].
RecoveryFit least_squares_recovery(const Matrix& full_acts, const Matrix& pruned_acts, const Matrix& w_full,
                                   const Matrix& w_sliced, double lambda);

}  // namespace transact
