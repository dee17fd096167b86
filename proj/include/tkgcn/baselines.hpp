#pragma once

#include <cstddef>
#include <vector>

#include "tkgcn/koopman.hpp"
#include "tkgcn/tensor.hpp"

namespace tkgcn {

// Comparison forecasters: dynamic mode decomposition, vector autoregression,
// and rollout through a trained autoencoder's linear latent operator alone.
// All forecasts come back as a (horizon, dim) tensor, one predicted state per
// row, matching the convention used by the transformer rollout.

struct DMDConfig {
    std::size_t rank = 32;
    // Singular values at or below this floor are excluded from the inversion,
    // shrinking the effective rank.
    double singular_value_floor = 1e-12;
};

struct DMDModel {
    std::size_t requested_rank = 0;
    std::size_t rank = 0;     // effective rank actually retained
    Tensor basis;             // (N, rank); orthonormal columns
    Tensor reduced_operator;  // (rank, rank)
    Tensor last_state;        // (N); final training snapshot

    // One step of U A U^T applied to a state vector of length N.
    Tensor predict(const Tensor& state) const;
};

// Fits exact DMD on a snapshot matrix whose columns are consecutive states:
// snapshots is (N, T) with T >= 2. The propagator is built from the rank-r
// truncated SVD of the first T-1 columns.
DMDModel dmd_fit(const Tensor& snapshots, const DMDConfig& config = {});

// Iterates the reduced propagator `horizon` times starting from `initial`
// (length N). Row i holds the prediction i+1 steps ahead.
Tensor dmd_forecast(const DMDModel& model, const Tensor& initial, long long horizon);

struct VARConfig {
    std::size_t order = 1;
    double ridge = 1e-6;
};

struct VARModel {
    std::size_t order = 0;
    std::size_t dimension = 0;
    std::vector<Tensor> coefficients;  // A_1..A_p, each (d, d)
    Tensor intercept;                  // (d)

    // Next state from the p most recent states, newest last. Each row of
    // `recent` is one state; recent has shape (p, d).
    Tensor predict(const Tensor& recent) const;
};

// Least-squares fit of x(t) = c + sum_i A_i x(t-i) on a (T, d) series, one
// state per row, with ridge penalty on the coefficient matrices (never on the
// intercept). T must exceed the order. A singular problem with ridge = 0 is
// reported as an error suggesting a positive ridge.
VARModel var_fit(const Tensor& series, const VARConfig& config = {});

// Recursive forecast feeding predictions back in. `history` is (>= p, d) with
// the newest state in the last row; returns (horizon, d).
Tensor var_forecast(const VARModel& model, const Tensor& history, long long horizon);

// Evolves the latent encoding of `frame` with powers of the learned linear
// operator and decodes each step: row i is decode(encode(frame) K^(i+1)).
// `frame` may be shaped (N) or (N, 1); the result is (horizon, N).
Tensor pure_koopman_forecast(const KoopmanAutoencoder& model, const Tensor& frame,
                             long long horizon);

}  // namespace tkgcn
