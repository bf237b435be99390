#pragma once

// Test-only reference implementations. These deliberately avoid the library's
// solver paths (plain least squares via SVD, naive loops) so they can serve
// as independent oracles for the values frozen in the test suites.

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <vector>

#include "sake/rng.hpp"
#include "sake/trajstore.hpp"

namespace testutil {

// Plain (un-regularized) least-squares VAR(L) oracle on raw channel data of a
// (H=W=1) pool: fit on `train`, return per-element one-step MSE on `val`.
// Solved with JacobiSVD; no alignment, no ridge, no intercept handling shared
// with the library.
inline double var_ls_val_mse(const sake::TrajectoryPool& train, const sake::TrajectoryPool& val,
                             int L) {
    const int d = train.C;
    auto rows_of = [&](const sake::TrajectoryPool& p) {
        int n = 0;
        for (int traj = 0; traj < p.n_traj; ++traj) n += p.T - L;
        return n;
    };
    Eigen::MatrixXd X(rows_of(train), L * d + 1);
    Eigen::MatrixXd Y(rows_of(train), d);
    int r = 0;
    for (int traj = 0; traj < train.n_traj; ++traj) {
        for (int t = L; t < train.T; ++t) {
            for (int i = 0; i < L; ++i)
                for (int c = 0; c < d; ++c)
                    X(r, i * d + c) = train.at(traj, t - L + i, c, 0, 0);
            X(r, L * d) = 1.0;
            for (int c = 0; c < d; ++c) Y(r, c) = train.at(traj, t, c, 0, 0);
            ++r;
        }
    }
    Eigen::MatrixXd W =
        X.jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(Y);

    double sse = 0.0;
    long count = 0;
    for (int traj = 0; traj < val.n_traj; ++traj) {
        for (int t = L; t < val.T; ++t) {
            Eigen::RowVectorXd x(L * d + 1);
            for (int i = 0; i < L; ++i)
                for (int c = 0; c < d; ++c) x(i * d + c) = val.at(traj, t - L + i, c, 0, 0);
            x(L * d) = 1.0;
            Eigen::RowVectorXd pred = x * W;
            for (int c = 0; c < d; ++c) {
                const double e = pred(c) - val.at(traj, t, c, 0, 0);
                sse += e * e;
            }
            count += d;
        }
    }
    return sse / double(count);
}

// Brute-force knee scan: smallest L with M(L) <= (1+eps) * min(M), where the
// minimum is taken by direct enumeration.
inline int brute_force_knee(const std::vector<int>& grid, const std::vector<double>& m,
                            double eps) {
    double best = m[0];
    for (double v : m) best = std::min(best, v);
    for (size_t i = 0; i < grid.size(); ++i)
        if (m[i] <= (1.0 + eps) * best) return grid[i];
    return grid.back();
}

// Random valid pool for round-trip property tests.
inline sake::TrajectoryPool random_pool(sake::RngStream& rng, bool with_mask) {
    sake::TrajectoryPool pool;
    pool.n_traj = rng.uniform_int(1, 4);
    pool.T = rng.uniform_int(2, 7);
    pool.C = rng.uniform_int(1, 3);
    pool.H = rng.uniform_int(1, 5);
    pool.W = rng.uniform_int(1, 5);
    pool.data.resize(size_t(pool.n_traj) * pool.traj_size());
    for (float& v : pool.data) v = float(rng.normal());
    if (with_mask) {
        pool.mask.assign(size_t(pool.H) * pool.W, 0);
        for (auto& m : pool.mask) m = uint8_t(rng.uniform() < 0.3 ? 1 : 0);
    }
    pool.meta = {{"generator", "random"}, {"seed", 0}};
    return pool;
}

}  // namespace testutil
