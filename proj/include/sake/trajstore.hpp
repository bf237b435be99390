#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "sake/common.hpp"

namespace sake {

// Multichannel spatiotemporal trajectory set. Values are stored as 32-bit
// floats in [traj][time][channel][h][w] order, matching the on-disk layout,
// so round trips are bit-exact. Pools are immutable after construction.
struct TrajectoryPool {
    int n_traj = 0;
    int T = 0;
    int C = 0;
    int H = 1;
    int W = 1;
    std::vector<float> data;
    std::vector<uint8_t> mask;  // empty, or H*W bytes; 1 marks a zeroed site
    nlohmann::json meta;        // generator name, parameters, seed

    size_t frame_size() const { return size_t(C) * size_t(H) * size_t(W); }
    size_t traj_size() const { return size_t(T) * frame_size(); }

    float& at(int traj, int t, int c, int y, int x) {
        return data[((size_t(traj) * T + t) * C + c) * size_t(H) * W + size_t(y) * W + x];
    }
    float at(int traj, int t, int c, int y, int x) const {
        return data[((size_t(traj) * T + t) * C + c) * size_t(H) * W + size_t(y) * W + x];
    }
    const float* frame(int traj, int t) const {
        return data.data() + (size_t(traj) * T + t) * frame_size();
    }
    float* frame(int traj, int t) {
        return data.data() + (size_t(traj) * T + t) * frame_size();
    }

    void validate() const;  // throws on inconsistent dims or non-finite values
};

// Trajectory-level partition. Sub-pools are materialized copies; the index
// vectors record which parent trajectories each split owns.
struct SplitPool {
    TrajectoryPool train, val, test;
    std::vector<int> train_idx, val_idx, test_idx;
    std::array<double, 3> fractions{};
    uint64_t seed = 0;
};

enum class PerturbKind { identity, gaussian_noise, downsample, random_mask };

struct PerturbSpec {
    PerturbKind kind = PerturbKind::identity;
    double sigma = 0.0;         // gaussian_noise
    int factor = 1;             // downsample, in {1,2,4}
    double mask_fraction = 0.0; // random_mask, in [0,1)
    uint64_t seed = 0;

    void validate() const;
};

PerturbKind perturb_kind_from_string(const std::string& s);
std::string to_string(PerturbKind k);

struct LinearSystemSpec {
    int dim = 4;
    int true_lag = 3;
    int n_traj = 32;
    int T = 64;
    double noise_sigma = 0.05;
    double stability_margin = 0.2;  // spectral radius kept <= 1 - margin
    double coef_scale = 1.0;        // 0 forces i.i.d. noise trajectories
    int burn_in = 0;                // steps simulated before recording starts
    // When > 0, lag blocks are rescaled geometrically so the companion
    // spectral radius equals this value exactly (must stay below the
    // stability cap). 0 keeps the raw resampled draw.
    double target_radius = 0.0;
    uint64_t seed = 0;
};

struct Diffusion2dSpec {
    int grid = 16;
    int n_traj = 8;
    int T = 32;
    double diffusivity = 0.2;
    double dt = 1.0;
    double dx = 1.0;
    uint64_t seed = 0;
};

// Vector autoregression with known lag order; the ground-truth memory is
// recorded in meta so selection results can be checked against it.
TrajectoryPool generate_linear_lag_system(const LinearSystemSpec& spec);

// Explicit finite-difference heat equation on a square grid with zero-flux
// boundaries; Markovian dynamics, so the ideal window is small.
TrajectoryPool generate_diffusion2d(const Diffusion2dSpec& spec);

// One explicit Euler step of the 5-point Laplacian with reflected boundaries;
// courant = diffusivity*dt/dx^2. Exposed so fixed-point behaviour is testable.
void diffusion2d_step(std::vector<double>& field, int grid, double courant);

SplitPool split_pool(const TrajectoryPool& pool, const std::array<double, 3>& fractions,
                     uint64_t seed);

TrajectoryPool perturb(const TrajectoryPool& pool, const PerturbSpec& spec);

void write_pool(const TrajectoryPool& pool, const std::filesystem::path& path);
TrajectoryPool read_pool(const std::filesystem::path& path);

}  // namespace sake
