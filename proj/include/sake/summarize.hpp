#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <vector>

#include "sake/trajstore.hpp"

namespace sake {

enum class SummaryMethod { pca, svd, random_projection, identity };

SummaryMethod summary_method_from_string(const std::string& s);
std::string to_string(SummaryMethod m);

struct ProjectorSpec {
    SummaryMethod method = SummaryMethod::pca;
    double variance_target = 0.99;  // pca/svd only
    int max_components = 64;
    int fit_samples = 800;
    int coarsen_factor = 1;
    // Feature pipeline order. Default coarsens the raw field first and
    // normalizes the coarse features; the alternative standardizes at full
    // resolution before block-averaging, kept as a sensitivity knob.
    bool normalize_first = false;
    uint64_t seed = 0;

    void validate() const;
    uint64_t hash() const;
};

// Fitted affine summary map: z = basis * ((flatten(coarsen(frame)) - mean) / scale),
// or with the normalization applied before coarsening when normalize_first is
// set (mean/scale then live at full resolution).
struct Projector {
    SummaryMethod method = SummaryMethod::pca;
    int coarsen_factor = 1;
    bool normalize_first = false;
    Eigen::VectorXd mean;   // per normalized feature
    Eigen::VectorXd scale;  // per normalized feature, entries > 0
    Eigen::MatrixXd basis;  // k x d; orthonormal rows for pca/svd
    int k = 0;
    double explained = 0.0;   // cumulative explained-variance fraction (pca/svd)
    bool degenerate = false;  // zero-variance input, all scales floored
    uint64_t spec_hash = 0;

    int input_dim() const { return int(mean.size()); }
};

// Per-trajectory summary sequences, aligned to source timesteps.
struct SummarySet {
    std::vector<Eigen::MatrixXd> traj;  // each T x k
    int k = 0;
    uint64_t provenance = 0;

    int n_traj() const { return int(traj.size()); }
    int length(int i) const { return int(traj[size_t(i)].rows()); }
};

Projector fit_projector(const TrajectoryPool& pool, const ProjectorSpec& spec);
SummarySet project(const Projector& proj, const TrajectoryPool& pool);

void write_projector(const Projector& proj, const std::filesystem::path& path);
Projector read_projector(const std::filesystem::path& path);

}  // namespace sake
