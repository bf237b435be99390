#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <vector>

#include "sake/common.hpp"
#include "sake/summarize.hpp"

namespace sake {

struct CandidateGrid {
    std::vector<int> windows;  // strictly increasing, >= 1

    static CandidateGrid range(int lo, int hi);
    static CandidateGrid parse(const std::string& text);  // "1..16" or "1,2,4,8"

    void validate() const;
    int l_min() const { return windows.front(); }
    int l_max() const { return windows.back(); }
    int size() const { return int(windows.size()); }
    bool contains(int L) const;
    int index_of(int L) const;  // throws if absent
};

struct BootstrapSpec {
    int resamples = 300;
    double level = 0.95;  // one-sided confidence
    uint64_t seed = 0;

    void validate() const;
};

// Ridge one-step predictor from the L most recent summary frames. The ridge
// penalty excludes the intercept.
struct VarFit {
    int window = 0;
    Eigen::MatrixXd coeff;      // (L*k) x k, oldest input frame first
    Eigen::RowVectorXd intercept;
    double train_mse = 0.0;     // per-element
    long train_positions = 0;
};

// min_target forces the earliest predicted index; -1 means the per-window
// default (index L). Curves pass L_max here so every window scores the same
// target set and the curve is comparable across L.
VarFit fit_var(const SummarySet& train, int L, double ridge, int min_target = -1);
double var_val_mse(const VarFit& fit, const SummarySet& val, int min_target = -1);
double fit_var_risk(const SummarySet& train, const SummarySet& val, int L, double ridge,
                    int min_target = -1);

struct RiskCurve {
    CandidateGrid grid;
    std::vector<double> risk;                      // point estimate per window
    std::vector<std::vector<double>> replicates;   // [window][B]
    std::vector<std::vector<int>> boot_indices;    // [B][n_val], shared across windows
    double ridge = 1e-3;

    double risk_at(int L) const { return risk[size_t(grid.index_of(L))]; }
    const std::vector<double>& replicates_at(int L) const {
        return replicates[size_t(grid.index_of(L))];
    }
};

// Point estimates from the full validation set; each bootstrap replicate
// resamples validation trajectories with replacement (the same index sets at
// every window) and re-scores the already-fitted coefficients.
RiskCurve risk_curve(const SummarySet& train, const SummarySet& val, const CandidateGrid& grid,
                     double ridge, const BootstrapSpec& boot);

// Empirical quantile with higher interpolation: always an attained value.
double ucb(const std::vector<double>& values, double level);

void write_risk_csv(const RiskCurve& curve, double level, const std::filesystem::path& path);

}  // namespace sake
