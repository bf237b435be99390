#include "sake/sysrisk.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "sake/rng.hpp"

namespace sake {

CandidateGrid CandidateGrid::range(int lo, int hi) {
    CandidateGrid g;
    for (int L = lo; L <= hi; ++L) g.windows.push_back(L);
    g.validate();
    return g;
}

CandidateGrid CandidateGrid::parse(const std::string& text) {
    CandidateGrid g;
    const auto dots = text.find("..");
    if (dots != std::string::npos) {
        const int lo = std::stoi(text.substr(0, dots));
        const int hi = std::stoi(text.substr(dots + 2));
        return range(lo, hi);
    }
    size_t pos = 0;
    while (pos < text.size()) {
        size_t next = text.find(',', pos);
        if (next == std::string::npos) next = text.size();
        g.windows.push_back(std::stoi(text.substr(pos, next - pos)));
        pos = next + 1;
    }
    g.validate();
    return g;
}

void CandidateGrid::validate() const {
    require(!windows.empty(), ErrKind::config, "candidate grid must be nonempty");
    require(windows.front() >= 1, ErrKind::config, "candidate windows must be >= 1");
    for (size_t i = 1; i < windows.size(); ++i)
        require(windows[i] > windows[i - 1], ErrKind::config,
                "candidate grid must be strictly increasing");
}

bool CandidateGrid::contains(int L) const {
    return std::binary_search(windows.begin(), windows.end(), L);
}

int CandidateGrid::index_of(int L) const {
    const auto it = std::lower_bound(windows.begin(), windows.end(), L);
    require(it != windows.end() && *it == L, ErrKind::config,
            "window " + std::to_string(L) + " is not on the grid");
    return int(it - windows.begin());
}

void BootstrapSpec::validate() const {
    require(resamples >= 2, ErrKind::config, "bootstrap resamples must be >= 2");
    require(level > 0.5 && level < 1.0, ErrKind::config,
            "bootstrap level must lie in (0.5, 1)");
}

namespace {

long positions_in(const SummarySet& s, int start) {
    long n = 0;
    for (int i = 0; i < s.n_traj(); ++i) n += std::max(0, s.length(i) - start);
    return n;
}

// Fill one design row: summaries [s-L .. s-1], oldest first.
void fill_row(const Eigen::MatrixXd& traj, int s, int L, int k, Eigen::RowVectorXd& row) {
    for (int i = 0; i < L; ++i) row.segment(i * k, k) = traj.row(s - L + i);
}

}  // namespace

VarFit fit_var(const SummarySet& train, int L, double ridge, int min_target) {
    require(L >= 1, ErrKind::config, "window must be >= 1");
    require(ridge > 0.0, ErrKind::config, "ridge must be > 0");
    const int start = std::max(L, min_target < 0 ? L : min_target);
    for (int i = 0; i < train.n_traj(); ++i)
        require(train.length(i) > L, ErrKind::fit,
                "trajectory shorter than window " + std::to_string(L));

    const int k = train.k;
    const int dx = L * k;
    const long rows = positions_in(train, start);
    require(rows >= 1, ErrKind::fit, "no admissible training positions for window " +
                                         std::to_string(L));

    // Normal equations over [features | 1]; the ridge penalty skips the
    // intercept coordinate.
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(dx + 1, dx + 1);
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(dx + 1, k);
    Eigen::RowVectorXd row(dx + 1);
    row[dx] = 1.0;
    for (int i = 0; i < train.n_traj(); ++i) {
        const Eigen::MatrixXd& traj = train.traj[size_t(i)];
        for (int s = start; s < int(traj.rows()); ++s) {
            fill_row(traj, s, L, k, row);
            gram.selfadjointView<Eigen::Lower>().rankUpdate(row.transpose());
            rhs += row.transpose() * traj.row(s);
        }
    }
    gram.triangularView<Eigen::Upper>() = gram.transpose();
    gram.topLeftCorner(dx, dx).diagonal().array() += ridge;

    const Eigen::MatrixXd solution = gram.ldlt().solve(rhs);

    VarFit fit;
    fit.window = L;
    fit.coeff = solution.topRows(dx);
    fit.intercept = solution.row(dx);
    fit.train_positions = rows;

    double sse = 0.0;
    for (int i = 0; i < train.n_traj(); ++i) {
        const Eigen::MatrixXd& traj = train.traj[size_t(i)];
        for (int s = start; s < int(traj.rows()); ++s) {
            fill_row(traj, s, L, k, row);
            sse += (row.head(dx) * fit.coeff + fit.intercept - traj.row(s)).squaredNorm();
        }
    }
    fit.train_mse = sse / (double(rows) * k);
    return fit;
}

namespace {

// Per-trajectory (sum of squared residuals, position count).
std::vector<std::pair<double, long>> val_stats(const VarFit& fit, const SummarySet& val,
                                               int min_target) {
    const int L = fit.window;
    const int k = val.k;
    const int dx = L * k;
    const int start = std::max(L, min_target < 0 ? L : min_target);
    std::vector<std::pair<double, long>> stats(size_t(val.n_traj()), {0.0, 0});
    Eigen::RowVectorXd row(dx + 1);
    for (int i = 0; i < val.n_traj(); ++i) {
        const Eigen::MatrixXd& traj = val.traj[size_t(i)];
        require(int(traj.rows()) > L, ErrKind::fit,
                "validation trajectory shorter than window " + std::to_string(L));
        double sse = 0.0;
        long count = 0;
        for (int s = start; s < int(traj.rows()); ++s) {
            fill_row(traj, s, L, k, row);
            sse += (row.head(dx) * fit.coeff + fit.intercept - traj.row(s)).squaredNorm();
            ++count;
        }
        stats[size_t(i)] = {sse, count};
    }
    return stats;
}

double mse_of(const std::vector<std::pair<double, long>>& stats, int k) {
    double sse = 0.0;
    long count = 0;
    for (const auto& [s, c] : stats) {
        sse += s;
        count += c;
    }
    require(count >= 1, ErrKind::fit, "no admissible validation positions");
    return sse / (double(count) * k);
}

}  // namespace

double var_val_mse(const VarFit& fit, const SummarySet& val, int min_target) {
    return mse_of(val_stats(fit, val, min_target), val.k);
}

double fit_var_risk(const SummarySet& train, const SummarySet& val, int L, double ridge,
                    int min_target) {
    require(train.k == val.k, ErrKind::shape, "train and val summary dims differ");
    return var_val_mse(fit_var(train, L, ridge, min_target), val, min_target);
}

RiskCurve risk_curve(const SummarySet& train, const SummarySet& val, const CandidateGrid& grid,
                     double ridge, const BootstrapSpec& boot) {
    grid.validate();
    boot.validate();
    for (int i = 0; i < train.n_traj(); ++i)
        require(train.length(i) > grid.l_max(), ErrKind::fit,
                "trajectory length must exceed the largest window");

    RiskCurve curve;
    curve.grid = grid;
    curve.ridge = ridge;
    const int n_val = val.n_traj();

    // One shared set of resample indices per replicate; every window reuses
    // them so replicate-wise differences are paired statistics.
    RngStream rng = RngStream(boot.seed).derive(0xB007);
    curve.boot_indices.resize(size_t(boot.resamples));
    for (auto& idx : curve.boot_indices) {
        idx.resize(size_t(n_val));
        for (int& j : idx) j = rng.uniform_int(0, n_val - 1);
    }

    curve.risk.reserve(grid.windows.size());
    curve.replicates.reserve(grid.windows.size());
    for (int L : grid.windows) {
        try {
            const VarFit fit = fit_var(train, L, ridge, grid.l_max());
            const auto stats = val_stats(fit, val, grid.l_max());
            curve.risk.push_back(mse_of(stats, val.k));
            std::vector<double> reps(size_t(boot.resamples));
            for (int b = 0; b < boot.resamples; ++b) {
                double sse = 0.0;
                long count = 0;
                for (int j : curve.boot_indices[size_t(b)]) {
                    sse += stats[size_t(j)].first;
                    count += stats[size_t(j)].second;
                }
                reps[size_t(b)] = sse / (double(count) * val.k);
            }
            curve.replicates.push_back(std::move(reps));
        } catch (const Error& e) {
            fail(e.kind(), "window " + std::to_string(L) + ": " + e.what());
        }
    }
    return curve;
}

double ucb(const std::vector<double>& values, double level) {
    require(!values.empty(), ErrKind::config, "quantile of empty list");
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    const double pos = level * double(sorted.size() - 1);
    const auto idx = size_t(std::ceil(pos - 1e-9));
    return sorted[std::min(idx, sorted.size() - 1)];
}

void write_risk_csv(const RiskCurve& curve, double level, const std::filesystem::path& path) {
    std::ofstream os(path);
    require(bool(os), ErrKind::io_other, "cannot open '" + path.string() + "' for writing");
    os << "L,risk,ucb";
    const size_t b = curve.replicates.empty() ? 0 : curve.replicates.front().size();
    for (size_t i = 0; i < b; ++i) os << ",replicate_" << i;
    os << "\n";
    os.precision(17);
    for (size_t i = 0; i < curve.grid.windows.size(); ++i) {
        os << curve.grid.windows[i] << ',' << curve.risk[i] << ','
           << ucb(curve.replicates[i], level);
        for (double r : curve.replicates[i]) os << ',' << r;
        os << "\n";
    }
}

}  // namespace sake
