#include "sake/pilots.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "sake/rng.hpp"

namespace sake {

namespace {

constexpr double kPilotRidge = 1e-6;
constexpr double kRelErrFloor = 1e-12;

}  // namespace

void PilotBudget::validate() const {
    require(epochs >= 1 && max_pairs >= 1 && train_trajs >= 1 && val_trajs >= 1 &&
                max_val_rollouts >= 1 && anchors_per_candidate >= 1,
            ErrKind::config, "pilot budget counts must be >= 1");
    require(rollout_train_h >= 1 && rollout_val_h >= 1, ErrKind::config,
            "rollout horizons must be >= 1");
}

FullProtocol FullProtocol::from_split(const SplitPool& split, const CandidateGrid& grid,
                                      int epochs) {
    require(epochs >= 1, ErrKind::config, "full-protocol epochs must be >= 1");
    FullProtocol full;
    full.epochs = epochs;
    for (int L : grid.windows) {
        long pairs = 0;
        for (int i = 0; i < split.train.n_traj; ++i)
            pairs += std::max(0, split.train.T - L);
        require(pairs >= 1, ErrKind::config,
                "train split provides no pairs at window " + std::to_string(L));
        full.pairs_per_window[L] = pairs;
    }
    return full;
}

FullProtocol FullProtocol::constant(int epochs, long pairs) {
    require(epochs >= 1 && pairs >= 1, ErrKind::config, "full protocol counts must be >= 1");
    FullProtocol full;
    full.epochs = epochs;
    full.flat_pairs = pairs;
    return full;
}

long FullProtocol::pairs_for(int L) const {
    const auto it = pairs_per_window.find(L);
    if (it != pairs_per_window.end()) return it->second;
    require(flat_pairs >= 1, ErrKind::config,
            "full protocol has no pair count for window " + std::to_string(L));
    return flat_pairs;
}

double Diagnostics::worst() const {
    require(!per_anchor.empty(), ErrKind::diagnostics, "diagnostics carry no anchors");
    return *std::max_element(per_anchor.begin(), per_anchor.end());
}

void Diagnostics::check_finite() const {
    require(is_finite(mean_err) && is_finite(terminal_err) && is_finite(anchor_std) &&
                is_finite(tail_err),
            ErrKind::diagnostics, "non-finite rollout diagnostic");
    require(mean_err >= 0.0 && terminal_err >= 0.0 && anchor_std >= 0.0 && tail_err >= 0.0,
            ErrKind::diagnostics, "negative rollout diagnostic");
}

PilotModel train_pilot(const SplitPool& split, const Projector& proj, int window,
                       const PilotBudget& budget, uint64_t seed) {
    return train_pilot_on(project(proj, split.train), window, budget, seed);
}

PilotModel train_pilot_on(const SummarySet& train, int window, const PilotBudget& budget,
                          uint64_t seed) {
    budget.validate();
    require(window >= 1, ErrKind::config, "window must be >= 1");
    int min_len = train.length(0);
    for (int i = 0; i < train.n_traj(); ++i) min_len = std::min(min_len, train.length(i));
    require(window <= min_len - budget.rollout_train_h - 1, ErrKind::config,
            "window " + std::to_string(window) + " too large for trajectory length " +
                std::to_string(min_len) + " with train horizon " +
                std::to_string(budget.rollout_train_h));

    RngStream rng = RngStream(seed).derive(0x7121);
    const std::vector<int> trajs =
        rng.sample_without_replacement(train.n_traj(), budget.train_trajs);

    // All admissible (window -> next frame) positions, then an evenly spaced
    // cap at max_pairs so coverage stays uniform over time.
    std::vector<std::pair<int, int>> positions;
    for (int i : trajs)
        for (int s = window; s < train.length(i); ++s) positions.emplace_back(i, s);
    const long total = long(positions.size());
    require(total >= 1, ErrKind::fit, "no training pairs available");
    std::vector<std::pair<int, int>> picked;
    if (total > budget.max_pairs) {
        picked.reserve(size_t(budget.max_pairs));
        for (long i = 0; i < budget.max_pairs; ++i)
            picked.push_back(positions[size_t(i * total / budget.max_pairs)]);
    } else {
        picked = std::move(positions);
    }

    const int k = train.k;
    const int dx = window * k;
    PilotModel model;
    model.window = window;
    model.budget = budget;
    model.seed = seed;
    model.realized_pairs = long(picked.size());
    model.underdetermined = model.realized_pairs < long(dx);

    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(dx + 1, dx + 1);
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(dx + 1, k);
    Eigen::RowVectorXd row(dx + 1);
    row[dx] = 1.0;
    for (const auto& [i, s] : picked) {
        const Eigen::MatrixXd& traj = train.traj[size_t(i)];
        for (int j = 0; j < window; ++j)
            row.segment(j * k, k) = traj.row(s - window + j);
        gram.selfadjointView<Eigen::Lower>().rankUpdate(row.transpose());
        rhs += row.transpose() * traj.row(s);
    }
    gram.triangularView<Eigen::Upper>() = gram.transpose();
    gram.topLeftCorner(dx, dx).diagonal().array() += kPilotRidge;

    Eigen::MatrixXd solution = gram.ldlt().solve(rhs);

    // Remaining epochs are deterministic full-batch gradient passes from the
    // closed-form solution; the step size is bounded by the Gram trace so the
    // iteration can never diverge.
    const double step = 1.0 / std::max(gram.trace(), 1e-12);
    for (int e = 1; e < budget.epochs; ++e) {
        Eigen::MatrixXd grad = gram * solution - rhs;
        grad.row(dx) -= kPilotRidge * solution.row(dx);  // intercept is unpenalized
        solution -= step * grad;
    }

    model.coeff = solution.topRows(dx);
    model.intercept = solution.row(dx);
    return model;
}

Diagnostics rollout_diagnostics(const PilotModel& model, const SplitPool& split,
                                const Projector& proj, const PilotBudget& budget,
                                uint64_t seed) {
    return rollout_diagnostics_on(model, project(proj, split.val), budget, seed);
}

Diagnostics rollout_diagnostics_on(const PilotModel& model, const SummarySet& val,
                                   const PilotBudget& budget, uint64_t seed) {
    budget.validate();
    require(val.n_traj() >= 1, ErrKind::diagnostics, "validation split is empty");
    const int L = model.window;
    const int k = val.k;
    const int h = budget.rollout_val_h;
    const int A = budget.anchors_per_candidate;

    RngStream rng = RngStream(seed).derive(0x9011);
    std::vector<int> trajs = rng.sample_without_replacement(val.n_traj(), budget.val_trajs);
    if (int(trajs.size()) > budget.max_val_rollouts) trajs.resize(size_t(budget.max_val_rollouts));

    // Anchor slot i aggregates the same relative start position across every
    // rollout trajectory, so per_anchor always has exactly A entries.
    std::vector<double> slot_sum(size_t(A), 0.0);
    std::vector<long> slot_count(size_t(A), 0);
    double step_sum = 0.0, terminal_sum = 0.0, tail_sum = 0.0;
    long rollouts = 0;
    const int tail_steps = std::max(1, h / 4);

    Eigen::RowVectorXd context(L * k);
    for (int i : trajs) {
        const Eigen::MatrixXd& traj = val.traj[size_t(i)];
        const int T = int(traj.rows());
        const int last_start = T - 1 - h;
        if (last_start < L)
            fail(ErrKind::diagnostics,
                 "no admissible rollout anchor: trajectory length " + std::to_string(T) +
                     " cannot host horizon " + std::to_string(h) + " after window " +
                     std::to_string(L));
        for (int slot = 0; slot < A; ++slot) {
            const int start =
                A == 1 ? L
                       : L + int(std::llround(double(slot) * double(last_start - L) /
                                              double(A - 1)));
            for (int j = 0; j < L; ++j)
                context.segment(j * k, k) = traj.row(start - L + 1 + j);
            double err_sum = 0.0, err_tail = 0.0, err_last = 0.0;
            for (int s = 1; s <= h; ++s) {
                const Eigen::RowVectorXd pred = context * model.coeff + model.intercept;
                const Eigen::RowVectorXd truth = traj.row(start + s);
                const double err = (pred - truth).norm() /
                                   std::max(truth.norm(), kRelErrFloor);
                err_sum += err;
                if (s > h - tail_steps) err_tail += err;
                if (s == h) err_last = err;
                if (L > 1)
                    context.head((L - 1) * k) = context.tail((L - 1) * k).eval();
                context.tail(k) = pred;
            }
            slot_sum[size_t(slot)] += err_sum / h;
            slot_count[size_t(slot)] += 1;
            step_sum += err_sum / h;
            terminal_sum += err_last;
            tail_sum += err_tail / tail_steps;
            ++rollouts;
        }
    }

    Diagnostics diag;
    diag.per_anchor.resize(size_t(A));
    for (int slot = 0; slot < A; ++slot)
        diag.per_anchor[size_t(slot)] = slot_sum[size_t(slot)] / double(slot_count[size_t(slot)]);
    diag.mean_err = step_sum / double(rollouts);
    diag.terminal_err = terminal_sum / double(rollouts);
    diag.tail_err = tail_sum / double(rollouts);
    if (A >= 2) {
        double mean = 0.0;
        for (double v : diag.per_anchor) mean += v;
        mean /= double(A);
        double ss = 0.0;
        for (double v : diag.per_anchor) ss += (v - mean) * (v - mean);
        diag.anchor_std = std::sqrt(ss / double(A - 1));
    }
    diag.check_finite();
    return diag;
}

double cost_of(const PilotBudget& budget, const FullProtocol& full, int window,
               long realized_pairs) {
    budget.validate();
    require(realized_pairs >= 0, ErrKind::config, "realized pair count must be >= 0");
    const long denom = full.pairs_for(window);
    return (double(budget.epochs) / double(full.epochs)) *
           (double(realized_pairs) / double(denom));
}

nlohmann::json ledger_entry_json(const LedgerEntry& entry) {
    return {{"stage", entry.stage},
            {"L", entry.window},
            {"budget", {{"epochs", entry.epochs}, {"max_pairs", entry.max_pairs}}},
            {"realized_pairs", entry.realized_pairs},
            {"cost", entry.cost},
            {"diagnostics",
             {{"mean_err", entry.diag.mean_err},
              {"terminal_err", entry.diag.terminal_err},
              {"anchor_std", entry.diag.anchor_std},
              {"tail_err", entry.diag.tail_err},
              {"per_anchor", entry.diag.per_anchor}}}};
}

void append_ledger(const std::filesystem::path& path, const LedgerEntry& entry) {
    std::ofstream os(path, std::ios::app);
    require(bool(os), ErrKind::io_other, "cannot open ledger '" + path.string() + "'");
    os << ledger_entry_json(entry).dump() << "\n";
}

}  // namespace sake
