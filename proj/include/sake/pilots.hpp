#pragma once

#include <Eigen/Dense>

#include <json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sake/summarize.hpp"
#include "sake/sysrisk.hpp"
#include "sake/trajstore.hpp"

namespace sake {

// Stage-wise training budget for one pilot; also the unit the cost model is
// expressed in.
struct PilotBudget {
    int epochs = 2;
    long max_pairs = 1024;
    int train_trajs = 8;
    int val_trajs = 4;
    int rollout_train_h = 8;
    int rollout_val_h = 4;
    int max_val_rollouts = 4;
    int anchors_per_candidate = 4;

    void validate() const;
    bool operator==(const PilotBudget&) const = default;
};

// Reference full-training protocol: the denominator of the cost model.
// pairs_for(L) is the pair count a full run would consume at window L.
struct FullProtocol {
    int epochs = 20;
    std::map<int, long> pairs_per_window;
    long flat_pairs = -1;  // used when no per-window table is present

    static FullProtocol from_split(const SplitPool& split, const CandidateGrid& grid,
                                   int epochs = 20);
    static FullProtocol constant(int epochs, long pairs);

    long pairs_for(int L) const;
    bool operator==(const FullProtocol&) const = default;
};

// Rollout summary statistics for one trained pilot.
struct Diagnostics {
    double mean_err = 0.0;      // mean rollout error over anchors and steps
    double terminal_err = 0.0;  // final-step error, averaged over anchors
    double anchor_std = 0.0;    // spread of per-anchor mean errors; 0 for one anchor
    double tail_err = 0.0;      // mean error over the final quarter of the horizon
    std::vector<double> per_anchor;  // one slot per rollout anchor

    double worst() const;  // largest per-anchor mean error
    void check_finite() const;
};

struct PilotModel {
    int window = 0;
    Eigen::MatrixXd coeff;          // (L*k) x k, oldest context frame first
    Eigen::RowVectorXd intercept;   // k
    long realized_pairs = 0;
    bool underdetermined = false;   // fewer pairs than coefficients
    PilotBudget budget;
    uint64_t seed = 0;
};

// Deterministic budgeted fit: seeded trajectory subsample, evenly spaced pair
// cap, closed-form ridge solution, then epochs-1 full-batch gradient passes.
PilotModel train_pilot(const SplitPool& split, const Projector& proj, int window,
                       const PilotBudget& budget, uint64_t seed);
PilotModel train_pilot_on(const SummarySet& train, int window, const PilotBudget& budget,
                          uint64_t seed);

// Autoregressive rollouts in summary space from evenly spaced start anchors;
// per-step error is relative L2 against the true summary.
Diagnostics rollout_diagnostics(const PilotModel& model, const SplitPool& split,
                                const Projector& proj, const PilotBudget& budget,
                                uint64_t seed);
Diagnostics rollout_diagnostics_on(const PilotModel& model, const SummarySet& val,
                                   const PilotBudget& budget, uint64_t seed);

// Full-sweep-equivalent cost of one pilot training.
double cost_of(const PilotBudget& budget, const FullProtocol& full, int window,
               long realized_pairs);

// One row of the run ledger: the audit trail behind the cost ratio.
struct LedgerEntry {
    std::string stage;
    int window = 0;
    int epochs = 0;
    long max_pairs = 0;
    long realized_pairs = 0;
    double cost = 0.0;
    Diagnostics diag;
};

nlohmann::json ledger_entry_json(const LedgerEntry& entry);
void append_ledger(const std::filesystem::path& path, const LedgerEntry& entry);

}  // namespace sake
