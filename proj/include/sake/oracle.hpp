#pragma once

#include <json.hpp>

#include <atomic>
#include <optional>
#include <string>
#include <vector>

#include "sake/selector.hpp"

namespace sake {

// Full-protocol evaluator: trains a predictor at one window under the full
// budget and reports its rollout error. The reference implementation is the
// linear pilot; a heavier backbone can be slotted in behind this interface.
class Evaluator {
public:
    virtual ~Evaluator() = default;
    virtual double rollout_error(int window, uint64_t seed) const = 0;
    virtual long training_count() const { return -1; }  // -1 when not audited
};

struct EvalSettings {
    int rollout_h = 16;
    int anchors = 8;
    int max_rollouts = 16;
    int train_h = 32;
};

class LinearPilotEvaluator : public Evaluator {
public:
    // Rollout error is measured on the held-out test split; the train split
    // is consumed in full (all trajectories, all pairs, full epochs).
    LinearPilotEvaluator(const SplitPool& split, const Projector& proj, FullProtocol full,
                         EvalSettings settings = EvalSettings());

    double rollout_error(int window, uint64_t seed) const override;
    long training_count() const override { return trainings_.load(); }

private:
    SummarySet train_;
    SummarySet test_;
    int n_train_traj_ = 0;
    int n_test_traj_ = 0;
    FullProtocol full_;
    EvalSettings settings_;
    mutable std::atomic<long> trainings_{0};
};

struct OracleReference {
    CandidateGrid grid;
    std::vector<double> m;                     // mean over seeds, per window
    std::vector<std::vector<double>> per_seed; // [seed][window]
    std::vector<uint64_t> seeds;

    double m_at(int L) const { return m[size_t(grid.index_of(L))]; }
    int l_best() const;
    int knee(double eps) const;
};

OracleReference full_sweep(const Evaluator& evaluator, const CandidateGrid& grid,
                           const std::vector<uint64_t>& seeds);

// Smallest minimizer of the curve.
int l_best_of(const std::vector<double>& m, const CandidateGrid& grid);
// Smallest window within (1+eps) of the minimum.
int oracle_knee(const std::vector<double>& m, const CandidateGrid& grid, double eps);

nlohmann::json oracle_json(const OracleReference& oracle);
OracleReference oracle_from_json(const nlohmann::json& j);

struct MetricsRow {
    std::string dataset;
    std::string method;
    std::string condition;       // perturbation label
    std::string representation;
    uint64_t seed = 0;
    double eps = 0.05;
    int l_sel = 0;
    int l_knee = 0;
    int l_best = 0;
    int exact = 0;
    int within1 = 0;
    double abs_dl = 0.0;
    double regret_knee = 0.0;
    double regret_best = 0.0;
    bool regret_defined = true;  // false when the knee error is exactly zero
    double cost_ratio = 0.0;
    double saving = 0.0;
    int unique_evals = 0;
    std::optional<bool> knee_in_band;  // requires an anchor report
    std::optional<bool> knee_in_s0;
    std::optional<bool> knee_in_s1;
};

MetricsRow evaluate_selection(const SelectionResult& result, const OracleReference& oracle,
                              double eps, const AnchorReport* anchors);

nlohmann::json metrics_row_json(const MetricsRow& row);
MetricsRow metrics_row_from_json(const nlohmann::json& j);

struct AggregateRow {
    std::string dataset;
    std::string method;
    std::string condition;
    std::string representation;
    int rows = 0;
    double exact_pct = 0.0;
    double within1_pct = 0.0;
    double mean_abs_dl = 0.0;
    double mean_regret_knee = 0.0;  // over rows with defined regret
    double mean_regret_best = 0.0;
    int regret_rows = 0;
    double mean_cost_ratio = 0.0;
    double mean_saving = 0.0;
    double mean_unique_evals = 0.0;
    double knee_in_band_pct = -1.0;  // -1 when no row carries the flag
    double knee_in_s0_pct = -1.0;
    double knee_in_s1_pct = -1.0;
};

// Group by (dataset, method, condition, representation) and average the
// numeric fields; hit rates become percentages.
std::vector<AggregateRow> aggregate(const std::vector<MetricsRow>& rows);

}  // namespace sake
