#include "sake/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace sake {

LinearPilotEvaluator::LinearPilotEvaluator(const SplitPool& split, const Projector& proj,
                                           FullProtocol full, EvalSettings settings)
    : full_(std::move(full)), settings_(settings) {
    require(split.train.n_traj >= 1, ErrKind::config, "evaluator needs a train split");
    require(split.test.n_traj >= 1, ErrKind::config, "evaluator needs a test split");
    train_ = project(proj, split.train);
    test_ = project(proj, split.test);
    n_train_traj_ = split.train.n_traj;
    n_test_traj_ = split.test.n_traj;
}

double LinearPilotEvaluator::rollout_error(int window, uint64_t seed) const {
    PilotBudget budget;
    budget.epochs = full_.epochs;
    budget.max_pairs = full_.pairs_for(window);
    budget.train_trajs = n_train_traj_;
    budget.val_trajs = n_test_traj_;
    budget.rollout_train_h = settings_.train_h;
    budget.rollout_val_h = settings_.rollout_h;
    budget.max_val_rollouts = settings_.max_rollouts;
    budget.anchors_per_candidate = settings_.anchors;

    const PilotModel model = train_pilot_on(train_, window, budget, seed);
    ++trainings_;
    return rollout_diagnostics_on(model, test_, budget, seed).mean_err;
}

int l_best_of(const std::vector<double>& m, const CandidateGrid& grid) {
    require(m.size() == size_t(grid.size()), ErrKind::config,
            "curve does not cover the grid");
    size_t best = 0;
    for (size_t i = 1; i < m.size(); ++i)
        if (m[i] < m[best]) best = i;  // strict: ties keep the smaller window
    return grid.windows[best];
}

int oracle_knee(const std::vector<double>& m, const CandidateGrid& grid, double eps) {
    require(eps >= 0.0, ErrKind::config, "eps must be >= 0");
    const double best = m[size_t(grid.index_of(l_best_of(m, grid)))];
    for (size_t i = 0; i < m.size(); ++i) {
        require(is_finite(m[i]) && m[i] >= 0.0, ErrKind::config,
                "oracle curve must be finite and non-negative");
        if (m[i] <= (1.0 + eps) * best) return grid.windows[i];
    }
    return grid.l_max();
}

int OracleReference::l_best() const { return l_best_of(m, grid); }
int OracleReference::knee(double eps) const { return oracle_knee(m, grid, eps); }

OracleReference full_sweep(const Evaluator& evaluator, const CandidateGrid& grid,
                           const std::vector<uint64_t>& seeds) {
    require(!seeds.empty(), ErrKind::config, "full sweep needs at least one seed");
    OracleReference oracle;
    oracle.grid = grid;
    oracle.seeds = seeds;
    oracle.per_seed.resize(seeds.size());
    oracle.m.assign(size_t(grid.size()), 0.0);
    for (size_t s = 0; s < seeds.size(); ++s) {
        auto& row = oracle.per_seed[s];
        row.reserve(size_t(grid.size()));
        for (int L : grid.windows) {
            double err = 0.0;
            try {
                err = evaluator.rollout_error(L, seeds[s]);
            } catch (const Error& e) {
                fail(e.kind(), "full sweep failed at window " + std::to_string(L) +
                                   ", seed " + std::to_string(seeds[s]) + ": " + e.what());
            }
            row.push_back(err);
        }
        for (size_t i = 0; i < row.size(); ++i) oracle.m[i] += row[i];
    }
    for (double& v : oracle.m) v /= double(seeds.size());
    return oracle;
}

nlohmann::json oracle_json(const OracleReference& oracle) {
    return {{"grid", oracle.grid.windows},
            {"m", oracle.m},
            {"per_seed", oracle.per_seed},
            {"seeds", oracle.seeds}};
}

OracleReference oracle_from_json(const nlohmann::json& j) {
    OracleReference oracle;
    oracle.grid.windows = j.at("grid").get<std::vector<int>>();
    oracle.grid.validate();
    oracle.m = j.at("m").get<std::vector<double>>();
    oracle.per_seed = j.at("per_seed").get<std::vector<std::vector<double>>>();
    oracle.seeds = j.at("seeds").get<std::vector<uint64_t>>();
    return oracle;
}

MetricsRow evaluate_selection(const SelectionResult& result, const OracleReference& oracle,
                              double eps, const AnchorReport* anchors) {
    require(oracle.grid.contains(result.l_sel), ErrKind::config,
            "selected window is not on the oracle grid");

    MetricsRow row;
    row.method = result.method;
    row.eps = eps;
    row.l_sel = result.l_sel;
    row.l_knee = oracle.knee(eps);
    row.l_best = oracle.l_best();
    row.exact = result.l_sel == row.l_knee ? 1 : 0;
    row.abs_dl = std::abs(result.l_sel - row.l_knee);
    row.within1 = row.abs_dl <= 1.0 ? 1 : 0;

    const double m_sel = oracle.m_at(result.l_sel);
    const double m_knee = oracle.m_at(row.l_knee);
    const double m_best = oracle.m_at(row.l_best);
    if (m_knee == 0.0 || m_best == 0.0) {
        row.regret_defined = m_sel == 0.0;
        row.regret_knee = 0.0;
        row.regret_best = 0.0;
    } else {
        row.regret_knee = (m_sel - m_knee) / m_knee;
        row.regret_best = (m_sel - m_best) / m_best;
    }

    row.cost_ratio = result.total_cost() / double(oracle.grid.size());
    row.saving = 1.0 - row.cost_ratio;
    row.unique_evals = int(result.unique_windows().size());

    if (anchors != nullptr)
        row.knee_in_band =
            row.l_knee >= anchors->l_core && row.l_knee <= anchors->l_plateau;
    if (!result.s0.empty())
        row.knee_in_s0 =
            std::find(result.s0.begin(), result.s0.end(), row.l_knee) != result.s0.end();
    if (!result.s1.empty())
        row.knee_in_s1 =
            std::find(result.s1.begin(), result.s1.end(), row.l_knee) != result.s1.end();
    return row;
}

nlohmann::json metrics_row_json(const MetricsRow& row) {
    nlohmann::json j = {{"dataset", row.dataset},
                        {"method", row.method},
                        {"condition", row.condition},
                        {"representation", row.representation},
                        {"seed", row.seed},
                        {"eps", row.eps},
                        {"l_sel", row.l_sel},
                        {"l_knee", row.l_knee},
                        {"l_best", row.l_best},
                        {"exact", row.exact},
                        {"within1", row.within1},
                        {"abs_dl", row.abs_dl},
                        {"regret_defined", row.regret_defined},
                        {"regret_knee", row.regret_knee},
                        {"regret_best", row.regret_best},
                        {"cost_ratio", row.cost_ratio},
                        {"saving", row.saving},
                        {"unique_evals", row.unique_evals}};
    if (row.knee_in_band) j["knee_in_band"] = *row.knee_in_band;
    if (row.knee_in_s0) j["knee_in_s0"] = *row.knee_in_s0;
    if (row.knee_in_s1) j["knee_in_s1"] = *row.knee_in_s1;
    return j;
}

MetricsRow metrics_row_from_json(const nlohmann::json& j) {
    MetricsRow row;
    row.dataset = j.at("dataset").get<std::string>();
    row.method = j.at("method").get<std::string>();
    row.condition = j.at("condition").get<std::string>();
    row.representation = j.at("representation").get<std::string>();
    row.seed = j.at("seed").get<uint64_t>();
    row.eps = j.at("eps").get<double>();
    row.l_sel = j.at("l_sel").get<int>();
    row.l_knee = j.at("l_knee").get<int>();
    row.l_best = j.at("l_best").get<int>();
    row.exact = j.at("exact").get<int>();
    row.within1 = j.at("within1").get<int>();
    row.abs_dl = j.at("abs_dl").get<double>();
    row.regret_defined = j.at("regret_defined").get<bool>();
    row.regret_knee = j.at("regret_knee").get<double>();
    row.regret_best = j.at("regret_best").get<double>();
    row.cost_ratio = j.at("cost_ratio").get<double>();
    row.saving = j.at("saving").get<double>();
    row.unique_evals = j.at("unique_evals").get<int>();
    if (j.contains("knee_in_band")) row.knee_in_band = j.at("knee_in_band").get<bool>();
    if (j.contains("knee_in_s0")) row.knee_in_s0 = j.at("knee_in_s0").get<bool>();
    if (j.contains("knee_in_s1")) row.knee_in_s1 = j.at("knee_in_s1").get<bool>();
    return row;
}

std::vector<AggregateRow> aggregate(const std::vector<MetricsRow>& rows) {
    require(!rows.empty(), ErrKind::config, "nothing to aggregate");
    std::map<std::tuple<std::string, std::string, std::string, std::string>,
             std::vector<const MetricsRow*>>
        groups;
    for (const auto& row : rows)
        groups[{row.dataset, row.method, row.condition, row.representation}].push_back(&row);

    std::vector<AggregateRow> out;
    for (const auto& [key, members] : groups) {
        AggregateRow agg;
        std::tie(agg.dataset, agg.method, agg.condition, agg.representation) = key;
        agg.rows = int(members.size());
        int band_rows = 0, s0_rows = 0, s1_rows = 0;
        double band_hits = 0, s0_hits = 0, s1_hits = 0;
        for (const MetricsRow* row : members) {
            agg.exact_pct += row->exact;
            agg.within1_pct += row->within1;
            agg.mean_abs_dl += row->abs_dl;
            agg.mean_cost_ratio += row->cost_ratio;
            agg.mean_saving += row->saving;
            agg.mean_unique_evals += row->unique_evals;
            if (row->regret_defined) {
                agg.mean_regret_knee += row->regret_knee;
                agg.mean_regret_best += row->regret_best;
                ++agg.regret_rows;
            }
            if (row->knee_in_band) {
                band_hits += *row->knee_in_band;
                ++band_rows;
            }
            if (row->knee_in_s0) {
                s0_hits += *row->knee_in_s0;
                ++s0_rows;
            }
            if (row->knee_in_s1) {
                s1_hits += *row->knee_in_s1;
                ++s1_rows;
            }
        }
        const double n = double(agg.rows);
        agg.exact_pct *= 100.0 / n;
        agg.within1_pct *= 100.0 / n;
        agg.mean_abs_dl /= n;
        agg.mean_cost_ratio /= n;
        agg.mean_saving /= n;
        agg.mean_unique_evals /= n;
        if (agg.regret_rows > 0) {
            agg.mean_regret_knee /= double(agg.regret_rows);
            agg.mean_regret_best /= double(agg.regret_rows);
        }
        if (band_rows > 0) agg.knee_in_band_pct = 100.0 * band_hits / band_rows;
        if (s0_rows > 0) agg.knee_in_s0_pct = 100.0 * s0_hits / s0_rows;
        if (s1_rows > 0) agg.knee_in_s1_pct = 100.0 * s1_hits / s1_rows;
        out.push_back(agg);
    }
    return out;
}

}  // namespace sake
