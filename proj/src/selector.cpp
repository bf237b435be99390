#include "sake/selector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "sake/rng.hpp"

namespace sake {

namespace {

constexpr double kSpanFloor = 1e-12;

}  // namespace

void SelectorSpec::validate(size_t s0_size) const {
    require(top_k >= 1 && hop >= 0 && cap >= 1, ErrKind::config,
            "top_k, hop, cap must be positive");
    require(w_mean >= 0.0 && w_term >= 0.0 && w_worst >= 0.0 && w_std >= 0.0,
            ErrKind::config, "score weights must be >= 0");
    require(w_mean + w_term + w_worst + w_std > 0.0, ErrKind::config,
            "score weights must not all vanish");
    require(alpha >= 0.0 && alpha <= 1.0, ErrKind::config, "alpha must lie in [0,1]");
    require(kappa > 0.0, ErrKind::config, "kappa must be > 0");
    require(consecutive_small >= 1, ErrKind::config, "consecutive_small must be >= 1");
    require(size_t(cap) >= s0_size, ErrKind::config,
            "cap must be at least the shortlist size");
}

SelectorSpec SelectorSpec::direct_profile() const {
    SelectorSpec direct = *this;
    direct.w_mean = 0.0;
    direct.w_term = 0.25;
    direct.w_worst = 0.75;
    direct.w_std = 0.0;
    direct.alpha = 1.0;
    direct.kappa = 1.0;
    return direct;
}

StageBudgets StageBudgets::defaults(const SplitPool& split, const CandidateGrid& grid) {
    StageBudgets budgets;
    budgets.stage1.epochs = 2;
    budgets.stage1.max_pairs = 1024;
    budgets.stage1.train_trajs = 8;
    budgets.stage1.val_trajs = 4;
    budgets.stage1.rollout_train_h = 8;
    budgets.stage1.rollout_val_h = 4;
    budgets.stage1.max_val_rollouts = 4;
    budgets.stage1.anchors_per_candidate = 4;

    budgets.stage2.epochs = 6;
    budgets.stage2.max_pairs = 4096;
    budgets.stage2.train_trajs = 24;
    budgets.stage2.val_trajs = 16;
    budgets.stage2.rollout_train_h = 32;
    budgets.stage2.rollout_val_h = 16;
    budgets.stage2.max_val_rollouts = 8;
    budgets.stage2.anchors_per_candidate = 4;

    budgets.full = FullProtocol::from_split(split, grid);
    return budgets;
}

double SelectionResult::total_cost() const {
    double total = 0.0;
    for (const auto& entry : ledger) total += entry.cost;
    return total;
}

std::vector<int> SelectionResult::unique_windows() const {
    std::set<int> seen;
    for (const auto& entry : ledger) seen.insert(entry.window);
    return {seen.begin(), seen.end()};
}

std::vector<int> coarse_rank(const std::vector<int>& s0,
                             const std::map<int, Diagnostics>& diag) {
    require(!s0.empty(), ErrKind::selection, "empty shortlist");
    std::vector<int> ranking = s0;
    for (int L : s0)
        require(diag.count(L) == 1, ErrKind::selection,
                "missing stage-one diagnostics for window " + std::to_string(L));
    std::stable_sort(ranking.begin(), ranking.end(), [&](int a, int b) {
        const double sa = diag.at(a).mean_err, sb = diag.at(b).mean_err;
        return sa < sb || (sa == sb && a < b);
    });
    return ranking;
}

std::vector<int> refine(const CandidateGrid& grid, const std::vector<int>& s0,
                        const std::vector<int>& ranking, const SelectorSpec& spec) {
    spec.validate(s0.size());
    require(ranking.size() == s0.size(), ErrKind::selection,
            "ranking must cover the shortlist");

    std::set<int> members;
    const int n_top = std::min<int>(spec.top_k, int(ranking.size()));
    for (int i = 0; i < n_top; ++i) {
        const int idx = grid.index_of(ranking[size_t(i)]);
        for (int j = std::max(0, idx - spec.hop);
             j <= std::min(grid.size() - 1, idx + spec.hop); ++j)
            members.insert(grid.windows[size_t(j)]);
    }
    const int lo_anchor = *std::min_element(s0.begin(), s0.end());
    const int hi_anchor = *std::max_element(s0.begin(), s0.end());
    members.insert(lo_anchor);
    members.insert(hi_anchor);

    std::vector<int> s1(members.begin(), members.end());
    const int top_idx = grid.index_of(ranking.front());
    while (int(s1.size()) > spec.cap) {
        // Evict the non-anchor member farthest (in grid positions) from the
        // top-ranked candidate; ties drop the larger window.
        int victim = -1, victim_dist = -1;
        for (int L : s1) {
            if (L == lo_anchor || L == hi_anchor) continue;
            const int dist = std::abs(grid.index_of(L) - top_idx);
            if (dist > victim_dist || (dist == victim_dist && L > victim)) {
                victim = L;
                victim_dist = dist;
            }
        }
        require(victim >= 0, ErrKind::selection, "cap smaller than the anchor set");
        s1.erase(std::find(s1.begin(), s1.end(), victim));
    }
    return s1;
}

namespace {

std::vector<double> min_max_normalize(const std::vector<double>& raw) {
    const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
    std::vector<double> out(raw.size(), 0.0);
    const double span = *hi - *lo;
    if (span <= kSpanFloor) return out;  // constant channel carries no signal
    for (size_t i = 0; i < raw.size(); ++i) out[i] = (raw[i] - *lo) / span;
    return out;
}

}  // namespace

Stage2Scores stage2_scores(const std::vector<int>& s1, const std::map<int, Diagnostics>& diag,
                           const SelectorSpec& spec) {
    require(!s1.empty(), ErrKind::selection, "empty refined set");
    std::vector<double> m, u, v, w, a;
    for (int L : s1) {
        require(diag.count(L) == 1, ErrKind::selection,
                "missing stage-two diagnostics for window " + std::to_string(L));
        const Diagnostics& d = diag.at(L);
        d.check_finite();
        m.push_back(d.mean_err);
        u.push_back(d.terminal_err);
        v.push_back(d.anchor_std);
        w.push_back(d.worst());
        a.push_back(d.tail_err);
    }

    const double wsum = spec.w_mean + spec.w_term + spec.w_worst + spec.w_std;
    const double wm = spec.w_mean / wsum, wt = spec.w_term / wsum,
                 ww = spec.w_worst / wsum, ws = spec.w_std / wsum;
    const std::vector<double> mn = min_max_normalize(m), un = min_max_normalize(u),
                              vn = min_max_normalize(v), wn = min_max_normalize(w),
                              an = min_max_normalize(a);

    Stage2Scores out;
    out.mean_span = *std::max_element(m.begin(), m.end()) -
                    *std::min_element(m.begin(), m.end());
    out.q.resize(s1.size());
    for (size_t i = 0; i < s1.size(); ++i)
        out.q[i] = spec.alpha * (wm * mn[i] + wt * un[i] + ww * wn[i] + ws * vn[i]) +
                   (1.0 - spec.alpha) * an[i];
    return out;
}

int saturation_frontier(const std::vector<double>& q, const SelectorSpec& spec) {
    require(!q.empty(), ErrKind::selection, "empty score vector");
    const int last = int(q.size()) - 1;
    const double best = *std::min_element(q.begin(), q.end());
    const double span = std::max(*std::max_element(q.begin(), q.end()) - best, kSpanFloor);

    for (int j = 0; j + spec.consecutive_small <= last; ++j) {
        bool ok = true;
        for (int c = 0; c < spec.consecutive_small && ok; ++c) {
            const int i = j + c;
            const double local = (q[size_t(i)] - q[size_t(i + 1)]) / span;
            const double remain = (q[size_t(i)] - best) / span;
            ok = local <= spec.frontier_local && remain <= spec.frontier_remain;
        }
        if (ok) return j;
    }
    return last;
}

std::pair<int, bool> one_se_select(const std::vector<int>& s1, const Stage2Scores& scores,
                                   int frontier, const std::vector<double>& per_anchor_best,
                                   double kappa) {
    require(frontier >= 0 && frontier < int(s1.size()), ErrKind::selection,
            "frontier index out of range");
    require(!per_anchor_best.empty(), ErrKind::selection, "no per-anchor errors");

    const double best = *std::min_element(scores.q.begin(), scores.q.end());
    const size_t n = per_anchor_best.size();
    double se = 0.0;
    if (n >= 2 && scores.mean_span > kSpanFloor) {
        double mean = 0.0;
        for (double v : per_anchor_best) mean += v;
        mean /= double(n);
        double ss = 0.0;
        for (double v : per_anchor_best) ss += (v - mean) * (v - mean);
        // Anchor-level standard error mapped onto the normalized score scale.
        se = std::sqrt(ss / double(n - 1)) / std::sqrt(double(n)) / scores.mean_span;
    }

    const double threshold = best + kappa * se;
    for (int j = 0; j <= frontier; ++j)
        if (scores.q[size_t(j)] <= threshold) return {s1[size_t(j)], false};
    return {s1[size_t(frontier)], true};
}

uint64_t pilot_seed(uint64_t seed, int stage, int window) {
    return hash_combine(hash_combine(seed, uint64_t(stage)), uint64_t(window));
}

namespace {

struct StageRun {
    std::map<int, Diagnostics> diag;
};

// Train + score one stage of pilots, appending to the ledger.
StageRun run_stage(const std::string& stage_name, int stage_tag,
                   const std::vector<int>& windows, const SummarySet& train,
                   const SummarySet& val, const PilotBudget& budget,
                   const FullProtocol& full, uint64_t seed,
                   std::vector<LedgerEntry>& ledger) {
    StageRun run;
    for (int L : windows) {
        const uint64_t task_seed = pilot_seed(seed, stage_tag, L);
        PilotModel model;
        Diagnostics diag;
        try {
            model = train_pilot_on(train, L, budget, task_seed);
            diag = rollout_diagnostics_on(model, val, budget, task_seed);
        } catch (const Error& e) {
            fail(e.kind(), stage_name + " pilot at window " + std::to_string(L) + ": " +
                               e.what());
        }
        LedgerEntry entry;
        entry.stage = stage_name;
        entry.window = L;
        entry.epochs = budget.epochs;
        entry.max_pairs = budget.max_pairs;
        entry.realized_pairs = model.realized_pairs;
        entry.cost = cost_of(budget, full, L, model.realized_pairs);
        entry.diag = diag;
        ledger.push_back(entry);
        run.diag[L] = diag;
    }
    return run;
}

SelectionResult knee_aware_select(const std::string& method, const std::vector<int>& s0,
                                  const SplitPool& split, const Projector& proj,
                                  const CandidateGrid& grid, const StageBudgets& budgets,
                                  const SelectorSpec& spec, uint64_t seed) {
    spec.validate(s0.size());
    SelectionResult result;
    result.method = method;
    result.s0 = s0;

    const SummarySet train = project(proj, split.train);
    const SummarySet val = project(proj, split.val);

    const StageRun stage1 = run_stage("stage1", 1, s0, train, val, budgets.stage1,
                                      budgets.full, seed, result.ledger);
    for (int L : s0) result.s1_scores[L] = stage1.diag.at(L).mean_err;

    const std::vector<int> ranking = coarse_rank(s0, stage1.diag);
    result.s1 = refine(grid, s0, ranking, spec);

    const StageRun stage2 = run_stage("stage2", 2, result.s1, train, val, budgets.stage2,
                                      budgets.full, seed, result.ledger);
    const Stage2Scores scores = stage2_scores(result.s1, stage2.diag, spec);
    for (size_t i = 0; i < result.s1.size(); ++i)
        result.q_scores[result.s1[i]] = scores.q[i];

    result.frontier_index = saturation_frontier(scores.q, spec);
    const size_t best_idx =
        size_t(std::min_element(scores.q.begin(), scores.q.end()) - scores.q.begin());
    const auto [l_sel, fallback] =
        one_se_select(result.s1, scores, result.frontier_index,
                      stage2.diag.at(result.s1[best_idx]).per_anchor, spec.kappa);
    result.l_sel = l_sel;
    result.fallback_used = fallback;
    return result;
}

}  // namespace

SelectionResult run_sake(const SplitPool& split, const Projector& proj,
                         const CandidateGrid& grid, const AnchorReport& anchors,
                         const StageBudgets& budgets, const SelectorSpec& spec,
                         uint64_t seed) {
    return knee_aware_select("sake", anchors.s0, split, proj, grid, budgets, spec, seed);
}

SelectionResult run_sake(const SplitPool& split, const Projector& proj,
                         const CandidateGrid& grid, const AnchorSpec& anchor_spec,
                         const StageBudgets& budgets, const SelectorSpec& spec, uint64_t seed,
                         double ridge) {
    RiskCurve curve;
    try {
        curve = risk_curve(project(proj, split.train), project(proj, split.val), grid, ridge,
                           anchor_spec.boot);
    } catch (const Error& e) {
        fail(e.kind(), std::string("anchor risk curve: ") + e.what());
    }
    const AnchorReport report = extract_anchors(curve, anchor_spec);
    return run_sake(split, proj, grid, report, budgets, spec, seed);
}

SelectionResult run_system_core(const AnchorReport& anchors) {
    SelectionResult result;
    result.method = "system-core";
    result.l_sel = anchors.l_core;
    result.s0 = anchors.s0;
    return result;
}

std::vector<int> direct_shortlist_windows(int k, const CandidateGrid& grid) {
    require(k == 3 || k == 4, ErrKind::config, "direct shortlists come in sizes 3 and 4");
    require(grid.size() >= 1, ErrKind::config, "grid must be nonempty");

    // Nearest grid member to a real-valued position, ties resolved upward.
    auto snap = [&grid](double target) {
        int best = grid.windows.front();
        double best_dist = std::numeric_limits<double>::infinity();
        for (int L : grid.windows) {
            const double dist = std::abs(double(L) - target);
            if (dist < best_dist - 1e-12 ||
                (std::abs(dist - best_dist) <= 1e-12 && L > best)) {
                best = L;
                best_dist = dist;
            }
        }
        return best;
    };

    std::vector<int> s0 = {grid.l_min(), grid.l_max()};
    if (k == 3) {
        s0.push_back(snap(0.5 * double(grid.l_min() + grid.l_max())));
    } else {
        const double span = double(grid.l_max() - grid.l_min());
        s0.push_back(snap(double(grid.l_min()) + span / 3.0));
        s0.push_back(snap(double(grid.l_min()) + 2.0 * span / 3.0));
    }
    std::sort(s0.begin(), s0.end());
    s0.erase(std::unique(s0.begin(), s0.end()), s0.end());
    return s0;
}

SelectionResult run_direct_shortlist(int k, const SplitPool& split, const Projector& proj,
                                     const CandidateGrid& grid, const StageBudgets& budgets,
                                     const SelectorSpec& spec, uint64_t seed) {
    const std::vector<int> s0 = direct_shortlist_windows(k, grid);
    return knee_aware_select(k == 3 ? "direct3" : "direct4", s0, split, proj, grid, budgets,
                             spec.direct_profile(), seed);
}

SelectionResult run_asha(const SplitPool& split, const Projector& proj,
                         const CandidateGrid& grid, int rungs, int reduction,
                         const StageBudgets& budgets, uint64_t seed) {
    require(reduction >= 2, ErrKind::config, "reduction must be >= 2");
    require(rungs >= 1, ErrKind::config, "rungs must be >= 1");

    SelectionResult result;
    result.method = "asha";
    result.s0 = grid.windows;

    const SummarySet train = project(proj, split.train);
    const SummarySet val = project(proj, split.val);

    std::vector<int> survivors = grid.windows;
    PilotBudget budget = budgets.stage1;
    for (int rung = 0; rung < rungs; ++rung) {
        const StageRun run =
            run_stage("rung" + std::to_string(rung), 100 + rung, survivors, train, val,
                      budget, budgets.full, seed, result.ledger);
        std::vector<int> ranked = survivors;
        std::stable_sort(ranked.begin(), ranked.end(), [&](int a, int b) {
            const double sa = run.diag.at(a).mean_err, sb = run.diag.at(b).mean_err;
            return sa < sb || (sa == sb && a < b);
        });
        const int keep = std::max(1, int(survivors.size()) / reduction);
        ranked.resize(size_t(keep));
        std::sort(ranked.begin(), ranked.end());
        survivors = ranked;
        for (int L : survivors) result.s1_scores[L] = run.diag.at(L).mean_err;
        if (rung + 1 < rungs) {
            budget.epochs *= reduction;
            budget.max_pairs *= reduction;
            budget.train_trajs *= reduction;
        }
    }

    // Final survivor: best last-rung score, ties toward the smaller window.
    int best = survivors.front();
    for (int L : survivors)
        if (result.s1_scores.at(L) < result.s1_scores.at(best)) best = L;
    result.s1 = survivors;
    result.l_sel = best;
    return result;
}

nlohmann::json selection_json(const SelectionResult& result) {
    nlohmann::json s1_scores = nlohmann::json::object();
    for (const auto& [L, s] : result.s1_scores) s1_scores[std::to_string(L)] = s;
    nlohmann::json q_scores = nlohmann::json::object();
    for (const auto& [L, q] : result.q_scores) q_scores[std::to_string(L)] = q;
    nlohmann::json ledger = nlohmann::json::array();
    for (const auto& entry : result.ledger) ledger.push_back(ledger_entry_json(entry));
    nlohmann::json j = {{"method", result.method},
                        {"l_sel", result.l_sel},
                        {"s0", result.s0},
                        {"s1", result.s1},
                        {"s1_scores", s1_scores},
                        {"q_scores", q_scores},
                        {"fallback_used", result.fallback_used},
                        {"ledger", ledger},
                        {"total_cost", result.total_cost()},
                        {"unique_windows", result.unique_windows()}};
    if (result.frontier_index >= 0) {
        j["frontier_index"] = result.frontier_index;
        j["frontier_window"] = result.s1[size_t(result.frontier_index)];
    }
    return j;
}

SelectionResult selection_from_json(const nlohmann::json& j) {
    SelectionResult result;
    result.method = j.at("method").get<std::string>();
    result.l_sel = j.at("l_sel").get<int>();
    result.s0 = j.at("s0").get<std::vector<int>>();
    result.s1 = j.at("s1").get<std::vector<int>>();
    for (const auto& [key, value] : j.at("s1_scores").items())
        result.s1_scores[std::stoi(key)] = value.get<double>();
    for (const auto& [key, value] : j.at("q_scores").items())
        result.q_scores[std::stoi(key)] = value.get<double>();
    result.fallback_used = j.at("fallback_used").get<bool>();
    if (j.contains("frontier_index")) result.frontier_index = j.at("frontier_index").get<int>();
    for (const auto& e : j.at("ledger")) {
        LedgerEntry entry;
        entry.stage = e.at("stage").get<std::string>();
        entry.window = e.at("L").get<int>();
        entry.epochs = e.at("budget").at("epochs").get<int>();
        entry.max_pairs = e.at("budget").at("max_pairs").get<long>();
        entry.realized_pairs = e.at("realized_pairs").get<long>();
        entry.cost = e.at("cost").get<double>();
        const auto& d = e.at("diagnostics");
        entry.diag.mean_err = d.at("mean_err").get<double>();
        entry.diag.terminal_err = d.at("terminal_err").get<double>();
        entry.diag.anchor_std = d.at("anchor_std").get<double>();
        entry.diag.tail_err = d.at("tail_err").get<double>();
        entry.diag.per_anchor = d.at("per_anchor").get<std::vector<double>>();
        result.ledger.push_back(std::move(entry));
    }
    return result;
}

}  // namespace sake
