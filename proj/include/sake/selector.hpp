#pragma once

#include <json.hpp>

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sake/anchors.hpp"
#include "sake/pilots.hpp"
#include "sake/summarize.hpp"
#include "sake/sysrisk.hpp"
#include "sake/trajstore.hpp"

namespace sake {

struct SelectorSpec {
    int top_k = 2;
    int hop = 1;
    int cap = 6;
    // Stage-two blend; (w_mean, w_term, w_worst, w_std) are renormalized to
    // sum to one before use.
    double w_mean = 0.75;
    double w_term = 0.25;
    double w_worst = 0.0;
    double w_std = 0.20;
    double alpha = 0.25;
    double frontier_local = 0.15;
    double frontier_remain = 0.15;
    int consecutive_small = 1;
    double kappa = 1.5;

    void validate(size_t s0_size) const;

    // Terminal + worst-anchor profile used by the direct shortlist baselines.
    SelectorSpec direct_profile() const;
};

struct StageBudgets {
    PilotBudget stage1;
    PilotBudget stage2;
    FullProtocol full;

    // Default stage budgets (coarse pass, refined pass) with the full
    // protocol's pair table derived from the train split.
    static StageBudgets defaults(const SplitPool& split, const CandidateGrid& grid);

    bool operator==(const StageBudgets&) const = default;
};

struct SelectionResult {
    std::string method;
    int l_sel = 0;
    std::vector<int> s0;
    std::vector<int> s1;
    std::map<int, double> s1_scores;  // coarse stage-one scores
    std::map<int, double> q_scores;   // stage-two scores
    int frontier_index = -1;          // 0-based index into s1; -1 when unused
    bool fallback_used = false;
    std::vector<LedgerEntry> ledger;

    double total_cost() const;
    std::vector<int> unique_windows() const;  // distinct trained windows
};

// Coarse ranking of the initial shortlist by stage-one mean rollout error,
// ascending, ties broken toward smaller windows.
std::vector<int> coarse_rank(const std::vector<int>& s0,
                             const std::map<int, Diagnostics>& diag);

// Refined candidate set: hop-neighborhoods of the top-ranked candidates plus
// the boundary anchors, capped by evicting non-anchor members farthest from
// the top-ranked window (distance ties keep the smaller window).
std::vector<int> refine(const CandidateGrid& grid, const std::vector<int>& s0,
                        const std::vector<int>& ranking, const SelectorSpec& spec);

struct Stage2Scores {
    std::vector<double> q;  // aligned to the refined set in ascending order
    double mean_span = 0.0; // min-max span of the raw mean-error channel
};

Stage2Scores stage2_scores(const std::vector<int>& s1, const std::map<int, Diagnostics>& diag,
                           const SelectorSpec& spec);

// Earliest index after which both the adjacent gain and the remaining gap to
// the best score are small; falls back to the last index. Returns a 0-based
// index into the refined set.
int saturation_frontier(const std::vector<double>& q, const SelectorSpec& spec);

// Smallest window up to the frontier whose score is within kappa standard
// errors of the best score; falls back to the frontier candidate.
std::pair<int, bool> one_se_select(const std::vector<int>& s1, const Stage2Scores& scores,
                                   int frontier, const std::vector<double>& per_anchor_best,
                                   double kappa);

// Substream key for one pilot training task.
uint64_t pilot_seed(uint64_t seed, int stage, int window);

SelectionResult run_sake(const SplitPool& split, const Projector& proj,
                         const CandidateGrid& grid, const AnchorReport& anchors,
                         const StageBudgets& budgets, const SelectorSpec& spec,
                         uint64_t seed);

// Convenience overload that derives the anchors from the split itself.
SelectionResult run_sake(const SplitPool& split, const Projector& proj,
                         const CandidateGrid& grid, const AnchorSpec& anchor_spec,
                         const StageBudgets& budgets, const SelectorSpec& spec, uint64_t seed,
                         double ridge = 1e-3);

SelectionResult run_system_core(const AnchorReport& anchors);

// Uniformly spaced k-point shortlist (k in {3,4}) followed by the same pilot
// pipeline under the direct-baseline score profile and kappa = 1.
SelectionResult run_direct_shortlist(int k, const SplitPool& split, const Projector& proj,
                                     const CandidateGrid& grid, const StageBudgets& budgets,
                                     const SelectorSpec& spec, uint64_t seed);

std::vector<int> direct_shortlist_windows(int k, const CandidateGrid& grid);

// Successive halving over the full grid: every rung trains the survivors at a
// budget scaled up by the reduction factor and promotes the top 1/reduction.
SelectionResult run_asha(const SplitPool& split, const Projector& proj,
                         const CandidateGrid& grid, int rungs, int reduction,
                         const StageBudgets& budgets, uint64_t seed);

nlohmann::json selection_json(const SelectionResult& result);
SelectionResult selection_from_json(const nlohmann::json& j);

}  // namespace sake
