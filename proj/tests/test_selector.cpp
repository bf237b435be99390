#include "sake/selector.hpp"

#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "sake/rng.hpp"

using namespace sake;

namespace {

Diagnostics diag_with(double m, double u = 0.0, double v = 0.0, double a = 0.0,
                      std::vector<double> per_anchor = {0.0}) {
    Diagnostics d;
    d.mean_err = m;
    d.terminal_err = u;
    d.anchor_std = v;
    d.tail_err = a;
    d.per_anchor = std::move(per_anchor);
    return d;
}

struct SakeFixture {
    TrajectoryPool pool;
    SplitPool split;
    Projector proj;
    CandidateGrid grid;
    StageBudgets budgets;

    explicit SakeFixture(uint64_t seed, int true_lag = 3, double coef_scale = 1.0,
                         int l_max = 12) {
        LinearSystemSpec spec;
        spec.dim = 4;
        spec.true_lag = true_lag;
        spec.n_traj = 60;
        spec.T = 64;
        spec.noise_sigma = 0.05;
        spec.stability_margin = 0.01;
        spec.target_radius = 0.99;  // persistent transient keeps rollouts informative
        spec.coef_scale = coef_scale;
        spec.seed = seed;
        pool = generate_linear_lag_system(spec);
        split = split_pool(pool, {0.8, 0.1, 0.1}, seed);
        ProjectorSpec ps;
        ps.method = SummaryMethod::pca;
        ps.fit_samples = 800;
        ps.max_components = 64;
        ps.seed = seed;
        proj = fit_projector(split.train, ps);
        grid = CandidateGrid::range(1, l_max);
        budgets = StageBudgets::defaults(split, grid);
    }
};

}  // namespace

TEST_CASE("coarse_rank: sorts ascending with ties toward smaller windows") {
    std::map<int, Diagnostics> diag;
    diag[1] = diag_with(0.9);
    diag[3] = diag_with(0.4);
    diag[6] = diag_with(0.41);
    CHECK(coarse_rank({1, 3, 6}, diag) == std::vector<int>{3, 6, 1});

    diag[1] = diag_with(0.5);
    diag[3] = diag_with(0.5);
    diag[6] = diag_with(0.5);
    CHECK(coarse_rank({1, 3, 6}, diag) == std::vector<int>{1, 3, 6});

    std::map<int, Diagnostics> single;
    single[4] = diag_with(0.1);
    CHECK(coarse_rank({4}, single) == std::vector<int>{4});

    std::map<int, Diagnostics> missing;
    missing[1] = diag_with(0.1);
    CHECK_THROWS_WITH_AS(coarse_rank({1, 3}, missing), doctest::Contains("3"), Error);
}

TEST_CASE("refine: neighborhood union, boundary anchors, cap eviction") {
    CandidateGrid grid = CandidateGrid::range(1, 16);
    SelectorSpec spec;

    SUBCASE("documented eviction case") {
        // top-2 = {3, 6}: union {2..4, 5..7} + anchors {1, 6} = {1..7}; window 7
        // is the non-anchor farthest from 3 and gets evicted at cap 6.
        std::vector<int> s1 = refine(grid, {1, 3, 6}, {3, 6, 1}, spec);
        CHECK(s1 == std::vector<int>{1, 2, 3, 4, 5, 6});
    }
    SUBCASE("grid edge truncates the neighborhood") {
        std::vector<int> s1 = refine(grid, {1, 2, 3}, {1, 2, 3}, spec);
        for (int L : s1) CHECK(L >= 1);
        CHECK(std::find(s1.begin(), s1.end(), 0) == s1.end());
    }
    SUBCASE("singleton shortlist expands to its neighborhood") {
        std::vector<int> s1 = refine(grid, {1}, {1}, spec);
        CHECK(s1 == std::vector<int>{1, 2});
    }
}

TEST_CASE("stage2_scores: normalization, weights, endpoints") {
    SelectorSpec spec;

    SUBCASE("singleton collapses to zero") {
        std::map<int, Diagnostics> diag;
        diag[4] = diag_with(0.3, 0.2, 0.1, 0.4);
        Stage2Scores s = stage2_scores({4}, diag, spec);
        CHECK(s.q == std::vector<double>{0.0});
    }
    SUBCASE("dominated candidate scores exactly one") {
        std::map<int, Diagnostics> diag;
        diag[2] = diag_with(0.1, 0.1, 0.0, 0.1);
        diag[5] = diag_with(0.9, 0.8, 0.5, 0.7);
        Stage2Scores s = stage2_scores({2, 5}, diag, spec);
        CHECK(s.q[0] == doctest::Approx(0.0));
        CHECK(s.q[1] == doctest::Approx(1.0));
    }
    SUBCASE("arithmetic with renormalized weights") {
        // Three candidates arranged so the middle one normalizes to
        // m=0.5, u=1, v=0, a=0.2.
        std::map<int, Diagnostics> diag;
        diag[1] = diag_with(0.0, 0.0, 0.0, 0.0);
        diag[2] = diag_with(0.5, 1.0, 0.0, 0.2);
        diag[3] = diag_with(1.0, 1.0, 0.0, 1.0);
        Stage2Scores s = stage2_scores({1, 2, 3}, diag, spec);
        CHECK(s.q[0] == doctest::Approx(0.0));
        CHECK(s.q[1] ==
              doctest::Approx(0.25 * (0.75 / 1.2 * 0.5 + 0.25 / 1.2 * 1.0) + 0.75 * 0.2)
                  .epsilon(1e-12));
        CHECK(s.q[1] == doctest::Approx(0.2802).epsilon(1e-3));
    }
}

TEST_CASE("saturation_frontier: documented cases") {
    SelectorSpec spec;
    // Steep descent throughout: no index qualifies, fall back to the last.
    CHECK(saturation_frontier({1.0, 0.5, 0.25, 0.1}, spec) == 3);
    // Saturates at the second candidate.
    CHECK(saturation_frontier({1.0, 0.10, 0.095, 0.094}, spec) == 1);
    CHECK(saturation_frontier({0.42}, spec) == 0);
}

TEST_CASE("saturation_frontier: loosening the fractions never increases r") {
    RngStream rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> q(size_t(rng.uniform_int(2, 8)));
        for (double& v : q) v = rng.uniform();
        SelectorSpec tight;
        tight.frontier_local = 0.05;
        tight.frontier_remain = 0.05;
        SelectorSpec loose;
        loose.frontier_local = 0.3;
        loose.frontier_remain = 0.3;
        CHECK(saturation_frontier(q, loose) <= saturation_frontier(q, tight));
    }
}

TEST_CASE("one_se_select: threshold arithmetic and fallbacks") {
    Stage2Scores scores;
    scores.mean_span = 1.0;

    SUBCASE("documented case selects the middle window") {
        scores.q = {0.30, 0.10, 0.09};
        // per-anchor pair {0, 0.02}: SE = sd/sqrt(2) = 0.01 on the q scale.
        auto [l_sel, fallback] = one_se_select({2, 4, 6}, scores, 1, {0.0, 0.02}, 1.5);
        CHECK(l_sel == 4);
        CHECK(!fallback);
    }
    SUBCASE("zero SE picks the earliest exact minimum") {
        scores.q = {0.2, 0.1, 0.1};
        auto [l_sel, fallback] = one_se_select({2, 4, 6}, scores, 2, {0.5, 0.5}, 1.5);
        CHECK(l_sel == 4);
        CHECK(!fallback);
    }
    SUBCASE("everything within threshold at r=0 picks the smallest") {
        scores.q = {0.1, 0.1, 0.1};
        auto [l_sel, fallback] = one_se_select({2, 4, 6}, scores, 0, {0.0}, 1.5);
        CHECK(l_sel == 2);
    }
    SUBCASE("no qualifying candidate falls back to the frontier") {
        scores.q = {0.9, 0.8, 0.0};
        auto [l_sel, fallback] = one_se_select({2, 4, 6}, scores, 1, {0.0}, 1.5);
        CHECK(l_sel == 4);
        CHECK(fallback);
    }
}

TEST_CASE("one_se_select: larger kappa never selects a larger window") {
    RngStream rng(8);
    for (int trial = 0; trial < 40; ++trial) {
        Stage2Scores scores;
        scores.mean_span = 0.5 + rng.uniform();
        const int n = rng.uniform_int(2, 6);
        std::vector<int> s1;
        for (int i = 0; i < n; ++i) s1.push_back(2 * i + 1);
        scores.q.resize(size_t(n));
        for (double& v : scores.q) v = rng.uniform();
        std::vector<double> anchors = {rng.uniform(), rng.uniform(), rng.uniform(),
                                       rng.uniform()};
        const int frontier = rng.uniform_int(0, n - 1);
        int prev = 1 << 20;
        for (double kappa : {1.0, 1.5, 2.0}) {
            auto [l_sel, fb] = one_se_select(s1, scores, frontier, anchors, kappa);
            CHECK(l_sel <= prev);
            prev = l_sel;
        }
    }
}

TEST_CASE("selection is invariant to positive rescaling of all diagnostics") {
    std::map<int, Diagnostics> diag;
    RngStream rng(4);
    std::vector<int> s1 = {2, 3, 4, 5};
    for (int L : s1) {
        std::vector<double> pa = {rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()};
        diag[L] = diag_with(rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform(), pa);
    }
    SelectorSpec spec;
    Stage2Scores base = stage2_scores(s1, diag, spec);
    const int base_r = saturation_frontier(base.q, spec);
    const size_t best =
        size_t(std::min_element(base.q.begin(), base.q.end()) - base.q.begin());
    auto [base_sel, fb1] =
        one_se_select(s1, base, base_r, diag.at(s1[best]).per_anchor, spec.kappa);

    for (double c : {3.7, 120.0, 0.01}) {
        std::map<int, Diagnostics> scaled;
        for (const auto& [L, d] : diag) {
            Diagnostics sd = d;
            sd.mean_err *= c;
            sd.terminal_err *= c;
            sd.anchor_std *= c;
            sd.tail_err *= c;
            for (double& v : sd.per_anchor) v *= c;
            scaled[L] = sd;
        }
        Stage2Scores s = stage2_scores(s1, scaled, spec);
        for (size_t i = 0; i < s.q.size(); ++i)
            CHECK(s.q[i] == doctest::Approx(base.q[i]).epsilon(1e-9));
        CHECK(saturation_frontier(s.q, spec) == base_r);
        auto [sel, fb2] =
            one_se_select(s1, s, base_r, scaled.at(s1[best]).per_anchor, spec.kappa);
        CHECK(sel == base_sel);
    }
}

TEST_CASE("direct shortlists: documented grid arithmetic") {
    CandidateGrid grid = CandidateGrid::range(1, 16);
    CHECK(direct_shortlist_windows(3, grid) == std::vector<int>{1, 9, 16});
    CHECK(direct_shortlist_windows(4, grid) == std::vector<int>{1, 6, 11, 16});
    CandidateGrid tiny = CandidateGrid::range(1, 3);
    CHECK(direct_shortlist_windows(3, tiny) == std::vector<int>{1, 2, 3});
}

TEST_CASE("run_sake: recovers the neighborhood of a VAR(3) knee across seeds") {
    for (uint64_t seed : {0ULL, 1ULL, 2ULL}) {
        SakeFixture fx(seed);
        AnchorSpec aspec;
        aspec.boot.seed = seed;
        SelectorSpec spec;
        SelectionResult result =
            run_sake(fx.split, fx.proj, fx.grid, aspec, fx.budgets, spec, seed);
        CHECK(result.l_sel >= 3);
        CHECK(result.l_sel <= 4);
        CHECK(std::find(result.s1.begin(), result.s1.end(), result.l_sel) != result.s1.end());
        CHECK(int(result.unique_windows().size()) <= int(result.s0.size()) + spec.cap);
        for (const auto& entry : result.ledger) CHECK(entry.cost > 0.0);
    }
}

TEST_CASE("run_sake: flat-risk systems collapse to the smallest windows") {
    SakeFixture fx(5, 1, /*coef_scale=*/0.0);
    AnchorSpec aspec;
    SelectorSpec spec;
    SelectionResult result = run_sake(fx.split, fx.proj, fx.grid, aspec, fx.budgets, spec, 5);
    CHECK(result.s0 == std::vector<int>{1});
    CHECK(result.s1 == std::vector<int>{1, 2});
    CHECK((result.l_sel == 1 || result.l_sel == 2));
}

TEST_CASE("run_sake: reruns are identical including the ledger") {
    SakeFixture fx(7);
    AnchorSpec aspec;
    SelectorSpec spec;
    SelectionResult a = run_sake(fx.split, fx.proj, fx.grid, aspec, fx.budgets, spec, 7);
    SelectionResult b = run_sake(fx.split, fx.proj, fx.grid, aspec, fx.budgets, spec, 7);
    CHECK(selection_json(a).dump() == selection_json(b).dump());
}

TEST_CASE("run_system_core: returns the core anchor with an empty ledger") {
    AnchorReport report;
    report.l_core = 3;
    report.l_plateau = 6;
    report.s0 = {1, 3, 6};
    SelectionResult result = run_system_core(report);
    CHECK(result.l_sel == 3);
    CHECK(result.ledger.empty());
    CHECK(result.total_cost() == 0.0);
}

TEST_CASE("run_direct_shortlist: same pipeline, direct profile") {
    SakeFixture fx(1);
    SelectorSpec spec;
    SelectionResult d3 =
        run_direct_shortlist(3, fx.split, fx.proj, fx.grid, fx.budgets, spec, 1);
    CHECK(d3.method == "direct3");
    CHECK(d3.s0 == direct_shortlist_windows(3, fx.grid));
    CHECK(std::find(d3.s1.begin(), d3.s1.end(), d3.l_sel) != d3.s1.end());

    SelectionResult d4 =
        run_direct_shortlist(4, fx.split, fx.proj, fx.grid, fx.budgets, spec, 1);
    CHECK(d4.s0.size() == 4);
    CHECK(int(d4.s1.size()) <= spec.cap);
}

TEST_CASE("run_asha: rung sizes, survivor quality, determinism") {
    SakeFixture fx(2, 3, 1.0, 16);
    SelectionResult result = run_asha(fx.split, fx.proj, fx.grid, 2, 4, fx.budgets, 2);
    // 16 trained at rung 0, 4 promoted and trained at rung 1.
    int rung0 = 0, rung1 = 0;
    for (const auto& entry : result.ledger) {
        if (entry.stage == "rung0") ++rung0;
        if (entry.stage == "rung1") ++rung1;
    }
    CHECK(rung0 == 16);
    CHECK(rung1 == 4);
    CHECK(result.s1.size() == 1);  // rung sizes 16 -> 4 -> 1
    CHECK(result.l_sel >= 3);      // survivor at or past the true lag

    SelectionResult again = run_asha(fx.split, fx.proj, fx.grid, 2, 4, fx.budgets, 2);
    CHECK(selection_json(result).dump() == selection_json(again).dump());
}

TEST_CASE("matched budgets: one record drives every selector") {
    SakeFixture fx(3);
    const StageBudgets a = fx.budgets;
    const StageBudgets b = StageBudgets::defaults(fx.split, fx.grid);
    CHECK(a == b);  // structural equality of the shared budget record
}

TEST_CASE("cost additivity: ledger total is the sum of its entries") {
    SakeFixture fx(4);
    AnchorSpec aspec;
    SelectorSpec spec;
    SelectionResult result = run_sake(fx.split, fx.proj, fx.grid, aspec, fx.budgets, spec, 4);
    double total = 0.0;
    for (const auto& entry : result.ledger) total += entry.cost;
    CHECK(result.total_cost() == doctest::Approx(total).epsilon(1e-15));
    CHECK(result.total_cost() < double(fx.grid.size()));  // strictly below a full sweep
}
