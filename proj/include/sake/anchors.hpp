#pragma once

#include <json.hpp>

#include <vector>

#include "sake/sysrisk.hpp"

namespace sake {

struct AnchorSpec {
    double rho = 0.05;     // tail tolerance fraction
    double tau_pl = 0.05;  // relative-gain threshold
    BootstrapSpec boot;
    double denom_floor = 1e-12;

    void validate() const;
};

// Per-window anchor diagnostics: tail gap to the longest-window risk and
// relative gain to the next window, each with its bootstrap UCB.
struct AnchorDiag {
    int window = 0;
    double tail_gap = 0.0;
    double tail_gap_ucb = 0.0;
    double rel_gain = 0.0;      // NaN at the last window (no successor)
    double rel_gain_ucb = 0.0;  // NaN at the last window
};

struct AnchorReport {
    int l_core = 0;
    int l_plateau = 0;
    std::vector<int> band;  // grid members in [l_core, l_plateau]
    std::vector<int> s0;    // sorted, deduplicated {l_min, l_core, l_plateau}
    double epsilon_sys = 0.0;
    bool degenerate = false;  // non-improving curve, core pinned to l_min
    std::vector<AnchorDiag> diag;
};

struct CoreEstimate {
    int l_core = 0;
    double epsilon_sys = 0.0;
    bool degenerate = false;
    std::vector<double> tail_gap;      // point estimates, per grid window
    std::vector<double> tail_gap_ucb;
};

struct PlateauEstimate {
    int l_plateau = 0;
    std::vector<double> rel_gain;      // per grid window with a successor
    std::vector<double> rel_gain_ucb;
};

// Earliest window whose UCB-bounded tail gap falls below the realized
// tolerance; falls back to l_max, or pins to l_min when the curve does not
// improve at all.
CoreEstimate estimate_core(const RiskCurve& curve, const AnchorSpec& spec);

// Earliest window at or after l_core whose UCB-bounded relative gain drops
// below tau_pl; falls back to l_max.
PlateauEstimate estimate_plateau(const RiskCurve& curve, const AnchorSpec& spec, int l_core);

std::vector<int> initial_shortlist(const CandidateGrid& grid, int l_core, int l_plateau);

AnchorReport extract_anchors(const RiskCurve& curve, const AnchorSpec& spec);

nlohmann::json anchor_report_json(const AnchorReport& report);
AnchorReport anchor_report_from_json(const nlohmann::json& j);

}  // namespace sake
