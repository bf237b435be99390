#include "sake/anchors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sake {

void AnchorSpec::validate() const {
    require(rho > 0.0 && rho < 1.0, ErrKind::config, "rho must lie in (0,1)");
    require(tau_pl > 0.0 && tau_pl < 1.0, ErrKind::config, "tau_pl must lie in (0,1)");
    boot.validate();
}

CoreEstimate estimate_core(const RiskCurve& curve, const AnchorSpec& spec) {
    spec.validate();
    const auto& grid = curve.grid;
    require(curve.risk.size() == size_t(grid.size()), ErrKind::config,
            "curve does not cover the grid");

    CoreEstimate out;
    const size_t last = curve.risk.size() - 1;
    const auto& tail_reps = curve.replicates[last];
    out.tail_gap.resize(curve.risk.size());
    out.tail_gap_ucb.resize(curve.risk.size());
    for (size_t i = 0; i < curve.risk.size(); ++i) {
        out.tail_gap[i] = curve.risk[i] - curve.risk[last];
        std::vector<double> gap(curve.replicates[i].size());
        for (size_t b = 0; b < gap.size(); ++b)
            gap[b] = curve.replicates[i][b] - tail_reps[b];  // paired via coupling
        out.tail_gap_ucb[i] = ucb(gap, spec.boot.level);
    }

    out.epsilon_sys = spec.rho * (curve.risk.front() - curve.risk.back());
    if (out.epsilon_sys <= 0.0) {
        out.l_core = grid.l_min();
        out.degenerate = true;
        return out;
    }
    out.l_core = grid.l_max();
    for (size_t i = 0; i < curve.risk.size(); ++i) {
        if (out.tail_gap_ucb[i] <= out.epsilon_sys) {
            out.l_core = grid.windows[i];
            break;
        }
    }
    return out;
}

PlateauEstimate estimate_plateau(const RiskCurve& curve, const AnchorSpec& spec, int l_core) {
    spec.validate();
    const auto& grid = curve.grid;
    require(grid.contains(l_core), ErrKind::config, "l_core is not on the grid");

    PlateauEstimate out;
    const size_t n = curve.risk.size();
    out.rel_gain.assign(n, std::numeric_limits<double>::quiet_NaN());
    out.rel_gain_ucb.assign(n, std::numeric_limits<double>::quiet_NaN());
    for (size_t i = 0; i + 1 < n; ++i) {
        out.rel_gain[i] = (curve.risk[i] - curve.risk[i + 1]) /
                          std::max(curve.risk[i], spec.denom_floor);
        std::vector<double> gain(curve.replicates[i].size());
        for (size_t b = 0; b < gain.size(); ++b)
            gain[b] = (curve.replicates[i][b] - curve.replicates[i + 1][b]) /
                      std::max(curve.replicates[i][b], spec.denom_floor);
        out.rel_gain_ucb[i] = ucb(gain, spec.boot.level);
    }

    out.l_plateau = grid.l_max();
    for (size_t i = size_t(grid.index_of(l_core)); i + 1 < n; ++i) {
        if (out.rel_gain_ucb[i] <= spec.tau_pl) {
            out.l_plateau = grid.windows[i];
            break;
        }
    }
    return out;
}

std::vector<int> initial_shortlist(const CandidateGrid& grid, int l_core, int l_plateau) {
    require(grid.contains(l_core) && grid.contains(l_plateau), ErrKind::config,
            "anchors must be grid members");
    std::vector<int> s0 = {grid.l_min(), l_core, l_plateau};
    std::sort(s0.begin(), s0.end());
    s0.erase(std::unique(s0.begin(), s0.end()), s0.end());
    return s0;
}

AnchorReport extract_anchors(const RiskCurve& curve, const AnchorSpec& spec) {
    const CoreEstimate core = estimate_core(curve, spec);
    const PlateauEstimate plateau = estimate_plateau(curve, spec, core.l_core);

    AnchorReport report;
    report.l_core = core.l_core;
    report.l_plateau = plateau.l_plateau;
    report.epsilon_sys = core.epsilon_sys;
    report.degenerate = core.degenerate;
    for (int L : curve.grid.windows)
        if (L >= core.l_core && L <= plateau.l_plateau) report.band.push_back(L);
    report.s0 = initial_shortlist(curve.grid, core.l_core, plateau.l_plateau);
    for (size_t i = 0; i < curve.risk.size(); ++i) {
        AnchorDiag d;
        d.window = curve.grid.windows[i];
        d.tail_gap = core.tail_gap[i];
        d.tail_gap_ucb = core.tail_gap_ucb[i];
        d.rel_gain = plateau.rel_gain[i];
        d.rel_gain_ucb = plateau.rel_gain_ucb[i];
        report.diag.push_back(d);
    }
    return report;
}

nlohmann::json anchor_report_json(const AnchorReport& report) {
    nlohmann::json diag = nlohmann::json::array();
    for (const auto& d : report.diag) {
        nlohmann::json row = {{"window", d.window},
                              {"tail_gap", d.tail_gap},
                              {"tail_gap_ucb", d.tail_gap_ucb}};
        if (std::isfinite(d.rel_gain)) {
            row["rel_gain"] = d.rel_gain;
            row["rel_gain_ucb"] = d.rel_gain_ucb;
        }
        diag.push_back(row);
    }
    return {{"l_core", report.l_core},
            {"l_plateau", report.l_plateau},
            {"band", report.band},
            {"s0", report.s0},
            {"epsilon_sys", report.epsilon_sys},
            {"degenerate", report.degenerate},
            {"diagnostics", diag}};
}

AnchorReport anchor_report_from_json(const nlohmann::json& j) {
    AnchorReport report;
    report.l_core = j.at("l_core").get<int>();
    report.l_plateau = j.at("l_plateau").get<int>();
    report.band = j.at("band").get<std::vector<int>>();
    report.s0 = j.at("s0").get<std::vector<int>>();
    report.epsilon_sys = j.at("epsilon_sys").get<double>();
    report.degenerate = j.at("degenerate").get<bool>();
    for (const auto& d : j.at("diagnostics")) {
        AnchorDiag diag;
        diag.window = d.at("window").get<int>();
        diag.tail_gap = d.at("tail_gap").get<double>();
        diag.tail_gap_ucb = d.at("tail_gap_ucb").get<double>();
        diag.rel_gain = d.contains("rel_gain")
                            ? d.at("rel_gain").get<double>()
                            : std::numeric_limits<double>::quiet_NaN();
        diag.rel_gain_ucb = d.contains("rel_gain_ucb")
                                ? d.at("rel_gain_ucb").get<double>()
                                : std::numeric_limits<double>::quiet_NaN();
        report.diag.push_back(diag);
    }
    return report;
}

}  // namespace sake
