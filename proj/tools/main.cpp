// Command-line driver for the context-window selection toolkit.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "sake/harness.hpp"

using namespace sake;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json load_json(const fs::path& path) {
    std::ifstream is(path);
    require(bool(is), ErrKind::io_other, "cannot open '" + path.string() + "'");
    json j = json::parse(is, nullptr, false);
    require(!j.is_discarded(), ErrKind::config, "'" + path.string() + "' is not valid JSON");
    return j;
}

struct SummaryFlags {
    std::string method = "pca";
    double var_target = 0.99;
    int max_k = 64;
    int samples = 800;
    int coarsen = 1;
    bool normalize_first = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("--summary.method", method, "pca|svd|random_projection|identity");
        cmd->add_option("--summary.var-target", var_target, "explained-variance target");
        cmd->add_option("--summary.max-k", max_k, "component cap");
        cmd->add_option("--summary.samples", samples, "frames sampled for the fit");
        cmd->add_option("--summary.coarsen", coarsen, "spatial coarsening divisor");
        cmd->add_flag("--summary.normalize-first", normalize_first,
                      "standardize at full resolution before coarsening");
    }
    ProjectorSpec spec(uint64_t seed) const {
        ProjectorSpec s;
        s.method = summary_method_from_string(method);
        s.variance_target = var_target;
        s.max_components = max_k;
        s.fit_samples = samples;
        s.coarsen_factor = coarsen;
        s.normalize_first = normalize_first;
        s.seed = seed;
        return s;
    }
};

struct PoolContext {
    SplitPool split;
    Projector proj;
    CandidateGrid grid;

    PoolContext(const fs::path& in, const std::string& grid_text,
                const std::vector<double>& fractions, const SummaryFlags& summary,
                uint64_t seed) {
        TrajectoryPool pool = read_pool(in);
        require(fractions.size() == 3, ErrKind::config, "--fractions needs 3 values");
        split = split_pool(pool, {fractions[0], fractions[1], fractions[2]}, seed);
        proj = fit_projector(split.train, summary.spec(seed));
        grid = CandidateGrid::parse(grid_text);
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"context-window selection toolkit"};
    app.require_subcommand(1);

    uint64_t seed = 0;
    std::string out;
    std::string config_path;
    bool fail_fast = false;
    app.add_option("--seed", seed, "global seed")->configurable(false);
    app.add_option("--out", out, "output path");
    app.add_option("--config", config_path, "experiment config (JSON)");
    app.add_flag("--fail-fast", fail_fast, "abort on the first failed cell");
    app.fallthrough();

    // gen
    auto* gen = app.add_subcommand("gen", "generate a synthetic trajectory pool");
    std::string gen_system = "linear";
    LinearSystemSpec lin;
    Diffusion2dSpec diff;
    gen->add_option("--system", gen_system, "linear|diffusion2d")->required();
    gen->add_option("--dim", lin.dim, "channels of the linear system");
    gen->add_option("--true-lag", lin.true_lag, "ground-truth memory");
    gen->add_option("--n-traj", lin.n_traj, "trajectory count");
    gen->add_option("--T", lin.T, "timesteps per trajectory");
    gen->add_option("--noise", lin.noise_sigma, "innovation scale");
    gen->add_option("--stability-margin", lin.stability_margin, "spectral radius margin");
    gen->add_option("--coef-scale", lin.coef_scale, "coefficient scale (0 = iid noise)");
    gen->add_option("--burn-in", lin.burn_in, "steps dropped before recording");
    gen->add_option("--target-radius", lin.target_radius, "exact spectral radius (0 = off)");
    gen->add_option("--grid-size", diff.grid, "diffusion grid edge");
    gen->add_option("--diffusivity", diff.diffusivity, "diffusion coefficient");
    gen->add_option("--dt", diff.dt, "time step");
    gen->add_option("--dx", diff.dx, "grid spacing");

    // perturb
    auto* pert = app.add_subcommand("perturb", "apply an observation perturbation");
    std::string pert_in, pert_kind = "identity";
    PerturbSpec pspec;
    pert->add_option("--in", pert_in, "input pool")->required();
    pert->add_option("--kind", pert_kind, "identity|gaussian_noise|downsample|random_mask")
        ->required();
    pert->add_option("--sigma", pspec.sigma, "noise standard deviation");
    pert->add_option("--factor", pspec.factor, "downsample divisor");
    pert->add_option("--mask-fraction", pspec.mask_fraction, "fraction of sites zeroed");

    // shared flags for pipeline commands
    std::string in_path, grid_text = "1..16";
    std::vector<double> fractions = {0.8, 0.1, 0.1};
    SummaryFlags summary;
    double ridge = 1e-3;

    // anchors
    auto* anc = app.add_subcommand("anchors", "extract the anchor band from a pool");
    AnchorSpec aspec;
    std::string risk_csv;
    anc->add_option("--in", in_path, "input pool")->required();
    anc->add_option("--grid", grid_text, "candidate windows, e.g. 1..16");
    anc->add_option("--fractions", fractions, "train/val/test split fractions");
    summary.attach(anc);
    anc->add_option("--ridge", ridge, "VAR ridge strength");
    anc->add_option("--rho", aspec.rho, "tail tolerance fraction");
    anc->add_option("--tau-pl", aspec.tau_pl, "relative-gain threshold");
    anc->add_option("--resamples", aspec.boot.resamples, "bootstrap resamples");
    anc->add_option("--level", aspec.boot.level, "one-sided confidence level");
    anc->add_option("--risk-csv", risk_csv, "also export the risk curve as CSV");

    // sweep
    auto* sweep = app.add_subcommand("sweep", "full-budget oracle sweep over the grid");
    std::vector<uint64_t> sweep_seeds = {0, 1, 2};
    int full_epochs = 20;
    sweep->add_option("--in", in_path, "input pool")->required();
    sweep->add_option("--grid", grid_text, "candidate windows");
    sweep->add_option("--fractions", fractions, "split fractions");
    summary.attach(sweep);
    sweep->add_option("--seeds", sweep_seeds, "training seeds");
    sweep->add_option("--epochs", full_epochs, "full-protocol epochs");

    // select
    auto* sel = app.add_subcommand("select", "run one selector on a pool");
    std::string method = "sake";
    int asha_rungs = 2, asha_reduction = 4;
    sel->add_option("--method", method, "sake|system-core|direct3|direct4|asha")->required();
    sel->add_option("--in", in_path, "input pool")->required();
    sel->add_option("--grid", grid_text, "candidate windows");
    sel->add_option("--fractions", fractions, "split fractions");
    summary.attach(sel);
    sel->add_option("--ridge", ridge, "VAR ridge strength");
    sel->add_option("--rho", aspec.rho, "tail tolerance fraction");
    sel->add_option("--tau-pl", aspec.tau_pl, "relative-gain threshold");
    sel->add_option("--resamples", aspec.boot.resamples, "bootstrap resamples");
    sel->add_option("--rungs", asha_rungs, "successive-halving rungs");
    sel->add_option("--reduction", asha_reduction, "successive-halving reduction");

    // eval
    auto* ev = app.add_subcommand("eval", "score a selection against an oracle");
    std::string result_path, oracle_path, anchors_path;
    double eval_eps = 0.05;
    ev->add_option("--result", result_path, "selection result JSON")->required();
    ev->add_option("--oracle", oracle_path, "oracle JSON")->required();
    ev->add_option("--anchors", anchors_path, "anchor report JSON (optional)");
    ev->add_option("--eps", eval_eps, "knee tolerance");

    // aggregate
    auto* agg = app.add_subcommand("aggregate", "aggregate metric rows (JSON lines)");
    std::string rows_path;
    agg->add_option("--rows", rows_path, "metrics rows, one JSON object per line")
        ->required();

    // report
    auto* rep = app.add_subcommand("report", "render tables from a run directory");
    std::string run_dir;
    rep->add_option("--run", run_dir, "run directory")->required();

    // run
    auto* run = app.add_subcommand("run", "execute a full experiment config");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            require(!out.empty(), ErrKind::config, "gen requires --out");
            TrajectoryPool pool;
            if (gen_system == "linear") {
                lin.seed = seed;
                pool = generate_linear_lag_system(lin);
            } else if (gen_system == "diffusion2d") {
                diff.seed = seed;
                pool = generate_diffusion2d(diff);
            } else {
                fail(ErrKind::config, "unknown system '" + gen_system + "'");
            }
            write_pool(pool, out);
        } else if (pert->parsed()) {
            require(!out.empty(), ErrKind::config, "perturb requires --out");
            pspec.kind = perturb_kind_from_string(pert_kind);
            pspec.seed = seed;
            write_pool(perturb(read_pool(pert_in), pspec), out);
        } else if (anc->parsed()) {
            require(!out.empty(), ErrKind::config, "anchors requires --out");
            aspec.boot.seed = seed;
            PoolContext ctx(in_path, grid_text, fractions, summary, seed);
            const RiskCurve curve =
                risk_curve(project(ctx.proj, ctx.split.train), project(ctx.proj, ctx.split.val),
                           ctx.grid, ridge, aspec.boot);
            if (!risk_csv.empty()) write_risk_csv(curve, aspec.boot.level, risk_csv);
            write_text_atomic(out, anchor_report_json(extract_anchors(curve, aspec)).dump(2) +
                                       "\n");
        } else if (sweep->parsed()) {
            require(!out.empty(), ErrKind::config, "sweep requires --out");
            PoolContext ctx(in_path, grid_text, fractions, summary, seed);
            LinearPilotEvaluator evaluator(
                ctx.split, ctx.proj,
                FullProtocol::from_split(ctx.split, ctx.grid, full_epochs));
            write_text_atomic(
                out, oracle_json(full_sweep(evaluator, ctx.grid, sweep_seeds)).dump(2) + "\n");
        } else if (sel->parsed()) {
            require(!out.empty(), ErrKind::config, "select requires --out");
            PoolContext ctx(in_path, grid_text, fractions, summary, seed);
            StageBudgets budgets = StageBudgets::defaults(ctx.split, ctx.grid);
            SelectorSpec sspec;
            if (!config_path.empty()) {
                // Reuse the experiment schema for stage overrides.
                ExperimentConfig cfg = ExperimentConfig::from_file(config_path);
                budgets.stage1 = cfg.stage1;
                budgets.stage2 = cfg.stage2;
                sspec = cfg.selector;
                aspec = cfg.anchor;
                ridge = cfg.ridge;
            }
            aspec.boot.seed = seed;
            SelectionResult result;
            if (method == "sake") {
                result = run_sake(ctx.split, ctx.proj, ctx.grid, aspec, budgets, sspec, seed,
                                  ridge);
            } else if (method == "system-core") {
                const RiskCurve curve = risk_curve(project(ctx.proj, ctx.split.train),
                                                   project(ctx.proj, ctx.split.val), ctx.grid,
                                                   ridge, aspec.boot);
                result = run_system_core(extract_anchors(curve, aspec));
            } else if (method == "direct3" || method == "direct4") {
                result = run_direct_shortlist(method == "direct3" ? 3 : 4, ctx.split,
                                              ctx.proj, ctx.grid, budgets, sspec, seed);
            } else if (method == "asha") {
                result = run_asha(ctx.split, ctx.proj, ctx.grid, asha_rungs, asha_reduction,
                                  budgets, seed);
            } else {
                fail(ErrKind::config, "unknown method '" + method + "'");
            }
            write_text_atomic(out, selection_json(result).dump(2) + "\n");
        } else if (ev->parsed()) {
            require(!out.empty(), ErrKind::config, "eval requires --out");
            const SelectionResult result = selection_from_json(load_json(result_path));
            const OracleReference oracle = oracle_from_json(load_json(oracle_path));
            AnchorReport anchors;
            const bool with_anchors = !anchors_path.empty();
            if (with_anchors) anchors = anchor_report_from_json(load_json(anchors_path));
            const MetricsRow row = evaluate_selection(result, oracle, eval_eps,
                                                      with_anchors ? &anchors : nullptr);
            write_text_atomic(out, metrics_row_json(row).dump(2) + "\n");
        } else if (agg->parsed()) {
            require(!out.empty(), ErrKind::config, "aggregate requires --out");
            std::ifstream is(rows_path);
            require(bool(is), ErrKind::io_other, "cannot open '" + rows_path + "'");
            std::vector<MetricsRow> rows;
            std::string line;
            while (std::getline(is, line)) {
                if (line.empty()) continue;
                rows.push_back(metrics_row_from_json(json::parse(line)));
            }
            write_text_atomic(out, aggregate_rows_csv(aggregate(rows)));
        } else if (rep->parsed()) {
            write_report(run_dir);
        } else if (run->parsed()) {
            require(!config_path.empty(), ErrKind::config, "run requires --config");
            ExperimentConfig cfg = ExperimentConfig::from_file(config_path);
            if (fail_fast) cfg.fail_fast = true;
            if (!out.empty()) cfg.out_dir = out;
            const fs::path dir = run_experiment(cfg);
            write_report(dir);
            const json manifest = load_json(dir / "manifest.json");
            if (!manifest.at("all_ok").get<bool>()) {
                std::cerr << "some cells failed; see " << (dir / "manifest.json") << "\n";
                return 1;
            }
            std::cout << dir.string() << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
