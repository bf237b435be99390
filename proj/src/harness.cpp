#include "sake/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "sake/rng.hpp"

namespace sake {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& ctx) {
    require(j.is_object(), ErrKind::config, ctx + " must be a JSON object");
    for (const auto& [key, value] : j.items())
        require(allowed.count(key) == 1, ErrKind::config,
                "unknown key '" + key + "' in " + ctx);
}

template <typename T>
void read_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

PilotBudget budget_from_json(const json& j, const PilotBudget& defaults,
                             const std::string& ctx) {
    check_keys(j,
               {"epochs", "max_pairs", "train_trajs", "val_trajs", "rollout_train_h",
                "rollout_val_h", "max_val_rollouts", "anchors_per_candidate"},
               ctx);
    PilotBudget b = defaults;
    read_if(j, "epochs", b.epochs);
    read_if(j, "max_pairs", b.max_pairs);
    read_if(j, "train_trajs", b.train_trajs);
    read_if(j, "val_trajs", b.val_trajs);
    read_if(j, "rollout_train_h", b.rollout_train_h);
    read_if(j, "rollout_val_h", b.rollout_val_h);
    read_if(j, "max_val_rollouts", b.max_val_rollouts);
    read_if(j, "anchors_per_candidate", b.anchors_per_candidate);
    return b;
}

json budget_to_json(const PilotBudget& b) {
    return {{"epochs", b.epochs},
            {"max_pairs", b.max_pairs},
            {"train_trajs", b.train_trajs},
            {"val_trajs", b.val_trajs},
            {"rollout_train_h", b.rollout_train_h},
            {"rollout_val_h", b.rollout_val_h},
            {"max_val_rollouts", b.max_val_rollouts},
            {"anchors_per_candidate", b.anchors_per_candidate}};
}

// Default stage budgets mirrored from StageBudgets::defaults (which needs a
// split to build the full protocol; the config form carries only the knobs).
PilotBudget default_stage1() {
    PilotBudget b;
    b.epochs = 2;
    b.max_pairs = 1024;
    b.train_trajs = 8;
    b.val_trajs = 4;
    b.rollout_train_h = 8;
    b.rollout_val_h = 4;
    b.max_val_rollouts = 4;
    b.anchors_per_candidate = 4;
    return b;
}

PilotBudget default_stage2() {
    PilotBudget b;
    b.epochs = 6;
    b.max_pairs = 4096;
    b.train_trajs = 24;
    b.val_trajs = 16;
    b.rollout_train_h = 32;
    b.rollout_val_h = 16;
    b.max_val_rollouts = 8;
    b.anchors_per_candidate = 4;
    return b;
}

std::string fmt(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    check_keys(j,
               {"version", "name", "system", "grid", "split", "summary", "ridge", "anchor",
                "budgets", "selector", "asha", "methods", "seeds", "eps", "perturbations",
                "representations", "out_dir", "workers", "fail_fast"},
               "config");
    ExperimentConfig cfg;
    cfg.stage1 = default_stage1();
    cfg.stage2 = default_stage2();
    read_if(j, "version", cfg.version);
    require(cfg.version == 1, ErrKind::config, "unsupported config version");
    read_if(j, "name", cfg.name);

    if (j.contains("system")) {
        const json& sys = j.at("system");
        check_keys(sys,
                   {"generator", "dim", "true_lag", "n_traj", "T", "noise_sigma",
                    "stability_margin", "coef_scale", "burn_in", "target_radius", "seed",
                    "grid_size", "diffusivity", "dt", "dx", "path"},
                   "system");
        read_if(sys, "generator", cfg.system.generator);
        read_if(sys, "dim", cfg.system.linear.dim);
        read_if(sys, "true_lag", cfg.system.linear.true_lag);
        read_if(sys, "n_traj", cfg.system.linear.n_traj);
        read_if(sys, "T", cfg.system.linear.T);
        read_if(sys, "noise_sigma", cfg.system.linear.noise_sigma);
        read_if(sys, "stability_margin", cfg.system.linear.stability_margin);
        read_if(sys, "coef_scale", cfg.system.linear.coef_scale);
        read_if(sys, "burn_in", cfg.system.linear.burn_in);
        read_if(sys, "target_radius", cfg.system.linear.target_radius);
        if (sys.contains("seed")) {
            cfg.system.linear.seed = sys.at("seed").get<uint64_t>();
            cfg.system.diffusion.seed = cfg.system.linear.seed;
        }
        read_if(sys, "grid_size", cfg.system.diffusion.grid);
        if (sys.contains("n_traj")) cfg.system.diffusion.n_traj = sys.at("n_traj").get<int>();
        if (sys.contains("T")) cfg.system.diffusion.T = sys.at("T").get<int>();
        read_if(sys, "diffusivity", cfg.system.diffusion.diffusivity);
        read_if(sys, "dt", cfg.system.diffusion.dt);
        read_if(sys, "dx", cfg.system.diffusion.dx);
        if (sys.contains("path")) cfg.system.file = sys.at("path").get<std::string>();
    }

    if (j.contains("grid")) cfg.grid = CandidateGrid::parse(j.at("grid").get<std::string>());
    if (j.contains("split")) {
        const json& split = j.at("split");
        check_keys(split, {"fractions", "seed"}, "split");
        if (split.contains("fractions")) {
            const auto f = split.at("fractions").get<std::vector<double>>();
            require(f.size() == 3, ErrKind::config, "split fractions must have 3 entries");
            cfg.fractions = {f[0], f[1], f[2]};
        }
        read_if(split, "seed", cfg.split_seed);
    }
    if (j.contains("summary")) {
        const json& s = j.at("summary");
        check_keys(s,
                   {"method", "variance_target", "max_components", "fit_samples",
                    "coarsen_factor", "normalize_first", "seed"},
                   "summary");
        if (s.contains("method"))
            cfg.summary.method = summary_method_from_string(s.at("method").get<std::string>());
        read_if(s, "variance_target", cfg.summary.variance_target);
        read_if(s, "max_components", cfg.summary.max_components);
        read_if(s, "fit_samples", cfg.summary.fit_samples);
        read_if(s, "coarsen_factor", cfg.summary.coarsen_factor);
        read_if(s, "normalize_first", cfg.summary.normalize_first);
        read_if(s, "seed", cfg.summary.seed);
    }
    read_if(j, "ridge", cfg.ridge);
    if (j.contains("anchor")) {
        const json& a = j.at("anchor");
        check_keys(a, {"rho", "tau_pl", "denom_floor", "bootstrap"}, "anchor");
        read_if(a, "rho", cfg.anchor.rho);
        read_if(a, "tau_pl", cfg.anchor.tau_pl);
        read_if(a, "denom_floor", cfg.anchor.denom_floor);
        if (a.contains("bootstrap")) {
            const json& b = a.at("bootstrap");
            check_keys(b, {"resamples", "level", "seed"}, "anchor.bootstrap");
            read_if(b, "resamples", cfg.anchor.boot.resamples);
            read_if(b, "level", cfg.anchor.boot.level);
            read_if(b, "seed", cfg.anchor.boot.seed);
        }
    }
    if (j.contains("budgets")) {
        const json& b = j.at("budgets");
        check_keys(b, {"stage1", "stage2", "full"}, "budgets");
        if (b.contains("stage1"))
            cfg.stage1 = budget_from_json(b.at("stage1"), cfg.stage1, "budgets.stage1");
        if (b.contains("stage2"))
            cfg.stage2 = budget_from_json(b.at("stage2"), cfg.stage2, "budgets.stage2");
        if (b.contains("full")) {
            const json& f = b.at("full");
            check_keys(f, {"epochs", "rollout_h", "anchors", "max_rollouts", "train_h"},
                       "budgets.full");
            read_if(f, "epochs", cfg.full_epochs);
            read_if(f, "rollout_h", cfg.eval.rollout_h);
            read_if(f, "anchors", cfg.eval.anchors);
            read_if(f, "max_rollouts", cfg.eval.max_rollouts);
            read_if(f, "train_h", cfg.eval.train_h);
        }
    }
    if (j.contains("selector")) {
        const json& s = j.at("selector");
        check_keys(s,
                   {"top_k", "hop", "cap", "w_mean", "w_term", "w_worst", "w_std", "alpha",
                    "frontier_local", "frontier_remain", "consecutive_small", "kappa"},
                   "selector");
        read_if(s, "top_k", cfg.selector.top_k);
        read_if(s, "hop", cfg.selector.hop);
        read_if(s, "cap", cfg.selector.cap);
        read_if(s, "w_mean", cfg.selector.w_mean);
        read_if(s, "w_term", cfg.selector.w_term);
        read_if(s, "w_worst", cfg.selector.w_worst);
        read_if(s, "w_std", cfg.selector.w_std);
        read_if(s, "alpha", cfg.selector.alpha);
        read_if(s, "frontier_local", cfg.selector.frontier_local);
        read_if(s, "frontier_remain", cfg.selector.frontier_remain);
        read_if(s, "consecutive_small", cfg.selector.consecutive_small);
        read_if(s, "kappa", cfg.selector.kappa);
    }
    if (j.contains("asha")) {
        const json& a = j.at("asha");
        check_keys(a, {"rungs", "reduction"}, "asha");
        read_if(a, "rungs", cfg.asha.rungs);
        read_if(a, "reduction", cfg.asha.reduction);
    }
    read_if(j, "methods", cfg.methods);
    read_if(j, "seeds", cfg.seeds);
    read_if(j, "eps", cfg.eps);
    if (j.contains("perturbations")) {
        cfg.perturbations.clear();
        for (const json& p : j.at("perturbations")) {
            check_keys(p, {"kind", "sigma", "factor", "mask_fraction", "seed"},
                       "perturbations[]");
            PerturbSpec spec;
            if (p.contains("kind"))
                spec.kind = perturb_kind_from_string(p.at("kind").get<std::string>());
            read_if(p, "sigma", spec.sigma);
            read_if(p, "factor", spec.factor);
            read_if(p, "mask_fraction", spec.mask_fraction);
            read_if(p, "seed", spec.seed);
            cfg.perturbations.push_back(spec);
        }
    }
    if (j.contains("representations")) {
        cfg.representations.clear();
        for (const json& r : j.at("representations"))
            cfg.representations.push_back(summary_method_from_string(r.get<std::string>()));
    }
    if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
    read_if(j, "workers", cfg.workers);
    read_if(j, "fail_fast", cfg.fail_fast);
    cfg.validate();
    return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const fs::path& path) {
    std::ifstream is(path);
    require(bool(is), ErrKind::io_other, "cannot open config '" + path.string() + "'");
    json j = json::parse(is, nullptr, /*allow_exceptions=*/false);
    require(!j.is_discarded(), ErrKind::config,
            "config '" + path.string() + "' is not valid JSON");
    return from_json(j);
}

json ExperimentConfig::to_json() const {
    json sys = {{"generator", system.generator}};
    if (system.generator == "linear") {
        sys["dim"] = system.linear.dim;
        sys["true_lag"] = system.linear.true_lag;
        sys["n_traj"] = system.linear.n_traj;
        sys["T"] = system.linear.T;
        sys["noise_sigma"] = system.linear.noise_sigma;
        sys["stability_margin"] = system.linear.stability_margin;
        sys["coef_scale"] = system.linear.coef_scale;
        sys["burn_in"] = system.linear.burn_in;
        sys["target_radius"] = system.linear.target_radius;
        sys["seed"] = system.linear.seed;
    } else if (system.generator == "diffusion2d") {
        sys["grid_size"] = system.diffusion.grid;
        sys["n_traj"] = system.diffusion.n_traj;
        sys["T"] = system.diffusion.T;
        sys["diffusivity"] = system.diffusion.diffusivity;
        sys["dt"] = system.diffusion.dt;
        sys["dx"] = system.diffusion.dx;
        sys["seed"] = system.diffusion.seed;
    } else {
        sys["path"] = system.file.string();
    }
    json perts = json::array();
    for (const auto& p : perturbations)
        perts.push_back({{"kind", to_string(p.kind)},
                         {"sigma", p.sigma},
                         {"factor", p.factor},
                         {"mask_fraction", p.mask_fraction},
                         {"seed", p.seed}});
    json reprs = json::array();
    for (auto r : representations) reprs.push_back(to_string(r));
    return {{"version", version},
            {"name", name},
            {"system", sys},
            {"grid", std::to_string(grid.l_min()) + ".." + std::to_string(grid.l_max())},
            {"split", {{"fractions", fractions}, {"seed", split_seed}}},
            {"summary",
             {{"method", to_string(summary.method)},
              {"variance_target", summary.variance_target},
              {"max_components", summary.max_components},
              {"fit_samples", summary.fit_samples},
              {"coarsen_factor", summary.coarsen_factor},
              {"normalize_first", summary.normalize_first},
              {"seed", summary.seed}}},
            {"ridge", ridge},
            {"anchor",
             {{"rho", anchor.rho},
              {"tau_pl", anchor.tau_pl},
              {"denom_floor", anchor.denom_floor},
              {"bootstrap",
               {{"resamples", anchor.boot.resamples},
                {"level", anchor.boot.level},
                {"seed", anchor.boot.seed}}}}},
            {"budgets",
             {{"stage1", budget_to_json(stage1)},
              {"stage2", budget_to_json(stage2)},
              {"full",
               {{"epochs", full_epochs},
                {"rollout_h", eval.rollout_h},
                {"anchors", eval.anchors},
                {"max_rollouts", eval.max_rollouts},
                {"train_h", eval.train_h}}}}},
            {"selector",
             {{"top_k", selector.top_k},
              {"hop", selector.hop},
              {"cap", selector.cap},
              {"w_mean", selector.w_mean},
              {"w_term", selector.w_term},
              {"w_worst", selector.w_worst},
              {"w_std", selector.w_std},
              {"alpha", selector.alpha},
              {"frontier_local", selector.frontier_local},
              {"frontier_remain", selector.frontier_remain},
              {"consecutive_small", selector.consecutive_small},
              {"kappa", selector.kappa}}},
            {"asha", {{"rungs", asha.rungs}, {"reduction", asha.reduction}}},
            {"methods", methods},
            {"seeds", seeds},
            {"eps", eps},
            {"perturbations", perts},
            {"representations", reprs},
            {"out_dir", out_dir.string()},
            {"workers", workers},
            {"fail_fast", fail_fast}};
}

uint64_t ExperimentConfig::hash() const {
    const std::string dump = to_json().dump();
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : dump) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

void ExperimentConfig::validate() const {
    require(system.generator == "linear" || system.generator == "diffusion2d" ||
                system.generator == "file",
            ErrKind::config, "unknown generator '" + system.generator + "'");
    if (system.generator == "file")
        require(fs::exists(system.file), ErrKind::config,
                "input pool '" + system.file.string() + "' does not exist");
    grid.validate();
    anchor.validate();
    stage1.validate();
    stage2.validate();
    require(full_epochs >= 1, ErrKind::config, "full epochs must be >= 1");
    require(!seeds.empty(), ErrKind::config, "seeds must be nonempty");
    require(!eps.empty(), ErrKind::config, "eps list must be nonempty");
    require(!methods.empty(), ErrKind::config, "methods must be nonempty");
    const std::set<std::string> known = {"sake", "system-core", "direct3", "direct4",
                                         "asha"};
    for (const auto& m : methods)
        require(known.count(m) == 1, ErrKind::config, "unknown method '" + m + "'");
    for (const auto& p : perturbations) p.validate();
    require(workers >= 1, ErrKind::config, "workers must be >= 1");
}

std::string condition_label(const PerturbSpec& spec) {
    switch (spec.kind) {
        case PerturbKind::identity: return "clean";
        case PerturbKind::gaussian_noise: return "noise_" + fmt(spec.sigma);
        case PerturbKind::downsample: return "downsample_x" + std::to_string(spec.factor);
        case PerturbKind::random_mask: return "mask_" + fmt(spec.mask_fraction);
    }
    return "?";
}

void write_text_atomic(const fs::path& path, const std::string& content) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        require(bool(os), ErrKind::io_other, "cannot open '" + tmp.string() + "'");
        os << content;
        require(bool(os), ErrKind::io_other, "write failed for '" + tmp.string() + "'");
    }
    fs::rename(tmp, path);
}

namespace {

struct Cell {
    std::string method;
    uint64_t seed = 0;
    std::string condition;
    std::string representation;
    const AnchorReport* anchors = nullptr;  // null for anchor-free methods
};

std::string cell_file_name(const Cell& cell) {
    return cell.method + "__seed" + std::to_string(cell.seed) + "__" + cell.condition +
           "__" + cell.representation + ".json";
}

bool uses_anchors(const std::string& method) {
    return method == "sake" || method == "system-core";
}

}  // namespace

std::string metrics_rows_csv(const std::vector<MetricsRow>& rows) {
    std::ostringstream os;
    os << "dataset,method,condition,representation,seed,eps,l_sel,l_knee,l_best,exact,"
          "within1,abs_dl,regret_defined,regret_knee,regret_best,cost_ratio,saving,"
          "unique_evals,knee_in_band,knee_in_s0,knee_in_s1\n";
    auto flag = [](const std::optional<bool>& b) {
        return !b.has_value() ? std::string("NA") : (*b ? std::string("1") : std::string("0"));
    };
    for (const auto& r : rows) {
        os << r.dataset << ',' << r.method << ',' << r.condition << ',' << r.representation
           << ',' << r.seed << ',' << fmt(r.eps) << ',' << r.l_sel << ',' << r.l_knee << ','
           << r.l_best << ',' << r.exact << ',' << r.within1 << ',' << fmt(r.abs_dl) << ','
           << (r.regret_defined ? 1 : 0) << ',' << fmt(r.regret_knee) << ','
           << fmt(r.regret_best) << ',' << fmt(r.cost_ratio) << ',' << fmt(r.saving) << ','
           << r.unique_evals << ',' << flag(r.knee_in_band) << ',' << flag(r.knee_in_s0)
           << ',' << flag(r.knee_in_s1) << "\n";
    }
    return os.str();
}

std::string aggregate_rows_csv(const std::vector<AggregateRow>& rows) {
    std::ostringstream os;
    os << "dataset,method,condition,representation,rows,exact_pct,within1_pct,mean_abs_dl,"
          "mean_regret_knee,mean_regret_best,mean_cost_ratio,mean_saving,"
          "mean_unique_evals,knee_in_band_pct,knee_in_s0_pct,knee_in_s1_pct\n";
    auto pct = [](double v) { return v < 0.0 ? std::string("NA") : fmt(v); };
    for (const auto& r : rows) {
        os << r.dataset << ',' << r.method << ',' << r.condition << ',' << r.representation
           << ',' << r.rows << ',' << fmt(r.exact_pct) << ',' << fmt(r.within1_pct) << ','
           << fmt(r.mean_abs_dl) << ',' << fmt(r.mean_regret_knee) << ','
           << fmt(r.mean_regret_best) << ',' << fmt(r.mean_cost_ratio) << ','
           << fmt(r.mean_saving) << ',' << fmt(r.mean_unique_evals) << ','
           << pct(r.knee_in_band_pct) << ',' << pct(r.knee_in_s0_pct) << ','
           << pct(r.knee_in_s1_pct) << "\n";
    }
    return os.str();
}

fs::path run_experiment(const ExperimentConfig& config) {
    config.validate();
    const fs::path dir = config.out_dir;
    fs::create_directories(dir / "cells");
    fs::create_directories(dir / "anchors");

    // Base pool and trajectory-level split, shared by every cell.
    TrajectoryPool pool;
    if (config.system.generator == "linear")
        pool = generate_linear_lag_system(config.system.linear);
    else if (config.system.generator == "diffusion2d")
        pool = generate_diffusion2d(config.system.diffusion);
    else
        pool = read_pool(config.system.file);
    const SplitPool split = split_pool(pool, config.fractions, config.split_seed);

    // Reference projector: the summary space the pilots and the oracle share.
    const Projector ref_proj = fit_projector(split.train, config.summary);

    StageBudgets budgets;
    budgets.stage1 = config.stage1;
    budgets.stage2 = config.stage2;
    budgets.full = FullProtocol::from_split(split, config.grid, config.full_epochs);

    // Full-sweep oracle: computed once, shared across methods and cells; the
    // sweep itself is perturbation-independent.
    LinearPilotEvaluator evaluator(split, ref_proj, budgets.full, config.eval);
    const OracleReference oracle = full_sweep(evaluator, config.grid, config.seeds);
    require(evaluator.training_count() ==
                long(config.grid.size()) * long(config.seeds.size()),
            ErrKind::config, "oracle training-count audit failed");
    write_text_atomic(dir / "oracle.json", oracle_json(oracle).dump(2) + "\n");

    // Anchor reports per (perturbation, representation). Perturbations touch
    // only this pool; pilots always run on the clean split.
    std::map<std::pair<std::string, std::string>, AnchorReport> anchor_cache;
    for (const auto& pert : config.perturbations) {
        const TrajectoryPool anchor_pool = perturb(pool, pert);
        const SplitPool anchor_split =
            split_pool(anchor_pool, config.fractions, config.split_seed);
        for (const auto repr : config.representations) {
            ProjectorSpec pspec = config.summary;
            pspec.method = repr;
            const Projector aproj = fit_projector(anchor_split.train, pspec);
            const RiskCurve curve =
                risk_curve(project(aproj, anchor_split.train),
                           project(aproj, anchor_split.val), config.grid, config.ridge,
                           config.anchor.boot);
            AnchorReport report = extract_anchors(curve, config.anchor);
            const auto key = std::make_pair(condition_label(pert), to_string(repr));
            write_text_atomic(dir / "anchors" / (key.first + "__" + key.second + ".json"),
                              anchor_report_json(report).dump(2) + "\n");
            anchor_cache[key] = std::move(report);
        }
    }

    // Cell list: anchor-dependent methods span (seed x perturbation x
    // representation); anchor-free methods span seeds only.
    std::vector<Cell> cells;
    for (const auto& method : config.methods) {
        for (uint64_t seed : config.seeds) {
            if (uses_anchors(method)) {
                for (const auto& pert : config.perturbations)
                    for (const auto repr : config.representations) {
                        Cell cell;
                        cell.method = method;
                        cell.seed = seed;
                        cell.condition = condition_label(pert);
                        cell.representation = to_string(repr);
                        cell.anchors =
                            &anchor_cache.at({cell.condition, cell.representation});
                        cells.push_back(cell);
                    }
            } else {
                Cell cell;
                cell.method = method;
                cell.seed = seed;
                cell.condition = "-";
                cell.representation = "-";
                cells.push_back(cell);
            }
        }
    }

    struct CellOutcome {
        bool ok = false;
        std::string error;
        std::vector<MetricsRow> rows;
        std::vector<LedgerEntry> ledger;
    };
    std::vector<CellOutcome> outcomes(cells.size());
    std::atomic<size_t> next{0};
    std::atomic<bool> abort{false};

    auto worker = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= cells.size() || abort.load()) return;
            const Cell& cell = cells[i];
            CellOutcome& out = outcomes[i];
            try {
                SelectionResult result;
                if (cell.method == "sake")
                    result = run_sake(split, ref_proj, config.grid, *cell.anchors, budgets,
                                      config.selector, cell.seed);
                else if (cell.method == "system-core")
                    result = run_system_core(*cell.anchors);
                else if (cell.method == "direct3" || cell.method == "direct4")
                    result = run_direct_shortlist(cell.method == "direct3" ? 3 : 4, split,
                                                  ref_proj, config.grid, budgets,
                                                  config.selector, cell.seed);
                else
                    result = run_asha(split, ref_proj, config.grid, config.asha.rungs,
                                      config.asha.reduction, budgets, cell.seed);

                json cell_json = {{"selection", selection_json(result)}};
                json metrics = json::array();
                for (double eps : config.eps) {
                    MetricsRow row =
                        evaluate_selection(result, oracle, eps, cell.anchors);
                    row.dataset = config.name;
                    row.condition = cell.condition;
                    row.representation = cell.representation;
                    row.seed = cell.seed;
                    metrics.push_back(metrics_row_json(row));
                    out.rows.push_back(std::move(row));
                }
                cell_json["metrics"] = metrics;
                write_text_atomic(dir / "cells" / cell_file_name(cell),
                                  cell_json.dump(2) + "\n");
                out.ledger = result.ledger;
                out.ok = true;
            } catch (const std::exception& e) {
                out.error = e.what();
                if (config.fail_fast) abort.store(true);
            }
        }
    };
    std::vector<std::thread> threads;
    const int n_workers = std::min<int>(config.workers, int(cells.size()));
    threads.reserve(size_t(std::max(1, n_workers)));
    for (int i = 0; i < n_workers; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();

    json manifest_cells = json::array();
    std::vector<MetricsRow> all_rows;
    bool any_failed = false;
    for (size_t i = 0; i < cells.size(); ++i) {
        json entry = {{"file", cell_file_name(cells[i])},
                      {"method", cells[i].method},
                      {"seed", cells[i].seed},
                      {"condition", cells[i].condition},
                      {"representation", cells[i].representation},
                      {"ok", outcomes[i].ok}};
        if (!outcomes[i].ok) {
            entry["error"] = outcomes[i].error;
            any_failed = true;
        }
        manifest_cells.push_back(entry);
        for (auto& row : outcomes[i].rows) all_rows.push_back(std::move(row));
    }
    if (config.fail_fast && any_failed)
        fail(ErrKind::config, "cell failed under fail-fast");

    // Run-level pilot ledger: every training of every cell, in cell order.
    {
        std::ostringstream ledger;
        for (size_t i = 0; i < cells.size(); ++i) {
            if (!outcomes[i].ok) continue;
            for (const auto& entry : outcomes[i].ledger) {
                json line = ledger_entry_json(entry);
                line["method"] = cells[i].method;
                line["seed"] = cells[i].seed;
                ledger << line.dump() << "\n";
            }
        }
        write_text_atomic(dir / "ledger.jsonl", ledger.str());
    }

    write_text_atomic(dir / "rows.csv", metrics_rows_csv(all_rows));
    if (!all_rows.empty())
        write_text_atomic(dir / "aggregate.csv", aggregate_rows_csv(aggregate(all_rows)));

    json manifest = {{"config", config.to_json()},
                     {"config_hash", config.hash()},
                     {"format_version", kFormatVersion},
                     {"oracle_trainings", evaluator.training_count()},
                     {"cells", manifest_cells},
                     {"all_ok", !any_failed}};
    write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
    return dir;
}

namespace {

struct CellData {
    json selection;
    std::vector<MetricsRow> rows;
    bool ok = false;
};

std::string pad(const std::string& s, size_t width) {
    return s + std::string(width > s.size() ? width - s.size() : 0, ' ');
}

std::string render_table(const std::vector<std::vector<std::string>>& grid) {
    std::vector<size_t> widths;
    for (const auto& row : grid)
        for (size_t c = 0; c < row.size(); ++c) {
            if (widths.size() <= c) widths.push_back(0);
            widths[c] = std::max(widths[c], row[c].size());
        }
    std::ostringstream os;
    for (const auto& row : grid) {
        for (size_t c = 0; c < row.size(); ++c)
            os << pad(row[c], widths[c]) << (c + 1 < row.size() ? "  " : "");
        os << "\n";
    }
    return os.str();
}

std::string to_csv(const std::vector<std::vector<std::string>>& grid) {
    std::ostringstream os;
    for (const auto& row : grid) {
        for (size_t c = 0; c < row.size(); ++c) os << row[c] << (c + 1 < row.size() ? "," : "");
        os << "\n";
    }
    return os.str();
}

int modal_window(std::vector<int> values) {
    std::sort(values.begin(), values.end());
    int best = values.front(), best_count = 0;
    for (size_t i = 0; i < values.size();) {
        size_t j = i;
        while (j < values.size() && values[j] == values[i]) ++j;
        if (int(j - i) > best_count) {
            best = values[i];
            best_count = int(j - i);
        }
        i = j;
    }
    return best;
}

}  // namespace

void write_report(const fs::path& run_dir) {
    std::ifstream mis(run_dir / "manifest.json");
    require(bool(mis), ErrKind::io_other,
            "no manifest in '" + run_dir.string() + "'");
    const json manifest = json::parse(mis);

    // Load every cell the manifest lists; failed or missing cells stay as
    // explicit gaps in the tables.
    std::map<std::string, CellData> cells;
    std::vector<MetricsRow> rows;
    for (const json& entry : manifest.at("cells")) {
        const std::string file = entry.at("file").get<std::string>();
        CellData data;
        if (entry.at("ok").get<bool>()) {
            std::ifstream is(run_dir / "cells" / file);
            if (is) {
                const json cj = json::parse(is, nullptr, false);
                if (!cj.is_discarded()) {
                    data.selection = cj.at("selection");
                    for (const json& m : cj.at("metrics")) {
                        data.rows.push_back(metrics_row_from_json(m));
                        rows.push_back(data.rows.back());
                    }
                    data.ok = true;
                }
            }
        }
        cells[file] = std::move(data);
    }

    const fs::path report_dir = run_dir / "report";
    fs::create_directories(report_dir);

    // Row keys: (condition, representation); column per method. Anchor-free
    // methods are single reference columns keyed by condition "-". Both sets
    // come from the manifest so lost cells surface as gaps, not vanish.
    std::set<std::pair<std::string, std::string>> conditions;
    std::set<std::string> methods;
    for (const json& entry : manifest.at("cells")) {
        methods.insert(entry.at("method").get<std::string>());
        const std::string condition = entry.at("condition").get<std::string>();
        if (condition != "-")
            conditions.emplace(condition, entry.at("representation").get<std::string>());
    }
    if (conditions.empty()) conditions.emplace("-", "-");
    std::map<std::tuple<std::string, std::string, std::string>, std::vector<MetricsRow>>
        by_cell_group;
    for (const auto& row : rows)
        by_cell_group[{row.method, row.condition, row.representation}].push_back(row);

    auto group_rows = [&](const std::string& method, const std::string& condition,
                          const std::string& repr) -> const std::vector<MetricsRow>* {
        auto it = by_cell_group.find({method, condition, repr});
        if (it == by_cell_group.end()) it = by_cell_group.find({method, "-", "-"});
        return it == by_cell_group.end() ? nullptr : &it->second;
    };

    // Selected-window table: modal selection across seeds plus the oracle.
    std::vector<std::vector<std::string>> selected;
    {
        std::vector<std::string> header = {"dataset", "condition", "representation"};
        for (const auto& m : methods) header.push_back(m);
        header.push_back("oracle_knee");
        header.push_back("oracle_best");
        selected.push_back(header);
        for (const auto& [condition, repr] : conditions) {
            std::vector<std::string> line = {manifest.at("config").at("name").get<std::string>(),
                                             condition, repr};
            int knee = -1, best = -1;
            for (const auto& m : methods) {
                const auto* g = group_rows(m, condition, repr);
                if (g == nullptr || g->empty()) {
                    line.push_back("NA");
                    continue;
                }
                std::vector<int> sels;
                for (const auto& r : *g) sels.push_back(r.l_sel);
                line.push_back(std::to_string(modal_window(sels)));
                knee = g->front().l_knee;
                best = g->front().l_best;
            }
            line.push_back(knee < 0 ? "NA" : std::to_string(knee));
            line.push_back(best < 0 ? "NA" : std::to_string(best));
            selected.push_back(line);
        }
    }

    // Regret table: mean knee regret (%) per method.
    std::vector<std::vector<std::string>> regret;
    {
        std::vector<std::string> header = {"dataset", "condition", "representation"};
        for (const auto& m : methods) header.push_back(m);
        regret.push_back(header);
        for (const auto& [condition, repr] : conditions) {
            std::vector<std::string> line = {manifest.at("config").at("name").get<std::string>(),
                                             condition, repr};
            for (const auto& m : methods) {
                const auto* g = group_rows(m, condition, repr);
                if (g == nullptr || g->empty()) {
                    line.push_back("NA");
                    continue;
                }
                double sum = 0.0;
                int defined = 0;
                for (const auto& r : *g)
                    if (r.regret_defined) {
                        sum += r.regret_knee;
                        ++defined;
                    }
                line.push_back(defined == 0 ? "NA" : fmt(100.0 * sum / defined));
            }
            regret.push_back(line);
        }
    }

    // Aggregate table, one row per (method, condition, representation).
    std::vector<std::vector<std::string>> agg_table;
    {
        agg_table.push_back({"dataset", "method", "condition", "representation", "rows",
                             "exact_pct", "within1_pct", "mean_abs_dl", "mean_regret_knee",
                             "mean_unique_evals", "cost_ratio"});
        if (!rows.empty())
            for (const auto& a : aggregate(rows))
                agg_table.push_back({a.dataset, a.method, a.condition, a.representation,
                                     std::to_string(a.rows), fmt(a.exact_pct),
                                     fmt(a.within1_pct), fmt(a.mean_abs_dl),
                                     fmt(100.0 * a.mean_regret_knee),
                                     fmt(a.mean_unique_evals), fmt(a.mean_cost_ratio)});
    }

    // Anchor summary: band plus knee-in-band coverage per condition.
    std::vector<std::vector<std::string>> anchors_table;
    {
        anchors_table.push_back({"dataset", "condition", "representation", "l_core",
                                 "l_plateau", "band", "knee_in_band_pct"});
        for (const auto& [condition, repr] : conditions) {
            std::ifstream is(run_dir / "anchors" / (condition + "__" + repr + ".json"));
            std::vector<std::string> line = {
                manifest.at("config").at("name").get<std::string>(), condition, repr};
            if (!is) {
                line.insert(line.end(), {"NA", "NA", "NA", "NA"});
                anchors_table.push_back(line);
                continue;
            }
            const json a = json::parse(is);
            std::string band;
            for (const auto& b : a.at("band")) {
                if (!band.empty()) band += " ";
                band += std::to_string(b.get<int>());
            }
            double hits = 0.0;
            int n = 0;
            for (const auto& row : rows)
                if (row.condition == condition && row.representation == repr &&
                    row.knee_in_band.has_value()) {
                    hits += *row.knee_in_band;
                    ++n;
                }
            line.push_back(std::to_string(a.at("l_core").get<int>()));
            line.push_back(std::to_string(a.at("l_plateau").get<int>()));
            line.push_back("[" + band + "]");
            line.push_back(n == 0 ? "NA" : fmt(100.0 * hits / n));
            anchors_table.push_back(line);
        }
    }

    write_text_atomic(report_dir / "selected.csv", to_csv(selected));
    write_text_atomic(report_dir / "selected.txt", render_table(selected));
    write_text_atomic(report_dir / "regret.csv", to_csv(regret));
    write_text_atomic(report_dir / "regret.txt", render_table(regret));
    write_text_atomic(report_dir / "aggregate.csv", to_csv(agg_table));
    write_text_atomic(report_dir / "aggregate.txt", render_table(agg_table));
    write_text_atomic(report_dir / "anchors.csv", to_csv(anchors_table));
    write_text_atomic(report_dir / "anchors.txt", render_table(anchors_table));
}

}  // namespace sake
