#pragma once

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

#include "sake/oracle.hpp"
#include "sake/selector.hpp"

namespace sake {

// Declarative experiment description. Parsed from a versioned JSON document;
// unknown keys are rejected so misspelled constants cannot silently fall back
// to defaults.
struct ExperimentConfig {
    struct SystemSpec {
        std::string generator = "linear";  // linear | diffusion2d | file
        LinearSystemSpec linear;
        Diffusion2dSpec diffusion;
        std::filesystem::path file;
    };
    struct AshaSpec {
        int rungs = 2;
        int reduction = 4;
    };

    int version = 1;
    std::string name = "varpool";
    SystemSpec system;
    CandidateGrid grid = CandidateGrid::range(1, 12);
    std::array<double, 3> fractions{0.8, 0.1, 0.1};
    uint64_t split_seed = 0;
    ProjectorSpec summary;
    double ridge = 1e-3;
    AnchorSpec anchor;
    PilotBudget stage1;
    PilotBudget stage2;
    int full_epochs = 20;
    EvalSettings eval;
    SelectorSpec selector;
    AshaSpec asha;
    std::vector<std::string> methods = {"sake", "system-core", "direct3", "direct4", "asha"};
    std::vector<uint64_t> seeds = {0, 1, 2};
    std::vector<double> eps = {0.05};
    std::vector<PerturbSpec> perturbations = {{}};
    std::vector<SummaryMethod> representations = {SummaryMethod::pca};
    std::filesystem::path out_dir = "runs/out";
    int workers = 2;
    bool fail_fast = false;

    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig from_file(const std::filesystem::path& path);
    nlohmann::json to_json() const;
    uint64_t hash() const;
    void validate() const;
};

std::string condition_label(const PerturbSpec& spec);

// Executes every cell of the experiment: builds pools, caches the full-sweep
// oracle, derives anchors per (perturbation, representation), runs the
// selectors, and writes per-cell JSON plus aggregate CSVs and a manifest.
// Failed cells are recorded and skipped unless fail_fast is set. Returns the
// run directory.
std::filesystem::path run_experiment(const ExperimentConfig& config);

// Renders the selected-window, regret, aggregate, and anchor-summary tables
// (CSV plus aligned text) from a finished run directory. Missing cells are
// shown as explicit gaps.
void write_report(const std::filesystem::path& run_dir);

// Atomic file write (temp file + rename) used for all run outputs.
void write_text_atomic(const std::filesystem::path& path, const std::string& content);

std::string metrics_rows_csv(const std::vector<MetricsRow>& rows);
std::string aggregate_rows_csv(const std::vector<AggregateRow>& rows);

}  // namespace sake
