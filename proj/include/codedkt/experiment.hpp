#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "codedkt/bkt.hpp"
#include "codedkt/dataset.hpp"
#include "codedkt/eval.hpp"
#include "codedkt/ktmodels.hpp"

namespace codedkt::experiment {

struct RunConfig {
    std::string data_dir;
    std::string assignment;  // empty -> lexicographically first assignment
    ktmodels::ModelKind model = ktmodels::ModelKind::Dkt;
    ktmodels::ModelConfig model_config;
    int repetitions = 10;
    std::string out_dir;  // empty -> nothing written
    uint64_t seed = 12345;
    bool single_worker = false;
    int workers = 0;  // 0 = auto
    std::string skills_file;  // JSON problem -> 9-bit vector
    std::string rules_file;   // JSON array of expert rule names
    bool pool_per_problem = false;
};

std::string run_config_to_json(const RunConfig& config);
RunConfig run_config_from_json(const std::string& json_text);
std::string config_hash(const RunConfig& config);

// Model-config (de)serialization shared by run configs and checkpoints.
std::string model_config_to_json(const ktmodels::ModelConfig& config);

// Loads config.rules_file (a JSON array of expert rule names) into the model
// config, validating against the fixed inventory.
void apply_rules_file(RunConfig& config);

struct LoadedData {
    dataset::LoadResult load;
    dataset::ProblemCatalog catalog;
    std::vector<dataset::AttemptSequence> sequences;
    std::string assignment;
};

LoadedData load_data(const RunConfig& config);

struct ExperimentResult {
    eval::Report report;
    std::vector<std::string> problem_ids;
    std::vector<std::vector<double>> loss_histories;  // per repetition
};

// Repeated split/train/predict/evaluate; writes run_config.json, report.json,
// report.csv (and loss_history.csv for the deep models) under out_dir.
// Partial outputs are removed when a repetition fails.
ExperimentResult run_experiment(const RunConfig& config);

struct AblationRow {
    std::string variant;
    eval::Aggregate overall;
    std::vector<std::optional<double>> per_rep;
};

// The five model variants under identical seeds and splits.
std::vector<AblationRow> run_ablation(const RunConfig& config);

struct TuningPoint {
    int embedding_size = 0;
    double learning_rate = 0.0;
    int epochs = 0;
    double mean_validation_auc = 0.0;
    int n_runs = 0;
};

struct TuningResult {
    std::vector<TuningPoint> rows;  // grid order
    TuningPoint best;               // ties broken by grid order
};

struct TuningOptions {
    std::vector<int> embedding_sizes{50, 100, 150, 300, 350};
    std::vector<double> learning_rates{0.00005, 0.0005, 0.005, 0.01};
    std::vector<int> epoch_choices{20, 40, 100};
    int repetitions = 5;
};

TuningResult run_tuning(const RunConfig& config, const TuningOptions& options);

// ---- trained-model container (deep models and BKT share one format) ----

struct ModelBundle {
    ktmodels::ModelKind kind = ktmodels::ModelKind::Dkt;
    ktmodels::ModelConfig config;
    ktmodels::TrainedModel deep;  // kind != Bkt
    bkt::Params bkt_params;       // kind == Bkt
    dataset::ProblemCatalog catalog;
    std::string assignment;
};

ModelBundle train_bundle(ktmodels::ModelKind kind,
                         const std::vector<dataset::AttemptSequence>& train,
                         const dataset::ProblemCatalog& catalog,
                         const ktmodels::ModelConfig& config);

std::vector<eval::StudentTrace> predict_bundle(
    const ModelBundle& bundle,
    const std::vector<dataset::AttemptSequence>& sequences,
    bool retain_full_rows = false);

// Versioned JSON checkpoint; reloading reproduces predictions bitwise.
void save_checkpoint(const ModelBundle& bundle, const std::string& path);
ModelBundle load_checkpoint(const std::string& path);

}  // namespace codedkt::experiment
