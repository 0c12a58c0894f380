#include "codedkt/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "codedkt/rng.hpp"

namespace codedkt::experiment {

namespace fs = std::filesystem;
using nlohmann::json;

// ------------------------------------------------------------- configs ----

namespace {

const char* cell_name(ktmodels::Cell cell) {
    return cell == ktmodels::Cell::Lstm ? "lstm" : "rnn";
}
ktmodels::Cell cell_from_name(const std::string& name) {
    if (name == "lstm") return ktmodels::Cell::Lstm;
    if (name == "rnn") return ktmodels::Cell::Rnn;
    throw std::runtime_error("unknown cell: " + name);
}

const char* placement_name(ktmodels::Placement placement) {
    switch (placement) {
        case ktmodels::Placement::AttentionAndTrace: return "both";
        case ktmodels::Placement::AttentionOnly: return "attention";
        case ktmodels::Placement::TraceOnly: return "trace";
    }
    return "both";
}
ktmodels::Placement placement_from_name(const std::string& name) {
    if (name == "both") return ktmodels::Placement::AttentionAndTrace;
    if (name == "attention") return ktmodels::Placement::AttentionOnly;
    if (name == "trace") return ktmodels::Placement::TraceOnly;
    throw std::runtime_error("unknown placement: " + name);
}

const char* embedding_mode_name(ktmodels::EmbeddingMode mode) {
    return mode == ktmodels::EmbeddingMode::Joint ? "joint" : "static";
}
ktmodels::EmbeddingMode embedding_mode_from_name(const std::string& name) {
    if (name == "joint") return ktmodels::EmbeddingMode::Joint;
    if (name == "static") return ktmodels::EmbeddingMode::StaticPretrained;
    throw std::runtime_error("unknown embedding mode: " + name);
}

json model_config_json(const ktmodels::ModelConfig& c) {
    return json{{"hidden_size", c.hidden_size},
                {"code_embedding_size", c.code_embedding_size},
                {"learning_rate", c.learning_rate},
                {"epochs", c.epochs},
                {"max_seq_len", c.max_seq_len},
                {"paths_per_submission", c.paths_per_submission},
                {"batch_size", c.batch_size},
                {"cell", cell_name(c.cell)},
                {"placement", placement_name(c.placement)},
                {"embedding_mode", embedding_mode_name(c.embedding_mode)},
                {"seed", c.seed},
                {"min_count", c.min_count},
                {"max_path_nodes", c.max_path_nodes},
                {"path_pool", c.path_pool},
                {"resample_paths", c.resample_paths},
                {"grad_clip", c.grad_clip},
                {"grad_clip_norm", c.grad_clip_norm},
                {"tfidf_top_k", c.tfidf_top_k},
                {"pretrain_epochs", c.pretrain_epochs},
                {"embedding_init_std", c.embedding_init_std},
                {"expert_rules", c.expert_rules}};
}

ktmodels::ModelConfig model_config_from(const json& doc) {
    ktmodels::ModelConfig c;
    if (doc.contains("hidden_size")) c.hidden_size = doc["hidden_size"];
    if (doc.contains("code_embedding_size")) c.code_embedding_size = doc["code_embedding_size"];
    if (doc.contains("learning_rate")) c.learning_rate = doc["learning_rate"];
    if (doc.contains("epochs")) c.epochs = doc["epochs"];
    if (doc.contains("max_seq_len")) c.max_seq_len = doc["max_seq_len"];
    if (doc.contains("paths_per_submission")) c.paths_per_submission = doc["paths_per_submission"];
    if (doc.contains("batch_size")) c.batch_size = doc["batch_size"];
    if (doc.contains("cell")) c.cell = cell_from_name(doc["cell"]);
    if (doc.contains("placement")) c.placement = placement_from_name(doc["placement"]);
    if (doc.contains("embedding_mode")) c.embedding_mode = embedding_mode_from_name(doc["embedding_mode"]);
    if (doc.contains("seed")) c.seed = doc["seed"];
    if (doc.contains("min_count")) c.min_count = doc["min_count"];
    if (doc.contains("max_path_nodes")) c.max_path_nodes = doc["max_path_nodes"];
    if (doc.contains("path_pool")) c.path_pool = doc["path_pool"];
    if (doc.contains("resample_paths")) c.resample_paths = doc["resample_paths"];
    if (doc.contains("grad_clip")) c.grad_clip = doc["grad_clip"];
    if (doc.contains("grad_clip_norm")) c.grad_clip_norm = doc["grad_clip_norm"];
    if (doc.contains("tfidf_top_k")) c.tfidf_top_k = doc["tfidf_top_k"];
    if (doc.contains("pretrain_epochs")) c.pretrain_epochs = doc["pretrain_epochs"];
    if (doc.contains("embedding_init_std")) c.embedding_init_std = doc["embedding_init_std"];
    if (doc.contains("expert_rules")) c.expert_rules = doc["expert_rules"].get<std::vector<std::string>>();
    return c;
}

json run_config_json(const RunConfig& c) {
    return json{{"data_dir", c.data_dir},
                {"assignment", c.assignment},
                {"model", ktmodels::model_kind_name(c.model)},
                {"model_config", model_config_json(c.model_config)},
                {"repetitions", c.repetitions},
                {"out_dir", c.out_dir},
                {"seed", c.seed},
                {"single_worker", c.single_worker},
                {"workers", c.workers},
                {"skills_file", c.skills_file},
                {"rules_file", c.rules_file},
                {"pool_per_problem", c.pool_per_problem}};
}

void write_text_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace

std::string model_config_to_json(const ktmodels::ModelConfig& config) {
    return model_config_json(config).dump(2);
}

std::string run_config_to_json(const RunConfig& config) {
    return run_config_json(config).dump(2) + "\n";
}

RunConfig run_config_from_json(const std::string& json_text) {
    const json doc = json::parse(json_text);
    RunConfig c;
    if (doc.contains("data_dir")) c.data_dir = doc["data_dir"];
    if (doc.contains("assignment")) c.assignment = doc["assignment"];
    if (doc.contains("model")) c.model = ktmodels::model_kind_from_name(doc["model"]);
    if (doc.contains("model_config")) c.model_config = model_config_from(doc["model_config"]);
    if (doc.contains("repetitions")) c.repetitions = doc["repetitions"];
    if (doc.contains("out_dir")) c.out_dir = doc["out_dir"];
    if (doc.contains("seed")) c.seed = doc["seed"];
    if (doc.contains("single_worker")) c.single_worker = doc["single_worker"];
    if (doc.contains("workers")) c.workers = doc["workers"];
    if (doc.contains("skills_file")) c.skills_file = doc["skills_file"];
    if (doc.contains("rules_file")) c.rules_file = doc["rules_file"];
    if (doc.contains("pool_per_problem")) c.pool_per_problem = doc["pool_per_problem"];
    return c;
}

std::string config_hash(const RunConfig& config) {
    // Identify the experiment by the fields that shape its numbers; where the
    // outputs land and how many workers ran them do not belong in the hash.
    RunConfig canonical = config;
    canonical.out_dir.clear();
    canonical.workers = 0;
    canonical.single_worker = false;
    const uint64_t h = stable_hash(run_config_json(canonical).dump());
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ------------------------------------------------------------ data load ----

// Custom expert-rule lists come from a JSON array of rule names.
void apply_rules_file(RunConfig& config) {
    if (config.rules_file.empty()) return;
    const json doc = json::parse(read_text_file(config.rules_file));
    std::vector<std::string> rules = doc.get<std::vector<std::string>>();
    if (rules.empty()) throw std::runtime_error("rules file lists no rules");
    for (const auto& rule : rules) {
        if (std::find(ktmodels::kExpertRules.begin(), ktmodels::kExpertRules.end(),
                      rule) == ktmodels::kExpertRules.end()) {
            throw std::runtime_error("unknown expert rule: " + rule);
        }
    }
    config.model_config.expert_rules = std::move(rules);
}

LoadedData load_data(const RunConfig& config) {
    LoadedData data;
    data.load = dataset::load_progsnap2(config.data_dir);

    std::set<std::string> assignments;
    for (const auto& rec : data.load.records) assignments.insert(rec.assignment_id);
    if (assignments.empty()) throw std::runtime_error("dataset has no records");
    data.assignment = config.assignment.empty() ? *assignments.begin()
                                                : config.assignment;
    if (!assignments.count(data.assignment)) {
        throw std::runtime_error("assignment " + data.assignment + " not in dataset");
    }

    data.catalog = dataset::build_catalog(data.load.records, data.assignment);
    std::string skills_path = config.skills_file;
    if (skills_path.empty()) {
        const fs::path guess = fs::path(config.data_dir) / "skills.json";
        if (fs::exists(guess)) skills_path = guess.string();
    }
    if (!skills_path.empty()) dataset::attach_skills(data.catalog, skills_path);

    data.sequences = dataset::build_sequences(data.load.records, data.assignment,
                                              data.catalog,
                                              config.model_config.max_seq_len);
    return data;
}

// ---------------------------------------------------------- bkt adapters ----

namespace {

bkt::Params fit_bkt(const std::vector<dataset::AttemptSequence>& train,
                    const ktmodels::ModelConfig& config) {
    std::map<int, std::vector<std::vector<int>>> by_problem;
    for (const auto& seq : train) {
        std::map<int, std::vector<int>> per_problem;
        for (const auto& at : seq.attempts) per_problem[at.q].push_back(at.a);
        for (auto& [q, obs] : per_problem) by_problem[q].push_back(std::move(obs));
    }
    bkt::FitOptions options;
    options.seed = config.seed;
    return bkt::fit(by_problem, options);
}

std::vector<eval::StudentTrace> predict_bkt(
    const bkt::Params& params,
    const std::vector<dataset::AttemptSequence>& sequences, int n_problems,
    bool retain_full_rows) {
    std::vector<eval::StudentTrace> traces;
    traces.reserve(sequences.size());
    for (const auto& seq : sequences) {
        eval::StudentTrace trace;
        trace.student = seq.student_id;
        std::vector<double> know(static_cast<size_t>(n_problems));
        for (int q = 0; q < n_problems; ++q) {
            know[static_cast<size_t>(q)] = params.for_problem(q).p_init;
        }
        for (size_t t = 0; t < seq.attempts.size(); ++t) {
            const dataset::Attempt& at = seq.attempts[t];
            if (t > 0) {
                const bkt::ProblemParams& p = params.for_problem(at.q);
                eval::PredictionRecord rec;
                rec.t = static_cast<int>(t);
                rec.problem = at.q;
                rec.score = bkt::predict(know[static_cast<size_t>(at.q)], p.p_guess,
                                         p.p_slip);
                rec.label = at.a;
                rec.first_attempt = at.first_attempt;
                trace.records.push_back(rec);
                if (retain_full_rows) {
                    std::vector<double> row(static_cast<size_t>(n_problems));
                    for (int q = 0; q < n_problems; ++q) {
                        const bkt::ProblemParams& pq = params.for_problem(q);
                        row[static_cast<size_t>(q)] =
                            bkt::predict(know[static_cast<size_t>(q)], pq.p_guess,
                                         pq.p_slip);
                    }
                    trace.full_rows.push_back(std::move(row));
                    trace.attempted.push_back(at.q);
                    trace.labels.push_back(at.a);
                }
            }
            const bkt::ProblemParams& p = params.for_problem(at.q);
            know[static_cast<size_t>(at.q)] = bkt::update(
                know[static_cast<size_t>(at.q)], at.a, p.p_guess, p.p_slip,
                p.p_learn);
        }
        traces.push_back(std::move(trace));
    }
    return traces;
}

std::vector<dataset::AttemptSequence> filter_students(
    const std::vector<dataset::AttemptSequence>& sequences,
    const std::vector<std::string>& students) {
    std::set<std::string> wanted(students.begin(), students.end());
    std::vector<dataset::AttemptSequence> out;
    out.reserve(students.size());
    for (const auto& seq : sequences) {
        if (wanted.count(seq.student_id)) out.push_back(seq);
    }
    return out;
}

}  // namespace

ModelBundle train_bundle(ktmodels::ModelKind kind,
                         const std::vector<dataset::AttemptSequence>& train,
                         const dataset::ProblemCatalog& catalog,
                         const ktmodels::ModelConfig& config) {
    ModelBundle bundle;
    bundle.kind = kind;
    bundle.config = config;
    bundle.catalog = catalog;
    if (kind == ktmodels::ModelKind::Bkt) {
        if (train.empty()) throw std::runtime_error("empty training set");
        bundle.bkt_params = fit_bkt(train, config);
    } else {
        bundle.deep = ktmodels::train_model(kind, train, catalog, config);
    }
    return bundle;
}

std::vector<eval::StudentTrace> predict_bundle(
    const ModelBundle& bundle,
    const std::vector<dataset::AttemptSequence>& sequences,
    bool retain_full_rows) {
    if (bundle.kind == ktmodels::ModelKind::Bkt) {
        return predict_bkt(bundle.bkt_params, sequences, bundle.catalog.size(),
                           retain_full_rows);
    }
    return ktmodels::predict_model(bundle.deep, sequences, bundle.catalog,
                                   retain_full_rows);
}

// -------------------------------------------------------- run experiment ----

namespace {

struct RepOutcome {
    eval::RunEval eval;
    std::vector<double> loss_history;
    uint64_t seed = 0;
    std::string split_hash;
    std::vector<eval::StudentTrace> traces;  // kept only when pooling
};

RepOutcome run_repetition(const RunConfig& config, const LoadedData& data,
                          int rep, bool keep_traces) {
    RepOutcome outcome;
    outcome.seed = mix64(config.seed, static_cast<uint64_t>(rep) + 1);

    const dataset::DataSplit split =
        dataset::split_students(data.sequences, outcome.seed);
    outcome.split_hash = [&] {
        char buf[24];
        std::snprintf(buf, sizeof(buf), "%016llx",
                      static_cast<unsigned long long>(stable_hash(split.to_json())));
        return std::string(buf);
    }();

    ktmodels::ModelConfig model_config = config.model_config;
    model_config.seed = outcome.seed;

    const auto train_seqs = filter_students(data.sequences, split.train_students);
    const auto test_seqs = filter_students(data.sequences, split.test_students);

    const ModelBundle bundle =
        train_bundle(config.model, train_seqs, data.catalog, model_config);
    auto traces = predict_bundle(bundle, test_seqs);
    outcome.eval = eval::decompose(traces);
    if (keep_traces) outcome.traces = std::move(traces);
    if (config.model != ktmodels::ModelKind::Bkt) {
        outcome.loss_history = bundle.deep.loss_history;
    }
    return outcome;
}

// Fan repetitions across workers; each repetition is seeded independently so
// the merged result does not depend on scheduling.
std::vector<RepOutcome> run_all_reps(const RunConfig& config,
                                     const LoadedData& data, bool keep_traces) {
    const int reps = config.repetitions;
    std::vector<RepOutcome> outcomes(static_cast<size_t>(reps));
    int workers = config.single_worker ? 1 : config.workers;
    if (workers <= 0) {
        workers = static_cast<int>(std::thread::hardware_concurrency());
        if (workers < 1) workers = 1;
    }
    workers = std::min(workers, reps);

    if (workers <= 1) {
        for (int r = 0; r < reps; ++r) {
            outcomes[static_cast<size_t>(r)] = run_repetition(config, data, r, keep_traces);
        }
        return outcomes;
    }

    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                int r;
                while ((r = next.fetch_add(1)) < reps) {
                    outcomes[static_cast<size_t>(r)] =
                        run_repetition(config, data, r, keep_traces);
                }
            } catch (...) {
                errors[static_cast<size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (const auto& err : errors) {
        if (err) std::rethrow_exception(err);
    }
    return outcomes;
}

// Removes files created by a failed run so no partial outputs linger.
class OutputGuard {
public:
    explicit OutputGuard(const std::string& out_dir) : dir_(out_dir) {}

    void wrote(const fs::path& path) { written_.push_back(path); }

    void commit() { committed_ = true; }

    ~OutputGuard() {
        if (committed_) return;
        for (const auto& path : written_) {
            std::error_code ec;
            fs::remove(path, ec);
        }
    }

private:
    std::string dir_;
    std::vector<fs::path> written_;
    bool committed_ = false;
};

}  // namespace

ExperimentResult run_experiment(const RunConfig& raw_config) {
    RunConfig config = raw_config;
    apply_rules_file(config);
    const LoadedData data = load_data(config);
    if (data.load.warning_count() > 0) {
        std::cerr << "[ingest] " << data.load.malformed_rows << " malformed rows, "
                  << data.load.missing_code_states << " missing code states\n";
    }

    const bool keep_traces = config.pool_per_problem;
    const std::vector<RepOutcome> outcomes = run_all_reps(config, data, keep_traces);

    std::vector<eval::RunEval> runs;
    std::vector<uint64_t> seeds;
    ExperimentResult result;
    for (const auto& outcome : outcomes) {
        runs.push_back(outcome.eval);
        seeds.push_back(outcome.seed);
        result.loss_histories.push_back(outcome.loss_history);
        std::cout << "[rep " << runs.size() - 1 << "] seed=" << outcome.seed
                  << " split=" << outcome.split_hash << " overall="
                  << (outcome.eval.overall_auc ? std::to_string(*outcome.eval.overall_auc)
                                               : "null")
                  << "\n";
    }

    result.report = eval::aggregate_runs(ktmodels::model_kind_name(config.model),
                                         config_hash(config), seeds, runs);
    result.problem_ids = data.catalog.problems;

    if (config.pool_per_problem) {
        std::map<int, std::pair<std::vector<int>, std::vector<double>>> pooled;
        for (const auto& outcome : outcomes) {
            for (const auto& trace : outcome.traces) {
                for (const auto& rec : trace.records) {
                    pooled[rec.problem].first.push_back(rec.label);
                    pooled[rec.problem].second.push_back(rec.score);
                }
            }
        }
        for (const auto& [problem, group] : pooled) {
            eval::GroupEval ge;
            ge.n_predictions = static_cast<int>(group.first.size());
            ge.overall_auc = eval::auc(group.first, group.second);
            result.report.pooled_per_problem[problem] = ge;
        }
    }

    if (!config.out_dir.empty()) {
        fs::create_directories(config.out_dir);
        OutputGuard guard(config.out_dir);
        const fs::path dir(config.out_dir);

        guard.wrote(dir / "run_config.json");
        write_text_file(dir / "run_config.json", run_config_to_json(config));

        guard.wrote(dir / "report.json");
        write_text_file(dir / "report.json",
                        eval::report_to_json(result.report, result.problem_ids));

        guard.wrote(dir / "report.csv");
        write_text_file(dir / "report.csv",
                        eval::report_to_csv(result.report, result.problem_ids));

        if (config.model != ktmodels::ModelKind::Bkt) {
            std::string csv = "repetition,epoch,loss\n";
            char buf[96];
            for (size_t r = 0; r < result.loss_histories.size(); ++r) {
                for (size_t e = 0; e < result.loss_histories[r].size(); ++e) {
                    std::snprintf(buf, sizeof(buf), "%zu,%zu,%.12f\n", r, e,
                                  result.loss_histories[r][e]);
                    csv += buf;
                }
            }
            guard.wrote(dir / "loss_history.csv");
            write_text_file(dir / "loss_history.csv", csv);
        }
        guard.commit();
    }
    return result;
}

// ------------------------------------------------------------- ablation ----

std::vector<AblationRow> run_ablation(const RunConfig& raw_config) {
    RunConfig config = raw_config;
    apply_rules_file(config);
    if (config.model != ktmodels::ModelKind::CodeDkt) {
        throw std::runtime_error("ablation runs on the codedkt model");
    }
    struct Variant {
        const char* name;
        void (*apply)(ktmodels::ModelConfig&);
    };
    static const Variant kVariants[] = {
        {"final", [](ktmodels::ModelConfig&) {}},
        {"attention-only",
         [](ktmodels::ModelConfig& c) { c.placement = ktmodels::Placement::AttentionOnly; }},
        {"trace-only",
         [](ktmodels::ModelConfig& c) { c.placement = ktmodels::Placement::TraceOnly; }},
        {"rnn",
         [](ktmodels::ModelConfig& c) { c.cell = ktmodels::Cell::Rnn; }},
        {"static-embedding",
         [](ktmodels::ModelConfig& c) {
             c.embedding_mode = ktmodels::EmbeddingMode::StaticPretrained;
         }},
    };

    const LoadedData data = load_data(config);
    std::vector<AblationRow> rows;
    std::vector<std::string> reference_splits;
    for (const Variant& variant : kVariants) {
        RunConfig vc = config;
        variant.apply(vc.model_config);
        const std::vector<RepOutcome> outcomes = run_all_reps(vc, data, false);
        AblationRow row;
        row.variant = variant.name;
        for (size_t r = 0; r < outcomes.size(); ++r) {
            row.per_rep.push_back(outcomes[r].eval.overall_auc);
            if (rows.empty()) {
                reference_splits.push_back(outcomes[r].split_hash);
            } else if (outcomes[r].split_hash != reference_splits[r]) {
                throw std::runtime_error("ablation variants diverged on the data split");
            }
            std::cout << "[ablation] variant=" << variant.name << " rep=" << r
                      << " split=" << outcomes[r].split_hash << " (reused)\n";
        }
        row.overall = eval::aggregate_values(row.per_rep);
        rows.push_back(std::move(row));
    }

    if (!config.out_dir.empty()) {
        fs::create_directories(config.out_dir);
        json doc = json::array();
        std::string csv = "variant,overall_auc_mean,overall_auc_std,n_runs\n";
        char buf[160];
        for (const auto& row : rows) {
            json variant_runs = json::array();
            for (const auto& v : row.per_rep) {
                if (v.has_value()) variant_runs.push_back(*v); else variant_runs.push_back(nullptr);
            }
            doc.push_back({{"variant", row.variant},
                           {"mean", row.overall.mean},
                           {"stddev", row.overall.stddev},
                           {"n_runs", row.overall.n_runs},
                           {"per_rep", variant_runs}});
            std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%d\n", row.variant.c_str(),
                          row.overall.mean, row.overall.stddev, row.overall.n_runs);
            csv += buf;
        }
        write_text_file(fs::path(config.out_dir) / "ablation.json", doc.dump(2) + "\n");
        write_text_file(fs::path(config.out_dir) / "ablation.csv", csv);
        write_text_file(fs::path(config.out_dir) / "run_config.json",
                        run_config_to_json(config));
    }
    return rows;
}

// --------------------------------------------------------------- tuning ----

TuningResult run_tuning(const RunConfig& raw_config, const TuningOptions& options) {
    RunConfig config = raw_config;
    apply_rules_file(config);
    const LoadedData data = load_data(config);

    TuningResult result;
    bool have_best = false;
    for (int embed : options.embedding_sizes) {
        for (double lr : options.learning_rates) {
            for (int epochs : options.epoch_choices) {
                std::vector<std::optional<double>> values;
                for (int rep = 0; rep < options.repetitions; ++rep) {
                    const uint64_t seed_r =
                        mix64(config.seed, 0x7e57ULL + static_cast<uint64_t>(rep));
                    // outer 4:1 split, then 3:1 fit/validation inside training
                    const dataset::DataSplit outer =
                        dataset::split_students(data.sequences, seed_r);
                    const auto train_seqs =
                        filter_students(data.sequences, outer.train_students);
                    const dataset::DataSplit inner = dataset::split_students_frac(
                        train_seqs, mix64(seed_r, 0xf17ULL), 0.75);
                    const auto fit_seqs = filter_students(train_seqs, inner.train_students);
                    const auto val_seqs = filter_students(train_seqs, inner.test_students);

                    ktmodels::ModelConfig mc = config.model_config;
                    mc.code_embedding_size = embed;
                    mc.learning_rate = lr;
                    mc.epochs = epochs;
                    mc.seed = seed_r;
                    const ModelBundle bundle =
                        train_bundle(config.model, fit_seqs, data.catalog, mc);
                    const auto traces = predict_bundle(bundle, val_seqs);
                    values.push_back(eval::decompose(traces).overall_auc);
                }
                const eval::Aggregate agg = eval::aggregate_values(values);
                TuningPoint point{embed, lr, epochs, agg.mean, agg.n_runs};
                std::cout << "[tune] embed=" << embed << " lr=" << lr
                          << " epochs=" << epochs << " val_auc=" << agg.mean << "\n";
                result.rows.push_back(point);
                if (!have_best || point.mean_validation_auc >
                                      result.best.mean_validation_auc) {
                    result.best = point;
                    have_best = true;
                }
            }
        }
    }

    if (!config.out_dir.empty()) {
        fs::create_directories(config.out_dir);
        json doc;
        json rows = json::array();
        for (const auto& row : result.rows) {
            rows.push_back({{"embedding_size", row.embedding_size},
                            {"learning_rate", row.learning_rate},
                            {"epochs", row.epochs},
                            {"mean_validation_auc", row.mean_validation_auc},
                            {"n_runs", row.n_runs}});
        }
        doc["rows"] = std::move(rows);
        doc["best"] = {{"embedding_size", result.best.embedding_size},
                       {"learning_rate", result.best.learning_rate},
                       {"epochs", result.best.epochs},
                       {"mean_validation_auc", result.best.mean_validation_auc}};
        write_text_file(fs::path(config.out_dir) / "tuning.json", doc.dump(2) + "\n");
        write_text_file(fs::path(config.out_dir) / "run_config.json",
                        run_config_to_json(config));
    }
    return result;
}

// ----------------------------------------------------------- checkpoints ----

namespace {

json tensor_json(const autodiff::Tensor& t) {
    return json{{"rows", t.rows}, {"cols", t.cols}, {"data", t.v}};
}

autodiff::Tensor tensor_from(const json& doc) {
    autodiff::Tensor t(doc["rows"].get<int>(), doc["cols"].get<int>());
    t.v = doc["data"].get<std::vector<double>>();
    if (t.v.size() != static_cast<size_t>(t.rows) * static_cast<size_t>(t.cols)) {
        throw std::runtime_error("checkpoint tensor size mismatch");
    }
    return t;
}

}  // namespace

void save_checkpoint(const ModelBundle& bundle, const std::string& path) {
    json doc;
    doc["format_version"] = 1;
    doc["model"] = ktmodels::model_kind_name(bundle.kind);
    doc["assignment"] = bundle.assignment;
    doc["config"] = model_config_json(bundle.config);
    doc["problems"] = bundle.catalog.problems;
    if (!bundle.catalog.skill_vectors.empty()) {
        json skills;
        for (const auto& [problem, bits] : bundle.catalog.skill_vectors) {
            skills[problem] = bits;
        }
        doc["skills"] = std::move(skills);
    }

    if (bundle.kind == ktmodels::ModelKind::Bkt) {
        json problems = json::array();
        for (const auto& [q, p] : bundle.bkt_params.per_problem) {
            problems.push_back({{"q", q},
                                {"L0", p.p_init},
                                {"T", p.p_learn},
                                {"G", p.p_guess},
                                {"S", p.p_slip}});
        }
        doc["bkt"] = {{"per_problem", std::move(problems)},
                      {"pooled",
                       {{"L0", bundle.bkt_params.pooled.p_init},
                        {"T", bundle.bkt_params.pooled.p_learn},
                        {"G", bundle.bkt_params.pooled.p_guess},
                        {"S", bundle.bkt_params.pooled.p_slip}}}};
    } else {
        const ktmodels::TrainedModel& model = bundle.deep;
        doc["n_problems"] = model.n_problems;
        doc["loss_history"] = model.loss_history;
        doc["vocab"] = {{"nodes", model.vocab.node_labels},
                        {"paths", model.vocab.path_strings},
                        {"min_count", model.vocab.min_count}};
        doc["tfidf"] = {{"tokens", model.tfidf.tokens}, {"idf", model.tfidf.idf}};
        doc["expert_rules"] = model.expert_rules;
        json params;
        for (const auto& [name, tensor] : model.params) {
            params[name] = tensor_json(tensor);
        }
        doc["params"] = std::move(params);
    }
    write_text_file(path, doc.dump() + "\n");
}

ModelBundle load_checkpoint(const std::string& path) {
    const json doc = json::parse(read_text_file(path));
    if (doc["format_version"].get<int>() != 1) {
        throw std::runtime_error("unsupported checkpoint version");
    }
    ModelBundle bundle;
    bundle.kind = ktmodels::model_kind_from_name(doc["model"]);
    bundle.assignment = doc.value("assignment", std::string{});
    bundle.config = model_config_from(doc["config"]);
    bundle.catalog.problems = doc["problems"].get<std::vector<std::string>>();
    for (size_t i = 0; i < bundle.catalog.problems.size(); ++i) {
        bundle.catalog.index[bundle.catalog.problems[i]] = static_cast<int>(i);
    }
    if (doc.contains("skills")) {
        for (auto it = doc["skills"].begin(); it != doc["skills"].end(); ++it) {
            bundle.catalog.skill_vectors[it.key()] = it.value().get<std::vector<int>>();
        }
    }

    if (bundle.kind == ktmodels::ModelKind::Bkt) {
        for (const auto& entry : doc["bkt"]["per_problem"]) {
            bkt::ProblemParams p;
            p.p_init = entry["L0"];
            p.p_learn = entry["T"];
            p.p_guess = entry["G"];
            p.p_slip = entry["S"];
            bundle.bkt_params.per_problem[entry["q"].get<int>()] = p;
        }
        const json& pooled = doc["bkt"]["pooled"];
        bundle.bkt_params.pooled = {pooled["L0"], pooled["T"], pooled["G"],
                                    pooled["S"]};
    } else {
        ktmodels::TrainedModel& model = bundle.deep;
        model.kind = bundle.kind;
        model.config = bundle.config;
        model.n_problems = doc["n_problems"].get<int>();
        model.loss_history = doc["loss_history"].get<std::vector<double>>();
        model.vocab.node_labels = doc["vocab"]["nodes"].get<std::vector<std::string>>();
        model.vocab.path_strings = doc["vocab"]["paths"].get<std::vector<std::string>>();
        model.vocab.min_count = doc["vocab"]["min_count"].get<int>();
        for (size_t i = 0; i < model.vocab.node_labels.size(); ++i) {
            model.vocab.node_index[model.vocab.node_labels[i]] = static_cast<int>(i) + 2;
        }
        for (size_t i = 0; i < model.vocab.path_strings.size(); ++i) {
            model.vocab.path_index[model.vocab.path_strings[i]] = static_cast<int>(i) + 2;
        }
        model.tfidf.tokens = doc["tfidf"]["tokens"].get<std::vector<std::string>>();
        model.tfidf.idf = doc["tfidf"]["idf"].get<std::vector<double>>();
        model.expert_rules = doc["expert_rules"].get<std::vector<std::string>>();
        for (auto it = doc["params"].begin(); it != doc["params"].end(); ++it) {
            model.params.emplace(it.key(), tensor_from(it.value()));
        }
    }
    return bundle;
}

}  // namespace codedkt::experiment
