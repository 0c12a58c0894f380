// Command line front end: synthesize data, ingest logs, train and evaluate
// knowledge-tracing models, run ablations and hyperparameter tuning, and dump
// parser / path-extraction debug output.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <functional>

#include <CLI11.hpp>
#include <json.hpp>

#include "codedkt/autodiff.hpp"
#include "codedkt/codepaths.hpp"
#include "codedkt/dataset.hpp"
#include "codedkt/eval.hpp"
#include "codedkt/experiment.hpp"
#include "codedkt/javaparse.hpp"
#include "codedkt/ktmodels.hpp"
#include "codedkt/rng.hpp"
#include "codedkt/synth.hpp"

namespace fs = std::filesystem;
using namespace codedkt;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << content;
}

// Shared experiment flags. A --config file is loaded before CLI11 assigns
// flag values, so explicit flags override the file.
struct RunFlags {
    std::string config_file;
    experiment::RunConfig config;

    void preload(int argc, char** argv) {
        std::string path;
        for (int i = 1; i < argc; ++i) {
            const std::string arg = argv[i];
            if (arg == "--config" && i + 1 < argc) path = argv[i + 1];
            else if (arg.rfind("--config=", 0) == 0) path = arg.substr(9);
        }
        if (!path.empty()) {
            config = experiment::run_config_from_json(read_file(path));
        }
    }

    void attach(CLI::App* cmd, bool with_model = true) {
        cmd->add_option("--config", config_file, "JSON run-config file; flags override");
        cmd->add_option("--data", config.data_dir, "dataset directory");
        cmd->add_option("--assignment", config.assignment, "assignment id");
        if (with_model) {
            cmd->add_option_function<std::string>(
                   "--model",
                   [this](const std::string& v) {
                       config.model = ktmodels::model_kind_from_name(v);
                   },
                   "bkt|dkt|codedkt|dkt-tfidf|dkt-expert")
                ->check(CLI::IsMember({"bkt", "dkt", "codedkt", "dkt-tfidf", "dkt-expert"}));
        }
        cmd->add_option("--reps", config.repetitions, "repetitions");
        cmd->add_option("--seed", config.seed, "global seed");
        cmd->add_option("--out", config.out_dir, "output directory");
        cmd->add_flag("--single-worker", config.single_worker,
                      "run repetitions on one worker (bitwise reproducible)");
        cmd->add_option("--workers", config.workers, "worker threads (0 = auto)");
        cmd->add_option("--skills", config.skills_file, "skill-vector JSON file");
        cmd->add_option("--rules", config.rules_file, "expert-rule JSON file");
        cmd->add_flag("--pool-per-problem", config.pool_per_problem,
                      "also report per-problem AUC pooled across repetitions");

        auto& mc = config.model_config;
        cmd->add_option_function<std::string>(
               "--cell",
               [this](const std::string& v) {
                   config.model_config.cell = v == "rnn" ? ktmodels::Cell::Rnn
                                                         : ktmodels::Cell::Lstm;
               },
               "rnn|lstm")
            ->check(CLI::IsMember({"rnn", "lstm"}));
        cmd->add_option_function<std::string>(
               "--placement",
               [this](const std::string& v) {
                   auto& c = config.model_config;
                   if (v == "both") c.placement = ktmodels::Placement::AttentionAndTrace;
                   else if (v == "attention") c.placement = ktmodels::Placement::AttentionOnly;
                   else c.placement = ktmodels::Placement::TraceOnly;
               },
               "both|attention|trace")
            ->check(CLI::IsMember({"both", "attention", "trace"}));
        cmd->add_option_function<std::string>(
               "--embedding",
               [this](const std::string& v) {
                   config.model_config.embedding_mode =
                       v == "static" ? ktmodels::EmbeddingMode::StaticPretrained
                                     : ktmodels::EmbeddingMode::Joint;
               },
               "joint|static")
            ->check(CLI::IsMember({"joint", "static"}));
        cmd->add_option("--hidden", mc.hidden_size, "hidden state size");
        cmd->add_option("--embed-size", mc.code_embedding_size, "code embedding size");
        cmd->add_option("--lr", mc.learning_rate, "learning rate");
        cmd->add_option("--epochs", mc.epochs, "training epochs");
        cmd->add_option("--batch", mc.batch_size, "sequences per minibatch");
        cmd->add_option("--max-seq", mc.max_seq_len, "max attempts per student");
        cmd->add_option("--paths", mc.paths_per_submission,
                        "code paths sampled per submission");
        cmd->add_option("--min-count", mc.min_count, "vocabulary min count");
        cmd->add_option("--max-path-nodes", mc.max_path_nodes,
                        "path length cap in nodes (0 = off)");
        cmd->add_option("--path-pool", mc.path_pool,
                        "per-submission path pool cap (0 = keep all)");
        cmd->add_option("--tfidf-top-k", mc.tfidf_top_k, "tfidf feature count");
        cmd->add_option("--pretrain-epochs", mc.pretrain_epochs,
                        "static-embedding pretraining epochs (0 = epochs)");
        cmd->add_flag("--no-clip", [this](int64_t) {
            config.model_config.grad_clip = false;
        }, "disable gradient clipping");
        cmd->add_flag("--no-resample", [this](int64_t) {
            config.model_config.resample_paths = false;
        }, "sample code paths once instead of per epoch");
    }
};

int cmd_synthesize(const synth::Config& config, const std::string& out_dir) {
    const synth::GenerateResult result = synth::generate(config, out_dir);
    std::cout << "wrote " << result.n_submissions << " submissions ("
              << result.n_correct << " correct, rate "
              << result.correct_rate() << ") to " << out_dir << "\n";
    return 0;
}

// Finite-difference sweep over every tape op; one CSV row per op per trial.
int cmd_grad_check(const std::string& out_path, int trials, uint64_t seed) {
    using autodiff::Tape;
    using autodiff::Tensor;
    Rng rng(mix64(seed, 0x60adc4ecULL));

    auto random_tensor = [&](int r, int c) {
        Tensor t(r, c);
        for (double& x : t.v) x = rng.uniform(-1.0, 1.0);
        return t;
    };

    // builds a scalar graph over params and returns the worst relative error
    auto check = [&](const std::function<int(Tape&, std::vector<int>&)>& build,
                     std::vector<Tensor> inputs) {
        auto eval = [&]() {
            Tape tape;
            std::vector<int> ids;
            for (auto& t : inputs) ids.push_back(tape.param(&t));
            return tape.value(build(tape, ids)).v[0];
        };
        Tape tape;
        std::vector<int> ids;
        for (auto& t : inputs) ids.push_back(tape.param(&t));
        const int root = build(tape, ids);
        tape.backward(root);
        std::vector<Tensor> grads;
        for (int id : ids) grads.push_back(tape.gradient(id));
        double worst = 0.0;
        const double h = 1e-5;
        for (size_t i = 0; i < inputs.size(); ++i) {
            for (size_t j = 0; j < inputs[i].v.size(); ++j) {
                const double orig = inputs[i].v[j];
                inputs[i].v[j] = orig + h;
                const double fp = eval();
                inputs[i].v[j] = orig - h;
                const double fm = eval();
                inputs[i].v[j] = orig;
                const double numeric = (fp - fm) / (2.0 * h);
                const double analytic = grads[i].v[j];
                worst = std::max(worst, std::fabs(numeric - analytic) /
                                            std::max({1.0, std::fabs(numeric),
                                                      std::fabs(analytic)}));
            }
        }
        return worst;
    };

    // coefficients drawn from a per-trial salt so that repeated graph builds
    // inside the finite-difference loop stay identical
    auto scalarize = [](Tape& tape, int node, uint64_t salt) {
        Rng coeff(salt);
        const Tensor& v = tape.value(node);
        Tensor left(1, v.rows), right(v.cols, 1);
        for (double& x : left.v) x = coeff.uniform(-1.0, 1.0);
        for (double& x : right.v) x = coeff.uniform(-1.0, 1.0);
        return tape.matmul(tape.matmul(tape.input(left), node), tape.input(right));
    };

    std::string csv = "op,trial,max_rel_err\n";
    char buf[96];
    using Build = std::function<int(Tape&, std::vector<int>&, uint64_t)>;
    auto sweep = [&](const char* op, const Build& build,
                     const std::function<std::vector<Tensor>()>& inputs) {
        for (int trial = 0; trial < trials; ++trial) {
            const uint64_t salt = rng.next_u64();
            const double err = check(
                [&build, salt](Tape& t, std::vector<int>& ids) {
                    return build(t, ids, salt);
                },
                inputs());
            std::snprintf(buf, sizeof(buf), "%s,%d,%.3e\n", op, trial, err);
            csv += buf;
        }
    };

    sweep("matmul",
          [&](Tape& t, std::vector<int>& ids, uint64_t salt) {
              return scalarize(t, t.matmul(ids[0], ids[1]), salt);
          },
          [&] { return std::vector<Tensor>{random_tensor(2, 3), random_tensor(3, 2)}; });
    sweep("add_mul",
          [&](Tape& t, std::vector<int>& ids, uint64_t salt) {
              return scalarize(t, t.mul(t.add(ids[0], ids[1]), ids[2]), salt);
          },
          [&] {
              return std::vector<Tensor>{random_tensor(2, 3), random_tensor(2, 3),
                                         random_tensor(2, 3)};
          });
    sweep("tanh_sigmoid",
          [&](Tape& t, std::vector<int>& ids, uint64_t salt) {
              return scalarize(t, t.sigmoid_op(t.tanh_op(ids[0])), salt);
          },
          [&] { return std::vector<Tensor>{random_tensor(2, 4)}; });
    sweep("concat_slice_tile",
          [&](Tape& t, std::vector<int>& ids, uint64_t salt) {
              const int cat = t.concat_cols({ids[0], ids[1]});
              return scalarize(t, t.slice_cols(t.tile_rows(cat, 3), 1, 4), salt);
          },
          [&] { return std::vector<Tensor>{random_tensor(1, 3), random_tensor(1, 2)}; });
    sweep("embedding_lookup",
          [&](Tape& t, std::vector<int>& ids, uint64_t salt) {
              return scalarize(t, t.embedding_lookup(ids[0], {0, 2, 2, 3}), salt);
          },
          [&] { return std::vector<Tensor>{random_tensor(4, 3)}; });
    sweep("masked_softmax_weighted_sum",
          [&](Tape& t, std::vector<int>& ids, uint64_t salt) {
              return scalarize(
                  t, t.weighted_sum(ids[1], t.masked_softmax(ids[0], {1, 1, 0, 1})),
                  salt);
          },
          [&] { return std::vector<Tensor>{random_tensor(4, 1), random_tensor(4, 3)}; });
    sweep("select_col_bce",
          [&](Tape& t, std::vector<int>& ids, uint64_t) {
              const int a = t.select_col(ids[0], 0);
              const int b = t.select_col(ids[0], 2);
              return t.bce_loss(t.concat_cols({a, b}), {1.0, 0.0}, {1, 1});
          },
          [&] {
              Tensor p(1, 3);
              for (double& x : p.v) x = rng.uniform(0.1, 0.9);
              return std::vector<Tensor>{p};
          });

    write_file(out_path, csv);
    std::cout << "gradient-check report written to " << out_path << "\n";
    return 0;
}

int cmd_ingest(const std::string& data_dir, const std::string& assignment,
               const std::string& dump_path) {
    const dataset::LoadResult load = dataset::load_progsnap2(data_dir);
    std::set<std::string> students, problems, assignments;
    for (const auto& rec : load.records) {
        students.insert(rec.student_id);
        problems.insert(rec.problem_id);
        assignments.insert(rec.assignment_id);
    }
    std::cout << "records: " << load.records.size() << "\n"
              << "students: " << students.size() << "\n"
              << "problems: " << problems.size() << "\n"
              << "assignments: " << assignments.size() << "\n"
              << "malformed rows: " << load.malformed_rows << "\n"
              << "missing code states: " << load.missing_code_states << "\n";
    if (!dump_path.empty()) {
        const std::string a = assignment.empty() ? *assignments.begin() : assignment;
        const auto catalog = dataset::build_catalog(load.records, a);
        const auto sequences = dataset::build_sequences(load.records, a, catalog);
        write_file(dump_path, dataset::dump_sequences_jsonl(sequences, a));
        std::cout << "dumped " << sequences.size() << " sequences to " << dump_path << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"knowledge tracing for programming submissions"};
    app.require_subcommand(1);

    // ---- synthesize ----
    synth::Config synth_config;
    std::string synth_out;
    std::string synth_mode = "structural";
    auto* synthesize = app.add_subcommand("synthesize", "generate a synthetic dataset");
    synthesize->add_option("--out", synth_out, "output directory")->required();
    synthesize->add_option("--students", synth_config.n_students, "number of students");
    synthesize->add_option("--problems", synth_config.n_problems, "problems per assignment");
    synthesize->add_option("--assignments", synth_config.n_assignments, "assignments");
    synthesize->add_option("--mode", synth_mode, "structural|random|none")
        ->check(CLI::IsMember({"structural", "random", "none"}));
    synthesize->add_option("--seed", synth_config.seed, "generator seed");
    synthesize->add_option("--init-mastery", synth_config.init_mastery, "initial mastery rate");
    synthesize->add_option("--learn-rate", synth_config.learn_rate, "per-practice learn rate");
    synthesize->add_option("--guess", synth_config.guess, "guess probability");
    synthesize->add_option("--slip", synth_config.slip, "slip probability");
    synthesize->add_option("--attempt-cap", synth_config.attempt_cap, "attempts per problem cap");
    synthesize->add_option("--corrupt-fraction", synth_config.corrupt_fraction,
                           "fraction of submissions mangled past the parser");
    synthesize->add_flag("--keep-after-success", [&](int64_t) {
        synth_config.stop_on_success = false;
    }, "keep attempting after the first success (up to the cap)");

    // ---- ingest ----
    std::string ingest_data, ingest_assignment, ingest_dump;
    auto* ingest = app.add_subcommand("ingest", "load and validate a dataset");
    ingest->add_option("--data", ingest_data, "dataset directory")->required();
    ingest->add_option("--assignment", ingest_assignment, "assignment id");
    ingest->add_option("--dump-sequences", ingest_dump, "write sequences as JSONL");

    // ---- train ----
    RunFlags train_flags;
    std::string train_ckpt;
    uint64_t train_split_seed = 0;
    bool train_holdout = false;
    auto* train = app.add_subcommand("train", "train one model and save a checkpoint");
    train_flags.attach(train);
    train->add_option("--checkpoint", train_ckpt, "checkpoint path")->required();
    train->add_flag("--holdout", train_holdout, "hold out a 4:1 test split and report AUC");
    train->add_option("--split-seed", train_split_seed, "seed for --holdout split");

    // ---- evaluate ----
    RunFlags eval_flags;
    auto* evaluate = app.add_subcommand(
        "evaluate", "repeated split/train/test experiment with reports");
    eval_flags.attach(evaluate);

    // ---- ablate ----
    RunFlags ablate_flags;
    auto* ablate = app.add_subcommand("ablate", "run the five codedkt variants");
    ablate_flags.attach(ablate, /*with_model=*/false);

    // ---- tune ----
    RunFlags tune_flags;
    experiment::TuningOptions tune_options;
    bool tune_full_grid = false;
    auto* tune = app.add_subcommand("tune", "grid search over embedding/lr/epochs");
    tune_flags.attach(tune);
    tune->add_option("--tune-reps", tune_options.repetitions,
                     "validation repetitions per grid point");
    tune->add_flag("--full", tune_full_grid, "use 100 validation repetitions");

    // ---- heatmap ----
    std::string hm_ckpt, hm_data, hm_student, hm_out;
    auto* heatmap = app.add_subcommand("heatmap", "per-student prediction heatmap");
    heatmap->add_option("--checkpoint", hm_ckpt, "trained checkpoint")->required();
    heatmap->add_option("--data", hm_data, "dataset directory")->required();
    heatmap->add_option("--student", hm_student, "student id (default: first with 2+ attempts)");
    heatmap->add_option("--out", hm_out, "output directory")->required();

    // ---- parse-debug ----
    std::string pd_file;
    bool pd_json = false;
    auto* parse_debug = app.add_subcommand("parse-debug", "parse a file and print the tree");
    parse_debug->add_option("file", pd_file, "source file")->required();
    parse_debug->add_flag("--json", pd_json, "emit JSON instead of indented text");

    // ---- grad-check (hidden diagnostic) ----
    std::string gc_out;
    int gc_trials = 50;
    uint64_t gc_seed = 1;
    auto* grad_check = app.add_subcommand("grad-check",
                                          "finite-difference reports per op");
    grad_check->group("");  // hidden
    grad_check->add_option("--out", gc_out, "CSV output path")->required();
    grad_check->add_option("--trials", gc_trials, "trials per op");
    grad_check->add_option("--seed", gc_seed, "rng seed");

    // ---- paths-debug ----
    std::string paths_file;
    int paths_cap = 8;
    auto* paths_debug = app.add_subcommand("paths-debug", "emit code paths as TSV");
    paths_debug->add_option("file", paths_file, "source file")->required();
    paths_debug->add_option("--max-path-nodes", paths_cap, "path length cap (0 = off)");

    try {
        train_flags.preload(argc, argv);
        eval_flags.preload(argc, argv);
        ablate_flags.preload(argc, argv);
        tune_flags.preload(argc, argv);
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    }

    CLI11_PARSE(app, argc, argv);

    try {
        if (synthesize->parsed()) {
            synth_config.code_mode = synth_mode == "structural" ? synth::CodeMode::Structural
                                     : synth_mode == "random"   ? synth::CodeMode::Random
                                                                : synth::CodeMode::None;
            return cmd_synthesize(synth_config, synth_out);
        }
        if (ingest->parsed()) {
            return cmd_ingest(ingest_data, ingest_assignment, ingest_dump);
        }
        if (train->parsed()) {
            experiment::RunConfig config = train_flags.config;
            experiment::apply_rules_file(config);
            const experiment::LoadedData data = experiment::load_data(config);
            std::vector<dataset::AttemptSequence> train_seqs = data.sequences;
            std::vector<dataset::AttemptSequence> test_seqs;
            if (train_holdout) {
                const auto split = dataset::split_students(
                    data.sequences, train_split_seed ? train_split_seed : config.seed);
                std::set<std::string> test_set(split.test_students.begin(),
                                               split.test_students.end());
                train_seqs.clear();
                for (const auto& seq : data.sequences) {
                    (test_set.count(seq.student_id) ? test_seqs : train_seqs).push_back(seq);
                }
            }
            ktmodels::ModelConfig mc = config.model_config;
            mc.seed = config.seed;
            experiment::ModelBundle bundle =
                experiment::train_bundle(config.model, train_seqs, data.catalog, mc);
            bundle.assignment = data.assignment;
            experiment::save_checkpoint(bundle, train_ckpt);
            std::cout << "checkpoint written to " << train_ckpt << "\n";
            if (bundle.kind == ktmodels::ModelKind::Bkt) {
                const std::string csv_path =
                    (fs::path(train_ckpt).parent_path() / "bkt_params.csv").string();
                write_file(csv_path.empty() ? "bkt_params.csv" : csv_path,
                           bkt::params_to_csv(bundle.bkt_params, data.catalog.problems));
                std::cout << "fitted parameters written next to the checkpoint\n";
            }
            if (train_holdout && !test_seqs.empty()) {
                const auto traces = experiment::predict_bundle(bundle, test_seqs);
                const auto run = eval::decompose(traces);
                std::cout << "holdout overall AUC: "
                          << (run.overall_auc ? std::to_string(*run.overall_auc) : "null")
                          << "\n";
            }
            return 0;
        }
        if (evaluate->parsed()) {
            experiment::RunConfig config = eval_flags.config;
            const auto result = experiment::run_experiment(config);
            std::cout << "overall AUC mean " << result.report.overall.mean << " (std "
                      << result.report.overall.stddev << ") over "
                      << result.report.overall.n_runs << " runs\n";
            return 0;
        }
        if (ablate->parsed()) {
            experiment::RunConfig config = ablate_flags.config;
            config.model = ktmodels::ModelKind::CodeDkt;
            const auto rows = experiment::run_ablation(config);
            for (const auto& row : rows) {
                std::cout << row.variant << ": " << row.overall.mean << " (std "
                          << row.overall.stddev << ")\n";
            }
            return 0;
        }
        if (tune->parsed()) {
            experiment::RunConfig config = tune_flags.config;
            if (tune_full_grid) tune_options.repetitions = 100;
            const auto result = experiment::run_tuning(config, tune_options);
            std::cout << "best: embed=" << result.best.embedding_size
                      << " lr=" << result.best.learning_rate
                      << " epochs=" << result.best.epochs << " val_auc="
                      << result.best.mean_validation_auc << "\n";
            return 0;
        }
        if (heatmap->parsed()) {
            const experiment::ModelBundle bundle = experiment::load_checkpoint(hm_ckpt);
            experiment::RunConfig config;
            config.data_dir = hm_data;
            config.assignment = bundle.assignment;
            config.model_config = bundle.config;
            const experiment::LoadedData data = experiment::load_data(config);
            std::string student = hm_student;
            if (student.empty()) {
                for (const auto& seq : data.sequences) {
                    if (seq.attempts.size() >= 2) {
                        student = seq.student_id;
                        break;
                    }
                }
            }
            std::vector<dataset::AttemptSequence> target;
            for (const auto& seq : data.sequences) {
                if (seq.student_id == student) target.push_back(seq);
            }
            if (target.empty()) {
                throw std::runtime_error("student " + student + " not found in dataset");
            }
            const auto traces = experiment::predict_bundle(bundle, target, true);
            const auto map = eval::build_heatmap(traces.at(0), data.catalog.problems);
            fs::create_directories(hm_out);
            write_file((fs::path(hm_out) / ("heatmap_" + student + ".csv")).string(),
                       eval::heatmap_to_csv(map));
            write_file((fs::path(hm_out) / ("heatmap_" + student + ".svg")).string(),
                       eval::heatmap_to_svg(map));
            std::cout << "heatmap for " << student << " written to " << hm_out << "\n";
            return 0;
        }
        if (grad_check->parsed()) {
            return cmd_grad_check(gc_out, gc_trials, gc_seed);
        }
        if (parse_debug->parsed()) {
            const auto outcome = javaparse::parse_source(read_file(pd_file));
            std::cout << (outcome.mode == javaparse::ParseMode::Parsed
                              ? "mode: parsed\n"
                              : "mode: fallback_flat\n");
            std::cout << (pd_json ? javaparse::tree_to_json(outcome.tree) + "\n"
                                  : javaparse::tree_to_text(outcome.tree));
            return 0;
        }
        if (paths_debug->parsed()) {
            const auto outcome = javaparse::parse_source(read_file(paths_file));
            for (const auto& path : codepaths::extract_paths(outcome.tree, paths_cap)) {
                std::cout << path.start << '\t' << path.path_string << '\t'
                          << path.end << '\n';
            }
            return 0;
        }
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    }
    return 0;
}
