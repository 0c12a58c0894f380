#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "codedkt/autodiff.hpp"
#include "codedkt/codepaths.hpp"
#include "codedkt/dataset.hpp"
#include "codedkt/eval.hpp"
#include "codedkt/javaparse.hpp"

namespace codedkt::ktmodels {

enum class ModelKind { Bkt, Dkt, CodeDkt, DktTfidf, DktExpert };
enum class Cell { Rnn, Lstm };
enum class Placement { AttentionAndTrace, AttentionOnly, TraceOnly };
enum class EmbeddingMode { Joint, StaticPretrained };

const char* model_kind_name(ModelKind kind);
ModelKind model_kind_from_name(const std::string& name);

struct ModelConfig {
    int hidden_size = 128;
    int code_embedding_size = 300;
    double learning_rate = 0.0005;
    int epochs = 40;
    int max_seq_len = 50;
    int paths_per_submission = 200;  // R
    int batch_size = 32;
    Cell cell = Cell::Lstm;
    Placement placement = Placement::AttentionAndTrace;
    EmbeddingMode embedding_mode = EmbeddingMode::Joint;
    uint64_t seed = 0;
    int min_count = 2;
    int max_path_nodes = 8;
    // Cap on the per-submission path pool the per-epoch sampler draws from;
    // 0 keeps every extracted path.
    int path_pool = 1000;
    bool resample_paths = true;
    bool grad_clip = true;
    double grad_clip_norm = 5.0;
    int tfidf_top_k = 50;
    int pretrain_epochs = 0;  // 0 -> same as epochs
    double embedding_init_std = 0.05;
    // empty -> the default nine-rule inventory
    std::vector<std::string> expert_rules;
};

using ParamMap = std::map<std::string, autodiff::Tensor>;

// ---- feature extractors for the naive baselines ----

struct TfidfModel {
    std::vector<std::string> tokens;  // selected, fixed order
    std::vector<double> idf;          // aligned with tokens

    std::vector<double> features(const std::string& source) const;
};

// Smoothed-IDF TF-IDF fitted on the training corpus; keeps the top_k tokens
// with the largest summed tf*idf mass (all tokens when fewer are distinct).
TfidfModel fit_tfidf(const std::vector<std::string>& train_docs, int top_k);

std::pair<std::vector<std::vector<double>>, std::vector<std::vector<double>>>
tfidf_features(const std::vector<std::string>& train_docs,
               const std::vector<std::string>& test_docs, int top_k);

// Fixed inventory of structural predicates; the default rule set is all nine
// in this order. Fallback-flat trees are evaluated with token approximations.
extern const std::vector<std::string> kExpertRules;
std::vector<int> expert_features(const javaparse::ParseOutcome& outcome,
                                 const std::vector<std::string>& rules);

// ---- forward passes (also exercised directly by the test oracles) ----

// Plain recurrent tracer: xs are per-step input rows, output rows are the
// per-problem success probabilities after each step.
std::vector<std::vector<double>> dkt_forward(
    const std::vector<std::vector<double>>& xs, const ParamMap& params,
    Cell cell);

// Attention-pooled code vector for one attempt.
std::vector<double> codedkt_attempt_vector(
    const codepaths::EncodedSubmission& code, const std::vector<double>& x_t,
    const ParamMap& params, Placement placement);

struct TrainedModel {
    ModelKind kind = ModelKind::Dkt;
    ModelConfig config;
    int n_problems = 0;
    ParamMap params;
    codepaths::Vocab vocab;                // CodeDkt
    TfidfModel tfidf;                      // DktTfidf
    std::vector<std::string> expert_rules; // DktExpert
    std::vector<double> loss_history;      // per-epoch training loss
};

// warm_start entries (validated by name and shape) replace the seeded
// initialization; used by the equivalence tests.
TrainedModel train_model(ModelKind kind,
                         const std::vector<dataset::AttemptSequence>& train,
                         const dataset::ProblemCatalog& catalog,
                         const ModelConfig& config,
                         const ParamMap* warm_start = nullptr);

std::vector<eval::StudentTrace> predict_model(
    const TrainedModel& model,
    const std::vector<dataset::AttemptSequence>& sequences,
    const dataset::ProblemCatalog& catalog, bool retain_full_rows = false);

// Loss and parameter gradients over one sequence's transitions, with the
// deterministic evaluation-time path selection. Gradient-check hook.
std::pair<double, ParamMap> sequence_loss_and_gradients(
    const TrainedModel& model, const dataset::AttemptSequence& sequence,
    const dataset::ProblemCatalog& catalog);

// Correctness-classifier pretraining for the static-embedding variant:
// attention-pooled code vector -> sigmoid readout, trained per submission.
// Returns the frozen encoder weights (W_enode, W_epath, W_a, W_0) and drops
// the classifier head.
ParamMap pretrain_static_embedding(
    const std::vector<dataset::AttemptSequence>& train,
    const dataset::ProblemCatalog& catalog, const ModelConfig& config,
    const codepaths::Vocab& vocab, double* final_accuracy = nullptr);

}  // namespace codedkt::ktmodels
