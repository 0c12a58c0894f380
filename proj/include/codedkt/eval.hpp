#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace codedkt::eval {

// One predicted transition: after attempt t the model scores the next
// attempted problem. t is 1-based and ranges over 1..T-1.
struct PredictionRecord {
    int t = 0;
    int problem = 0;       // q_{t+1}
    double score = 0.5;    // predicted P(correct), in (0,1)
    int label = 0;         // a_{t+1}
    bool first_attempt = false;
};

struct StudentTrace {
    std::string student;
    std::vector<PredictionRecord> records;
    // Optional full output rows (one length-M vector per transition), kept
    // only when heatmaps are requested.
    std::vector<std::vector<double>> full_rows;
    std::vector<int> attempted;  // problem attempted at each transition target
    std::vector<int> labels;     // ground truth per transition target
};

// Rank-based AUC with average-rank tie handling. Returns nullopt when only
// one label class is present.
std::optional<double> auc(const std::vector<int>& labels,
                          const std::vector<double>& scores);

struct GroupEval {
    std::optional<double> overall_auc;
    std::optional<double> first_auc;
    int n_predictions = 0;
    int n_first = 0;
};

// Per-repetition evaluation of a set of prediction traces.
struct RunEval {
    std::optional<double> overall_auc;
    std::optional<double> first_attempt_auc;
    std::map<int, GroupEval> per_problem;
    int n_predictions = 0;
    int n_first = 0;
    // Recall/precision for flagging incorrect attempts (score < 0.5 predicts
    // a failed attempt), reported at the 0.5 threshold.
    double recall_incorrect = 0.0;
    double precision_incorrect = 0.0;
};

RunEval decompose(const std::vector<StudentTrace>& traces);

struct Aggregate {
    double mean = 0.0;
    double stddev = 0.0;
    int n_runs = 0;  // runs that produced a defined AUC
};

struct Report {
    std::string model;
    std::string config_hash;
    std::vector<uint64_t> seeds;
    std::vector<RunEval> runs;
    Aggregate overall;
    Aggregate first_attempt;
    std::map<int, GroupEval> pooled_per_problem;  // only with pooling enabled
    std::map<int, Aggregate> per_problem_overall;
    std::map<int, Aggregate> per_problem_first;
    std::map<int, double> per_problem_mean_n;
};

Aggregate aggregate_values(const std::vector<std::optional<double>>& values);
Report aggregate_runs(const std::string& model, const std::string& config_hash,
                      const std::vector<uint64_t>& seeds,
                      const std::vector<RunEval>& runs);

std::string report_to_json(const Report& report,
                           const std::vector<std::string>& problem_ids);
std::string report_to_csv(const Report& report,
                          const std::vector<std::string>& problem_ids);

// Heatmap export: probability matrix (problems x transitions) plus attempted
// marker / ground-truth label / prediction-accuracy layers, and a grayscale
// SVG where darker means more confident success and the attempted cell is
// framed black when the thresholded prediction matches the outcome.
struct Heatmap {
    std::vector<std::string> problem_ids;
    std::vector<std::vector<double>> probabilities;  // M rows, T-1 columns
    std::vector<int> attempted;                      // per column
    std::vector<int> labels;                         // per column
    std::vector<int> accurate;                       // per column, 0/1
};

Heatmap build_heatmap(const StudentTrace& trace,
                      const std::vector<std::string>& problem_ids);
std::string heatmap_to_csv(const Heatmap& map);
std::string heatmap_to_svg(const Heatmap& map);

}  // namespace codedkt::eval
