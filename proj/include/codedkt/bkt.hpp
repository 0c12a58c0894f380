#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace codedkt::bkt {

// Four BKT parameters for one problem (problem ID stands in for the skill).
// No forgetting: the learned state is absorbing.
struct ProblemParams {
    double p_init = 0.2;   // L0
    double p_learn = 0.1;  // T
    double p_guess = 0.2;  // G, clamped to [0, 0.5]
    double p_slip = 0.1;   // S, clamped to [0, 0.5]
};

struct Params {
    std::map<int, ProblemParams> per_problem;
    ProblemParams pooled;            // fallback for sparsely observed problems
    std::map<int, bool> used_pooled;

    const ProblemParams& for_problem(int q) const;
};

// P(correct) given the current mastery estimate.
double predict(double p_know, double guess, double slip);

// Bayes update on one observation followed by the learning transition.
// Zero-probability evidence returns the prior unchanged.
double update(double p_know, int observation, double guess, double slip,
              double learn);

struct FitOptions {
    int max_iter = 100;
    double tol = 1e-5;
    int restarts = 5;
    uint64_t seed = 0;
    int min_observations = 5;  // below this a problem falls back to pooled fit
};

struct FitDiagnostics {
    // log-likelihood trace of the best restart, one entry per EM iteration
    std::map<int, std::vector<double>> loglik_history;  // -1 holds the pooled fit
};

// Baum-Welch on the absorbing 2-state HMM, independently per problem.
// sequences_by_problem maps the problem index to per-student observation
// sequences (0/1, chronological).
Params fit(const std::map<int, std::vector<std::vector<int>>>& sequences_by_problem,
           const FitOptions& options, FitDiagnostics* diagnostics = nullptr);

std::string params_to_csv(const Params& params,
                          const std::vector<std::string>& problem_ids);

}  // namespace codedkt::bkt
