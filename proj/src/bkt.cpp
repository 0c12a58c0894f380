#include "codedkt/bkt.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "codedkt/rng.hpp"

namespace codedkt::bkt {

namespace {

constexpr double kFloor = 1e-4;

double clamp01(double x) { return std::clamp(x, kFloor, 1.0 - kFloor); }
double clamp_half(double x) { return std::clamp(x, kFloor, 0.5); }

void clamp_params(ProblemParams& p) {
    p.p_init = clamp01(p.p_init);
    p.p_learn = clamp01(p.p_learn);
    p.p_guess = clamp_half(p.p_guess);
    p.p_slip = clamp_half(p.p_slip);
}

double emission(const ProblemParams& p, int state, int obs) {
    // state 0 = unlearned, 1 = learned
    if (state == 0) return obs ? p.p_guess : 1.0 - p.p_guess;
    return obs ? 1.0 - p.p_slip : p.p_slip;
}

struct EmStats {
    double init_learned = 0.0;
    double init_total = 0.0;
    double transitions = 0.0;       // expected U -> L moves
    double unlearned_steps = 0.0;   // expected time in U with a next step
    double guess_hits = 0.0;        // correct while in U
    double unlearned_obs = 0.0;
    double slip_hits = 0.0;         // incorrect while in L
    double learned_obs = 0.0;
};

// Scaled forward-backward over one sequence; accumulates sufficient
// statistics and returns the sequence log-likelihood.
double forward_backward(const std::vector<int>& obs, const ProblemParams& p,
                        EmStats& stats) {
    const size_t n = obs.size();
    std::vector<double> alpha_u(n), alpha_l(n), scale(n);
    double loglik = 0.0;

    alpha_u[0] = (1.0 - p.p_init) * emission(p, 0, obs[0]);
    alpha_l[0] = p.p_init * emission(p, 1, obs[0]);
    scale[0] = alpha_u[0] + alpha_l[0];
    if (scale[0] <= 0.0) return -1e300;
    alpha_u[0] /= scale[0];
    alpha_l[0] /= scale[0];
    loglik += std::log(scale[0]);

    for (size_t t = 1; t < n; ++t) {
        const double to_u = alpha_u[t - 1] * (1.0 - p.p_learn);
        const double to_l = alpha_u[t - 1] * p.p_learn + alpha_l[t - 1];
        alpha_u[t] = to_u * emission(p, 0, obs[t]);
        alpha_l[t] = to_l * emission(p, 1, obs[t]);
        scale[t] = alpha_u[t] + alpha_l[t];
        if (scale[t] <= 0.0) return -1e300;
        alpha_u[t] /= scale[t];
        alpha_l[t] /= scale[t];
        loglik += std::log(scale[t]);
    }

    std::vector<double> beta_u(n), beta_l(n);
    beta_u[n - 1] = 1.0;
    beta_l[n - 1] = 1.0;
    for (size_t t = n - 1; t-- > 0;) {
        const double eu = emission(p, 0, obs[t + 1]);
        const double el = emission(p, 1, obs[t + 1]);
        beta_u[t] = ((1.0 - p.p_learn) * eu * beta_u[t + 1] +
                     p.p_learn * el * beta_l[t + 1]) / scale[t + 1];
        beta_l[t] = el * beta_l[t + 1] / scale[t + 1];
    }

    for (size_t t = 0; t < n; ++t) {
        const double gu = alpha_u[t] * beta_u[t];
        const double gl = alpha_l[t] * beta_l[t];
        const double norm = gu + gl;
        const double gamma_u = norm > 0.0 ? gu / norm : 0.0;
        const double gamma_l = 1.0 - gamma_u;
        if (t == 0) {
            stats.init_learned += gamma_l;
            stats.init_total += 1.0;
        }
        stats.unlearned_obs += gamma_u;
        stats.learned_obs += gamma_l;
        if (obs[t]) {
            stats.guess_hits += gamma_u;
        } else {
            stats.slip_hits += gamma_l;
        }
        if (t + 1 < n) {
            // xi over the U row; L -> U is structurally zero
            const double eu = emission(p, 0, obs[t + 1]);
            const double el = emission(p, 1, obs[t + 1]);
            const double xi_uu = alpha_u[t] * (1.0 - p.p_learn) * eu * beta_u[t + 1] / scale[t + 1];
            const double xi_ul = alpha_u[t] * p.p_learn * el * beta_l[t + 1] / scale[t + 1];
            stats.transitions += xi_ul;
            stats.unlearned_steps += xi_uu + xi_ul;
        }
    }
    return loglik;
}

struct EmFit {
    ProblemParams params;
    double loglik = -1e300;
    std::vector<double> history;
};

EmFit run_em(const std::vector<std::vector<int>>& sequences,
             ProblemParams start, int max_iter, double tol) {
    EmFit fit;
    fit.params = start;
    clamp_params(fit.params);
    double prev = -1e300;
    for (int iter = 0; iter < max_iter; ++iter) {
        EmStats stats;
        double loglik = 0.0;
        for (const auto& obs : sequences) {
            if (!obs.empty()) loglik += forward_backward(obs, fit.params, stats);
        }
        fit.loglik = loglik;
        fit.history.push_back(loglik);
        if (iter > 0 && loglik - prev < tol) break;
        prev = loglik;

        ProblemParams next = fit.params;
        if (stats.init_total > 0.0) next.p_init = stats.init_learned / stats.init_total;
        if (stats.unlearned_steps > 0.0) next.p_learn = stats.transitions / stats.unlearned_steps;
        if (stats.unlearned_obs > 0.0) next.p_guess = stats.guess_hits / stats.unlearned_obs;
        if (stats.learned_obs > 0.0) next.p_slip = stats.slip_hits / stats.learned_obs;
        clamp_params(next);
        fit.params = next;
    }
    return fit;
}

EmFit fit_one(const std::vector<std::vector<int>>& sequences,
              const FitOptions& options, uint64_t salt) {
    Rng rng(mix64(options.seed, salt));
    EmFit best;
    for (int restart = 0; restart < std::max(1, options.restarts); ++restart) {
        ProblemParams start;
        start.p_init = rng.uniform(0.05, 0.95);
        start.p_learn = rng.uniform(0.05, 0.95);
        start.p_guess = rng.uniform(0.02, 0.45);
        start.p_slip = rng.uniform(0.02, 0.45);
        EmFit fit = run_em(sequences, start, options.max_iter, options.tol);
        if (fit.loglik > best.loglik) best = std::move(fit);
    }
    return best;
}

}  // namespace

const ProblemParams& Params::for_problem(int q) const {
    auto it = per_problem.find(q);
    return it == per_problem.end() ? pooled : it->second;
}

double predict(double p_know, double guess, double slip) {
    return p_know * (1.0 - slip) + (1.0 - p_know) * guess;
}

double update(double p_know, int observation, double guess, double slip,
              double learn) {
    const double like_known = observation ? 1.0 - slip : slip;
    const double like_unknown = observation ? guess : 1.0 - guess;
    const double denom = p_know * like_known + (1.0 - p_know) * like_unknown;
    if (denom <= 0.0) return p_know;
    const double posterior = p_know * like_known / denom;
    return posterior + (1.0 - posterior) * learn;
}

Params fit(const std::map<int, std::vector<std::vector<int>>>& sequences_by_problem,
           const FitOptions& options, FitDiagnostics* diagnostics) {
    if (sequences_by_problem.empty()) {
        throw std::runtime_error("bkt fit requires at least one observed problem");
    }

    std::vector<std::vector<int>> pooled_sequences;
    for (const auto& [q, seqs] : sequences_by_problem) {
        pooled_sequences.insert(pooled_sequences.end(), seqs.begin(), seqs.end());
    }
    EmFit pooled = fit_one(pooled_sequences, options, 0x9001dULL);

    Params params;
    params.pooled = pooled.params;
    if (diagnostics) diagnostics->loglik_history[-1] = pooled.history;

    for (const auto& [q, seqs] : sequences_by_problem) {
        size_t observations = 0;
        for (const auto& s : seqs) observations += s.size();
        if (static_cast<int>(observations) < options.min_observations) {
            params.per_problem[q] = pooled.params;
            params.used_pooled[q] = true;
            continue;
        }
        EmFit fit = fit_one(seqs, options, 0xb0b0ULL + static_cast<uint64_t>(q));
        params.per_problem[q] = fit.params;
        params.used_pooled[q] = false;
        if (diagnostics) diagnostics->loglik_history[q] = fit.history;
    }
    return params;
}

std::string params_to_csv(const Params& params,
                          const std::vector<std::string>& problem_ids) {
    std::string out = "problem,L0,T,G,S,pooled_fallback\n";
    char buf[160];
    for (const auto& [q, p] : params.per_problem) {
        const std::string& name =
            q >= 0 && q < static_cast<int>(problem_ids.size())
                ? problem_ids[static_cast<size_t>(q)]
                : std::to_string(q);
        const bool pooled = params.used_pooled.count(q) && params.used_pooled.at(q);
        std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.6f,%d\n", name.c_str(),
                      p.p_init, p.p_learn, p.p_guess, p.p_slip, pooled ? 1 : 0);
        out += buf;
    }
    return out;
}

}  // namespace codedkt::bkt
