#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <vector>

#include "codedkt/bkt.hpp"
#include "codedkt/rng.hpp"

using namespace codedkt;

namespace {

// Independent simulator for generate-and-refit checks.
std::vector<std::vector<int>> simulate(const bkt::ProblemParams& truth,
                                       int students, int attempts, Rng& rng) {
    std::vector<std::vector<int>> out;
    out.reserve(static_cast<size_t>(students));
    for (int s = 0; s < students; ++s) {
        std::vector<int> obs;
        bool known = rng.uniform01() < truth.p_init;
        for (int t = 0; t < attempts; ++t) {
            const double p_correct = known ? 1.0 - truth.p_slip : truth.p_guess;
            obs.push_back(rng.uniform01() < p_correct ? 1 : 0);
            if (!known && rng.uniform01() < truth.p_learn) known = true;
        }
        out.push_back(std::move(obs));
    }
    return out;
}

}  // namespace

TEST_CASE("prediction blends mastery with guess and slip") {
    CHECK(bkt::predict(1.0, 0.3, 0.0) == 1.0);
    CHECK(bkt::predict(0.0, 0.2, 0.1) == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(bkt::predict(0.5, 0.2, 0.1) == doctest::Approx(0.55).epsilon(1e-15));
}

TEST_CASE("noiseless evidence is decisive") {
    CHECK(bkt::update(0.5, 1, 0.0, 0.0, 0.0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(bkt::update(0.5, 0, 0.0, 0.0, 0.0) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("bayes update matches the hand-worked value") {
    // posterior 0.45/0.55 = 0.8182, then + 0.1818 * 0.3 = 0.8727
    const double updated = bkt::update(0.5, 1, 0.2, 0.1, 0.3);
    CHECK(updated == doctest::Approx(0.872727272727).epsilon(1e-9));
}

TEST_CASE("zero-probability evidence returns the prior unchanged") {
    // S = 0 and mastered, yet an incorrect observation arrives
    CHECK(bkt::update(1.0, 0, 0.2, 0.0, 0.3) == 1.0);
}

TEST_CASE("em recovers generating parameters within five points") {
    const bkt::ProblemParams truth{0.3, 0.2, 0.15, 0.1};
    Rng rng(20240 + 1);
    std::map<int, std::vector<std::vector<int>>> data;
    data[0] = simulate(truth, 500, 20, rng);

    bkt::FitOptions options;
    options.seed = 91;
    const bkt::Params fitted = bkt::fit(data, options);
    const bkt::ProblemParams& p = fitted.for_problem(0);
    CHECK(std::fabs(p.p_init - truth.p_init) < 0.05);
    CHECK(std::fabs(p.p_learn - truth.p_learn) < 0.05);
    CHECK(std::fabs(p.p_guess - truth.p_guess) < 0.05);
    CHECK(std::fabs(p.p_slip - truth.p_slip) < 0.05);
}

TEST_CASE("log likelihood never decreases across em iterations") {
    const bkt::ProblemParams truth{0.4, 0.15, 0.2, 0.15};
    Rng rng(5150);
    std::map<int, std::vector<std::vector<int>>> data;
    data[0] = simulate(truth, 120, 12, rng);

    bkt::FitOptions options;
    options.seed = 3;
    bkt::FitDiagnostics diagnostics;
    bkt::fit(data, options, &diagnostics);
    REQUIRE(diagnostics.loglik_history.count(0));
    const auto& history = diagnostics.loglik_history.at(0);
    REQUIRE(history.size() >= 2);
    for (size_t i = 1; i < history.size(); ++i) {
        CHECK(history[i] >= history[i - 1] - 1e-9);
    }
}

TEST_CASE("all-correct data pushes parameters to a clamp boundary") {
    std::map<int, std::vector<std::vector<int>>> data;
    for (int s = 0; s < 30; ++s) data[0].push_back(std::vector<int>(10, 1));
    bkt::FitOptions options;
    options.seed = 8;
    bkt::FitDiagnostics diagnostics;
    const bkt::Params fitted = bkt::fit(data, options, &diagnostics);
    const bkt::ProblemParams& p = fitted.for_problem(0);
    const bool at_boundary = p.p_init > 0.99 || p.p_guess >= 0.5 - 1e-9;
    CHECK(at_boundary);
    const auto& history = diagnostics.loglik_history.at(0);
    for (size_t i = 1; i < history.size(); ++i) {
        CHECK(history[i] >= history[i - 1] - 1e-9);
    }
}

TEST_CASE("sparse problems fall back to the pooled fit") {
    const bkt::ProblemParams truth{0.3, 0.2, 0.15, 0.1};
    Rng rng(777);
    std::map<int, std::vector<std::vector<int>>> data;
    data[0] = simulate(truth, 100, 10, rng);
    data[1] = {{1}};  // single observation
    bkt::FitOptions options;
    options.seed = 5;
    const bkt::Params fitted = bkt::fit(data, options);
    REQUIRE(fitted.used_pooled.count(1));
    CHECK(fitted.used_pooled.at(1));
    CHECK_FALSE(fitted.used_pooled.at(0));
    CHECK(fitted.for_problem(1).p_init == fitted.pooled.p_init);
}

TEST_CASE("fitting with no problems is fatal") {
    bkt::FitOptions options;
    CHECK_THROWS_AS(bkt::fit({}, options), std::runtime_error);
}

TEST_CASE("parameters respect clamps after fitting") {
    Rng rng(31337);
    std::map<int, std::vector<std::vector<int>>> data;
    for (int q = 0; q < 3; ++q) {
        const bkt::ProblemParams truth{rng.uniform(0.1, 0.9), rng.uniform(0.05, 0.4),
                                       rng.uniform(0.05, 0.45), rng.uniform(0.05, 0.45)};
        data[q] = simulate(truth, 60, 8, rng);
    }
    bkt::FitOptions options;
    options.seed = 12;
    const bkt::Params fitted = bkt::fit(data, options);
    for (const auto& [q, p] : fitted.per_problem) {
        CHECK(p.p_init >= 0.0);
        CHECK(p.p_init <= 1.0);
        CHECK(p.p_learn >= 0.0);
        CHECK(p.p_learn <= 1.0);
        CHECK(p.p_guess <= 0.5);
        CHECK(p.p_slip <= 0.5);
    }
}

TEST_CASE("fits are deterministic per seed") {
    const bkt::ProblemParams truth{0.25, 0.2, 0.2, 0.1};
    Rng rng(4242);
    std::map<int, std::vector<std::vector<int>>> data;
    data[0] = simulate(truth, 80, 10, rng);
    bkt::FitOptions options;
    options.seed = 1001;
    const bkt::Params a = bkt::fit(data, options);
    const bkt::Params b = bkt::fit(data, options);
    CHECK(a.for_problem(0).p_init == b.for_problem(0).p_init);
    CHECK(a.for_problem(0).p_learn == b.for_problem(0).p_learn);
    CHECK(a.for_problem(0).p_guess == b.for_problem(0).p_guess);
    CHECK(a.for_problem(0).p_slip == b.for_problem(0).p_slip);
}

TEST_CASE("parameter export lists one row per problem") {
    bkt::Params params;
    params.per_problem[0] = {0.3, 0.2, 0.15, 0.1};
    params.per_problem[1] = {0.4, 0.1, 0.25, 0.2};
    const std::string csv = bkt::params_to_csv(params, {"P1", "P2"});
    CHECK(csv.find("problem,L0,T,G,S") != std::string::npos);
    CHECK(csv.find("P1,0.300000") != std::string::npos);
    CHECK(csv.find("P2,0.400000") != std::string::npos);
}
