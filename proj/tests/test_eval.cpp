#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "codedkt/eval.hpp"
#include "codedkt/rng.hpp"

using namespace codedkt;

namespace {

// O(n^2) pair-counting oracle: P(score+ > score-) + 0.5 P(tie).
std::optional<double> auc_pairs(const std::vector<int>& labels,
                                const std::vector<double>& scores) {
    double wins = 0.0, ties = 0.0;
    long pos = 0, neg = 0;
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i]) ++pos; else ++neg;
    }
    if (pos == 0 || neg == 0) return std::nullopt;
    for (size_t i = 0; i < labels.size(); ++i) {
        if (!labels[i]) continue;
        for (size_t j = 0; j < labels.size(); ++j) {
            if (labels[j]) continue;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) ties += 1.0;
        }
    }
    return (wins + 0.5 * ties) / (static_cast<double>(pos) * static_cast<double>(neg));
}

eval::PredictionRecord record(int t, int problem, double score, int label,
                              bool first) {
    return {t, problem, score, label, first};
}

}  // namespace

TEST_CASE("auc on the tiny worked examples") {
    CHECK(*eval::auc({1, 0}, {0.9, 0.1}) == 1.0);
    CHECK(*eval::auc({1, 0}, {0.5, 0.5}) == 0.5);
    CHECK(*eval::auc({1, 0, 1, 0}, {0.8, 0.8, 0.3, 0.2}) ==
          *auc_pairs({1, 0, 1, 0}, {0.8, 0.8, 0.3, 0.2}));
}

TEST_CASE("single-class inputs yield null") {
    CHECK_FALSE(eval::auc({1, 1}, {0.5, 0.7}).has_value());
    CHECK_FALSE(eval::auc({0, 0}, {0.5, 0.7}).has_value());
    CHECK_FALSE(eval::auc({}, {}).has_value());
}

TEST_CASE("rank auc equals the pair-counting oracle on random ties") {
    Rng rng(808);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 2 + static_cast<int>(rng.below(99));
        std::vector<int> labels;
        std::vector<double> scores;
        for (int i = 0; i < n; ++i) {
            labels.push_back(static_cast<int>(rng.below(2)));
            // coarse grid forces plenty of exact ties
            scores.push_back(static_cast<double>(rng.below(8)) / 8.0);
        }
        const auto fast = eval::auc(labels, scores);
        const auto slow = auc_pairs(labels, scores);
        REQUIRE(fast.has_value() == slow.has_value());
        if (fast.has_value()) {
            CHECK(std::fabs(*fast - *slow) < 1e-12);
        }
    }
}

TEST_CASE("auc is invariant to record order and to monotone score maps") {
    Rng rng(4);
    std::vector<int> labels;
    std::vector<double> scores;
    for (int i = 0; i < 60; ++i) {
        labels.push_back(static_cast<int>(rng.below(2)));
        scores.push_back(rng.uniform01());
    }
    const double base = *eval::auc(labels, scores);

    std::vector<size_t> perm(labels.size());
    for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    Rng shuffle_rng(5);
    shuffle_rng.shuffle(perm);
    std::vector<int> l2;
    std::vector<double> s2;
    for (size_t i : perm) {
        l2.push_back(labels[i]);
        s2.push_back(scores[i]);
    }
    CHECK(*eval::auc(l2, s2) == base);

    std::vector<double> affine;
    for (double s : scores) affine.push_back(0.3 * s + 0.1);
    CHECK(*eval::auc(labels, affine) == base);
}

TEST_CASE("decompose groups transitions by target problem") {
    eval::StudentTrace trace;
    trace.student = "s1";
    trace.records = {record(1, 2, 0.7, 1, true), record(2, 3, 0.4, 0, true),
                     record(3, 2, 0.6, 0, false)};
    const auto run = eval::decompose({trace});
    CHECK(run.n_predictions == 3);
    CHECK(run.n_first == 2);
    REQUIRE(run.per_problem.count(2));
    CHECK(run.per_problem.at(2).n_predictions == 2);
    CHECK(run.per_problem.at(2).n_first == 1);
    CHECK(run.per_problem.at(3).n_predictions == 1);

    int total = 0;
    for (const auto& [q, group] : run.per_problem) total += group.n_predictions;
    CHECK(total == run.n_predictions);
}

TEST_CASE("first-attempt records are exactly the flagged subset") {
    Rng rng(66);
    std::vector<eval::StudentTrace> traces;
    int expected_first = 0;
    for (int s = 0; s < 20; ++s) {
        eval::StudentTrace trace;
        trace.student = "s" + std::to_string(s);
        const int n = 1 + static_cast<int>(rng.below(12));
        for (int t = 1; t <= n; ++t) {
            const bool first = rng.below(2) == 0;
            expected_first += first ? 1 : 0;
            trace.records.push_back(record(t, static_cast<int>(rng.below(4)),
                                           rng.uniform01(),
                                           static_cast<int>(rng.below(2)), first));
        }
        traces.push_back(std::move(trace));
    }
    const auto run = eval::decompose(traces);
    CHECK(run.n_first == expected_first);

    // recompute the first-attempt auc by hand from the flagged subset
    std::vector<int> labels;
    std::vector<double> scores;
    for (const auto& trace : traces) {
        for (const auto& rec : trace.records) {
            if (rec.first_attempt) {
                labels.push_back(rec.label);
                scores.push_back(rec.score);
            }
        }
    }
    const auto expected = eval::auc(labels, scores);
    REQUIRE(run.first_attempt_auc.has_value() == expected.has_value());
    if (expected) CHECK(*run.first_attempt_auc == *expected);
}

TEST_CASE("identical runs aggregate with zero spread") {
    eval::StudentTrace trace;
    trace.student = "s";
    trace.records = {record(1, 0, 0.9, 1, true), record(2, 0, 0.2, 0, false)};
    const auto one = eval::decompose({trace});
    std::vector<eval::RunEval> runs(10, one);
    const auto report = eval::aggregate_runs("dkt", "cafe", {1, 2, 3}, runs);
    CHECK(report.overall.n_runs == 10);
    CHECK(report.overall.stddev == 0.0);
    CHECK(report.overall.mean == *one.overall_auc);
}

TEST_CASE("null runs are excluded from aggregation") {
    const auto agg = eval::aggregate_values({0.5, std::nullopt, 0.7});
    CHECK(agg.n_runs == 2);
    CHECK(agg.mean == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("incorrect-attempt recall and precision at one half") {
    eval::StudentTrace trace;
    trace.student = "s";
    // two actual failures, one flagged; two flagged, one right
    trace.records = {record(1, 0, 0.3, 0, false), record(2, 0, 0.7, 0, false),
                     record(3, 0, 0.2, 1, false), record(4, 0, 0.9, 1, false)};
    const auto run = eval::decompose({trace});
    CHECK(run.recall_incorrect == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(run.precision_incorrect == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("report serialization carries aggregates and problem names") {
    eval::StudentTrace trace;
    trace.student = "s";
    trace.records = {record(1, 0, 0.9, 1, true), record(2, 1, 0.2, 0, false)};
    const auto run = eval::decompose({trace});
    const auto report = eval::aggregate_runs("dkt", "beef", {7}, {run});
    const std::string json = eval::report_to_json(report, {"P101", "P102"});
    CHECK(json.find("\"model\": \"dkt\"") != std::string::npos);
    CHECK(json.find("P101") != std::string::npos);
    const std::string csv = eval::report_to_csv(report, {"P101", "P102"});
    CHECK(csv.find("ALL,") != std::string::npos);
    CHECK(csv.find("P101,") != std::string::npos);
}

TEST_CASE("heatmaps carry one column per transition and frame accuracy") {
    eval::StudentTrace trace;
    trace.student = "s";
    trace.records = {record(1, 0, 0.8, 1, true), record(2, 1, 0.3, 1, false)};
    trace.full_rows = {{0.8, 0.1, 0.5}, {0.6, 0.3, 0.4}};
    trace.attempted = {0, 1};
    trace.labels = {1, 1};
    const auto map = eval::build_heatmap(trace, {"P1", "P2", "P3"});
    REQUIRE(map.probabilities.size() == 3);
    REQUIRE(map.probabilities[0].size() == 2);
    CHECK(map.accurate[0] == 1);  // 0.8 >= 0.5 and label 1
    CHECK(map.accurate[1] == 0);  // 0.3 < 0.5 but label 1

    const std::string csv = eval::heatmap_to_csv(map);
    CHECK(csv.find("P1,0.800000,0.600000") != std::string::npos);

    const std::string svg = eval::heatmap_to_svg(map);
    // darkest fill for the highest probability in the grid, lightest for 0.1
    CHECK(svg.find("rgb(51,51,51)") != std::string::npos);   // p = 0.8
    CHECK(svg.find("rgb(230,230,230)") != std::string::npos); // p = 0.1
    CHECK(svg.find("stroke=\"black\"") != std::string::npos);
    CHECK(svg.find("stroke=\"#999999\"") != std::string::npos);
}

TEST_CASE("heatmaps require retained rows") {
    eval::StudentTrace trace;
    trace.student = "s";
    trace.records = {record(1, 0, 0.8, 1, true)};
    CHECK_THROWS_AS(eval::build_heatmap(trace, {"P1"}), std::runtime_error);
}

TEST_CASE("colormap endpoints are black and white") {
    eval::StudentTrace trace;
    trace.student = "s";
    trace.records = {record(1, 0, 1.0, 1, true)};
    trace.full_rows = {{1.0, 0.0}};
    trace.attempted = {0};
    trace.labels = {1};
    const auto map = eval::build_heatmap(trace, {"P1", "P2"});
    const std::string svg = eval::heatmap_to_svg(map);
    CHECK(svg.find("rgb(0,0,0)") != std::string::npos);
    CHECK(svg.find("rgb(255,255,255)") != std::string::npos);
}
