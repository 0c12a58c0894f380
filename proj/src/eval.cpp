#include "codedkt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace codedkt::eval {

std::optional<double> auc(const std::vector<int>& labels,
                          const std::vector<double>& scores) {
    if (labels.size() != scores.size()) {
        throw std::runtime_error("auc: labels and scores differ in length");
    }
    const size_t n = labels.size();
    size_t n_pos = 0;
    for (int y : labels) n_pos += y ? 1 : 0;
    const size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::nullopt;

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return scores[a] < scores[b];
    });

    // Average ranks over tied scores, accumulate positive rank sum.
    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (size_t k = i; k <= j; ++k) {
            if (labels[order[k]]) rank_sum_pos += avg_rank;
        }
        i = j + 1;
    }
    const double u = rank_sum_pos -
                     static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

RunEval decompose(const std::vector<StudentTrace>& traces) {
    RunEval run;
    std::vector<int> labels, first_labels;
    std::vector<double> scores, first_scores;
    std::map<int, std::pair<std::vector<int>, std::vector<double>>> by_problem;
    std::map<int, std::pair<std::vector<int>, std::vector<double>>> by_problem_first;

    int predicted_fail_hits = 0, predicted_fail = 0, actual_fail = 0;
    for (const auto& trace : traces) {
        for (const auto& rec : trace.records) {
            labels.push_back(rec.label);
            scores.push_back(rec.score);
            auto& group = by_problem[rec.problem];
            group.first.push_back(rec.label);
            group.second.push_back(rec.score);
            if (rec.first_attempt) {
                first_labels.push_back(rec.label);
                first_scores.push_back(rec.score);
                auto& fg = by_problem_first[rec.problem];
                fg.first.push_back(rec.label);
                fg.second.push_back(rec.score);
            }
            const bool predicted_incorrect = rec.score < 0.5;
            if (predicted_incorrect) ++predicted_fail;
            if (rec.label == 0) ++actual_fail;
            if (predicted_incorrect && rec.label == 0) ++predicted_fail_hits;
        }
    }

    run.n_predictions = static_cast<int>(labels.size());
    run.n_first = static_cast<int>(first_labels.size());
    run.overall_auc = auc(labels, scores);
    run.first_attempt_auc = auc(first_labels, first_scores);
    run.recall_incorrect =
        actual_fail > 0 ? static_cast<double>(predicted_fail_hits) / actual_fail : 0.0;
    run.precision_incorrect =
        predicted_fail > 0 ? static_cast<double>(predicted_fail_hits) / predicted_fail : 0.0;

    for (const auto& [problem, group] : by_problem) {
        GroupEval ge;
        ge.n_predictions = static_cast<int>(group.first.size());
        ge.overall_auc = auc(group.first, group.second);
        if (auto it = by_problem_first.find(problem); it != by_problem_first.end()) {
            ge.n_first = static_cast<int>(it->second.first.size());
            ge.first_auc = auc(it->second.first, it->second.second);
        }
        run.per_problem[problem] = std::move(ge);
    }
    return run;
}

Aggregate aggregate_values(const std::vector<std::optional<double>>& values) {
    Aggregate agg;
    double sum = 0.0;
    for (const auto& v : values) {
        if (v.has_value()) {
            sum += *v;
            ++agg.n_runs;
        }
    }
    if (agg.n_runs == 0) return agg;
    agg.mean = sum / agg.n_runs;
    if (agg.n_runs > 1) {
        double ss = 0.0;
        for (const auto& v : values) {
            if (v.has_value()) ss += (*v - agg.mean) * (*v - agg.mean);
        }
        agg.stddev = std::sqrt(ss / (agg.n_runs - 1));
    }
    return agg;
}

Report aggregate_runs(const std::string& model, const std::string& config_hash,
                      const std::vector<uint64_t>& seeds,
                      const std::vector<RunEval>& runs) {
    Report report;
    report.model = model;
    report.config_hash = config_hash;
    report.seeds = seeds;
    report.runs = runs;

    std::vector<std::optional<double>> overall, first;
    std::map<int, std::vector<std::optional<double>>> po, pf;
    std::map<int, double> pn;
    std::map<int, int> pc;
    for (const auto& run : runs) {
        overall.push_back(run.overall_auc);
        first.push_back(run.first_attempt_auc);
        for (const auto& [problem, group] : run.per_problem) {
            po[problem].push_back(group.overall_auc);
            pf[problem].push_back(group.first_auc);
            pn[problem] += group.n_predictions;
            pc[problem] += 1;
        }
    }
    report.overall = aggregate_values(overall);
    report.first_attempt = aggregate_values(first);
    for (const auto& [problem, values] : po) {
        report.per_problem_overall[problem] = aggregate_values(values);
        report.per_problem_first[problem] = aggregate_values(pf[problem]);
        report.per_problem_mean_n[problem] = pn[problem] / pc[problem];
    }
    return report;
}

namespace {

nlohmann::json optional_json(const std::optional<double>& v) {
    if (v.has_value()) return *v;
    return nullptr;
}

nlohmann::json aggregate_json(const Aggregate& agg) {
    return {{"mean", agg.mean}, {"stddev", agg.stddev}, {"n_runs", agg.n_runs}};
}

std::string problem_name(const std::vector<std::string>& ids, int q) {
    if (q >= 0 && q < static_cast<int>(ids.size())) return ids[static_cast<size_t>(q)];
    return std::to_string(q);
}

}  // namespace

std::string report_to_json(const Report& report,
                           const std::vector<std::string>& problem_ids) {
    nlohmann::json doc;
    doc["model"] = report.model;
    doc["config_hash"] = report.config_hash;
    doc["seeds"] = report.seeds;

    nlohmann::json runs = nlohmann::json::array();
    for (const auto& run : report.runs) {
        nlohmann::json r;
        r["overall_auc"] = optional_json(run.overall_auc);
        r["first_attempt_auc"] = optional_json(run.first_attempt_auc);
        r["n_predictions"] = run.n_predictions;
        r["n_first"] = run.n_first;
        r["recall_incorrect"] = run.recall_incorrect;
        r["precision_incorrect"] = run.precision_incorrect;
        nlohmann::json per_problem;
        for (const auto& [problem, group] : run.per_problem) {
            per_problem[problem_name(problem_ids, problem)] = {
                {"overall_auc", optional_json(group.overall_auc)},
                {"first_auc", optional_json(group.first_auc)},
                {"n_predictions", group.n_predictions},
                {"n_first", group.n_first}};
        }
        r["per_problem"] = std::move(per_problem);
        runs.push_back(std::move(r));
    }
    doc["runs"] = std::move(runs);

    doc["aggregate"]["overall_auc"] = aggregate_json(report.overall);
    doc["aggregate"]["first_attempt_auc"] = aggregate_json(report.first_attempt);
    nlohmann::json per_problem;
    for (const auto& [problem, agg] : report.per_problem_overall) {
        per_problem[problem_name(problem_ids, problem)] = {
            {"overall", aggregate_json(agg)},
            {"first", aggregate_json(report.per_problem_first.at(problem))},
            {"mean_n_predictions", report.per_problem_mean_n.at(problem)}};
    }
    doc["aggregate"]["per_problem"] = std::move(per_problem);
    return doc.dump(2);
}

std::string report_to_csv(const Report& report,
                          const std::vector<std::string>& problem_ids) {
    std::string out =
        "problem,overall_auc_mean,overall_auc_std,first_auc_mean,first_auc_std,"
        "n_runs,mean_n_predictions\n";
    char buf[256];
    std::snprintf(buf, sizeof(buf), "ALL,%.6f,%.6f,%.6f,%.6f,%d,\n",
                  report.overall.mean, report.overall.stddev,
                  report.first_attempt.mean, report.first_attempt.stddev,
                  report.overall.n_runs);
    out += buf;
    for (const auto& [problem, agg] : report.per_problem_overall) {
        const Aggregate& first = report.per_problem_first.at(problem);
        std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.6f,%d,%.2f\n",
                      problem_name(problem_ids, problem).c_str(), agg.mean,
                      agg.stddev, first.mean, first.stddev, agg.n_runs,
                      report.per_problem_mean_n.at(problem));
        out += buf;
    }
    return out;
}

Heatmap build_heatmap(const StudentTrace& trace,
                      const std::vector<std::string>& problem_ids) {
    if (trace.full_rows.empty()) {
        throw std::runtime_error("heatmap requires full prediction rows for student " +
                                 trace.student);
    }
    Heatmap map;
    map.problem_ids = problem_ids;
    const size_t columns = trace.full_rows.size();
    const size_t m = problem_ids.size();
    map.probabilities.assign(m, std::vector<double>(columns, 0.0));
    for (size_t t = 0; t < columns; ++t) {
        if (trace.full_rows[t].size() != m) {
            throw std::runtime_error("heatmap row has wrong width");
        }
        for (size_t q = 0; q < m; ++q) map.probabilities[q][t] = trace.full_rows[t][q];
    }
    map.attempted = trace.attempted;
    map.labels = trace.labels;
    map.accurate.resize(columns);
    for (size_t t = 0; t < columns; ++t) {
        const double p = map.probabilities[static_cast<size_t>(map.attempted[t])][t];
        map.accurate[t] = ((p >= 0.5) == (map.labels[t] == 1)) ? 1 : 0;
    }
    return map;
}

std::string heatmap_to_csv(const Heatmap& map) {
    std::string out;
    char buf[64];
    const size_t columns = map.attempted.size();
    out += "# probabilities (rows = problems, columns = transitions)\n";
    for (size_t q = 0; q < map.probabilities.size(); ++q) {
        out += map.problem_ids[q];
        for (size_t t = 0; t < columns; ++t) {
            std::snprintf(buf, sizeof(buf), ",%.6f", map.probabilities[q][t]);
            out += buf;
        }
        out.push_back('\n');
    }
    auto int_layer = [&](const char* name, const std::vector<int>& layer) {
        out += "# ";
        out += name;
        out.push_back('\n');
        for (size_t t = 0; t < layer.size(); ++t) {
            if (t) out.push_back(',');
            out += std::to_string(layer[t]);
        }
        out.push_back('\n');
    };
    int_layer("attempted problem index per column", map.attempted);
    int_layer("ground truth label per column", map.labels);
    int_layer("prediction accurate per column (threshold 0.5)", map.accurate);
    return out;
}

std::string heatmap_to_svg(const Heatmap& map) {
    const int cell = 26;
    const int left = 90;
    const int top = 30;
    const size_t m = map.probabilities.size();
    const size_t columns = map.attempted.size();
    const int width = left + cell * static_cast<int>(columns) + 10;
    const int height = top + cell * static_cast<int>(m) + 10;

    std::string svg;
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\">\n",
                  width, height);
    svg += buf;
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    for (size_t q = 0; q < m; ++q) {
        std::snprintf(buf, sizeof(buf),
                      "<text x=\"4\" y=\"%d\" font-size=\"11\" font-family=\"monospace\">%s</text>\n",
                      top + static_cast<int>(q) * cell + cell / 2 + 4,
                      map.problem_ids[q].c_str());
        svg += buf;
    }
    for (size_t t = 0; t < columns; ++t) {
        std::snprintf(buf, sizeof(buf),
                      "<text x=\"%d\" y=\"%d\" font-size=\"10\" font-family=\"monospace\">%zu</text>\n",
                      left + static_cast<int>(t) * cell + cell / 2 - 4, top - 8, t + 1);
        svg += buf;
    }

    for (size_t q = 0; q < m; ++q) {
        for (size_t t = 0; t < columns; ++t) {
            const double p = map.probabilities[q][t];
            const int shade = static_cast<int>(std::lround(255.0 * (1.0 - p)));
            const bool marked = map.attempted[t] == static_cast<int>(q);
            const char* stroke = !marked ? "none" : (map.accurate[t] ? "black" : "#999999");
            std::snprintf(buf, sizeof(buf),
                          "<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" "
                          "fill=\"rgb(%d,%d,%d)\" stroke=\"%s\" stroke-width=\"2\"/>\n",
                          left + static_cast<int>(t) * cell,
                          top + static_cast<int>(q) * cell, cell - 2, cell - 2,
                          shade, shade, shade, stroke);
            svg += buf;
            if (marked) {
                const int luma = shade;
                std::snprintf(buf, sizeof(buf),
                              "<text x=\"%d\" y=\"%d\" font-size=\"11\" font-family=\"monospace\" "
                              "fill=\"%s\">%d</text>\n",
                              left + static_cast<int>(t) * cell + cell / 2 - 6,
                              top + static_cast<int>(q) * cell + cell / 2 + 4,
                              luma < 128 ? "white" : "black", map.labels[t]);
                svg += buf;
            }
        }
    }
    svg += "</svg>\n";
    return svg;
}

}  // namespace codedkt::eval
