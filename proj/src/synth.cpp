#include "codedkt/synth.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "codedkt/csv.hpp"
#include "codedkt/eval.hpp"
#include "codedkt/rng.hpp"

namespace codedkt::synth {

namespace fs = std::filesystem;

namespace {

constexpr int kSkillCount = 6;

struct Fragment {
    std::vector<const char*> mastered;
    std::vector<const char*> naive;
};

// Statement fragments per skill. The "mastered" variants contain the idiom
// the skill is about; the "naive" variants reach the same effect without it.
const Fragment kFragments[kSkillCount] = {
    // conjunction
    {{"if (a > 0 && b > 0) { result = result + 2; }",
      "if (a >= 1 && flag) { result = result + 3; }"},
     {"if (a > 0) { if (b > 0) { result = result + 2; } }",
      "if (a >= 1) { if (flag) { result = result + 3; } }"}},
    // disjunction
    {{"if (a < 0 || b < 0) { result = 0; }",
      "if (flag || a == 0) { result = result + 1; }"},
     {"if (a < 0) { result = 0; } if (b < 0) { result = 0; }",
      "if (flag) { result = result + 1; } if (a == 0) { result = result + 1; }"}},
    // negation
    {{"if (!flag) { result = result - 1; }",
      "boolean calm = !flag; if (calm) { result = result - 1; }"},
     {"if (flag == false) { result = result - 1; }",
      "boolean calm = flag == false; if (calm) { result = result - 1; }"}},
    // else-if chain
    {{"if (x > 10) { y = 2; } else if (x > 5) { y = 1; } else { y = 0; }",
      "if (b > 8) { result = 8; } else if (b > 4) { result = 4; } else { result = 1; }"},
     {"if (x > 10) { y = 2; } if (x > 5) { y = 1; } if (x <= 5) { y = 0; }",
      "if (b > 8) { result = 8; } if (b > 4) { result = 4; } if (b <= 4) { result = 1; }"}},
    // library call
    {{"int d = Math.abs(a - b); result = result + d;",
      "result = result + Math.max(a, b);"},
     {"int d = a - b; if (d < 0) { d = 0 - d; } result = result + d;",
      "if (a > b) { result = result + a; } else { result = result + b; }"}},
    // boolean-expression return
    {{"return result > 0 && flag;", "return !flag || result > 2;"},
     {"if (result > 0) { if (flag) { return true; } } return false;",
      "if (flag == false) { return true; } if (result > 2) { return true; } return false;"}},
};

const char* kFillers[] = {"int step = 1;", "int step = 2;", "int count = 0;",
                          "y = y + 1;"};

// Failing attempts usually look unfinished. The leftover marker predicts the
// submission's own correctness almost perfectly, yet says nothing about the
// future beyond what the correctness bit already tells the tracer.
const char* kUnfinished[] = {"int unfinished = 1;", "int errorCode = 1;"};

struct StudentState {
    std::vector<uint8_t> mastered;  // per skill
};

std::string make_code(int problem_index, const std::vector<int>& required,
                      const std::vector<uint8_t>& mastered, CodeMode mode,
                      double unmastered_rate, int label, Rng& rng) {
    if (mode == CodeMode::None) return "";
    std::string body;
    body += "public boolean solveP" + std::to_string(problem_index + 1) +
            "(int a, int b, boolean flag) {\n";
    body += "    int result = 0;\n    int x = a;\n    int y = b;\n";
    body += "    ";
    body += kFillers[rng.below(std::size(kFillers))];
    body += "\n";
    if (label == 0 && rng.uniform01() < 0.8) {
        body += "    ";
        body += kUnfinished[rng.below(std::size(kUnfinished))];
        body += "\n";
    }

    bool returned = false;
    for (int skill : required) {
        bool use_marker;
        if (mode == CodeMode::Random) {
            use_marker = rng.uniform01() < 0.3 + unmastered_rate;
        } else {
            use_marker = mastered[static_cast<size_t>(skill)]
                             ? true
                             : rng.uniform01() < unmastered_rate;
        }
        const Fragment& frag = kFragments[skill];
        const auto& pool = use_marker ? frag.mastered : frag.naive;
        const char* text = pool[rng.below(pool.size())];
        body += "    ";
        body += text;
        body += "\n";
        if (skill == 5) returned = true;  // the return-skill fragment returns
    }
    if (!returned) {
        body += rng.uniform01() < 0.5
                    ? "    return result > 0;\n"
                    : "    if (result > 0) { return true; }\n    return false;\n";
    }
    body += "}\n";
    return body;
}

std::string corrupt(std::string code, Rng& rng) {
    if (code.empty()) return code;
    switch (rng.below(3)) {
        case 0: {  // drop a structural character
            for (int tries = 0; tries < 20; ++tries) {
                const size_t pos = static_cast<size_t>(rng.below(code.size()));
                if (code[pos] == '{' || code[pos] == '}' || code[pos] == ')') {
                    code.erase(pos, 1);
                    return code;
                }
            }
            code.erase(code.size() / 2, 1);
            return code;
        }
        case 1:  // inject garbage
            code.insert(static_cast<size_t>(rng.below(code.size())), "@@#");
            return code;
        default:  // truncate
            code.resize(code.size() / 2 + static_cast<size_t>(rng.below(code.size() / 4 + 1)));
            return code;
    }
}

std::string format_score(double score) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.2f", score);
    return buf;
}

}  // namespace

std::vector<std::vector<int>> default_skill_matrix(int n_problems, int n_skills) {
    std::vector<std::vector<int>> matrix(static_cast<size_t>(n_problems));
    for (int p = 0; p < n_problems; ++p) {
        matrix[static_cast<size_t>(p)] = {p % n_skills, (p + 2) % n_skills};
        std::sort(matrix[static_cast<size_t>(p)].begin(),
                  matrix[static_cast<size_t>(p)].end());
        matrix[static_cast<size_t>(p)].erase(
            std::unique(matrix[static_cast<size_t>(p)].begin(),
                        matrix[static_cast<size_t>(p)].end()),
            matrix[static_cast<size_t>(p)].end());
    }
    return matrix;
}

GenerateResult generate(const Config& config, const std::string& out_dir) {
    if (config.init_mastery < 0 || config.init_mastery > 1 ||
        config.learn_rate < 0 || config.learn_rate > 1 || config.guess < 0 ||
        config.guess > 1 || config.slip < 0 || config.slip > 1 ||
        config.corrupt_fraction < 0 || config.corrupt_fraction > 1) {
        throw std::runtime_error("synth config probabilities must lie in [0,1]");
    }
    if (config.n_students < 1 || config.n_problems < 1 || config.n_assignments < 1) {
        throw std::runtime_error("synth config counts must be positive");
    }

    std::vector<std::vector<int>> matrix = config.skills_per_problem.empty()
                                               ? default_skill_matrix(config.n_problems)
                                               : config.skills_per_problem;
    if (static_cast<int>(matrix.size()) != config.n_problems) {
        throw std::runtime_error("skill matrix must cover every problem");
    }
    int max_skill = 0;
    for (const auto& row : matrix) {
        if (row.empty()) throw std::runtime_error("every problem needs at least one skill");
        for (int s : row) max_skill = std::max(max_skill, s);
    }
    const int n_skills = std::max(max_skill + 1, kSkillCount);
    if (n_skills > 9) throw std::runtime_error("at most 9 skills are supported");
    bool shared = false;
    for (size_t p = 0; p < matrix.size() && !shared; ++p) {
        for (size_t q = p + 1; q < matrix.size() && !shared; ++q) {
            for (int s : matrix[p]) {
                if (std::find(matrix[q].begin(), matrix[q].end(), s) != matrix[q].end()) {
                    shared = true;
                    break;
                }
            }
        }
    }
    if (config.n_problems > 1 && !shared) {
        throw std::runtime_error("skill matrix has no shared skill between problems");
    }

    fs::create_directories(out_dir);

    std::string main_csv;
    main_csv += "SubjectID,AssignmentID,ProblemID,Order,Score,CodeStateID\n";
    std::string gt_csv = "student,problem,attempt,true_p,label\n";
    std::map<std::string, std::string> code_state_ids;  // code text -> id
    std::vector<std::pair<std::string, std::string>> code_states;  // id, code

    auto code_state_for = [&](const std::string& code) {
        auto it = code_state_ids.find(code);
        if (it != code_state_ids.end()) return it->second;
        std::string id = "CS" + std::to_string(code_states.size() + 1);
        code_state_ids.emplace(code, id);
        code_states.emplace_back(id, code);
        return id;
    };

    GenerateResult result;
    Rng rng(mix64(config.seed, 0x5e9dULL));

    char student_name[32];
    for (int s = 0; s < config.n_students; ++s) {
        std::snprintf(student_name, sizeof(student_name), "S%04d", s + 1);
        int order = 0;
        for (int assignment = 0; assignment < config.n_assignments; ++assignment) {
            const std::string assignment_id = "A" + std::to_string(assignment + 1);
            StudentState state;
            state.mastered.assign(static_cast<size_t>(n_skills), 0);
            for (int k = 0; k < n_skills; ++k) {
                state.mastered[static_cast<size_t>(k)] =
                    rng.uniform01() < config.init_mastery ? 1 : 0;
            }
            std::vector<int> problem_order(static_cast<size_t>(config.n_problems));
            for (int p = 0; p < config.n_problems; ++p) problem_order[static_cast<size_t>(p)] = p;
            rng.shuffle(problem_order);

            for (int p : problem_order) {
                const std::string problem_id =
                    "P" + std::to_string((assignment + 1) * 100 + p + 1);
                const std::vector<int>& required = matrix[static_cast<size_t>(p)];
                for (int attempt = 1; attempt <= config.attempt_cap; ++attempt) {
                    bool all_mastered = true;
                    for (int skill : required) {
                        all_mastered = all_mastered && state.mastered[static_cast<size_t>(skill)];
                    }
                    const double true_p = all_mastered ? 1.0 - config.slip : config.guess;
                    const int label = rng.uniform01() < true_p ? 1 : 0;

                    std::string code = make_code(p, required, state.mastered,
                                                 config.code_mode,
                                                 config.unmastered_marker_rate,
                                                 label, rng);
                    if (config.corrupt_fraction > 0.0 &&
                        rng.uniform01() < config.corrupt_fraction) {
                        code = corrupt(std::move(code), rng);
                    }

                    double score;
                    if (label) {
                        score = 1.0;
                    } else {
                        static const double kPartial[] = {0.0, 0.25, 0.5, 0.75};
                        score = kPartial[rng.below(4)];
                    }

                    ++order;
                    main_csv += csv::format_row({student_name, assignment_id,
                                                 problem_id, std::to_string(order),
                                                 format_score(score),
                                                 code.empty() ? "" : code_state_for(code)});
                    gt_csv += csv::format_row({student_name, problem_id,
                                               std::to_string(attempt),
                                               format_score(true_p),
                                               std::to_string(label)});
                    result.ground_truth.push_back({student_name, problem_id, attempt,
                                                   true_p, label});
                    ++result.n_submissions;
                    result.n_correct += label;

                    // practice effect
                    for (int skill : required) {
                        if (!state.mastered[static_cast<size_t>(skill)] &&
                            rng.uniform01() < config.learn_rate) {
                            state.mastered[static_cast<size_t>(skill)] = 1;
                        }
                    }
                    if (label && config.stop_on_success) break;
                }
            }
        }
    }

    std::string code_csv = "CodeStateID,Code\n";
    for (const auto& [id, code] : code_states) {
        code_csv += csv::format_row({id, code});
    }

    nlohmann::json skills;
    for (int assignment = 0; assignment < config.n_assignments; ++assignment) {
        for (int p = 0; p < config.n_problems; ++p) {
            std::vector<int> bits(9, 0);
            for (int s : matrix[static_cast<size_t>(p)]) bits[static_cast<size_t>(s)] = 1;
            skills["P" + std::to_string((assignment + 1) * 100 + p + 1)] = bits;
        }
    }

    auto write_file = [&](const std::string& name, const std::string& content) {
        std::ofstream out(fs::path(out_dir) / name, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + name + " under " + out_dir);
        out << content;
    };
    write_file("MainTable.csv", main_csv);
    write_file("CodeStates.csv", code_csv);
    write_file("ground_truth.csv", gt_csv);
    write_file("skills.json", skills.dump(2) + "\n");
    return result;
}

std::optional<double> oracle_auc(const std::vector<GroundTruthRow>& rows) {
    std::vector<int> labels;
    std::vector<double> scores;
    labels.reserve(rows.size());
    scores.reserve(rows.size());
    for (const auto& row : rows) {
        labels.push_back(row.label);
        scores.push_back(row.true_p);
    }
    return eval::auc(labels, scores);
}

std::vector<GroundTruthRow> load_ground_truth(const std::string& csv_path) {
    const csv::Table table = csv::read_file(csv_path);
    std::vector<GroundTruthRow> rows;
    rows.reserve(table.rows.size());
    for (const auto& r : table.rows) {
        if (r.size() < 5) continue;
        rows.push_back({r[0], r[1], std::stoi(r[2]), std::stod(r[3]), std::stoi(r[4])});
    }
    return rows;
}

}  // namespace codedkt::synth
