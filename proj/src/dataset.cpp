#include "codedkt/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

#include "codedkt/csv.hpp"
#include "codedkt/rng.hpp"

namespace codedkt::dataset {

namespace fs = std::filesystem;

namespace {

bool parse_double(const std::string& text, double& out) {
    if (text.empty()) return false;
    try {
        size_t pos = 0;
        out = std::stod(text, &pos);
        return pos == text.size();
    } catch (...) {
        return false;
    }
}

std::string find_code_states_file(const std::string& root_dir) {
    const fs::path flat = fs::path(root_dir) / "CodeStates.csv";
    if (fs::exists(flat)) return flat.string();
    const fs::path nested = fs::path(root_dir) / "CodeStates" / "CodeStates.csv";
    if (fs::exists(nested)) return nested.string();
    throw std::runtime_error("ingest error: missing file " + flat.string());
}

}  // namespace

LoadResult load_progsnap2(const std::string& root_dir) {
    const fs::path main_path = fs::path(root_dir) / "MainTable.csv";
    if (!fs::exists(main_path)) {
        throw std::runtime_error("ingest error: missing file " + main_path.string());
    }
    const csv::Table main_table = csv::read_file(main_path.string());
    const csv::Table code_table = csv::read_file(find_code_states_file(root_dir));

    const int c_subject = main_table.column("SubjectID");
    const int c_assign = main_table.column("AssignmentID");
    const int c_problem = main_table.column("ProblemID");
    const int c_order = main_table.column("Order");
    const int c_score = main_table.column("Score");
    const int c_state = main_table.column("CodeStateID");
    for (const auto& [name, col] :
         std::initializer_list<std::pair<const char*, int>>{
             {"SubjectID", c_subject}, {"AssignmentID", c_assign},
             {"ProblemID", c_problem}, {"Order", c_order},
             {"Score", c_score},       {"CodeStateID", c_state}}) {
        if (col < 0) {
            throw std::runtime_error(std::string("ingest error: MainTable.csv lacks column ") + name);
        }
    }

    const int cs_id = code_table.column("CodeStateID");
    const int cs_code = code_table.column("Code");
    if (cs_id < 0 || cs_code < 0) {
        throw std::runtime_error("ingest error: code-state table lacks CodeStateID/Code columns");
    }
    std::unordered_map<std::string, std::string> code_by_id;
    code_by_id.reserve(code_table.rows.size());
    for (const auto& row : code_table.rows) {
        if (static_cast<int>(row.size()) <= std::max(cs_id, cs_code)) continue;
        const std::string& id = row[static_cast<size_t>(cs_id)];
        if (!code_by_id.emplace(id, row[static_cast<size_t>(cs_code)]).second) {
            throw std::runtime_error("ingest error: duplicate CodeStateID " + id);
        }
    }

    LoadResult result;
    result.records.reserve(main_table.rows.size());
    const int max_col = std::max({c_subject, c_assign, c_problem, c_order, c_score, c_state});
    for (const auto& row : main_table.rows) {
        if (static_cast<int>(row.size()) <= max_col) {
            ++result.malformed_rows;
            continue;
        }
        SubmissionRecord rec;
        rec.student_id = row[static_cast<size_t>(c_subject)];
        rec.assignment_id = row[static_cast<size_t>(c_assign)];
        rec.problem_id = row[static_cast<size_t>(c_problem)];
        double order = 0.0, score = 0.0;
        if (rec.student_id.empty() || rec.assignment_id.empty() ||
            rec.problem_id.empty() ||
            !parse_double(row[static_cast<size_t>(c_order)], order) ||
            !parse_double(row[static_cast<size_t>(c_score)], score) ||
            score < 0.0 || score > 1.0) {
            ++result.malformed_rows;
            continue;
        }
        rec.order_key = order;
        rec.score = score;
        const std::string& state_id = row[static_cast<size_t>(c_state)];
        if (state_id.empty()) {
            ++result.missing_code_states;
        } else if (auto it = code_by_id.find(state_id); it != code_by_id.end()) {
            rec.source_text = it->second;
        } else {
            ++result.missing_code_states;
        }
        result.records.push_back(std::move(rec));
    }
    return result;
}

ProblemCatalog build_catalog(const std::vector<SubmissionRecord>& records,
                             const std::string& assignment_id) {
    std::set<std::string> seen;
    for (const auto& rec : records) {
        if (rec.assignment_id == assignment_id) seen.insert(rec.problem_id);
    }
    ProblemCatalog catalog;
    catalog.problems.assign(seen.begin(), seen.end());
    for (size_t i = 0; i < catalog.problems.size(); ++i) {
        catalog.index[catalog.problems[i]] = static_cast<int>(i);
    }
    return catalog;
}

void attach_skills_json(ProblemCatalog& catalog, const std::string& json_text) {
    const nlohmann::json doc = nlohmann::json::parse(json_text);
    std::map<std::string, std::vector<int>> vectors;
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        std::vector<int> bits = it.value().get<std::vector<int>>();
        if (bits.size() != 9) {
            throw std::runtime_error("skill vector for " + it.key() + " must have 9 bits");
        }
        vectors[it.key()] = std::move(bits);
    }
    for (const auto& problem : catalog.problems) {
        auto it = vectors.find(problem);
        if (it == vectors.end()) {
            throw std::runtime_error("no skill vector for problem " + problem);
        }
        bool any = false;
        for (int b : it->second) any = any || b != 0;
        if (!any) {
            throw std::runtime_error("all-zero skill vector for problem " + problem);
        }
        catalog.skill_vectors[problem] = it->second;
    }
}

void attach_skills(ProblemCatalog& catalog, const std::string& skills_json_path) {
    std::ifstream in(skills_json_path);
    if (!in) throw std::runtime_error("cannot open skills file: " + skills_json_path);
    std::ostringstream buf;
    buf << in.rdbuf();
    attach_skills_json(catalog, buf.str());
}

std::vector<AttemptSequence> build_sequences(
    const std::vector<SubmissionRecord>& records,
    const std::string& assignment_id, const ProblemCatalog& catalog,
    int max_len) {
    // Group row indices by student, preserving file order for tie-breaking.
    std::map<std::string, std::vector<size_t>> by_student;
    for (size_t i = 0; i < records.size(); ++i) {
        if (records[i].assignment_id == assignment_id) {
            by_student[records[i].student_id].push_back(i);
        }
    }

    std::vector<AttemptSequence> sequences;
    sequences.reserve(by_student.size());
    for (auto& [student, rows] : by_student) {
        std::stable_sort(rows.begin(), rows.end(), [&](size_t a, size_t b) {
            return records[a].order_key < records[b].order_key;
        });
        AttemptSequence seq;
        seq.student_id = student;
        seq.attempts.reserve(rows.size());
        std::set<std::string> attempted;
        for (size_t row : rows) {
            const SubmissionRecord& rec = records[row];
            auto idx = catalog.index.find(rec.problem_id);
            if (idx == catalog.index.end()) continue;
            Attempt at;
            at.q = idx->second;
            at.a = rec.score == 1.0 ? 1 : 0;
            at.code = rec.source_text;
            at.first_attempt = attempted.insert(rec.problem_id).second;
            seq.attempts.push_back(std::move(at));
        }
        if (seq.attempts.empty()) continue;
        if (max_len > 0 && static_cast<int>(seq.attempts.size()) > max_len) {
            seq.attempts.erase(seq.attempts.begin(),
                               seq.attempts.end() - max_len);
        }
        sequences.push_back(std::move(seq));
    }
    return sequences;
}

DataSplit split_students_frac(const std::vector<AttemptSequence>& sequences,
                              uint64_t seed, double train_fraction) {
    std::vector<std::string> students;
    students.reserve(sequences.size());
    for (const auto& seq : sequences) students.push_back(seq.student_id);
    std::sort(students.begin(), students.end());

    const size_t n = students.size();
    const size_t n_train =
        static_cast<size_t>(std::ceil(train_fraction * static_cast<double>(n)));
    if (n < 2 || n_train == 0 || n_train >= n) {
        throw std::runtime_error("cannot split " + std::to_string(n) +
                                 " students into non-empty train and test sets");
    }

    Rng rng(mix64(seed, 0x5b117d00ULL));
    rng.shuffle(students);
    DataSplit split;
    split.seed = seed;
    split.train_students.assign(students.begin(),
                                students.begin() + static_cast<long>(n_train));
    split.test_students.assign(students.begin() + static_cast<long>(n_train),
                               students.end());
    std::sort(split.train_students.begin(), split.train_students.end());
    std::sort(split.test_students.begin(), split.test_students.end());
    return split;
}

DataSplit split_students(const std::vector<AttemptSequence>& sequences,
                         uint64_t seed) {
    if (sequences.size() < 5) {
        throw std::runtime_error("need at least 5 students to form a 4:1 split, got " +
                                 std::to_string(sequences.size()));
    }
    return split_students_frac(sequences, seed, 0.8);
}

std::string DataSplit::to_json() const {
    nlohmann::json doc;
    doc["seed"] = seed;
    doc["train"] = train_students;
    doc["test"] = test_students;
    return doc.dump();
}

std::vector<double> encode_attempt(int q, int a, int M) {
    if (q < 0 || q >= M) {
        throw std::runtime_error("problem index " + std::to_string(q) +
                                 " out of range for M=" + std::to_string(M));
    }
    std::vector<double> x(static_cast<size_t>(2 * M), 0.0);
    x[static_cast<size_t>(a == 1 ? q : q + M)] = 1.0;
    return x;
}

std::vector<double> encode_attempt_skills(const std::vector<int>& skill_vector,
                                          int a) {
    if (skill_vector.size() != 9) {
        throw std::runtime_error("skill vector must have 9 bits, got " +
                                 std::to_string(skill_vector.size()));
    }
    std::vector<double> x(18, 0.0);
    const size_t offset = a == 1 ? 0 : 9;
    for (size_t i = 0; i < 9; ++i) {
        x[offset + i] = skill_vector[i] != 0 ? 1.0 : 0.0;
    }
    return x;
}

std::string dump_sequences_jsonl(const std::vector<AttemptSequence>& sequences,
                                 const std::string& assignment_id) {
    std::string out;
    for (const auto& seq : sequences) {
        nlohmann::json line;
        line["student"] = seq.student_id;
        line["assignment"] = assignment_id;
        nlohmann::json attempts = nlohmann::json::array();
        for (const auto& at : seq.attempts) {
            attempts.push_back({{"q", at.q},
                                {"a", at.a},
                                {"first", at.first_attempt},
                                {"code", at.code}});
        }
        line["attempts"] = std::move(attempts);
        out += line.dump();
        out.push_back('\n');
    }
    return out;
}

}  // namespace codedkt::dataset
