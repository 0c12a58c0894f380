#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace codedkt::dataset {

// One graded submission event from the log.
struct SubmissionRecord {
    std::string student_id;
    std::string assignment_id;
    std::string problem_id;
    double order_key = 0.0;  // timestamp or event ordinal; ties keep file order
    double score = 0.0;      // in [0, 1]
    std::string source_text;
};

struct Attempt {
    int q = 0;        // dense problem index within the assignment
    int a = 0;        // 1 iff score == 1.0 exactly
    std::string code;
    bool first_attempt = false;  // first submission to this problem, pre-truncation
};

struct AttemptSequence {
    std::string student_id;
    std::vector<Attempt> attempts;
};

struct DataSplit {
    std::vector<std::string> train_students;  // sorted
    std::vector<std::string> test_students;   // sorted
    uint64_t seed = 0;

    std::string to_json() const;
};

struct ProblemCatalog {
    std::vector<std::string> problems;  // index -> problem id
    std::map<std::string, int> index;   // problem id -> index
    std::map<std::string, std::vector<int>> skill_vectors;  // optional, 9 bits each

    int size() const { return static_cast<int>(problems.size()); }
    bool has_skills() const { return !skill_vectors.empty(); }
};

struct LoadResult {
    std::vector<SubmissionRecord> records;
    int malformed_rows = 0;
    int missing_code_states = 0;

    int warning_count() const { return malformed_rows + missing_code_states; }
};

// Reads MainTable.csv + CodeStates.csv (or CodeStates/CodeStates.csv) under
// root_dir and joins source text by CodeStateID. Missing files and duplicate
// CodeStateIDs are fatal; malformed rows are skipped and counted.
LoadResult load_progsnap2(const std::string& root_dir);

ProblemCatalog build_catalog(const std::vector<SubmissionRecord>& records,
                             const std::string& assignment_id);

// Attaches per-problem 9-bit skill vectors from a JSON file {problem: [bits]}.
// Every problem in the catalog must be covered and no vector may be all-zero.
void attach_skills(ProblemCatalog& catalog, const std::string& skills_json_path);
void attach_skills_json(ProblemCatalog& catalog, const std::string& json_text);

// Per-student attempt sequences for one assignment: ordered by order_key
// (ties by file order), correctness = exact full score, first-attempt flags
// computed on the full history, then truncated to the last max_len attempts.
std::vector<AttemptSequence> build_sequences(
    const std::vector<SubmissionRecord>& records,
    const std::string& assignment_id, const ProblemCatalog& catalog,
    int max_len = 50);

// Deterministic seeded 4:1 student split (train = ceil(0.8 * N)).
DataSplit split_students(const std::vector<AttemptSequence>& sequences,
                         uint64_t seed);
// Generalized split used by hyperparameter tuning (train_fraction of N, ceil).
DataSplit split_students_frac(const std::vector<AttemptSequence>& sequences,
                              uint64_t seed, double train_fraction);

// One-hot correctness encoding of length 2M: bit q when correct, q+M when not.
std::vector<double> encode_attempt(int q, int a, int M);

// 18-wide skill encoding used by the feature baselines: the 9 skill bits in
// the first half when correct, in the second half when incorrect.
std::vector<double> encode_attempt_skills(const std::vector<int>& skill_vector,
                                          int a);

// One JSON object per line: {student, assignment, attempts:[{q,a,first,code}]}.
std::string dump_sequences_jsonl(const std::vector<AttemptSequence>& sequences,
                                 const std::string& assignment_id);

}  // namespace codedkt::dataset
