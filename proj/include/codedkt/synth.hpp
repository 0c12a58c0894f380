#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace codedkt::synth {

enum class CodeMode { Structural, Random, None };

// Latent-skill student simulator emitting ProgSnap2-style logs. Each problem
// requires a subset of skills; a student's success probability depends on
// whether all required skills are mastered, and in structural mode the
// submitted code contains skill-specific idioms exactly when the student has
// mastered that skill (so code content carries signal about future success).
struct Config {
    int n_students = 400;
    int n_problems = 9;
    int n_assignments = 1;
    std::vector<std::vector<int>> skills_per_problem;  // empty -> cyclic default
    // Defaults calibrated so the label base rate lands near 24% correct.
    double init_mastery = 0.25;  // P(skill mastered at start)
    double learn_rate = 0.10;    // P(unmastered -> mastered per practice)
    double guess = 0.13;
    double slip = 0.15;
    int attempt_cap = 8;
    bool stop_on_success = true;
    CodeMode code_mode = CodeMode::Structural;
    // P(idiom present) in structural mode when the skill is NOT mastered; a
    // mastered skill always shows its idiom. In random mode idiom presence is
    // an independent coin with this probability plus 0.3.
    double unmastered_marker_rate = 0.08;
    double corrupt_fraction = 0.0;  // submissions mangled past the parser
    uint64_t seed = 1;
};

struct GroundTruthRow {
    std::string student;
    std::string problem;
    int attempt = 0;      // 1-based within (student, problem)
    double true_p = 0.0;  // success probability the label was sampled from
    int label = 0;
};

struct GenerateResult {
    int n_submissions = 0;
    int n_correct = 0;
    std::vector<GroundTruthRow> ground_truth;

    double correct_rate() const {
        return n_submissions > 0 ? static_cast<double>(n_correct) / n_submissions : 0.0;
    }
};

// Writes MainTable.csv, CodeStates.csv, ground_truth.csv and skills.json
// under out_dir. Deterministic: a fixed seed yields byte-identical files.
GenerateResult generate(const Config& config, const std::string& out_dir);

// Default cyclic skill matrix: problem p requires skills {p % k, (p+2) % k}.
std::vector<std::vector<int>> default_skill_matrix(int n_problems, int n_skills = 6);

// AUC of the generating success probabilities against the sampled labels:
// the ceiling any model evaluated on these labels can approach.
std::optional<double> oracle_auc(const std::vector<GroundTruthRow>& rows);

std::vector<GroundTruthRow> load_ground_truth(const std::string& csv_path);

}  // namespace codedkt::synth
