#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "codedkt/dataset.hpp"
#include "codedkt/javaparse.hpp"
#include "codedkt/synth.hpp"

using namespace codedkt;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("codedkt_synth_" + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// Plug-in estimate of the mutual information (bits) between a binary marker
// and the success of the student's next attempt.
double marker_mi(const std::vector<dataset::AttemptSequence>& seqs) {
    double counts[2][2] = {{0, 0}, {0, 0}};
    double total = 0.0;
    for (const auto& seq : seqs) {
        for (size_t t = 0; t + 1 < seq.attempts.size(); ++t) {
            const int marker =
                seq.attempts[t].code.find("&&") != std::string::npos ||
                        seq.attempts[t].code.find("||") != std::string::npos ||
                        seq.attempts[t].code.find("else if") != std::string::npos ||
                        seq.attempts[t].code.find("Math.") != std::string::npos
                    ? 1
                    : 0;
            counts[marker][seq.attempts[t + 1].a] += 1.0;
            total += 1.0;
        }
    }
    if (total == 0.0) return 0.0;
    double mi = 0.0;
    for (int m = 0; m < 2; ++m) {
        for (int y = 0; y < 2; ++y) {
            const double pxy = counts[m][y] / total;
            if (pxy <= 0.0) continue;
            const double px = (counts[m][0] + counts[m][1]) / total;
            const double py = (counts[0][y] + counts[1][y]) / total;
            mi += pxy * std::log2(pxy / (px * py));
        }
    }
    return mi;
}

}  // namespace

TEST_CASE("generated datasets load back without warnings") {
    TempDir dir("load");
    synth::Config config;
    config.n_students = 40;
    config.seed = 7;
    const auto gen = synth::generate(config, dir.path.string());
    CHECK(gen.n_submissions > 0);

    const auto load = dataset::load_progsnap2(dir.path.string());
    CHECK(load.warning_count() == 0);
    CHECK(static_cast<int>(load.records.size()) == gen.n_submissions);

    const auto catalog = dataset::build_catalog(load.records, "A1");
    CHECK(catalog.size() == 9);
    const auto seqs = dataset::build_sequences(load.records, "A1", catalog);
    CHECK(static_cast<int>(seqs.size()) == 40);
}

TEST_CASE("a fixed seed yields byte-identical files") {
    TempDir a("det_a"), b("det_b");
    synth::Config config;
    config.n_students = 25;
    config.seed = 123;
    synth::generate(config, a.path.string());
    synth::generate(config, b.path.string());
    for (const char* name :
         {"MainTable.csv", "CodeStates.csv", "ground_truth.csv", "skills.json"}) {
        CHECK(slurp(a.path / name) == slurp(b.path / name));
    }
    TempDir c("det_c");
    config.seed = 124;
    synth::generate(config, c.path.string());
    CHECK(slurp(a.path / "MainTable.csv") != slurp(c.path / "MainTable.csv"));
}

TEST_CASE("the multi-assignment fixture has the expected distinct keys") {
    TempDir dir("big");
    synth::Config config;
    config.n_students = 410;
    config.n_problems = 10;
    config.n_assignments = 5;
    config.attempt_cap = 3;
    config.seed = 20;
    synth::generate(config, dir.path.string());

    const auto load = dataset::load_progsnap2(dir.path.string());
    std::set<std::string> students, problems, assignments;
    for (const auto& rec : load.records) {
        students.insert(rec.student_id);
        problems.insert(rec.problem_id);
        assignments.insert(rec.assignment_id);
    }
    CHECK(students.size() == 410);
    CHECK(problems.size() == 50);
    CHECK(assignments.size() == 5);
}

TEST_CASE("none mode emits empty code everywhere") {
    TempDir dir("none");
    synth::Config config;
    config.n_students = 15;
    config.code_mode = synth::CodeMode::None;
    config.seed = 9;
    synth::generate(config, dir.path.string());
    const auto load = dataset::load_progsnap2(dir.path.string());
    for (const auto& rec : load.records) CHECK(rec.source_text.empty());
}

TEST_CASE("full mastery puts the idiom in every structural submission") {
    TempDir dir("mastered");
    synth::Config config;
    config.n_students = 10;
    config.init_mastery = 1.0;
    config.seed = 3;
    synth::generate(config, dir.path.string());
    const auto load = dataset::load_progsnap2(dir.path.string());
    const auto catalog = dataset::build_catalog(load.records, "A1");
    // every problem requires two skills; check the problems whose skills have
    // unambiguous textual markers
    int with_marker = 0, considered = 0;
    for (const auto& rec : load.records) {
        const auto& skills = catalog.skill_vectors;
        (void)skills;
        const bool wants_conjunction = rec.problem_id == "P101" || rec.problem_id == "P107";
        if (!wants_conjunction) continue;
        ++considered;
        with_marker += rec.source_text.find("&&") != std::string::npos ? 1 : 0;
    }
    REQUIRE(considered > 0);
    CHECK(with_marker == considered);
}

TEST_CASE("structural submissions parse unless corrupted") {
    TempDir dir("parse");
    synth::Config config;
    config.n_students = 20;
    config.seed = 5;
    synth::generate(config, dir.path.string());
    const auto load = dataset::load_progsnap2(dir.path.string());
    for (const auto& rec : load.records) {
        const auto outcome = javaparse::parse_source(rec.source_text);
        REQUIRE_MESSAGE(outcome.mode == javaparse::ParseMode::Parsed,
                        rec.source_text);
    }
}

TEST_CASE("corruption produces fallback parses but never crashes") {
    TempDir dir("corrupt");
    synth::Config config;
    config.n_students = 30;
    config.corrupt_fraction = 0.5;
    config.seed = 6;
    synth::generate(config, dir.path.string());
    const auto load = dataset::load_progsnap2(dir.path.string());
    int fallback = 0;
    for (const auto& rec : load.records) {
        const auto outcome = javaparse::parse_source(rec.source_text);
        fallback += outcome.mode == javaparse::ParseMode::FallbackFlat ? 1 : 0;
    }
    CHECK(fallback > 0);
}

TEST_CASE("label base rate stays near one quarter across seeds") {
    double worst = 0.0;
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        TempDir dir("rate" + std::to_string(seed));
        synth::Config config;
        config.n_students = 400;
        config.seed = seed;
        const auto gen = synth::generate(config, dir.path.string());
        worst = std::max(worst, std::fabs(gen.correct_rate() - 0.24));
    }
    CHECK(worst < 0.03);
}

TEST_CASE("structural code carries next-attempt signal and random code does not") {
    TempDir s_dir("mi_s"), r_dir("mi_r");
    synth::Config config;
    config.n_students = 320;  // ~10k attempts
    config.seed = 11;
    synth::generate(config, s_dir.path.string());
    config.code_mode = synth::CodeMode::Random;
    synth::generate(config, r_dir.path.string());

    auto sequences = [](const std::string& dir) {
        const auto load = dataset::load_progsnap2(dir);
        const auto catalog = dataset::build_catalog(load.records, "A1");
        return dataset::build_sequences(load.records, "A1", catalog, 0);
    };
    const double mi_structural = marker_mi(sequences(s_dir.path.string()));
    const double mi_random = marker_mi(sequences(r_dir.path.string()));
    CHECK(mi_structural > 0.01);
    CHECK(mi_random < 0.005);
}

TEST_CASE("oracle auc hits the extremes and matches the shared evaluator") {
    std::vector<synth::GroundTruthRow> deterministic = {
        {"s", "p", 1, 1.0, 1}, {"s", "p", 2, 0.0, 0}, {"s", "p", 3, 1.0, 1}};
    CHECK(*synth::oracle_auc(deterministic) == 1.0);

    std::vector<synth::GroundTruthRow> constant = {
        {"s", "p", 1, 0.4, 1}, {"s", "p", 2, 0.4, 0}};
    CHECK(*synth::oracle_auc(constant) == 0.5);

    TempDir dir("oracle");
    synth::Config config;
    config.n_students = 50;
    config.seed = 17;
    const auto gen = synth::generate(config, dir.path.string());
    const auto loaded =
        synth::load_ground_truth((dir.path / "ground_truth.csv").string());
    REQUIRE(loaded.size() == gen.ground_truth.size());
    const auto from_disk = synth::oracle_auc(loaded);
    const auto in_memory = synth::oracle_auc(gen.ground_truth);
    REQUIRE(from_disk.has_value());
    // the oracle ceiling sits well above chance on structural data
    CHECK(*in_memory > 0.6);
    CHECK(std::fabs(*from_disk - *in_memory) < 1e-6);  // csv rounds true_p
}

TEST_CASE("invalid configurations are rejected") {
    synth::Config config;
    config.init_mastery = 1.5;
    CHECK_THROWS_AS(synth::generate(config, "/tmp/never_used"), std::runtime_error);

    synth::Config no_share;
    no_share.n_problems = 2;
    no_share.skills_per_problem = {{0}, {1}};
    CHECK_THROWS_AS(synth::generate(no_share, "/tmp/never_used"), std::runtime_error);

    synth::Config empty_row;
    empty_row.skills_per_problem = {{}};
    empty_row.n_problems = 1;
    CHECK_THROWS_AS(synth::generate(empty_row, "/tmp/never_used"), std::runtime_error);
}

TEST_CASE("skill files cover every generated problem") {
    TempDir dir("skills");
    synth::Config config;
    config.n_students = 12;
    config.seed = 2;
    synth::generate(config, dir.path.string());
    const auto load = dataset::load_progsnap2(dir.path.string());
    auto catalog = dataset::build_catalog(load.records, "A1");
    dataset::attach_skills(catalog, (dir.path / "skills.json").string());
    CHECK(catalog.skill_vectors.size() == 9);
}
