#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "codedkt/dataset.hpp"
#include "codedkt/rng.hpp"

using namespace codedkt;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("codedkt_test_" + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

void write(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

void write_fixture(const fs::path& dir, const std::string& main_table,
                   const std::string& code_table) {
    write(dir / "MainTable.csv", main_table);
    write(dir / "CodeStates.csv", code_table);
}

}  // namespace

TEST_CASE("load joins source text through CodeStateID") {
    TempDir dir("join");
    write_fixture(dir.path,
                  "SubjectID,AssignmentID,ProblemID,Order,Score,CodeStateID\n"
                  "s1,A1,P1,1,0.50,c1\n"
                  "s1,A1,P1,2,1.00,c2\n",
                  "CodeStateID,Code\n"
                  "c1,\"int x = 1;\"\n"
                  "c2,\"int x = 2;\nreturn x;\"\n");
    const auto result = dataset::load_progsnap2(dir.path.string());
    REQUIRE(result.records.size() == 2);
    CHECK(result.warning_count() == 0);
    CHECK(result.records[0].source_text == "int x = 1;");
    CHECK(result.records[1].source_text == "int x = 2;\nreturn x;");
    CHECK(result.records[1].score == 1.0);
}

TEST_CASE("missing code state joins to empty text with one warning") {
    TempDir dir("missing_state");
    write_fixture(dir.path,
                  "SubjectID,AssignmentID,ProblemID,Order,Score,CodeStateID\n"
                  "s1,A1,P1,1,0.00,nope\n",
                  "CodeStateID,Code\nc1,x\n");
    const auto result = dataset::load_progsnap2(dir.path.string());
    REQUIRE(result.records.size() == 1);
    CHECK(result.records[0].source_text.empty());
    CHECK(result.warning_count() == 1);
    CHECK(result.missing_code_states == 1);
}

TEST_CASE("malformed rows are skipped and counted") {
    TempDir dir("malformed");
    write_fixture(dir.path,
                  "SubjectID,AssignmentID,ProblemID,Order,Score,CodeStateID\n"
                  "s1,A1,P1,1,0.5,c1\n"
                  "s2,A1,P1,notanumber,0.5,c1\n"
                  "s3,A1,P1,3,1.7,c1\n"
                  "s4,A1\n",
                  "CodeStateID,Code\nc1,x\n");
    const auto result = dataset::load_progsnap2(dir.path.string());
    CHECK(result.records.size() == 1);
    CHECK(result.malformed_rows == 3);
}

TEST_CASE("duplicate CodeStateID is fatal") {
    TempDir dir("dup");
    write_fixture(dir.path,
                  "SubjectID,AssignmentID,ProblemID,Order,Score,CodeStateID\n"
                  "s1,A1,P1,1,0.5,c1\n",
                  "CodeStateID,Code\nc1,x\nc1,y\n");
    CHECK_THROWS_WITH_AS(dataset::load_progsnap2(dir.path.string()),
                         doctest::Contains("duplicate CodeStateID c1"),
                         std::runtime_error);
}

TEST_CASE("missing main table is fatal and names the file") {
    TempDir dir("nofile");
    CHECK_THROWS_WITH_AS(dataset::load_progsnap2(dir.path.string()),
                         doctest::Contains("MainTable.csv"), std::runtime_error);
}

TEST_CASE("ingest is idempotent") {
    TempDir dir("idem");
    write_fixture(dir.path,
                  "SubjectID,AssignmentID,ProblemID,Order,Score,CodeStateID\n"
                  "s1,A1,P1,1,0.25,c1\n"
                  "s1,A1,P2,2,1.00,c1\n",
                  "CodeStateID,Code\nc1,\"x = 1;\"\n");
    const auto a = dataset::load_progsnap2(dir.path.string());
    const auto b = dataset::load_progsnap2(dir.path.string());
    REQUIRE(a.records.size() == b.records.size());
    for (size_t i = 0; i < a.records.size(); ++i) {
        CHECK(a.records[i].student_id == b.records[i].student_id);
        CHECK(a.records[i].order_key == b.records[i].order_key);
        CHECK(a.records[i].source_text == b.records[i].source_text);
    }
}

namespace {

dataset::SubmissionRecord rec(const std::string& student, const std::string& problem,
                              double order, double score) {
    dataset::SubmissionRecord r;
    r.student_id = student;
    r.assignment_id = "A1";
    r.problem_id = problem;
    r.order_key = order;
    r.score = score;
    return r;
}

}  // namespace

TEST_CASE("correctness comes from exact full score and first flags from full history") {
    std::vector<dataset::SubmissionRecord> records = {
        rec("s1", "P1", 1, 0.5), rec("s1", "P1", 2, 0.5), rec("s1", "P1", 3, 1.0)};
    const auto catalog = dataset::build_catalog(records, "A1");
    const auto seqs = dataset::build_sequences(records, "A1", catalog);
    REQUIRE(seqs.size() == 1);
    REQUIRE(seqs[0].attempts.size() == 3);
    CHECK(seqs[0].attempts[0].a == 0);
    CHECK(seqs[0].attempts[1].a == 0);
    CHECK(seqs[0].attempts[2].a == 1);
    CHECK(seqs[0].attempts[0].first_attempt);
    CHECK_FALSE(seqs[0].attempts[1].first_attempt);
    CHECK_FALSE(seqs[0].attempts[2].first_attempt);
}

TEST_CASE("long histories keep exactly the last 50 in order") {
    std::vector<dataset::SubmissionRecord> records;
    for (int i = 1; i <= 53; ++i) {
        records.push_back(rec("s1", "P1", i, i == 53 ? 1.0 : 0.0));
    }
    const auto catalog = dataset::build_catalog(records, "A1");
    const auto seqs = dataset::build_sequences(records, "A1", catalog);
    REQUIRE(seqs[0].attempts.size() == 50);
    // submissions 4..53 survive; the first three drop
    CHECK(seqs[0].attempts.back().a == 1);
    CHECK_FALSE(seqs[0].attempts.front().first_attempt);  // attempt 4 is not first
}

TEST_CASE("truncation preserves a contiguous suffix") {
    std::vector<dataset::SubmissionRecord> records;
    for (int i = 1; i <= 60; ++i) {
        records.push_back(rec("s1", "P" + std::to_string(i % 7), i, 0.0));
    }
    const auto catalog = dataset::build_catalog(records, "A1");
    const auto full = dataset::build_sequences(records, "A1", catalog, 0);
    const auto cut = dataset::build_sequences(records, "A1", catalog, 50);
    REQUIRE(full[0].attempts.size() == 60);
    REQUIRE(cut[0].attempts.size() == 50);
    for (size_t i = 0; i < 50; ++i) {
        CHECK(cut[0].attempts[i].q == full[0].attempts[i + 10].q);
    }
}

TEST_CASE("first-attempt flags track problems independently") {
    std::vector<dataset::SubmissionRecord> records = {
        rec("s1", "P1", 1, 0.0), rec("s1", "P2", 2, 0.0), rec("s1", "P1", 3, 0.0)};
    const auto catalog = dataset::build_catalog(records, "A1");
    const auto seqs = dataset::build_sequences(records, "A1", catalog);
    CHECK(seqs[0].attempts[0].first_attempt);
    CHECK(seqs[0].attempts[1].first_attempt);
    CHECK_FALSE(seqs[0].attempts[2].first_attempt);
}

TEST_CASE("tied order keys keep file order") {
    std::vector<dataset::SubmissionRecord> records = {
        rec("s1", "P1", 7, 0.25), rec("s1", "P2", 7, 0.75), rec("s1", "P3", 7, 0.0)};
    const auto catalog = dataset::build_catalog(records, "A1");
    const auto seqs = dataset::build_sequences(records, "A1", catalog);
    CHECK(seqs[0].attempts[0].q == catalog.index.at("P1"));
    CHECK(seqs[0].attempts[1].q == catalog.index.at("P2"));
    CHECK(seqs[0].attempts[2].q == catalog.index.at("P3"));
}

namespace {

std::vector<dataset::AttemptSequence> student_stubs(int n) {
    std::vector<dataset::AttemptSequence> seqs(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        seqs[static_cast<size_t>(i)].student_id = "s" + std::to_string(i);
        seqs[static_cast<size_t>(i)].attempts.resize(1);
    }
    return seqs;
}

}  // namespace

TEST_CASE("splits are 4:1 with ceil on the train side") {
    const auto ten = dataset::split_students(student_stubs(10), 7);
    CHECK(ten.train_students.size() == 8);
    CHECK(ten.test_students.size() == 2);

    const auto big = dataset::split_students(student_stubs(410), 99);
    CHECK(big.train_students.size() == 328);  // ceil(0.8 * 410)
    CHECK(big.test_students.size() == 82);
}

TEST_CASE("split is deterministic and disjoint") {
    const auto seqs = student_stubs(23);
    const auto a = dataset::split_students(seqs, 1234);
    const auto b = dataset::split_students(seqs, 1234);
    CHECK(a.to_json() == b.to_json());

    const auto c = dataset::split_students(seqs, 1235);
    CHECK(a.to_json() != c.to_json());

    std::set<std::string> seen(a.train_students.begin(), a.train_students.end());
    for (const auto& s : a.test_students) CHECK_FALSE(seen.count(s));
    CHECK(a.train_students.size() + a.test_students.size() == 23);
}

TEST_CASE("fewer than five students cannot be split") {
    CHECK_THROWS_AS(dataset::split_students(student_stubs(4), 1), std::runtime_error);
}

TEST_CASE("attempt encoding matches the worked examples") {
    CHECK(dataset::encode_attempt(0, 1, 3) ==
          std::vector<double>{1, 0, 0, 0, 0, 0});
    CHECK(dataset::encode_attempt(0, 0, 3) ==
          std::vector<double>{0, 0, 0, 1, 0, 0});
    CHECK(dataset::encode_attempt(2, 0, 3) ==
          std::vector<double>{0, 0, 0, 0, 0, 1});
    CHECK_THROWS_AS(dataset::encode_attempt(3, 1, 3), std::runtime_error);
    CHECK_THROWS_AS(dataset::encode_attempt(-1, 0, 3), std::runtime_error);
}

TEST_CASE("attempt encoding has exactly one bit anywhere") {
    Rng rng(42);
    for (int i = 0; i < 1000; ++i) {
        const int m = 1 + static_cast<int>(rng.below(40));
        const int q = static_cast<int>(rng.below(static_cast<uint64_t>(m)));
        const int a = static_cast<int>(rng.below(2));
        const auto x = dataset::encode_attempt(q, a, m);
        REQUIRE(x.size() == static_cast<size_t>(2 * m));
        double sum = 0;
        for (double b : x) sum += b;
        CHECK(sum == 1.0);
        CHECK(x[static_cast<size_t>(a == 1 ? q : q + m)] == 1.0);
    }
}

TEST_CASE("skill encoding mirrors the correctness split") {
    std::vector<int> skills = {1, 0, 0, 0, 0, 0, 0, 0, 0};
    auto on = dataset::encode_attempt_skills(skills, 1);
    CHECK(on[0] == 1.0);
    for (size_t i = 1; i < 18; ++i) CHECK(on[i] == 0.0);

    std::vector<int> two = {1, 1, 0, 0, 0, 0, 0, 0, 0};
    auto off = dataset::encode_attempt_skills(two, 0);
    for (size_t i = 0; i < 9; ++i) CHECK(off[i] == 0.0);
    CHECK(off[9] == 1.0);
    CHECK(off[10] == 1.0);

    CHECK_THROWS_AS(dataset::encode_attempt_skills({1, 0}, 1), std::runtime_error);
}

TEST_CASE("skill vectors must cover the catalog and not be all-zero") {
    std::vector<dataset::SubmissionRecord> records = {rec("s1", "P1", 1, 0.0),
                                                      rec("s1", "P2", 2, 0.0)};
    auto catalog = dataset::build_catalog(records, "A1");
    CHECK_THROWS_AS(
        dataset::attach_skills_json(catalog, R"({"P1": [1,0,0,0,0,0,0,0,0]})"),
        std::runtime_error);
    CHECK_THROWS_AS(dataset::attach_skills_json(
                        catalog, R"({"P1": [1,0,0,0,0,0,0,0,0],
                                     "P2": [0,0,0,0,0,0,0,0,0]})"),
                    std::runtime_error);
    dataset::attach_skills_json(catalog, R"({"P1": [1,0,0,0,0,0,0,0,0],
                                             "P2": [0,1,0,0,0,0,0,0,0]})");
    CHECK(catalog.skill_vectors.size() == 2);
}

TEST_CASE("sequence dump emits one json object per line") {
    std::vector<dataset::SubmissionRecord> records = {rec("s1", "P1", 1, 1.0),
                                                      rec("s2", "P1", 1, 0.0)};
    const auto catalog = dataset::build_catalog(records, "A1");
    const auto seqs = dataset::build_sequences(records, "A1", catalog);
    const std::string jsonl = dataset::dump_sequences_jsonl(seqs, "A1");
    int lines = 0;
    for (char c : jsonl) lines += c == '\n' ? 1 : 0;
    CHECK(lines == 2);
    CHECK(jsonl.find("\"student\":\"s1\"") != std::string::npos);
    CHECK(jsonl.find("\"first\":true") != std::string::npos);
}
