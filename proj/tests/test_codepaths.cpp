#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>
#include <string>
#include <vector>

#include "codedkt/codepaths.hpp"
#include "codedkt/javaparse.hpp"
#include "codedkt/rng.hpp"

using namespace codedkt;
using codepaths::CodePath;
using javaparse::AstNode;

namespace {

AstNode leaf(const std::string& text) { return AstNode{text, {}}; }

// Reference tree: method with a parameter leaf and a body whose typed
// expression wraps a quoted string leaf.
AstNode reference_tree() {
    AstNode string_node{"String", {leaf("\"value\"")}};
    AstNode body{"body", {std::move(string_node)}};
    AstNode method{"method", {}};
    method.children.push_back(leaf("input"));
    method.children.push_back(std::move(body));
    return method;
}

size_t count_leaves(const AstNode& node) {
    return javaparse::frontier(node).size();
}

AstNode grow(Rng& rng, int depth, int& leaf_budget, int& counter) {
    if (depth <= 0 || leaf_budget <= 1 || rng.below(3) == 0) {
        --leaf_budget;
        return leaf("leaf" + std::to_string(counter++));
    }
    AstNode node{"n" + std::to_string(counter++), {}};
    const int kids = 1 + static_cast<int>(rng.below(3));
    for (int i = 0; i < kids && leaf_budget > 0; ++i) {
        node.children.push_back(grow(rng, depth - 1, leaf_budget, counter));
    }
    if (node.children.empty()) node.children.push_back(leaf("leaf" + std::to_string(counter++)));
    return node;
}

AstNode random_tree(Rng& rng, int max_leaves) {
    int budget = 2 + static_cast<int>(rng.below(static_cast<uint64_t>(max_leaves - 1)));
    int counter = 0;
    AstNode root{"root", {}};
    while (budget > 0) {
        root.children.push_back(grow(rng, 3, budget, counter));
    }
    return root;
}

}  // namespace

TEST_CASE("the reference pair produces the documented path string") {
    const auto paths = codepaths::extract_paths(reference_tree(), 0);
    REQUIRE(paths.size() == 1);
    CHECK(paths[0].start == "input");
    CHECK(paths[0].path_string == "input|method|body|String|value");
    CHECK(paths[0].end == "value");
}

TEST_CASE("single-leaf trees yield no paths") {
    CHECK(codepaths::extract_paths(leaf("x"), 0).empty());
    AstNode one{"flat", {leaf("x")}};
    CHECK(codepaths::extract_paths(one, 0).empty());
}

TEST_CASE("flat trees enumerate all leaf pairs") {
    AstNode flat{"flat", {leaf("a"), leaf("b"), leaf("c"), leaf("d")}};
    const auto paths = codepaths::extract_paths(flat, 0);
    CHECK(paths.size() == 6);  // C(4,2)
    for (const auto& p : paths) {
        CHECK(p.path_string == p.start + "|flat|" + p.end);
    }
}

TEST_CASE("path strings begin with start and end with end") {
    const auto outcome = javaparse::parse_source(
        "boolean f(int a, int b) { if (a > 0 && b > 0) { return true; } return false; }");
    const auto paths = codepaths::extract_paths(outcome.tree, 0);
    REQUIRE(!paths.empty());
    for (const auto& p : paths) {
        CHECK(p.path_string.substr(0, p.start.size()) == p.start);
        CHECK(p.path_string.substr(p.path_string.size() - p.end.size()) == p.end);
    }
}

TEST_CASE("uncapped path count equals the brute-force pair count") {
    Rng rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        const AstNode tree = random_tree(rng, 12);
        const size_t leaves = count_leaves(tree);
        if (leaves > 12) continue;
        const auto paths = codepaths::extract_paths(tree, 0);
        CHECK(paths.size() == leaves * (leaves - 1) / 2);
    }
}

TEST_CASE("the node cap drops long paths only") {
    // chain: root -> a -> b -> leaf1; root -> leaf2 (path leaf1..leaf2 has 5 nodes)
    AstNode chain{"root", {}};
    AstNode a{"a", {AstNode{"b", {leaf("leaf1")}}}};
    chain.children.push_back(std::move(a));
    chain.children.push_back(leaf("leaf2"));
    CHECK(codepaths::extract_paths(chain, 0).size() == 1);
    CHECK(codepaths::extract_paths(chain, 5).size() == 1);
    CHECK(codepaths::extract_paths(chain, 4).empty());
}

TEST_CASE("pipe characters inside labels are sanitized in path components") {
    AstNode flat{"flat", {leaf("||"), leaf("x")}};
    const auto paths = codepaths::extract_paths(flat, 0);
    REQUIRE(paths.size() == 1);
    CHECK(paths[0].start == "//");
    CHECK(paths[0].path_string == "//|flat|x");
}

TEST_CASE("sampling keeps everything when it fits") {
    std::vector<CodePath> three = {{"a", "a|r|b", "b"},
                                   {"a", "a|r|c", "c"},
                                   {"b", "b|r|c", "c"}};
    const auto sel = codepaths::sample_paths(three, 5, 42);
    CHECK(sel.kept.size() == 3);
    CHECK(sel.target == 5);

    const auto enc = codepaths::encode_submission(sel, codepaths::Vocab{});
    REQUIRE(enc.mask.size() == 5);
    CHECK(enc.mask == std::vector<uint8_t>{1, 1, 1, 0, 0});
}

TEST_CASE("identity selection when sizes match") {
    std::vector<CodePath> paths;
    for (int i = 0; i < 10; ++i) {
        paths.push_back({"s" + std::to_string(i), "s|r|e", "e"});
    }
    const auto sel = codepaths::sample_paths(paths, 10, 7);
    REQUIRE(sel.kept.size() == 10);
    for (int i = 0; i < 10; ++i) CHECK(sel.kept[static_cast<size_t>(i)].start == paths[static_cast<size_t>(i)].start);
}

TEST_CASE("oversized pools sample deterministically per seed") {
    std::vector<CodePath> paths;
    for (int i = 0; i < 500; ++i) {
        paths.push_back({"s" + std::to_string(i), "p" + std::to_string(i), "e"});
    }
    const auto a = codepaths::sample_paths(paths, 200, 1234);
    const auto b = codepaths::sample_paths(paths, 200, 1234);
    REQUIRE(a.kept.size() == 200);
    for (size_t i = 0; i < 200; ++i) CHECK(a.kept[i] == b.kept[i]);

    const auto c = codepaths::sample_paths(paths, 200, 1235);
    bool differs = false;
    for (size_t i = 0; i < 200; ++i) differs = differs || !(a.kept[i] == c.kept[i]);
    CHECK(differs);

    // selection without replacement: all distinct
    std::set<std::string> starts;
    for (const auto& p : a.kept) starts.insert(p.start);
    CHECK(starts.size() == 200);
}

TEST_CASE("vocabulary thresholds by frequency against a hand count") {
    std::vector<std::vector<CodePath>> corpus;
    // "x" appears 5 times as a start label, "rare" once
    for (int i = 0; i < 5; ++i) {
        corpus.push_back({{"x", "x|r|y", "y"}});
    }
    corpus.push_back({{"rare", "rare|r|y", "y"}});
    const auto vocab = codepaths::build_vocab(corpus, 2);
    CHECK(vocab.node_id("x") > codepaths::Vocab::kUnk);
    CHECK(vocab.node_id("y") > codepaths::Vocab::kUnk);
    CHECK(vocab.node_id("rare") == codepaths::Vocab::kUnk);
    CHECK(vocab.path_id("x|r|y") > codepaths::Vocab::kUnk);
    CHECK(vocab.path_id("rare|r|y") == codepaths::Vocab::kUnk);

    // independent frequency count on a random corpus
    Rng rng(5);
    std::vector<std::vector<CodePath>> random_corpus;
    std::map<std::string, int> start_freq;
    for (int s = 0; s < 60; ++s) {
        std::vector<CodePath> sub;
        for (int i = 0; i < 3; ++i) {
            const std::string start = "s" + std::to_string(rng.below(12));
            const std::string end = "e" + std::to_string(rng.below(12));
            ++start_freq[start];
            ++start_freq[end];
            sub.push_back({start, start + "|r|" + end, end});
        }
        random_corpus.push_back(std::move(sub));
    }
    const auto v2 = codepaths::build_vocab(random_corpus, 2);
    int expected = 0;
    for (const auto& [label, count] : start_freq) expected += count >= 2 ? 1 : 0;
    CHECK(static_cast<int>(v2.node_labels.size()) == expected);
}

TEST_CASE("empty corpus degenerates to pad and unk only") {
    const auto vocab = codepaths::build_vocab({}, 2);
    CHECK(vocab.node_size() == 2);
    CHECK(vocab.path_size() == 2);
    CHECK(vocab.node_id("anything") == codepaths::Vocab::kUnk);
}

TEST_CASE("encoding maps unknowns to UNK and padding to PAD with zero mask") {
    std::vector<std::vector<CodePath>> corpus = {
        {{"a", "a|r|b", "b"}, {"a", "a|r|b", "b"}}};
    const auto vocab = codepaths::build_vocab(corpus, 2);

    codepaths::SampledPaths sel;
    sel.target = 3;
    sel.kept = {{"a", "a|r|b", "b"}, {"novel", "novel|r|b", "b"}};
    const auto enc = codepaths::encode_submission(sel, vocab);
    CHECK(enc.starts[0] == vocab.node_id("a"));
    CHECK(enc.starts[1] == codepaths::Vocab::kUnk);
    CHECK(enc.paths[1] == codepaths::Vocab::kUnk);
    CHECK(enc.mask == std::vector<uint8_t>{1, 1, 0});
    CHECK(enc.starts[2] == codepaths::Vocab::kPad);
    CHECK(enc.ends[2] == codepaths::Vocab::kPad);
}

TEST_CASE("mask is always a prefix of ones and pads align") {
    Rng rng(31);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<CodePath> paths;
        const int n = static_cast<int>(rng.below(30));
        for (int i = 0; i < n; ++i) {
            paths.push_back({"s", "s|r|e", "e"});
        }
        const int R = 1 + static_cast<int>(rng.below(25));
        const auto enc = codepaths::encode_submission(
            codepaths::sample_paths(paths, R, trial), codepaths::Vocab{});
        bool seen_zero = false;
        for (size_t i = 0; i < enc.mask.size(); ++i) {
            if (enc.mask[i] == 0) seen_zero = true;
            if (seen_zero) {
                CHECK(enc.mask[i] == 0);
                CHECK(enc.starts[i] == codepaths::Vocab::kPad);
                CHECK(enc.paths[i] == codepaths::Vocab::kPad);
                CHECK(enc.ends[i] == codepaths::Vocab::kPad);
            }
        }
    }
}

namespace {

AstNode mirror(const AstNode& node) {
    AstNode out{node.label, {}};
    for (auto it = node.children.rbegin(); it != node.children.rend(); ++it) {
        out.children.push_back(mirror(*it));
    }
    return out;
}

std::string reverse_components(const std::string& path) {
    std::vector<std::string> parts;
    size_t begin = 0;
    for (size_t i = 0; i <= path.size(); ++i) {
        if (i == path.size() || path[i] == '|') {
            parts.push_back(path.substr(begin, i - begin));
            begin = i + 1;
        }
    }
    std::string out;
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
        if (!out.empty()) out.push_back('|');
        out += *it;
    }
    return out;
}

}  // namespace

TEST_CASE("mirrored trees yield the component-reversed path set") {
    Rng rng(271);
    for (int trial = 0; trial < 50; ++trial) {
        const AstNode tree = random_tree(rng, 10);
        const AstNode flipped = mirror(tree);
        const auto a = codepaths::extract_paths(tree, 0);
        const auto b = codepaths::extract_paths(flipped, 0);
        REQUIRE(a.size() == b.size());
        std::multiset<std::string> lhs, rhs;
        for (const auto& p : a) lhs.insert(p.path_string);
        for (const auto& p : b) rhs.insert(reverse_components(p.path_string));
        CHECK(lhs == rhs);
    }
}

TEST_CASE("extraction from a parsed method matches frontier pair order") {
    const auto outcome = javaparse::parse_source("int f(int a) { return a; }");
    REQUIRE(outcome.mode == javaparse::ParseMode::Parsed);
    const auto leaves = javaparse::frontier(outcome.tree);
    const auto paths = codepaths::extract_paths(outcome.tree, 0);
    CHECK(paths.size() == leaves.size() * (leaves.size() - 1) / 2);
    // first pair is the leftmost leaf against its immediate successor
    CHECK(paths[0].start == codepaths::sanitize_label(leaves[0]->label));
}
