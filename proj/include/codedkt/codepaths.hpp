#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "codedkt/javaparse.hpp"

namespace codedkt::codepaths {

// One leaf-to-leaf path: both endpoint labels plus the '|'-joined label walk
// between them (up through the lowest common ancestor, then down). Endpoint
// components are sanitized: surrounding string/char quotes are stripped and
// '|' characters inside a label are replaced so the join stays unambiguous.
struct CodePath {
    std::string start;
    std::string path_string;
    std::string end;

    bool operator==(const CodePath& other) const = default;
};

std::string sanitize_label(const std::string& label);

// All leaf pairs (left-to-right frontier order) whose connecting path has at
// most max_path_nodes nodes; 0 disables the cap.
std::vector<CodePath> extract_paths(const javaparse::AstNode& tree,
                                    int max_path_nodes);

struct SampledPaths {
    std::vector<CodePath> kept;  // ≤ R paths, frontier order preserved
    int target = 0;              // R
};

// Keep everything when |paths| <= R, otherwise a seeded sample without
// replacement, original order preserved.
SampledPaths sample_paths(const std::vector<CodePath>& paths, int R,
                          uint64_t rng_seed);

struct Vocab {
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;

    std::vector<std::string> node_labels;   // index i+2 -> label
    std::vector<std::string> path_strings;  // index i+2 -> path string
    std::map<std::string, int> node_index;
    std::map<std::string, int> path_index;
    int min_count = 2;

    int node_size() const { return static_cast<int>(node_labels.size()) + 2; }
    int path_size() const { return static_cast<int>(path_strings.size()) + 2; }
    int node_id(const std::string& label) const;
    int path_id(const std::string& path_string) const;
};

// Streaming frequency counter so vocabularies can be built without holding
// every extracted path in memory.
class VocabBuilder {
public:
    void add(const CodePath& path);
    Vocab finish(int min_count) const;

private:
    std::map<std::string, int> node_counts_;
    std::map<std::string, int> path_counts_;
};

Vocab build_vocab(const std::vector<std::vector<CodePath>>& training_paths,
                  int min_count);

struct EncodedSubmission {
    std::vector<int> starts;      // length R
    std::vector<int> paths;       // length R
    std::vector<int> ends;        // length R
    std::vector<uint8_t> mask;    // 1 for real paths, prefix of ones
};

EncodedSubmission encode_submission(const SampledPaths& selection,
                                    const Vocab& vocab);

}  // namespace codedkt::codepaths
