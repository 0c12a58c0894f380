#include "codedkt/codepaths.hpp"

#include <algorithm>

#include "codedkt/rng.hpp"

namespace codedkt::codepaths {

std::string sanitize_label(const std::string& label) {
    std::string out = label;
    if (out.size() >= 2 &&
        ((out.front() == '"' && out.back() == '"') ||
         (out.front() == '\'' && out.back() == '\''))) {
        out = out.substr(1, out.size() - 2);
    }
    for (char& c : out) {
        if (c == '|') c = '/';
    }
    return out;
}

namespace {

struct LeafInfo {
    std::string label;                // sanitized
    std::vector<int> ancestor_ids;    // root..parent, by node id
    std::vector<const std::string*> ancestor_labels;  // parallel raw labels
};

void collect_leaves(const javaparse::AstNode& node, int& next_id,
                    std::vector<int>& id_stack,
                    std::vector<const std::string*>& label_stack,
                    std::vector<LeafInfo>& leaves) {
    if (node.is_leaf()) {
        leaves.push_back({sanitize_label(node.label), id_stack, label_stack});
        return;
    }
    id_stack.push_back(next_id++);
    label_stack.push_back(&node.label);
    for (const auto& child : node.children) {
        collect_leaves(child, next_id, id_stack, label_stack, leaves);
    }
    id_stack.pop_back();
    label_stack.pop_back();
}

}  // namespace

std::vector<CodePath> extract_paths(const javaparse::AstNode& tree,
                                    int max_path_nodes) {
    std::vector<LeafInfo> leaves;
    {
        int next_id = 0;
        std::vector<int> id_stack;
        std::vector<const std::string*> label_stack;
        collect_leaves(tree, next_id, id_stack, label_stack, leaves);
    }

    std::vector<CodePath> out;
    const size_t n = leaves.size();
    for (size_t i = 0; i + 1 < n; ++i) {
        for (size_t j = i + 1; j < n; ++j) {
            const LeafInfo& a = leaves[i];
            const LeafInfo& b = leaves[j];
            size_t common = 0;
            const size_t limit = std::min(a.ancestor_ids.size(), b.ancestor_ids.size());
            while (common < limit && a.ancestor_ids[common] == b.ancestor_ids[common]) {
                ++common;
            }
            // Leaves always share the root, so common >= 1 for any two leaves
            // of the same tree.
            const size_t up = a.ancestor_ids.size() - common;
            const size_t down = b.ancestor_ids.size() - common;
            const size_t node_count = up + down + 3;  // both leaves + LCA
            if (max_path_nodes > 0 &&
                node_count > static_cast<size_t>(max_path_nodes)) {
                continue;
            }
            std::string path = a.label;
            for (size_t k = a.ancestor_ids.size(); k-- > common;) {
                path += '|';
                path += sanitize_label(*a.ancestor_labels[k]);
            }
            path += '|';
            path += sanitize_label(*a.ancestor_labels[common - 1]);  // LCA
            for (size_t k = common; k < b.ancestor_ids.size(); ++k) {
                path += '|';
                path += sanitize_label(*b.ancestor_labels[k]);
            }
            path += '|';
            path += b.label;
            out.push_back({a.label, std::move(path), b.label});
        }
    }
    return out;
}

SampledPaths sample_paths(const std::vector<CodePath>& paths, int R,
                          uint64_t rng_seed) {
    SampledPaths result;
    result.target = R;
    if (static_cast<int>(paths.size()) <= R) {
        result.kept = paths;
        return result;
    }
    Rng rng(rng_seed);
    const std::vector<int> pick =
        rng.sample_without_replacement(static_cast<int>(paths.size()), R);
    result.kept.reserve(pick.size());
    for (int idx : pick) result.kept.push_back(paths[static_cast<size_t>(idx)]);
    return result;
}

int Vocab::node_id(const std::string& label) const {
    auto it = node_index.find(label);
    return it == node_index.end() ? kUnk : it->second;
}

int Vocab::path_id(const std::string& path_string) const {
    auto it = path_index.find(path_string);
    return it == path_index.end() ? kUnk : it->second;
}

void VocabBuilder::add(const CodePath& path) {
    ++node_counts_[path.start];
    ++node_counts_[path.end];
    ++path_counts_[path.path_string];
}

namespace {

void assign_indices(const std::map<std::string, int>& counts, int min_count,
                    std::vector<std::string>& labels,
                    std::map<std::string, int>& index) {
    // Most frequent first; ties by label for stable indices.
    std::vector<std::pair<int, const std::string*>> order;
    order.reserve(counts.size());
    for (const auto& [label, count] : counts) {
        if (count >= min_count) order.emplace_back(count, &label);
    }
    std::sort(order.begin(), order.end(),
              [](const auto& lhs, const auto& rhs) {
                  if (lhs.first != rhs.first) return lhs.first > rhs.first;
                  return *lhs.second < *rhs.second;
              });
    labels.clear();
    labels.reserve(order.size());
    for (const auto& [count, label] : order) {
        index[*label] = static_cast<int>(labels.size()) + 2;
        labels.push_back(*label);
    }
}

}  // namespace

Vocab VocabBuilder::finish(int min_count) const {
    Vocab vocab;
    vocab.min_count = min_count;
    assign_indices(node_counts_, min_count, vocab.node_labels, vocab.node_index);
    assign_indices(path_counts_, min_count, vocab.path_strings, vocab.path_index);
    return vocab;
}

Vocab build_vocab(const std::vector<std::vector<CodePath>>& training_paths,
                  int min_count) {
    VocabBuilder builder;
    for (const auto& submission : training_paths) {
        for (const auto& path : submission) builder.add(path);
    }
    return builder.finish(min_count);
}

EncodedSubmission encode_submission(const SampledPaths& selection,
                                    const Vocab& vocab) {
    const int R = selection.target;
    EncodedSubmission enc;
    enc.starts.assign(static_cast<size_t>(R), Vocab::kPad);
    enc.paths.assign(static_cast<size_t>(R), Vocab::kPad);
    enc.ends.assign(static_cast<size_t>(R), Vocab::kPad);
    enc.mask.assign(static_cast<size_t>(R), 0);
    const size_t real = std::min(selection.kept.size(), static_cast<size_t>(R));
    for (size_t r = 0; r < real; ++r) {
        const CodePath& path = selection.kept[r];
        enc.starts[r] = vocab.node_id(path.start);
        enc.paths[r] = vocab.path_id(path.path_string);
        enc.ends[r] = vocab.node_id(path.end);
        enc.mask[r] = 1;
    }
    return enc;
}

}  // namespace codedkt::codepaths
