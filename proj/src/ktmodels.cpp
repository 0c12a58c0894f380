#include "codedkt/ktmodels.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "codedkt/rng.hpp"

namespace codedkt::ktmodels {

using autodiff::Adam;
using autodiff::Tape;
using autodiff::Tensor;

const char* model_kind_name(ModelKind kind) {
    switch (kind) {
        case ModelKind::Bkt: return "bkt";
        case ModelKind::Dkt: return "dkt";
        case ModelKind::CodeDkt: return "codedkt";
        case ModelKind::DktTfidf: return "dkt-tfidf";
        case ModelKind::DktExpert: return "dkt-expert";
    }
    return "unknown";
}

ModelKind model_kind_from_name(const std::string& name) {
    if (name == "bkt") return ModelKind::Bkt;
    if (name == "dkt") return ModelKind::Dkt;
    if (name == "codedkt") return ModelKind::CodeDkt;
    if (name == "dkt-tfidf" || name == "dkt_tfidf") return ModelKind::DktTfidf;
    if (name == "dkt-expert" || name == "dkt_expert") return ModelKind::DktExpert;
    throw std::runtime_error("unknown model kind: " + name);
}

// ---------------------------------------------------------------- tfidf ----

namespace {

std::vector<std::string> doc_tokens(const std::string& source) {
    std::vector<std::string> out;
    for (const auto& tok : javaparse::tokenize(source)) {
        // punctuation carries no term signal, everything else does
        if (tok.kind != javaparse::TokenKind::Punctuation) out.push_back(tok.text);
    }
    return out;
}

}  // namespace

TfidfModel fit_tfidf(const std::vector<std::string>& train_docs, int top_k) {
    const double n_docs = static_cast<double>(train_docs.size());
    std::map<std::string, int> df;
    std::map<std::string, double> mass;  // sum of tf*idf over documents
    std::vector<std::map<std::string, int>> tf_per_doc;
    tf_per_doc.reserve(train_docs.size());
    for (const auto& doc : train_docs) {
        std::map<std::string, int> tf;
        for (const auto& tok : doc_tokens(doc)) ++tf[tok];
        for (const auto& [tok, count] : tf) ++df[tok];
        tf_per_doc.push_back(std::move(tf));
    }
    std::map<std::string, double> idf;
    for (const auto& [tok, d] : df) {
        idf[tok] = std::log((1.0 + n_docs) / (1.0 + d)) + 1.0;
    }
    for (const auto& tf : tf_per_doc) {
        for (const auto& [tok, count] : tf) mass[tok] += count * idf[tok];
    }

    std::vector<std::pair<double, std::string>> ranked;
    ranked.reserve(mass.size());
    for (const auto& [tok, m] : mass) ranked.emplace_back(m, tok);
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    if (top_k > 0 && static_cast<int>(ranked.size()) > top_k) {
        ranked.resize(static_cast<size_t>(top_k));
    }

    TfidfModel model;
    for (const auto& [m, tok] : ranked) {
        model.tokens.push_back(tok);
        model.idf.push_back(idf[tok]);
    }
    return model;
}

std::vector<double> TfidfModel::features(const std::string& source) const {
    std::map<std::string, int> tf;
    for (const auto& tok : doc_tokens(source)) ++tf[tok];
    std::vector<double> out(tokens.size(), 0.0);
    for (size_t i = 0; i < tokens.size(); ++i) {
        auto it = tf.find(tokens[i]);
        if (it != tf.end()) out[i] = it->second * idf[i];
    }
    return out;
}

std::pair<std::vector<std::vector<double>>, std::vector<std::vector<double>>>
tfidf_features(const std::vector<std::string>& train_docs,
               const std::vector<std::string>& test_docs, int top_k) {
    const TfidfModel model = fit_tfidf(train_docs, top_k);
    std::pair<std::vector<std::vector<double>>, std::vector<std::vector<double>>> out;
    for (const auto& doc : train_docs) out.first.push_back(model.features(doc));
    for (const auto& doc : test_docs) out.second.push_back(model.features(doc));
    return out;
}

// ------------------------------------------------------- expert features ----

const std::vector<std::string> kExpertRules = {
    "has-if",
    "has-else",
    "has-else-if",
    "has-nested-if",
    "uses-&&",
    "uses-||",
    "uses-!",
    "has-return-of-boolean-expression",
    "calls-qualified-function",
};

namespace {

using javaparse::AstNode;

bool any_node(const AstNode& node, const std::string& label) {
    if (node.label == label && !node.is_leaf()) return true;
    for (const auto& child : node.children) {
        if (any_node(child, label)) return true;
    }
    return false;
}

const AstNode* else_branch(const AstNode& if_node) {
    for (const auto& child : if_node.children) {
        if (child.label == "else" && !child.is_leaf()) return &child;
    }
    return nullptr;
}

bool is_if(const AstNode& node) { return node.label == "if" && !node.is_leaf(); }

bool has_else_if(const AstNode& node) {
    if (is_if(node)) {
        const AstNode* els = else_branch(node);
        if (els && !els->children.empty() && is_if(els->children.front())) return true;
    }
    for (const auto& child : node.children) {
        if (has_else_if(child)) return true;
    }
    return false;
}

// An if whose then-branch contains another if, or whose else-branch contains
// one beyond the direct else-if continuation.
bool has_nested_if(const AstNode& node) {
    if (is_if(node)) {
        for (const auto& child : node.children) {
            if (child.label == "then" && any_node(child, "if")) return true;
            if (child.label == "else" && !child.is_leaf()) {
                for (const auto& stmt : child.children) {
                    if (is_if(stmt)) continue;  // else-if chain, not nesting
                    if (any_node(stmt, "if")) return true;
                }
            }
        }
    }
    for (const auto& child : node.children) {
        if (has_nested_if(child)) return true;
    }
    return false;
}

const std::set<std::string>& boolean_op_labels() {
    static const std::set<std::string> labels = {
        "binop:&&", "binop:||", "binop:==", "binop:!=", "binop:<",
        "binop:<=", "binop:>",  "binop:>=", "unary:!"};
    return labels;
}

bool boolean_expression_inside(const AstNode& node) {
    if (!node.is_leaf() && boolean_op_labels().count(node.label)) return true;
    if (node.is_leaf() && (node.label == "true" || node.label == "false")) return true;
    for (const auto& child : node.children) {
        if (boolean_expression_inside(child)) return true;
    }
    return false;
}

bool has_boolean_return(const AstNode& node) {
    if (node.label == "return" && !node.is_leaf()) {
        for (const auto& child : node.children) {
            if (child.is_leaf() && (child.label == "return" || child.label == ";")) continue;
            if (boolean_expression_inside(child)) return true;
        }
    }
    for (const auto& child : node.children) {
        if (has_boolean_return(child)) return true;
    }
    return false;
}

bool has_qualified_call(const AstNode& node) {
    if (node.label == "call" && !node.is_leaf()) {
        for (const auto& child : node.children) {
            if (child.is_leaf() && child.label == ".") return true;
            if (child.is_leaf() && child.label == "(") break;
        }
    }
    for (const auto& child : node.children) {
        if (has_qualified_call(child)) return true;
    }
    return false;
}

bool flat_identifier(const std::string& text) {
    if (text.empty()) return false;
    const char c = text.front();
    return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '$';
}

// Token-level approximations for fallback trees (leaves in source order).
bool flat_rule(const std::vector<const AstNode*>& leaves, const std::string& rule) {
    auto text = [&](size_t i) -> const std::string& { return leaves[i]->label; };
    const size_t n = leaves.size();
    if (rule == "has-if" || rule == "has-else") {
        const std::string needle = rule == "has-if" ? "if" : "else";
        for (size_t i = 0; i < n; ++i) {
            if (text(i) == needle) return true;
        }
        return false;
    }
    if (rule == "has-else-if") {
        for (size_t i = 0; i + 1 < n; ++i) {
            if (text(i) == "else" && text(i + 1) == "if") return true;
        }
        return false;
    }
    if (rule == "has-nested-if") {
        int count = 0;
        for (size_t i = 0; i < n; ++i) count += text(i) == "if" ? 1 : 0;
        return count >= 2;
    }
    if (rule == "uses-&&" || rule == "uses-||" || rule == "uses-!") {
        const std::string needle = rule.substr(5);
        for (size_t i = 0; i < n; ++i) {
            if (text(i) == needle) return true;
        }
        return false;
    }
    if (rule == "has-return-of-boolean-expression") {
        static const std::set<std::string> kBoolTokens = {
            "&&", "||", "!", "==", "!=", "<", "<=", ">", ">=", "true", "false"};
        for (size_t i = 0; i < n; ++i) {
            if (text(i) != "return") continue;
            for (size_t j = i + 1; j < n && text(j) != ";"; ++j) {
                if (kBoolTokens.count(text(j))) return true;
            }
        }
        return false;
    }
    if (rule == "calls-qualified-function") {
        for (size_t i = 0; i + 3 < n; ++i) {
            if (flat_identifier(text(i)) && text(i + 1) == "." &&
                flat_identifier(text(i + 2)) && text(i + 3) == "(") {
                return true;
            }
        }
        return false;
    }
    throw std::runtime_error("unknown expert rule: " + rule);
}

bool tree_rule(const AstNode& tree, const std::string& rule) {
    if (rule == "has-if") return any_node(tree, "if");
    if (rule == "has-else") return any_node(tree, "else");
    if (rule == "has-else-if") return has_else_if(tree);
    if (rule == "has-nested-if") return has_nested_if(tree);
    if (rule == "uses-&&") return any_node(tree, "binop:&&");
    if (rule == "uses-||") return any_node(tree, "binop:||");
    if (rule == "uses-!") return any_node(tree, "unary:!");
    if (rule == "has-return-of-boolean-expression") return has_boolean_return(tree);
    if (rule == "calls-qualified-function") return has_qualified_call(tree);
    throw std::runtime_error("unknown expert rule: " + rule);
}

}  // namespace

std::vector<int> expert_features(const javaparse::ParseOutcome& outcome,
                                 const std::vector<std::string>& rules) {
    std::vector<int> out;
    out.reserve(rules.size());
    if (outcome.mode == javaparse::ParseMode::Parsed) {
        for (const auto& rule : rules) out.push_back(tree_rule(outcome.tree, rule) ? 1 : 0);
    } else {
        const auto leaves = javaparse::frontier(outcome.tree);
        // Zero tokens degenerate to a lone "flat" leaf: no features fire.
        if (leaves.size() == 1 && leaves[0]->label == "flat") {
            out.assign(rules.size(), 0);
            return out;
        }
        for (const auto& rule : rules) out.push_back(flat_rule(leaves, rule) ? 1 : 0);
    }
    return out;
}

// -------------------------------------------------------- model plumbing ----

namespace {

constexpr uint32_t kEvalEpochTag = 0xEEEE0000u;

// With per-epoch resampling the evaluation pass draws its own fixed sample;
// with once-only sampling every pass must reuse the epoch-0 selection.
uint32_t eval_tag(const ktmodels::ModelConfig& config) {
    return config.resample_paths ? kEvalEpochTag : 0u;
}

struct ModelSpec {
    ModelKind kind = ModelKind::Dkt;
    ModelConfig config;
    int n_problems = 0;   // M
    int trace_dim = 0;    // width of the x_t row
    Placement placement = Placement::AttentionAndTrace;

    int attention_dim() const {
        const int e = config.code_embedding_size;
        return 3 * e + (placement == Placement::TraceOnly ? 0 : trace_dim);
    }
    int cell_input_dim() const {
        if (kind != ModelKind::CodeDkt) return trace_dim;
        const int z = config.code_embedding_size;
        return placement == Placement::AttentionOnly ? z : z + trace_dim;
    }
};

ModelSpec make_spec(ModelKind kind, const ModelConfig& config, int M,
                    int trace_dim) {
    ModelSpec spec;
    spec.kind = kind;
    spec.config = config;
    spec.n_problems = M;
    spec.trace_dim = trace_dim;
    // The pretrained encoder scores pure code, so the static variant keeps
    // correctness out of the attention input; the trace concat still sees it.
    spec.placement = config.embedding_mode == EmbeddingMode::StaticPretrained
                         ? Placement::TraceOnly
                         : config.placement;
    return spec;
}

// Vocab-encoded per-submission path pool the per-epoch sampler draws from.
struct PoolEntry {
    std::vector<int> starts, paths, ends;

    int size() const { return static_cast<int>(starts.size()); }
};

struct PreparedStep {
    std::vector<double> x;
    const PoolEntry* pool = nullptr;
    uint64_t uid = 0;
};

struct PreparedSeq {
    std::vector<PreparedStep> steps;
    std::vector<int> q, a;
    std::vector<uint8_t> first;

    int length() const { return static_cast<int>(steps.size()); }
};

codepaths::EncodedSubmission sample_pool(const PoolEntry& pool, int R,
                                         uint64_t seed) {
    codepaths::EncodedSubmission enc;
    enc.starts.assign(static_cast<size_t>(R), codepaths::Vocab::kPad);
    enc.paths.assign(static_cast<size_t>(R), codepaths::Vocab::kPad);
    enc.ends.assign(static_cast<size_t>(R), codepaths::Vocab::kPad);
    enc.mask.assign(static_cast<size_t>(R), 0);
    const int n = pool.size();
    if (n <= R) {
        for (int i = 0; i < n; ++i) {
            enc.starts[static_cast<size_t>(i)] = pool.starts[static_cast<size_t>(i)];
            enc.paths[static_cast<size_t>(i)] = pool.paths[static_cast<size_t>(i)];
            enc.ends[static_cast<size_t>(i)] = pool.ends[static_cast<size_t>(i)];
            enc.mask[static_cast<size_t>(i)] = 1;
        }
        return enc;
    }
    Rng rng(seed);
    const std::vector<int> pick = rng.sample_without_replacement(n, R);
    for (int i = 0; i < R; ++i) {
        const size_t src = static_cast<size_t>(pick[static_cast<size_t>(i)]);
        enc.starts[static_cast<size_t>(i)] = pool.starts[src];
        enc.paths[static_cast<size_t>(i)] = pool.paths[src];
        enc.ends[static_cast<size_t>(i)] = pool.ends[src];
        enc.mask[static_cast<size_t>(i)] = 1;
    }
    return enc;
}

// Raw extracted paths per distinct source text, capped to the pool limit.
struct RawPools {
    std::map<uint64_t, std::vector<codepaths::CodePath>> by_hash;
    std::map<uint64_t, int> multiplicity;
};

RawPools extract_pools(const std::vector<dataset::AttemptSequence>& sequences,
                       const ModelConfig& config) {
    RawPools pools;
    for (const auto& seq : sequences) {
        for (const auto& attempt : seq.attempts) {
            const uint64_t h = stable_hash(attempt.code);
            ++pools.multiplicity[h];
            if (pools.by_hash.count(h)) continue;
            const auto outcome = javaparse::parse_source(attempt.code);
            auto paths = codepaths::extract_paths(outcome.tree, config.max_path_nodes);
            if (config.path_pool > 0 &&
                static_cast<int>(paths.size()) > config.path_pool) {
                auto sampled = codepaths::sample_paths(paths, config.path_pool,
                                                       mix64(h, 0xb00157ULL));
                paths = std::move(sampled.kept);
            }
            pools.by_hash.emplace(h, std::move(paths));
        }
    }
    return pools;
}

codepaths::Vocab vocab_from_pools(const RawPools& pools, int min_count) {
    codepaths::VocabBuilder builder;
    for (const auto& [h, paths] : pools.by_hash) {
        const int times = pools.multiplicity.at(h);
        for (const auto& path : paths) {
            for (int i = 0; i < times; ++i) builder.add(path);
        }
    }
    return builder.finish(min_count);
}

std::map<uint64_t, PoolEntry> encode_pools(const RawPools& pools,
                                           const codepaths::Vocab& vocab) {
    std::map<uint64_t, PoolEntry> encoded;
    for (const auto& [h, paths] : pools.by_hash) {
        PoolEntry entry;
        entry.starts.reserve(paths.size());
        entry.paths.reserve(paths.size());
        entry.ends.reserve(paths.size());
        for (const auto& path : paths) {
            entry.starts.push_back(vocab.node_id(path.start));
            entry.paths.push_back(vocab.path_id(path.path_string));
            entry.ends.push_back(vocab.node_id(path.end));
        }
        encoded.emplace(h, std::move(entry));
    }
    return encoded;
}

std::vector<double> skill_trace_vector(const dataset::ProblemCatalog& catalog,
                                       int q, int a) {
    const std::string& problem = catalog.problems[static_cast<size_t>(q)];
    auto it = catalog.skill_vectors.find(problem);
    if (it == catalog.skill_vectors.end()) {
        throw std::runtime_error("no skill vector for problem " + problem +
                                 " (feature baselines need skill vectors)");
    }
    return dataset::encode_attempt_skills(it->second, a);
}

// Per-sequence inputs for one model kind. The code pools live in `pools`
// (owned by the caller) and are shared between identical source texts.
struct PreparedData {
    std::vector<PreparedSeq> seqs;
    std::map<uint64_t, PoolEntry> pools;
};

PreparedData prepare_sequences(const ModelKind kind,
                               const std::vector<dataset::AttemptSequence>& sequences,
                               const dataset::ProblemCatalog& catalog,
                               const ModelConfig& config,
                               const codepaths::Vocab* vocab,
                               const TfidfModel* tfidf,
                               const std::vector<std::string>* rules) {
    PreparedData data;
    const int M = catalog.size();

    if (kind == ModelKind::CodeDkt) {
        RawPools raw = extract_pools(sequences, config);
        data.pools = encode_pools(raw, *vocab);
    }

    // Feature vectors per distinct source, for the naive baselines.
    std::map<uint64_t, std::vector<double>> feature_cache;
    auto features_for = [&](const std::string& code) -> const std::vector<double>& {
        const uint64_t h = stable_hash(code);
        auto it = feature_cache.find(h);
        if (it != feature_cache.end()) return it->second;
        std::vector<double> feats;
        if (kind == ModelKind::DktTfidf) {
            feats = tfidf->features(code);
        } else {
            const auto outcome = javaparse::parse_source(code);
            for (int bit : expert_features(outcome, *rules)) {
                feats.push_back(static_cast<double>(bit));
            }
        }
        return feature_cache.emplace(h, std::move(feats)).first->second;
    };

    data.seqs.reserve(sequences.size());
    for (const auto& seq : sequences) {
        PreparedSeq prepared;
        const uint64_t student_hash = stable_hash(seq.student_id);
        prepared.steps.reserve(seq.attempts.size());
        for (size_t t = 0; t < seq.attempts.size(); ++t) {
            const dataset::Attempt& at = seq.attempts[t];
            PreparedStep step;
            switch (kind) {
                case ModelKind::Dkt:
                case ModelKind::CodeDkt:
                    step.x = dataset::encode_attempt(at.q, at.a, M);
                    break;
                case ModelKind::DktTfidf:
                case ModelKind::DktExpert: {
                    step.x = skill_trace_vector(catalog, at.q, at.a);
                    const std::vector<double>& feats = features_for(at.code);
                    step.x.insert(step.x.end(), feats.begin(), feats.end());
                    break;
                }
                case ModelKind::Bkt:
                    throw std::runtime_error("bkt is not a tape model");
            }
            if (kind == ModelKind::CodeDkt) {
                step.pool = &data.pools.at(stable_hash(at.code));
                step.uid = mix64(student_hash, static_cast<uint64_t>(t));
            }
            prepared.q.push_back(at.q);
            prepared.a.push_back(at.a);
            prepared.first.push_back(at.first_attempt ? 1 : 0);
            prepared.steps.push_back(std::move(step));
        }
        data.seqs.push_back(std::move(prepared));
    }
    return data;
}

// ------------------------------------------------------------ the tapes ----

struct TapeParams {
    std::map<std::string, int> ids;

    int at(const std::string& name) const {
        auto it = ids.find(name);
        if (it == ids.end()) throw std::runtime_error("missing parameter " + name);
        return it->second;
    }
};

TapeParams bind_params(Tape& tape, const ParamMap& params,
                       const std::set<std::string>& frozen) {
    TapeParams bound;
    for (const auto& [name, tensor] : params) {
        bound.ids[name] = frozen.count(name) ? tape.input_ref(&tensor)
                                             : tape.param(&tensor);
    }
    return bound;
}

std::pair<int, int> lstm_step(Tape& tape, const TapeParams& P, int x, int h,
                              int c, int hidden) {
    const int gates = tape.add(
        tape.add(tape.matmul(x, P.at("W_x")), tape.matmul(h, P.at("W_h"))),
        P.at("b"));
    const int gate_i = tape.sigmoid_op(tape.slice_cols(gates, 0, hidden));
    const int gate_f = tape.sigmoid_op(tape.slice_cols(gates, hidden, 2 * hidden));
    const int gate_g = tape.tanh_op(tape.slice_cols(gates, 2 * hidden, 3 * hidden));
    const int gate_o = tape.sigmoid_op(tape.slice_cols(gates, 3 * hidden, 4 * hidden));
    const int c_new = tape.add(tape.mul(gate_f, c), tape.mul(gate_i, gate_g));
    const int h_new = tape.mul(gate_o, tape.tanh_op(c_new));
    return {h_new, c_new};
}

int rnn_step(Tape& tape, const TapeParams& P, int x, int h) {
    return tape.tanh_op(
        tape.add(tape.matmul(x, P.at("W_xh")), tape.matmul(h, P.at("W_hh"))));
}

int code_vector_node(Tape& tape, const TapeParams& P,
                     const codepaths::EncodedSubmission& enc, int x_var,
                     bool append_x) {
    const int R = static_cast<int>(enc.starts.size());
    const int e_start = tape.embedding_lookup(P.at("W_enode"), enc.starts);
    const int e_path = tape.embedding_lookup(P.at("W_epath"), enc.paths);
    const int e_end = tape.embedding_lookup(P.at("W_enode"), enc.ends);
    std::vector<int> parts = {e_start, e_path, e_end};
    if (append_x) parts.push_back(tape.tile_rows(x_var, R));
    const int context = tape.concat_cols(parts);
    const int logits = tape.matmul(context, P.at("W_a"));
    const int alpha = tape.masked_softmax(logits, enc.mask);
    const int pooled = tape.weighted_sum(context, alpha);
    return tape.matmul(pooled, P.at("W_0"));
}

// Forward over one sequence; returns the per-step output node ids.
std::vector<int> run_sequence(Tape& tape, const TapeParams& P,
                              const ModelSpec& spec, const PreparedSeq& seq,
                              uint32_t epoch_tag) {
    const int hidden = spec.config.hidden_size;
    int h = tape.input(Tensor::zeros(1, hidden));
    int c = tape.input(Tensor::zeros(1, hidden));

    std::vector<int> outputs;
    outputs.reserve(seq.steps.size());
    for (const PreparedStep& step : seq.steps) {
        const int x_var = tape.input(Tensor::row(step.x));
        int cell_in = x_var;
        if (spec.kind == ModelKind::CodeDkt) {
            const auto enc = sample_pool(
                *step.pool, spec.config.paths_per_submission,
                mix64(mix64(spec.config.seed, step.uid), epoch_tag));
            const int z = code_vector_node(tape, P, enc, x_var,
                                           spec.placement != Placement::TraceOnly);
            cell_in = spec.placement == Placement::AttentionOnly
                          ? z
                          : tape.concat_cols({z, x_var});
        }
        if (spec.config.cell == Cell::Lstm) {
            auto [h_new, c_new] = lstm_step(tape, P, cell_in, h, c, hidden);
            h = h_new;
            c = c_new;
        } else {
            h = rnn_step(tape, P, cell_in, h);
        }
        outputs.push_back(tape.sigmoid_op(tape.matmul(h, P.at("W_hy"))));
    }
    return outputs;
}

// Masked BCE over the t -> t+1 transitions of one sequence; -1 when T < 2.
int sequence_loss(Tape& tape, const PreparedSeq& seq,
                  const std::vector<int>& outputs) {
    const int T = seq.length();
    if (T < 2) return -1;
    std::vector<int> picks;
    std::vector<double> labels;
    picks.reserve(static_cast<size_t>(T) - 1);
    for (int t = 0; t + 1 < T; ++t) {
        picks.push_back(tape.select_col(outputs[static_cast<size_t>(t)],
                                        seq.q[static_cast<size_t>(t) + 1]));
        labels.push_back(static_cast<double>(seq.a[static_cast<size_t>(t) + 1]));
    }
    const int preds = picks.size() == 1 ? picks[0] : tape.concat_cols(picks);
    return tape.bce_loss(preds, labels,
                         std::vector<uint8_t>(labels.size(), uint8_t{1}));
}

void init_cell_params(ParamMap& params, Rng& rng, const ModelSpec& spec) {
    const int D = spec.cell_input_dim();
    const int H = spec.config.hidden_size;
    const int M = spec.n_problems;
    if (spec.config.cell == Cell::Lstm) {
        params.emplace("W_x", Tensor::uniform_fan_in(rng, D, 4 * H));
        params.emplace("W_h", Tensor::uniform_fan_in(rng, H, 4 * H));
        params.emplace("b", Tensor::zeros(1, 4 * H));
    } else {
        params.emplace("W_xh", Tensor::uniform_fan_in(rng, D, H));
        params.emplace("W_hh", Tensor::uniform_fan_in(rng, H, H));
    }
    params.emplace("W_hy", Tensor::uniform_fan_in(rng, H, M));
}

void init_encoder_params(ParamMap& params, Rng& rng, const ModelSpec& spec,
                         const codepaths::Vocab& vocab) {
    const int e = spec.config.code_embedding_size;
    Tensor enode = Tensor::gaussian(rng, vocab.node_size(), e,
                                    spec.config.embedding_init_std);
    Tensor epath = Tensor::gaussian(rng, vocab.path_size(), e,
                                    spec.config.embedding_init_std);
    for (int c = 0; c < e; ++c) {
        enode.at(codepaths::Vocab::kPad, c) = 0.0;  // PAD rows stay zero
        epath.at(codepaths::Vocab::kPad, c) = 0.0;
    }
    params.emplace("W_enode", std::move(enode));
    params.emplace("W_epath", std::move(epath));
    params.emplace("W_a", Tensor::uniform_fan_in(rng, spec.attention_dim(), 1));
    params.emplace("W_0", Tensor::uniform_fan_in(rng, spec.attention_dim(), e));
}

void zero_pad_rows(ParamMap& grads) {
    for (const char* table : {"W_enode", "W_epath"}) {
        auto it = grads.find(table);
        if (it == grads.end()) continue;
        for (int c = 0; c < it->second.cols; ++c) {
            it->second.at(codepaths::Vocab::kPad, c) = 0.0;
        }
    }
}

struct EpochStats {
    double loss_sum = 0.0;    // transition-weighted
    double transitions = 0.0;
};

// One optimization pass over the given sequence order, in minibatches of
// whole sequences. Each sequence runs on its own tape; gradients accumulate
// weighted by transition count, which reproduces the padded-batch masked
// mean loss exactly.
EpochStats train_epoch(const ModelSpec& spec, ParamMap& params,
                       const std::set<std::string>& frozen, Adam& adam,
                       const std::vector<PreparedSeq>& seqs,
                       const std::vector<size_t>& order, uint32_t epoch_tag) {
    EpochStats stats;
    const size_t batch_size = static_cast<size_t>(spec.config.batch_size);
    for (size_t begin = 0; begin < order.size(); begin += batch_size) {
        const size_t end = std::min(order.size(), begin + batch_size);
        ParamMap grads;
        double batch_transitions = 0.0;
        for (size_t i = begin; i < end; ++i) {
            const PreparedSeq& seq = seqs[order[i]];
            if (seq.length() < 2) continue;
            Tape tape;
            TapeParams P = bind_params(tape, params, frozen);
            const std::vector<int> outputs = run_sequence(tape, P, spec, seq, epoch_tag);
            const int loss = sequence_loss(tape, seq, outputs);
            tape.backward(loss);
            const double k = static_cast<double>(seq.length() - 1);
            stats.loss_sum += tape.value(loss).v[0] * k;
            stats.transitions += k;
            batch_transitions += k;
            for (const auto& [name, id] : P.ids) {
                if (frozen.count(name)) continue;
                Tensor g = tape.gradient(id);
                auto it = grads.find(name);
                if (it == grads.end()) {
                    for (double& x : g.v) x *= k;
                    grads.emplace(name, std::move(g));
                } else {
                    for (size_t j = 0; j < g.v.size(); ++j) it->second.v[j] += k * g.v[j];
                }
            }
        }
        if (batch_transitions == 0.0) continue;
        for (auto& [name, g] : grads) {
            for (double& x : g.v) x /= batch_transitions;
        }
        zero_pad_rows(grads);
        if (spec.config.grad_clip) {
            autodiff::clip_global_norm(grads, spec.config.grad_clip_norm);
        }
        adam.step(params, grads, spec.config.learning_rate);
    }
    return stats;
}

}  // namespace

// -------------------------------------------------- public forward passes ----

std::vector<std::vector<double>> dkt_forward(
    const std::vector<std::vector<double>>& xs, const ParamMap& params,
    Cell cell) {
    std::vector<std::vector<double>> out;
    if (xs.empty()) return out;
    Tape tape;
    TapeParams P = bind_params(tape, params, {});
    const int hidden = cell == Cell::Lstm ? params.at("W_h").rows
                                          : params.at("W_hh").rows;
    int h = tape.input(Tensor::zeros(1, hidden));
    int c = tape.input(Tensor::zeros(1, hidden));
    for (const auto& x : xs) {
        const int x_var = tape.input(Tensor::row(x));
        if (cell == Cell::Lstm) {
            auto [h_new, c_new] = lstm_step(tape, P, x_var, h, c, hidden);
            h = h_new;
            c = c_new;
        } else {
            h = rnn_step(tape, P, x_var, h);
        }
        out.push_back(tape.value(tape.sigmoid_op(tape.matmul(h, P.at("W_hy")))).v);
    }
    return out;
}

std::vector<double> codedkt_attempt_vector(
    const codepaths::EncodedSubmission& code, const std::vector<double>& x_t,
    const ParamMap& params, Placement placement) {
    Tape tape;
    TapeParams P = bind_params(tape, params, {});
    const int x_var = tape.input(Tensor::row(x_t));
    const int z = code_vector_node(tape, P, code, x_var,
                                   placement != Placement::TraceOnly);
    return tape.value(z).v;
}

// ----------------------------------------------------------- train/predict ----

TrainedModel train_model(ModelKind kind,
                         const std::vector<dataset::AttemptSequence>& train,
                         const dataset::ProblemCatalog& catalog,
                         const ModelConfig& config,
                         const ParamMap* warm_start) {
    if (train.empty()) throw std::runtime_error("empty training set");
    if (kind == ModelKind::Bkt) {
        throw std::runtime_error("bkt has its own fitting path");
    }

    TrainedModel model;
    model.kind = kind;
    model.config = config;
    model.n_problems = catalog.size();

    if (kind == ModelKind::DktTfidf) {
        std::vector<std::string> docs;
        for (const auto& seq : train) {
            for (const auto& at : seq.attempts) docs.push_back(at.code);
        }
        model.tfidf = fit_tfidf(docs, config.tfidf_top_k);
    }
    if (kind == ModelKind::DktExpert) {
        model.expert_rules =
            config.expert_rules.empty() ? kExpertRules : config.expert_rules;
    }
    if (kind == ModelKind::CodeDkt) {
        RawPools raw = extract_pools(train, config);
        model.vocab = vocab_from_pools(raw, config.min_count);
    }

    const int M = catalog.size();
    int trace_dim = 2 * M;
    if (kind == ModelKind::DktTfidf) {
        trace_dim = 18 + static_cast<int>(model.tfidf.tokens.size());
    } else if (kind == ModelKind::DktExpert) {
        trace_dim = 18 + static_cast<int>(model.expert_rules.size());
    }
    const ModelSpec spec = make_spec(kind, config, M, trace_dim);

    PreparedData data = prepare_sequences(kind, train, catalog, config,
                                          &model.vocab, &model.tfidf,
                                          &model.expert_rules);

    std::set<std::string> frozen;
    Rng init_rng(mix64(config.seed, 0x1217a1ULL));
    if (kind == ModelKind::CodeDkt) {
        if (config.embedding_mode == EmbeddingMode::StaticPretrained) {
            ParamMap encoder = pretrain_static_embedding(train, catalog, config,
                                                         model.vocab);
            for (auto& [name, tensor] : encoder) {
                model.params.emplace(name, std::move(tensor));
                frozen.insert(name);
            }
        } else {
            init_encoder_params(model.params, init_rng, spec, model.vocab);
        }
    }
    init_cell_params(model.params, init_rng, spec);

    if (warm_start) {
        for (const auto& [name, tensor] : *warm_start) {
            auto it = model.params.find(name);
            if (it == model.params.end()) {
                throw std::runtime_error("warm start names unknown parameter " + name);
            }
            if (!it->second.same_shape(tensor)) {
                throw std::runtime_error("warm start shape mismatch for " + name +
                                         ": " + it->second.shape_str() + " vs " +
                                         tensor.shape_str());
            }
            it->second = tensor;
        }
    }

    Adam adam;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::vector<size_t> order(data.seqs.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng(mix64(config.seed, 0xe90c4ULL + static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        const uint32_t tag = config.resample_paths ? static_cast<uint32_t>(epoch) : 0u;
        const EpochStats stats =
            train_epoch(spec, model.params, frozen, adam, data.seqs, order, tag);
        model.loss_history.push_back(
            stats.transitions > 0.0 ? stats.loss_sum / stats.transitions : 0.0);
    }
    return model;
}

std::vector<eval::StudentTrace> predict_model(
    const TrainedModel& model,
    const std::vector<dataset::AttemptSequence>& sequences,
    const dataset::ProblemCatalog& catalog, bool retain_full_rows) {
    const int M = catalog.size();
    int trace_dim = 2 * M;
    if (model.kind == ModelKind::DktTfidf) {
        trace_dim = 18 + static_cast<int>(model.tfidf.tokens.size());
    } else if (model.kind == ModelKind::DktExpert) {
        trace_dim = 18 + static_cast<int>(model.expert_rules.size());
    }
    const ModelSpec spec = make_spec(model.kind, model.config, M, trace_dim);

    PreparedData data = prepare_sequences(model.kind, sequences, catalog,
                                          model.config, &model.vocab,
                                          &model.tfidf, &model.expert_rules);

    std::vector<eval::StudentTrace> traces;
    traces.reserve(sequences.size());
    for (size_t si = 0; si < data.seqs.size(); ++si) {
        const PreparedSeq& seq = data.seqs[si];
        eval::StudentTrace trace;
        trace.student = sequences[si].student_id;
        const int T = seq.length();
        if (T >= 2) {
            Tape tape;
            TapeParams P = bind_params(tape, model.params, {});
            const std::vector<int> outputs =
                run_sequence(tape, P, spec, seq, eval_tag(model.config));
            for (int t = 0; t + 1 < T; ++t) {
                const std::vector<double>& row =
                    tape.value(outputs[static_cast<size_t>(t)]).v;
                eval::PredictionRecord rec;
                rec.t = t + 1;  // 1-based step whose output is consumed
                rec.problem = seq.q[static_cast<size_t>(t) + 1];
                rec.score = row[static_cast<size_t>(rec.problem)];
                rec.label = seq.a[static_cast<size_t>(t) + 1];
                rec.first_attempt = seq.first[static_cast<size_t>(t) + 1] != 0;
                trace.records.push_back(rec);
                if (retain_full_rows) {
                    trace.full_rows.push_back(row);
                    trace.attempted.push_back(rec.problem);
                    trace.labels.push_back(rec.label);
                }
            }
        }
        traces.push_back(std::move(trace));
    }
    return traces;
}

std::pair<double, ParamMap> sequence_loss_and_gradients(
    const TrainedModel& model, const dataset::AttemptSequence& sequence,
    const dataset::ProblemCatalog& catalog) {
    const int M = catalog.size();
    int trace_dim = 2 * M;
    if (model.kind == ModelKind::DktTfidf) {
        trace_dim = 18 + static_cast<int>(model.tfidf.tokens.size());
    } else if (model.kind == ModelKind::DktExpert) {
        trace_dim = 18 + static_cast<int>(model.expert_rules.size());
    }
    const ModelSpec spec = make_spec(model.kind, model.config, M, trace_dim);
    PreparedData data = prepare_sequences(model.kind, {sequence}, catalog,
                                          model.config, &model.vocab,
                                          &model.tfidf, &model.expert_rules);
    const PreparedSeq& seq = data.seqs.at(0);
    if (seq.length() < 2) {
        return {0.0, ParamMap{}};
    }
    Tape tape;
    TapeParams P = bind_params(tape, model.params, {});
    const std::vector<int> outputs =
        run_sequence(tape, P, spec, seq, eval_tag(model.config));
    const int loss = sequence_loss(tape, seq, outputs);
    tape.backward(loss);
    ParamMap grads;
    for (const auto& [name, id] : P.ids) grads.emplace(name, tape.gradient(id));
    return {tape.value(loss).v[0], grads};
}

ParamMap pretrain_static_embedding(
    const std::vector<dataset::AttemptSequence>& train,
    const dataset::ProblemCatalog& catalog, const ModelConfig& config,
    const codepaths::Vocab& vocab, double* final_accuracy) {
    (void)catalog;
    ModelConfig pre_config = config;
    pre_config.placement = Placement::TraceOnly;  // pure-code encoder
    const ModelSpec spec = make_spec(ModelKind::CodeDkt, pre_config,
                                     /*M=*/1, /*trace_dim=*/0);

    // Flatten to (pool, label) pairs.
    RawPools raw = extract_pools(train, pre_config);
    std::map<uint64_t, PoolEntry> pools = encode_pools(raw, vocab);
    struct Item {
        const PoolEntry* pool;
        uint64_t uid;
        double label;
    };
    std::vector<Item> items;
    for (const auto& seq : train) {
        const uint64_t student_hash = stable_hash(seq.student_id);
        for (size_t t = 0; t < seq.attempts.size(); ++t) {
            items.push_back({&pools.at(stable_hash(seq.attempts[t].code)),
                             mix64(student_hash, static_cast<uint64_t>(t)),
                             static_cast<double>(seq.attempts[t].a)});
        }
    }
    if (items.empty()) throw std::runtime_error("empty pretraining set");

    ParamMap params;
    Rng init_rng(mix64(config.seed, 0x97e7ea17ULL));
    init_encoder_params(params, init_rng, spec, vocab);
    params.emplace("cls_w", Tensor::uniform_fan_in(
                                init_rng, config.code_embedding_size, 1));
    params.emplace("cls_b", Tensor::zeros(1, 1));

    const int epochs = config.pretrain_epochs > 0 ? config.pretrain_epochs
                                                  : config.epochs;
    Adam adam;
    auto submission_logit = [&](Tape& tape, const TapeParams& P, const Item& item,
                                uint32_t tag) {
        const auto enc = sample_pool(*item.pool, config.paths_per_submission,
                                     mix64(mix64(config.seed, item.uid), tag));
        const int z = code_vector_node(tape, P, enc, /*x_var=*/-1, false);
        return tape.sigmoid_op(
            tape.add(tape.matmul(z, P.at("cls_w")), P.at("cls_b")));
    };

    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::vector<size_t> order(items.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng(mix64(config.seed, 0x9e7ac4ULL + static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        const uint32_t tag = config.resample_paths ? static_cast<uint32_t>(epoch) : 0u;
        const size_t batch_size = static_cast<size_t>(config.batch_size);
        for (size_t begin = 0; begin < order.size(); begin += batch_size) {
            const size_t end = std::min(order.size(), begin + batch_size);
            ParamMap grads;
            double count = 0.0;
            for (size_t i = begin; i < end; ++i) {
                const Item& item = items[order[i]];
                Tape tape;
                TapeParams P = bind_params(tape, params, {});
                const int p = submission_logit(tape, P, item, tag);
                const int loss = tape.bce_loss(p, {item.label}, {1});
                tape.backward(loss);
                count += 1.0;
                for (const auto& [name, id] : P.ids) {
                    Tensor g = tape.gradient(id);
                    auto it = grads.find(name);
                    if (it == grads.end()) {
                        grads.emplace(name, std::move(g));
                    } else {
                        for (size_t j = 0; j < g.v.size(); ++j) it->second.v[j] += g.v[j];
                    }
                }
            }
            if (count == 0.0) continue;
            for (auto& [name, g] : grads) {
                for (double& x : g.v) x /= count;
            }
            zero_pad_rows(grads);
            if (config.grad_clip) {
                autodiff::clip_global_norm(grads, config.grad_clip_norm);
            }
            adam.step(params, grads, config.learning_rate);
        }
    }

    if (final_accuracy) {
        int hits = 0;
        for (const Item& item : items) {
            Tape tape;
            TapeParams P = bind_params(tape, params, {});
            const int p = submission_logit(tape, P, item, eval_tag(config));
            const double score = tape.value(p).v[0];
            hits += ((score >= 0.5) == (item.label >= 0.5)) ? 1 : 0;
        }
        *final_accuracy = static_cast<double>(hits) / static_cast<double>(items.size());
    }

    // classifier head is pretraining-only
    params.erase("cls_w");
    params.erase("cls_b");
    return params;
}

}  // namespace codedkt::ktmodels
