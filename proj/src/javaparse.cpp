#include "codedkt/javaparse.hpp"

#include <array>
#include <cctype>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace codedkt::javaparse {

namespace {

const std::set<std::string, std::less<>> kKeywords = {
    "abstract", "break",  "byte",   "case",    "char",   "class",  "continue",
    "default",  "do",     "double", "else",    "final",  "float",  "for",
    "if",       "import", "int",    "long",    "new",    "null",   "package",
    "private",  "protected", "public", "return", "short", "static", "switch",
    "this",     "void",   "while"};

const std::set<std::string, std::less<>> kTypeKeywords = {
    "int", "long", "short", "byte", "double", "float", "boolean", "char", "void"};

bool is_ident_start(char c) {
    return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '$';
}
bool is_ident_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '$';
}
bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)); }

// Tokens after which a '-' must be a binary operator, not a sign.
bool ends_value(const Token& tok) {
    switch (tok.kind) {
        case TokenKind::Identifier:
        case TokenKind::IntLiteral:
        case TokenKind::FloatLiteral:
        case TokenKind::StringLiteral:
        case TokenKind::CharLiteral:
        case TokenKind::BooleanLiteral:
            return true;
        default:
            return tok.text == ")" || tok.text == "]";
    }
}

const std::array<const char*, 20> kMultiCharOps = {
    "&&", "||", "==", "!=", "<=", ">=", "++", "--", "+=", "-=",
    "*=", "/=", "%=", "&=", "|=", "^=", "<<", ">>", "->", "::"};

}  // namespace

const char* token_kind_name(TokenKind kind) {
    switch (kind) {
        case TokenKind::Identifier: return "identifier";
        case TokenKind::IntLiteral: return "int_literal";
        case TokenKind::FloatLiteral: return "float_literal";
        case TokenKind::StringLiteral: return "string_literal";
        case TokenKind::CharLiteral: return "char_literal";
        case TokenKind::BooleanLiteral: return "boolean_literal";
        case TokenKind::Keyword: return "keyword";
        case TokenKind::Operator: return "operator";
        case TokenKind::Punctuation: return "punctuation";
    }
    return "unknown";
}

std::vector<Token> tokenize(std::string_view src) {
    std::vector<Token> out;
    size_t i = 0;
    const size_t n = src.size();

    auto lex_number = [&](size_t start) {
        size_t j = start;
        if (j < n && src[j] == '-') ++j;  // folded sign
        while (j < n && is_digit(src[j])) ++j;
        bool is_float = false;
        if (j < n && src[j] == '.' && j + 1 < n && is_digit(src[j + 1])) {
            is_float = true;
            ++j;
            while (j < n && is_digit(src[j])) ++j;
        }
        if (j < n && (src[j] == 'f' || src[j] == 'F' || src[j] == 'd' || src[j] == 'D')) {
            is_float = true;
            ++j;
        } else if (j < n && (src[j] == 'l' || src[j] == 'L')) {
            ++j;
        }
        out.push_back({is_float ? TokenKind::FloatLiteral : TokenKind::IntLiteral,
                       std::string(src.substr(i, j - i))});
        i = j;
    };

    while (i < n) {
        const char c = src[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        if (c == '/' && i + 1 < n && src[i + 1] == '/') {
            while (i < n && src[i] != '\n') ++i;
            continue;
        }
        if (c == '/' && i + 1 < n && src[i + 1] == '*') {
            i += 2;
            while (i + 1 < n && !(src[i] == '*' && src[i + 1] == '/')) ++i;
            i = i + 1 < n ? i + 2 : n;
            continue;
        }
        if (is_ident_start(c)) {
            size_t j = i + 1;
            while (j < n && is_ident_char(src[j])) ++j;
            std::string text(src.substr(i, j - i));
            TokenKind kind = TokenKind::Identifier;
            if (text == "true" || text == "false") {
                kind = TokenKind::BooleanLiteral;
            } else if (kKeywords.count(text)) {
                kind = TokenKind::Keyword;
            }
            out.push_back({kind, std::move(text)});
            i = j;
            continue;
        }
        if (is_digit(c)) {
            lex_number(i);
            continue;
        }
        if (c == '-' && i + 1 < n && is_digit(src[i + 1]) &&
            (out.empty() || !ends_value(out.back()))) {
            lex_number(i);
            continue;
        }
        if (c == '"' || c == '\'') {
            const char quote = c;
            size_t j = i + 1;
            while (j < n && src[j] != quote) {
                if (src[j] == '\\' && j + 1 < n) ++j;
                if (src[j] == '\n') break;  // unterminated: stop at line end
                ++j;
            }
            if (j < n && src[j] == quote) ++j;
            out.push_back({quote == '"' ? TokenKind::StringLiteral
                                        : TokenKind::CharLiteral,
                           std::string(src.substr(i, j - i))});
            i = j;
            continue;
        }
        bool matched = false;
        for (const char* op : kMultiCharOps) {
            if (src.compare(i, 2, op) == 0) {
                out.push_back({TokenKind::Operator, op});
                i += 2;
                matched = true;
                break;
            }
        }
        if (matched) continue;
        if (std::string_view("+-*/%<>=!&|^~?").find(c) != std::string_view::npos) {
            out.push_back({TokenKind::Operator, std::string(1, c)});
        } else {
            out.push_back({TokenKind::Punctuation, std::string(1, c)});
        }
        ++i;
    }
    return out;
}

namespace {

struct ParseError {};

// Recursive-descent parser over the token list. Every consumed token is
// attached as a leaf, so parsed trees keep the full lexeme frontier.
class Parser {
public:
    explicit Parser(const std::vector<Token>& toks) : toks_(toks) {}

    AstNode compilation_unit() {
        AstNode unit{"unit", {}};
        while (!at_end()) {
            std::vector<AstNode> modifiers = parse_modifiers();
            if (check_keyword("class")) {
                unit.children.push_back(parse_class(std::move(modifiers)));
            } else {
                unit.children.push_back(parse_method(std::move(modifiers)));
            }
        }
        if (unit.children.empty()) throw ParseError{};
        if (unit.children.size() == 1) return std::move(unit.children[0]);
        return unit;
    }

private:
    const std::vector<Token>& toks_;
    size_t pos_ = 0;

    bool at_end() const { return pos_ >= toks_.size(); }
    const Token& peek(size_t ahead = 0) const {
        if (pos_ + ahead >= toks_.size()) throw ParseError{};
        return toks_[pos_ + ahead];
    }
    bool check_text(std::string_view text) const {
        return !at_end() && toks_[pos_].text == text;
    }
    bool check_keyword(std::string_view kw) const {
        return !at_end() && toks_[pos_].kind == TokenKind::Keyword &&
               toks_[pos_].text == kw;
    }
    AstNode take() {
        if (at_end()) throw ParseError{};
        return AstNode{toks_[pos_++].text, {}};
    }
    AstNode expect_text(std::string_view text) {
        if (!check_text(text)) throw ParseError{};
        return take();
    }

    bool check_modifier() const {
        if (at_end() || toks_[pos_].kind != TokenKind::Keyword) return false;
        const std::string& t = toks_[pos_].text;
        return t == "public" || t == "private" || t == "protected" ||
               t == "static" || t == "final" || t == "abstract";
    }
    std::vector<AstNode> parse_modifiers() {
        std::vector<AstNode> mods;
        while (check_modifier()) mods.push_back(take());
        return mods;
    }

    bool check_type_start() const {
        if (at_end()) return false;
        const Token& t = toks_[pos_];
        if (t.kind == TokenKind::Keyword && kTypeKeywords.count(t.text)) return true;
        // Class-typed declaration: two identifiers in a row (String s, ...).
        return t.kind == TokenKind::Identifier && pos_ + 1 < toks_.size() &&
               toks_[pos_ + 1].kind == TokenKind::Identifier;
    }
    bool check_type_token() const {
        if (at_end()) return false;
        const Token& t = toks_[pos_];
        return (t.kind == TokenKind::Keyword && kTypeKeywords.count(t.text)) ||
               t.kind == TokenKind::Identifier;
    }
    AstNode take_type() {
        if (!check_type_token()) throw ParseError{};
        return take();
    }
    AstNode take_identifier() {
        if (at_end() || toks_[pos_].kind != TokenKind::Identifier) throw ParseError{};
        return take();
    }

    AstNode parse_class(std::vector<AstNode> modifiers) {
        AstNode node{"class", std::move(modifiers)};
        node.children.push_back(take());  // 'class'
        node.children.push_back(take_identifier());
        node.children.push_back(expect_text("{"));
        while (!check_text("}")) {
            std::vector<AstNode> mods = parse_modifiers();
            node.children.push_back(parse_method(std::move(mods)));
        }
        node.children.push_back(expect_text("}"));
        return node;
    }

    AstNode parse_method(std::vector<AstNode> modifiers) {
        AstNode node{"method", std::move(modifiers)};
        node.children.push_back(take_type());
        node.children.push_back(take_identifier());
        node.children.push_back(expect_text("("));
        if (!check_text(")")) {
            AstNode params{"params", {}};
            while (true) {
                AstNode param{"param", {}};
                param.children.push_back(take_type());
                param.children.push_back(take_identifier());
                params.children.push_back(std::move(param));
                if (check_text(",")) {
                    params.children.push_back(take());
                    continue;
                }
                break;
            }
            node.children.push_back(std::move(params));
        }
        node.children.push_back(expect_text(")"));
        node.children.push_back(parse_block("body"));
        return node;
    }

    AstNode parse_block(const char* label) {
        AstNode node{label, {}};
        node.children.push_back(expect_text("{"));
        while (!check_text("}")) node.children.push_back(parse_statement());
        node.children.push_back(take());  // '}'
        return node;
    }

    AstNode parse_statement() {
        if (at_end()) throw ParseError{};
        if (check_text("{")) return parse_block("block");
        if (check_keyword("if")) return parse_if();
        if (check_keyword("while")) return parse_while();
        if (check_keyword("for")) return parse_for();
        if (check_keyword("return")) return parse_return();
        if (check_type_start()) {
            AstNode node = parse_var_decl();
            node.children.push_back(expect_text(";"));
            return node;
        }
        // assignment / increment / expression statement
        if (peek().kind == TokenKind::Identifier && pos_ + 1 < toks_.size()) {
            const std::string& next = toks_[pos_ + 1].text;
            if (next == "=" || next == "+=" || next == "-=" || next == "*=" ||
                next == "/=" || next == "%=") {
                AstNode node = parse_assignment();
                node.children.push_back(expect_text(";"));
                return node;
            }
            if (next == "++" || next == "--") {
                AstNode node{"assign", {}};
                node.children.push_back(take());
                node.children.push_back(take());
                node.children.push_back(expect_text(";"));
                return node;
            }
        }
        AstNode node{"expr_stmt", {}};
        node.children.push_back(parse_expression());
        node.children.push_back(expect_text(";"));
        return node;
    }

    AstNode parse_var_decl() {
        AstNode node{"var_decl", {}};
        node.children.push_back(take_type());
        node.children.push_back(take_identifier());
        if (check_text("=")) {
            node.children.push_back(take());
            node.children.push_back(parse_expression());
        }
        return node;
    }

    AstNode parse_assignment() {
        AstNode node{"assign", {}};
        node.children.push_back(take_identifier());
        node.children.push_back(take());  // the assignment operator
        node.children.push_back(parse_expression());
        return node;
    }

    AstNode parse_if() {
        AstNode node{"if", {}};
        node.children.push_back(take());  // 'if'
        node.children.push_back(expect_text("("));
        AstNode cond{"condition", {}};
        cond.children.push_back(parse_expression());
        node.children.push_back(std::move(cond));
        node.children.push_back(expect_text(")"));
        AstNode then_node{"then", {}};
        then_node.children.push_back(parse_statement());
        node.children.push_back(std::move(then_node));
        if (check_keyword("else")) {
            node.children.push_back(take());
            AstNode else_node{"else", {}};
            else_node.children.push_back(parse_statement());
            node.children.push_back(std::move(else_node));
        }
        return node;
    }

    AstNode parse_while() {
        AstNode node{"while", {}};
        node.children.push_back(take());
        node.children.push_back(expect_text("("));
        AstNode cond{"condition", {}};
        cond.children.push_back(parse_expression());
        node.children.push_back(std::move(cond));
        node.children.push_back(expect_text(")"));
        node.children.push_back(parse_statement());
        return node;
    }

    AstNode parse_for() {
        AstNode node{"for", {}};
        node.children.push_back(take());
        node.children.push_back(expect_text("("));
        if (!check_text(";")) {
            AstNode init{"for_init", {}};
            init.children.push_back(check_type_start() ? parse_var_decl()
                                                       : parse_assignment());
            node.children.push_back(std::move(init));
        }
        node.children.push_back(expect_text(";"));
        if (!check_text(";")) {
            AstNode cond{"condition", {}};
            cond.children.push_back(parse_expression());
            node.children.push_back(std::move(cond));
        }
        node.children.push_back(expect_text(";"));
        if (!check_text(")")) {
            AstNode update{"for_update", {}};
            if (peek().kind == TokenKind::Identifier && pos_ + 1 < toks_.size() &&
                (toks_[pos_ + 1].text == "++" || toks_[pos_ + 1].text == "--")) {
                update.children.push_back(take());
                update.children.push_back(take());
            } else {
                update.children.push_back(parse_assignment());
            }
            node.children.push_back(std::move(update));
        }
        node.children.push_back(expect_text(")"));
        node.children.push_back(parse_statement());
        return node;
    }

    AstNode parse_return() {
        AstNode node{"return", {}};
        node.children.push_back(take());
        if (!check_text(";")) node.children.push_back(parse_expression());
        node.children.push_back(expect_text(";"));
        return node;
    }

    AstNode parse_expression() { return parse_or(); }

    AstNode parse_binary_level(AstNode (Parser::*next)(),
                               std::initializer_list<std::string_view> ops) {
        AstNode left = (this->*next)();
        while (!at_end() && peek().kind == TokenKind::Operator) {
            bool hit = false;
            for (std::string_view op : ops) {
                if (peek().text == op) { hit = true; break; }
            }
            if (!hit) break;
            AstNode node{"binop:" + peek().text, {}};
            node.children.push_back(std::move(left));
            node.children.push_back(take());
            node.children.push_back((this->*next)());
            left = std::move(node);
        }
        return left;
    }

    AstNode parse_or() { return parse_binary_level(&Parser::parse_and, {"||"}); }
    AstNode parse_and() { return parse_binary_level(&Parser::parse_equality, {"&&"}); }
    AstNode parse_equality() {
        return parse_binary_level(&Parser::parse_relational, {"==", "!="});
    }
    AstNode parse_relational() {
        return parse_binary_level(&Parser::parse_additive, {"<", "<=", ">", ">="});
    }
    AstNode parse_additive() {
        return parse_binary_level(&Parser::parse_multiplicative, {"+", "-"});
    }
    AstNode parse_multiplicative() {
        return parse_binary_level(&Parser::parse_unary, {"*", "/", "%"});
    }

    AstNode parse_unary() {
        if (!at_end() && peek().kind == TokenKind::Operator &&
            (peek().text == "!" || peek().text == "-")) {
            AstNode node{"unary:" + peek().text, {}};
            node.children.push_back(take());
            node.children.push_back(parse_unary());
            return node;
        }
        return parse_primary();
    }

    AstNode parse_primary() {
        if (at_end()) throw ParseError{};
        const Token& t = peek();
        switch (t.kind) {
            case TokenKind::IntLiteral:
            case TokenKind::FloatLiteral:
            case TokenKind::StringLiteral:
            case TokenKind::CharLiteral:
            case TokenKind::BooleanLiteral:
                return take();
            case TokenKind::Identifier:
                return parse_qualified();
            default:
                break;
        }
        if (check_text("(")) {
            AstNode node{"paren", {}};
            node.children.push_back(take());
            node.children.push_back(parse_expression());
            node.children.push_back(expect_text(")"));
            return node;
        }
        throw ParseError{};
    }

    // ident ('.' ident)* with an optional call suffix: plain name, qualified
    // name (s.length), or call (foo(x), Math.abs(x)).
    AstNode parse_qualified() {
        std::vector<AstNode> name_parts;
        name_parts.push_back(take_identifier());
        while (check_text(".") && pos_ + 1 < toks_.size() &&
               toks_[pos_ + 1].kind == TokenKind::Identifier) {
            name_parts.push_back(take());
            name_parts.push_back(take_identifier());
        }
        if (check_text("(")) {
            AstNode call{"call", std::move(name_parts)};
            call.children.push_back(take());
            if (!check_text(")")) {
                AstNode args{"args", {}};
                args.children.push_back(parse_expression());
                while (check_text(",")) {
                    args.children.push_back(take());
                    args.children.push_back(parse_expression());
                }
                call.children.push_back(std::move(args));
            }
            call.children.push_back(expect_text(")"));
            return call;
        }
        if (name_parts.size() == 1) return std::move(name_parts[0]);
        return AstNode{"qualified", std::move(name_parts)};
    }
};

}  // namespace

ParseOutcome parse(const std::vector<Token>& tokens) {
    try {
        Parser parser(tokens);
        return {parser.compilation_unit(), ParseMode::Parsed};
    } catch (const ParseError&) {
        AstNode flat{"flat", {}};
        flat.children.reserve(tokens.size());
        for (const Token& tok : tokens) flat.children.push_back({tok.text, {}});
        return {std::move(flat), ParseMode::FallbackFlat};
    }
}

ParseOutcome parse_source(std::string_view source) {
    return parse(tokenize(source));
}

std::vector<const AstNode*> frontier(const AstNode& tree) {
    std::vector<const AstNode*> leaves;
    std::vector<const AstNode*> stack{&tree};
    while (!stack.empty()) {
        const AstNode* node = stack.back();
        stack.pop_back();
        if (node->is_leaf()) {
            leaves.push_back(node);
            continue;
        }
        for (auto it = node->children.rbegin(); it != node->children.rend(); ++it) {
            stack.push_back(&*it);
        }
    }
    return leaves;
}

namespace {

void print_tree(const AstNode& node, int depth, std::ostringstream& out) {
    for (int i = 0; i < depth; ++i) out << "  ";
    out << node.label << '\n';
    for (const AstNode& child : node.children) print_tree(child, depth + 1, out);
}

nlohmann::json tree_json(const AstNode& node) {
    nlohmann::json doc;
    doc["label"] = node.label;
    nlohmann::json children = nlohmann::json::array();
    for (const AstNode& child : node.children) children.push_back(tree_json(child));
    doc["children"] = std::move(children);
    return doc;
}

}  // namespace

std::string tree_to_text(const AstNode& tree) {
    std::ostringstream out;
    print_tree(tree, 0, out);
    return out.str();
}

std::string tree_to_json(const AstNode& tree) {
    return tree_json(tree).dump();
}

}  // namespace codedkt::javaparse
