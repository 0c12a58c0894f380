#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace codedkt::javaparse {

enum class TokenKind {
    Identifier,
    IntLiteral,
    FloatLiteral,
    StringLiteral,
    CharLiteral,
    BooleanLiteral,
    Keyword,
    Operator,
    Punctuation,
};

struct Token {
    TokenKind kind;
    std::string text;
};

const char* token_kind_name(TokenKind kind);

// Labeled syntax tree. Internal nodes carry production names (method, body,
// if, condition, binop:&&, ...); leaves carry the token lexemes, so the
// in-order frontier of a parsed tree reproduces the token stream exactly.
struct AstNode {
    std::string label;
    std::vector<AstNode> children;

    bool is_leaf() const { return children.empty(); }
};

enum class ParseMode { Parsed, FallbackFlat };

struct ParseOutcome {
    AstNode tree;
    ParseMode mode = ParseMode::FallbackFlat;
};

// Total lexer: comments and whitespace dropped, maximal munch, unknown bytes
// become single-character punctuation tokens. A '-' directly followed by a
// digit folds into the numeric literal unless the previous token could end a
// value (identifier, literal, or closing bracket).
std::vector<Token> tokenize(std::string_view source);

// Recursive-descent parse of the CS1 Java subset. Never throws: any syntax
// error yields a single flat node with every token as a leaf, in order.
ParseOutcome parse(const std::vector<Token>& tokens);
ParseOutcome parse_source(std::string_view source);

std::vector<const AstNode*> frontier(const AstNode& tree);

std::string tree_to_text(const AstNode& tree);
std::string tree_to_json(const AstNode& tree);

}  // namespace codedkt::javaparse
