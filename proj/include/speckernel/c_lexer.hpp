#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace speckernel::c {

enum class TokenKind { Ident, Number, String, Char, Punct };

// A lexical token over a C source buffer. Comments and whitespace are dropped.
// Tokens that belong to a preprocessor directive share a non-zero directive id.
struct Token {
    TokenKind kind;
    std::string_view text;
    std::size_t begin = 0;  // byte offset
    std::size_t end = 0;    // one past last byte
    int line = 1;           // 1-based line of the first byte
    int directive = 0;
};

// Directive tokens start with a '#' punct token followed by the directive name.
std::vector<Token> lex(std::string_view source);

bool is_identifier(std::string_view s);

// Index of the token closing the bracket opened at `open`, or tokens.size().
std::size_t match_bracket(const std::vector<Token>& tokens, std::size_t open);

// 1-based line number for a byte offset.
int line_of(std::string_view source, std::size_t offset);

}  // namespace speckernel::c
