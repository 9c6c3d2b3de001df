#include "speckernel/c_lexer.hpp"

#include <algorithm>
#include <cctype>

namespace speckernel::c {

namespace {

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

class Lexer {
public:
    explicit Lexer(std::string_view src) : src_(src) {}

    std::vector<Token> run() {
        bool line_start = true;
        while (pos_ < src_.size()) {
            char c = src_[pos_];
            if (c == '\n') {
                ++line_;
                ++pos_;
                line_start = true;
                if (directive_ && !continued_) directive_ = 0;
                continued_ = false;
                continue;
            }
            if (c == '\\' && pos_ + 1 < src_.size() &&
                (src_[pos_ + 1] == '\n' ||
                 (src_[pos_ + 1] == '\r' && pos_ + 2 < src_.size() && src_[pos_ + 2] == '\n'))) {
                // line continuation
                continued_ = true;
                ++pos_;
                continue;
            }
            if (std::isspace(static_cast<unsigned char>(c))) {
                ++pos_;
                continue;
            }
            if (c == '/' && peek(1) == '/') {
                skip_line_comment();
                continue;
            }
            if (c == '/' && peek(1) == '*') {
                skip_block_comment();
                continue;
            }
            if (c == '#' && line_start && directive_ == 0) {
                directive_ = ++directive_count_;
            }
            line_start = false;
            continued_ = false;
            lex_token();
        }
        return std::move(out_);
    }

private:
    char peek(std::size_t ahead) const {
        return pos_ + ahead < src_.size() ? src_[pos_ + ahead] : '\0';
    }

    void skip_line_comment() {
        while (pos_ < src_.size() && src_[pos_] != '\n') {
            if (src_[pos_] == '\\' && peek(1) == '\n') {
                pos_ += 2;
                ++line_;
                continue;
            }
            ++pos_;
        }
    }

    void skip_block_comment() {
        pos_ += 2;
        while (pos_ < src_.size() && !(src_[pos_] == '*' && peek(1) == '/')) {
            if (src_[pos_] == '\n') ++line_;
            ++pos_;
        }
        pos_ = std::min(src_.size(), pos_ + 2);
    }

    void emit(TokenKind kind, std::size_t begin, int line) {
        out_.push_back(Token{kind, src_.substr(begin, pos_ - begin), begin, pos_, line, directive_});
    }

    void lex_quoted(char quote, TokenKind kind) {
        std::size_t begin = pos_;
        int line = line_;
        ++pos_;
        while (pos_ < src_.size() && src_[pos_] != quote && src_[pos_] != '\n') {
            if (src_[pos_] == '\\' && pos_ + 1 < src_.size()) {
                if (src_[pos_ + 1] == '\n') ++line_;
                ++pos_;
            }
            ++pos_;
        }
        if (pos_ < src_.size() && src_[pos_] == quote) ++pos_;
        emit(kind, begin, line);
    }

    void lex_token() {
        std::size_t begin = pos_;
        char c = src_[pos_];
        if (ident_start(c)) {
            while (pos_ < src_.size() && ident_char(src_[pos_])) ++pos_;
            // wide / prefixed literals: L"..", u8'..'
            if (pos_ < src_.size() && (src_[pos_] == '"' || src_[pos_] == '\'')) {
                std::string_view prefix = src_.substr(begin, pos_ - begin);
                if (prefix == "L" || prefix == "u" || prefix == "U" || prefix == "u8") {
                    char q = src_[pos_];
                    pos_ = begin;
                    pos_ += prefix.size();
                    std::size_t save = begin;
                    lex_quoted(q, q == '"' ? TokenKind::String : TokenKind::Char);
                    out_.back().begin = save;
                    out_.back().text = src_.substr(save, pos_ - save);
                    return;
                }
            }
            emit(TokenKind::Ident, begin, line_);
            return;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) ||
            (c == '.' && std::isdigit(static_cast<unsigned char>(peek(1))))) {
            while (pos_ < src_.size()) {
                char d = src_[pos_];
                if (ident_char(d) || d == '.') {
                    ++pos_;
                } else if ((d == '+' || d == '-') && pos_ > begin &&
                           (src_[pos_ - 1] == 'e' || src_[pos_ - 1] == 'E' ||
                            src_[pos_ - 1] == 'p' || src_[pos_ - 1] == 'P')) {
                    ++pos_;
                } else {
                    break;
                }
            }
            emit(TokenKind::Number, begin, line_);
            return;
        }
        if (c == '"') return lex_quoted('"', TokenKind::String);
        if (c == '\'') return lex_quoted('\'', TokenKind::Char);

        static constexpr std::string_view three[] = {"<<=", ">>=", "..."};
        static constexpr std::string_view two[] = {"->", "++", "--", "<<", ">>", "<=", ">=", "==",
                                                   "!=", "&&", "||", "+=", "-=", "*=", "/=", "%=",
                                                   "&=", "|=", "^=", "##"};
        for (auto op : three) {
            if (src_.substr(pos_, 3) == op) {
                pos_ += 3;
                return emit(TokenKind::Punct, begin, line_);
            }
        }
        for (auto op : two) {
            if (src_.substr(pos_, 2) == op) {
                pos_ += 2;
                return emit(TokenKind::Punct, begin, line_);
            }
        }
        ++pos_;
        emit(TokenKind::Punct, begin, line_);
    }

    std::string_view src_;
    std::size_t pos_ = 0;
    int line_ = 1;
    int directive_ = 0;
    int directive_count_ = 0;
    bool continued_ = false;
    std::vector<Token> out_;
};

}  // namespace

std::vector<Token> lex(std::string_view source) { return Lexer(source).run(); }

bool is_identifier(std::string_view s) {
    if (s.empty() || !ident_start(s.front())) return false;
    return std::all_of(s.begin(), s.end(), ident_char);
}

std::size_t match_bracket(const std::vector<Token>& tokens, std::size_t open) {
    if (open >= tokens.size()) return tokens.size();
    auto opener = tokens[open].text;
    std::string_view closer = opener == "{" ? "}" : opener == "(" ? ")" : "]";
    int depth = 0;
    for (std::size_t i = open; i < tokens.size(); ++i) {
        if (tokens[i].kind != TokenKind::Punct) continue;
        if (tokens[i].text == opener) {
            ++depth;
        } else if (tokens[i].text == closer) {
            if (--depth == 0) return i;
        }
    }
    return tokens.size();
}

int line_of(std::string_view source, std::size_t offset) {
    offset = std::min(offset, source.size());
    return 1 + static_cast<int>(std::count(source.begin(), source.begin() + offset, '\n'));
}

}  // namespace speckernel::c
