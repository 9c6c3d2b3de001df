#include <algorithm>
#include <cctype>
#include <charconv>
#include <set>

#include "speckernel/errors.hpp"
#include "speckernel/syzlang.hpp"

namespace speckernel::syz {

namespace {

enum class Tok { Ident, Number, String, Punct, Newline, End };

struct Token {
    Tok kind;
    std::string text;
    int line;
    int col;
};

// syzlang builtins and declaration keywords outside the supported subset
const std::map<std::string, std::string, std::less<>>& unsupported_constructs() {
    static const std::map<std::string, std::string, std::less<>> kMap = {
        {"type", "type templates"},       {"csum", "csum"},
        {"vma", "vma"},                   {"vma64", "vma"},
        {"proc", "proc"},                 {"fmt", "fmt"},
        {"text", "text"},                 {"bitsize", "bitsize"},
        {"bytesize", "bytesize"},         {"offsetof", "offsetof"},
        {"glob", "glob"},                 {"stringnoz", "stringnoz"},
        {"compressed_image", "compressed_image"}, {"ptr64", "ptr64"},
        {"define", "define"},             {"meta", "meta"},
        {"optional", "optional"},         {"fileoff", "fileoff"},
        {"buffer", "buffer"},             {"void", "void"},
        {"bool8", "bool"},                {"bool16", "bool"},
        {"bool32", "bool"},               {"bool64", "bool"},
        {"boolptr", "bool"},              {"int16be", "big-endian ints"},
        {"int32be", "big-endian ints"},   {"int64be", "big-endian ints"},
    };
    return kMap;
}

class Lexer {
public:
    explicit Lexer(std::string_view text) : src_(text) {}

    std::vector<Token> run() {
        std::vector<Token> out;
        while (pos_ < src_.size()) {
            char c = src_[pos_];
            if (c == '\n') {
                out.push_back({Tok::Newline, "\n", line_, col()});
                ++pos_;
                ++line_;
                line_begin_ = pos_;
                continue;
            }
            if (c == ' ' || c == '\t' || c == '\r') {
                ++pos_;
                continue;
            }
            if (c == '#') {
                // comment: keep its text as a punct token so the parser can attach it
                std::size_t begin = pos_;
                while (pos_ < src_.size() && src_[pos_] != '\n') ++pos_;
                std::string body(src_.substr(begin + 1, pos_ - begin - 1));
                body.erase(0, std::min(body.size(), body.find_first_not_of(" \t")));
                while (!body.empty() && (body.back() == ' ' || body.back() == '\t' || body.back() == '\r')) body.pop_back();
                out.push_back({Tok::Punct, "#" + body, line_, static_cast<int>(begin - line_begin_) + 1});
                continue;
            }
            int column = col();
            if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
                std::size_t begin = pos_;
                while (pos_ < src_.size() &&
                       (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) {
                    ++pos_;
                }
                out.push_back({Tok::Ident, std::string(src_.substr(begin, pos_ - begin)), line_, column});
                continue;
            }
            if (std::isdigit(static_cast<unsigned char>(c)) ||
                (c == '-' && pos_ + 1 < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_ + 1])))) {
                std::size_t begin = pos_;
                ++pos_;
                while (pos_ < src_.size() && std::isalnum(static_cast<unsigned char>(src_[pos_]))) ++pos_;
                out.push_back({Tok::Number, std::string(src_.substr(begin, pos_ - begin)), line_, column});
                continue;
            }
            if (c == '"') {
                ++pos_;
                std::string value;
                while (pos_ < src_.size() && src_[pos_] != '"') {
                    if (src_[pos_] == '\n') throw SyntaxError(line_, column, "closing '\"'");
                    if (src_[pos_] == '\\' && pos_ + 1 < src_.size()) ++pos_;
                    value += src_[pos_++];
                }
                if (pos_ >= src_.size()) throw SyntaxError(line_, column, "closing '\"'");
                ++pos_;
                out.push_back({Tok::String, value, line_, column});
                continue;
            }
            if (std::string_view("[](){},:=<>$/.-+").find(c) != std::string_view::npos) {
                out.push_back({Tok::Punct, std::string(1, c), line_, column});
                ++pos_;
                continue;
            }
            throw SyntaxError(line_, column, std::string("unexpected character '") + c + "'");
        }
        out.push_back({Tok::End, "", line_, col()});
        return out;
    }

private:
    int col() const { return static_cast<int>(pos_ - line_begin_) + 1; }

    std::string_view src_;
    std::size_t pos_ = 0;
    std::size_t line_begin_ = 0;
    int line_ = 1;
};

std::int64_t parse_number(const Token& t) {
    std::string_view s = t.text;
    bool neg = false;
    if (!s.empty() && s.front() == '-') {
        neg = true;
        s.remove_prefix(1);
    }
    int base = 10;
    if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
        base = 16;
        s.remove_prefix(2);
    }
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
    if (ec != std::errc() || p != s.data() + s.size()) throw SyntaxError(t.line, t.col, "integer literal");
    auto value = static_cast<std::int64_t>(v);
    return neg ? -value : value;
}

class Parser {
public:
    explicit Parser(std::vector<Token> toks) : toks_(std::move(toks)) {}

    SpecFile parse_file() {
        SpecFile spec;
        std::vector<std::string> comments;
        while (!at(Tok::End)) {
            if (at(Tok::Newline)) {
                ++pos_;
                continue;
            }
            if (cur().kind == Tok::Punct && cur().text.front() == '#') {
                comments.push_back(cur().text.substr(1));
                ++pos_;
                continue;
            }
            parse_declaration(spec, comments);
            comments.clear();
        }
        link_resources(spec);
        return spec;
    }

    TypeExpr parse_standalone_type() {
        TypeExpr t = parse_type();
        while (at(Tok::Newline)) ++pos_;
        if (!at(Tok::End)) fail("end of type expression");
        return t;
    }

private:
    const Token& cur() const { return toks_[pos_]; }
    bool at(Tok k) const { return cur().kind == k; }
    bool at_punct(std::string_view p) const { return cur().kind == Tok::Punct && cur().text == p; }

    [[noreturn]] void fail(const std::string& expected) const {
        throw SyntaxError(cur().line, cur().col, "expected " + expected);
    }
    [[noreturn]] void unsupported(const Token& t, const std::string& construct) const {
        throw SyntaxError(t.line, t.col, "unsupported construct '" + construct + "'");
    }

    void expect_punct(std::string_view p) {
        if (!at_punct(p)) fail("'" + std::string(p) + "'");
        ++pos_;
    }

    std::string expect_ident(const std::string& what) {
        if (!at(Tok::Ident)) fail(what);
        return toks_[pos_++].text;
    }

    void end_of_line() {
        if (at(Tok::End)) return;
        if (!at(Tok::Newline)) fail("end of line");
        ++pos_;
    }

    void check_supported(const Token& t) const {
        auto it = unsupported_constructs().find(t.text);
        if (it != unsupported_constructs().end()) unsupported(t, it->second);
    }

    void parse_declaration(SpecFile& spec, std::vector<std::string>& comments) {
        const Token& head = cur();
        if (head.kind != Tok::Ident) fail("declaration");
        check_supported(head);
        if (head.text == "include" || head.text == "incdir") {
            if (head.text == "incdir") unsupported(head, "incdir");
            ++pos_;
            expect_punct("<");
            std::string path;
            while (!at_punct(">")) {
                if (at(Tok::Newline) || at(Tok::End)) fail("'>'");
                path += cur().text;
                ++pos_;
            }
            ++pos_;
            spec.includes.push_back(path);
            end_of_line();
            return;
        }
        if (head.text == "resource") {
            ++pos_;
            ResourceDecl r;
            r.name = expect_ident("resource name");
            expect_punct("[");
            r.underlying = expect_ident("resource base type");
            expect_punct("]");
            if (at_punct(":")) unsupported(cur(), "resource special values");
            r.comments = std::move(comments);
            spec.resources.push_back(std::move(r));
            end_of_line();
            return;
        }
        std::string name = expect_ident("declaration name");
        if (at_punct("$") || at_punct("(")) {
            SyscallDesc s;
            s.base_name = name;
            if (at_punct("$")) {
                ++pos_;
                s.variant = expect_ident("syscall variant");
            }
            expect_punct("(");
            while (at(Tok::Newline)) ++pos_;
            if (!at_punct(")")) {
                for (;;) {
                    Field f;
                    f.name = expect_ident("parameter name");
                    f.type = parse_type();
                    if (at_punct("(")) unsupported(cur(), "parameter attributes");
                    s.params.push_back(std::move(f));
                    if (at_punct(",")) {
                        ++pos_;
                        continue;
                    }
                    break;
                }
            }
            expect_punct(")");
            if (at(Tok::Ident)) s.ret = toks_[pos_++].text;
            s.comments = std::move(comments);
            spec.syscalls.push_back(std::move(s));
            end_of_line();
            return;
        }
        if (at_punct("=")) {
            ++pos_;
            FlagSet fs;
            fs.name = name;
            for (;;) {
                fs.values.push_back(parse_operand("flag value"));
                if (at_punct(",")) {
                    ++pos_;
                    continue;
                }
                break;
            }
            fs.comments = std::move(comments);
            spec.flag_sets.push_back(std::move(fs));
            end_of_line();
            return;
        }
        if (at_punct("{") || at_punct("[")) {
            TypeDef td;
            td.name = name;
            td.is_union = at_punct("[");
            std::string closer = td.is_union ? "]" : "}";
            ++pos_;
            for (;;) {
                while (at(Tok::Newline) || (cur().kind == Tok::Punct && cur().text.front() == '#')) ++pos_;
                if (at_punct(closer)) break;
                if (at(Tok::End)) fail("'" + closer + "'");
                Field f;
                f.name = expect_ident("field name");
                f.type = parse_type();
                if (at_punct("(")) {
                    ++pos_;
                    const Token& attr = cur();
                    std::string a = expect_ident("field attribute");
                    if (a == "in") {
                        f.dir = Dir::In;
                    } else if (a == "out") {
                        f.dir = Dir::Out;
                    } else if (a == "inout") {
                        f.dir = Dir::InOut;
                    } else if (a == "if") {
                        unsupported(attr, "conditional fields");
                    } else {
                        unsupported(attr, "field attribute " + a);
                    }
                    expect_punct(")");
                }
                td.fields.push_back(std::move(f));
                if (!at(Tok::Newline) && !at_punct(closer)) fail("end of field");
            }
            ++pos_;
            if (at_punct("[")) unsupported(cur(), "type attributes");
            td.comments = std::move(comments);
            spec.types.push_back(std::move(td));
            end_of_line();
            return;
        }
        fail("'(', '=', '{' or '[' after declaration name");
    }

    Operand parse_operand(const std::string& what) {
        if (at(Tok::Number)) return parse_number(toks_[pos_++]);
        if (at(Tok::Ident)) return toks_[pos_++].text;
        fail(what);
    }

    std::string parse_base_int() {
        const Token& t = cur();
        std::string name = expect_ident("integer type");
        if (!is_int_type_name(name)) {
            check_supported(t);
            throw SyntaxError(t.line, t.col, "expected integer type");
        }
        return name;
    }

    TypeExpr parse_type() {
        const Token& head = cur();
        if (!at(Tok::Ident)) fail("type");
        check_supported(head);
        std::string name = toks_[pos_++].text;

        if (is_int_type_name(name)) {
            IntType it{name, std::nullopt};
            if (at_punct("[")) {
                ++pos_;
                if (!at(Tok::Number)) fail("range lower bound");
                std::int64_t lo = parse_number(toks_[pos_++]);
                expect_punct(":");
                if (!at(Tok::Number)) fail("range upper bound");
                std::int64_t hi = parse_number(toks_[pos_++]);
                expect_punct("]");
                it.range = Range{lo, hi};
            }
            return {it};
        }
        if (name == "const") {
            expect_punct("[");
            ConstType ct{parse_operand("constant value"), ""};
            if (at_punct(",")) {
                ++pos_;
                ct.base = parse_base_int();
            }
            expect_punct("]");
            return {ct};
        }
        if (name == "flags") {
            expect_punct("[");
            FlagsType ft{expect_ident("flag set name"), ""};
            if (at_punct(",")) {
                ++pos_;
                ft.base = parse_base_int();
            }
            expect_punct("]");
            return {ft};
        }
        if (name == "ptr") {
            expect_punct("[");
            std::string d = expect_ident("pointer direction");
            PtrType pt;
            if (d == "in") {
                pt.dir = Dir::In;
            } else if (d == "out") {
                pt.dir = Dir::Out;
            } else if (d == "inout") {
                pt.dir = Dir::InOut;
            } else {
                --pos_;
                fail("pointer direction (in, out, inout)");
            }
            expect_punct(",");
            pt.elem = parse_type();
            expect_punct("]");
            return {pt};
        }
        if (name == "array") {
            expect_punct("[");
            ArrayType at_;
            at_.elem = parse_type();
            if (at_punct(",")) {
                ++pos_;
                at_.length = parse_operand("array length");
                if (at_punct(":")) unsupported(cur(), "array length ranges");
            }
            expect_punct("]");
            return {at_};
        }
        if (name == "string") {
            StringType st;
            if (at_punct("[")) {
                ++pos_;
                if (!at(Tok::String)) {
                    if (at(Tok::Ident)) unsupported(cur(), "string flag sets");
                    fail("string literal");
                }
                st.literal = toks_[pos_++].text;
                if (at_punct(",")) unsupported(cur(), "sized strings");
                expect_punct("]");
            }
            return {st};
        }
        if (name == "len") {
            expect_punct("[");
            LenType lt;
            lt.path.push_back(expect_ident("len target"));
            while (at_punct(":")) {
                ++pos_;
                lt.path.push_back(expect_ident("len target component"));
            }
            if (at_punct(",")) {
                ++pos_;
                lt.base = parse_base_int();
            }
            expect_punct("]");
            return {lt};
        }
        if (at_punct("[")) unsupported(head, "type templates");
        return {NamedType{name}};
    }

    std::vector<Token> toks_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string_view to_string(Dir d) {
    switch (d) {
    case Dir::In: return "in";
    case Dir::Out: return "out";
    case Dir::InOut: return "inout";
    }
    return "in";
}

bool is_int_type_name(std::string_view name) {
    return name == "int8" || name == "int16" || name == "int32" || name == "int64" || name == "intptr";
}

SpecFile parse_spec(std::string_view text) { return Parser(Lexer(text).run()).parse_file(); }

TypeExpr parse_type(std::string_view text) { return Parser(Lexer(text).run()).parse_standalone_type(); }

}  // namespace speckernel::syz
