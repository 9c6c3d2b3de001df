#include "speckernel/const_eval.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <vector>

#include "speckernel/c_lexer.hpp"

namespace speckernel {

using c::Token;
using c::TokenKind;

namespace {

constexpr int kMaxDepth = 64;

const std::map<std::string_view, std::uint64_t>& scalar_sizes() {
    static const std::map<std::string_view, std::uint64_t> kSizes = {
        {"char", 1},     {"_Bool", 1},       {"bool", 1},        {"__u8", 1},       {"__s8", 1},
        {"u8", 1},       {"s8", 1},          {"uint8_t", 1},     {"int8_t", 1},     {"short", 2},
        {"__u16", 2},    {"__s16", 2},       {"u16", 2},         {"s16", 2},        {"__le16", 2},
        {"__be16", 2},   {"uint16_t", 2},    {"int16_t", 2},     {"int", 4},        {"__u32", 4},
        {"__s32", 4},    {"u32", 4},         {"s32", 4},         {"__le32", 4},     {"__be32", 4},
        {"uint32_t", 4}, {"int32_t", 4},     {"float", 4},       {"long", 8},       {"__u64", 8},
        {"__s64", 8},    {"u64", 8},         {"s64", 8},         {"__le64", 8},     {"__be64", 8},
        {"uint64_t", 8}, {"int64_t", 8},     {"double", 8},      {"size_t", 8},     {"ssize_t", 8},
        {"__kernel_size_t", 8}, {"__kernel_off_t", 8}, {"loff_t", 8}, {"uintptr_t", 8},
        {"__aligned_u64", 8}, {"__kernel_pid_t", 4}, {"pid_t", 4}, {"uid_t", 4}, {"gid_t", 4},
    };
    return kSizes;
}

bool is_type_word(std::string_view w) {
    return w == "unsigned" || w == "signed" || w == "struct" || w == "union" || w == "enum" ||
           w == "const" || w == "volatile" || scalar_sizes().count(w) > 0;
}

std::optional<std::int64_t> parse_int_literal(std::string_view s) {
    while (!s.empty() && (s.back() == 'u' || s.back() == 'U' || s.back() == 'l' || s.back() == 'L')) {
        s.remove_suffix(1);
    }
    int base = 10;
    if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
        base = 16;
        s.remove_prefix(2);
    } else if (s.size() > 2 && s[0] == '0' && (s[1] == 'b' || s[1] == 'B')) {
        base = 2;
        s.remove_prefix(2);
    } else if (s.size() > 1 && s[0] == '0') {
        base = 8;
        s.remove_prefix(1);
    }
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
    if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
    return static_cast<std::int64_t>(v);
}

std::optional<std::int64_t> parse_char_literal(std::string_view s) {
    if (s.size() < 3 || s.front() != '\'' || s.back() != '\'') return std::nullopt;
    s = s.substr(1, s.size() - 2);
    if (s.size() == 1) return static_cast<unsigned char>(s[0]);
    if (s[0] != '\\') return std::nullopt;
    switch (s[1]) {
    case 'n': return '\n';
    case 't': return '\t';
    case '0': return 0;
    case '\\': return '\\';
    case '\'': return '\'';
    case 'x': return parse_int_literal("0x" + std::string(s.substr(2)));
    default: return std::nullopt;
    }
}

}  // namespace

class ExprParser {
public:
    ExprParser(ConstantEvaluator& ev, std::string_view text) : ev_(ev), text_(text), toks_(c::lex(text)) {}

    std::optional<std::int64_t> run() {
        auto v = parse_binary(0);
        if (!v || pos_ != toks_.size()) return std::nullopt;
        return v;
    }

private:
    bool at(std::string_view p) const {
        return pos_ < toks_.size() && toks_[pos_].kind == TokenKind::Punct && toks_[pos_].text == p;
    }

    static int precedence(std::string_view op) {
        if (op == "|") return 1;
        if (op == "^") return 2;
        if (op == "&") return 3;
        if (op == "<<" || op == ">>") return 4;
        if (op == "+" || op == "-") return 5;
        if (op == "*" || op == "/" || op == "%") return 6;
        return -1;
    }

    std::optional<std::int64_t> parse_binary(int min_prec) {
        auto lhs = parse_unary();
        if (!lhs) return std::nullopt;
        while (pos_ < toks_.size() && toks_[pos_].kind == TokenKind::Punct) {
            std::string_view op = toks_[pos_].text;
            int prec = precedence(op);
            if (prec < 0 || prec < min_prec) break;
            ++pos_;
            auto rhs = parse_binary(prec + 1);
            if (!rhs) return std::nullopt;
            auto a = static_cast<std::uint64_t>(*lhs);
            auto b = static_cast<std::uint64_t>(*rhs);
            if (op == "|") lhs = static_cast<std::int64_t>(a | b);
            else if (op == "^") lhs = static_cast<std::int64_t>(a ^ b);
            else if (op == "&") lhs = static_cast<std::int64_t>(a & b);
            else if (op == "<<") lhs = static_cast<std::int64_t>(b >= 64 ? 0 : a << b);
            else if (op == ">>") lhs = b >= 64 ? 0 : (*lhs >> b);
            else if (op == "+") lhs = static_cast<std::int64_t>(a + b);
            else if (op == "-") lhs = static_cast<std::int64_t>(a - b);
            else if (op == "*") lhs = static_cast<std::int64_t>(a * b);
            else if (*rhs == 0) return std::nullopt;
            else if (op == "/") lhs = *lhs / *rhs;
            else lhs = *lhs % *rhs;
        }
        return lhs;
    }

    // Source text spanning tokens [from, to).
    std::string_view span(std::size_t from, std::size_t to) const {
        if (from >= to) return {};
        return text_.substr(toks_[from].begin, toks_[to - 1].end - toks_[from].begin);
    }

    // Splits a parenthesised argument list starting at '(' into argument texts.
    std::optional<std::vector<std::string>> call_args() {
        if (!at("(")) return std::nullopt;
        std::size_t close = c::match_bracket(toks_, pos_);
        if (close >= toks_.size()) return std::nullopt;
        std::vector<std::string> args;
        std::size_t begin = pos_ + 1;
        int depth = 0;
        for (std::size_t i = pos_ + 1; i < close; ++i) {
            const auto& t = toks_[i];
            if (t.kind == TokenKind::Punct && (t.text == "(" || t.text == "[")) ++depth;
            if (t.kind == TokenKind::Punct && (t.text == ")" || t.text == "]")) --depth;
            if (depth == 0 && t.kind == TokenKind::Punct && t.text == ",") {
                args.emplace_back(span(begin, i));
                begin = i + 1;
            }
        }
        if (begin < close || !args.empty()) args.emplace_back(span(begin, close));
        pos_ = close + 1;
        return args;
    }

    std::optional<std::int64_t> ioc_call(std::string_view name) {
        auto args = call_args();
        if (!args) return std::nullopt;
        std::uint32_t dir = 0;
        std::optional<std::int64_t> type, nr;
        std::optional<std::uint64_t> size = 0;
        if (name == "_IOC") {
            if (args->size() != 4) return std::nullopt;
            auto d = ev_.evaluate((*args)[0]);
            auto s = ev_.evaluate((*args)[3]);
            if (!d || !s) return std::nullopt;
            dir = static_cast<std::uint32_t>(*d);
            size = static_cast<std::uint64_t>(*s);
        } else if (name == "_IO") {
            if (args->size() != 2) return std::nullopt;
        } else {
            if (args->size() != 3) return std::nullopt;
            dir = name == "_IOR" ? ioc::kRead : name == "_IOW" ? ioc::kWrite : ioc::kRead | ioc::kWrite;
            size = ev_.size_of((*args)[2]);
        }
        std::size_t first = name == "_IOC" ? 1 : 0;
        type = ev_.evaluate((*args)[first]);
        nr = ev_.evaluate((*args)[first + 1]);
        if (!type || !nr || !size) return std::nullopt;
        return static_cast<std::int64_t>(ioc::encode(dir, static_cast<std::uint32_t>(*type),
                                                     static_cast<std::uint32_t>(*nr),
                                                     static_cast<std::uint32_t>(*size)));
    }

    std::optional<std::int64_t> parse_unary() {
        if (pos_ >= toks_.size()) return std::nullopt;
        const Token& t = toks_[pos_];
        if (t.kind == TokenKind::Punct) {
            if (t.text == "-" || t.text == "+" || t.text == "~" || t.text == "!") {
                ++pos_;
                auto v = parse_unary();
                if (!v) return std::nullopt;
                if (t.text == "-") return static_cast<std::int64_t>(0 - static_cast<std::uint64_t>(*v));
                if (t.text == "~") return ~*v;
                if (t.text == "!") return *v == 0 ? 1 : 0;
                return v;
            }
            if (t.text == "(") {
                // cast: '(' type-words ')' operand
                if (pos_ + 1 < toks_.size() && toks_[pos_ + 1].kind == TokenKind::Ident &&
                    is_type_word(toks_[pos_ + 1].text)) {
                    std::size_t close = c::match_bracket(toks_, pos_);
                    if (close >= toks_.size()) return std::nullopt;
                    pos_ = close + 1;
                    return parse_unary();
                }
                ++pos_;
                auto v = parse_binary(0);
                if (!v || !at(")")) return std::nullopt;
                ++pos_;
                return v;
            }
            return std::nullopt;
        }
        if (t.kind == TokenKind::Number) {
            ++pos_;
            return parse_int_literal(t.text);
        }
        if (t.kind == TokenKind::Char) {
            ++pos_;
            return parse_char_literal(t.text);
        }
        if (t.kind != TokenKind::Ident) return std::nullopt;
        std::string name(t.text);
        ++pos_;
        if (name == "sizeof") {
            if (!at("(")) return std::nullopt;
            std::size_t close = c::match_bracket(toks_, pos_);
            if (close >= toks_.size()) return std::nullopt;
            auto sz = ev_.size_of(span(pos_ + 1, close));
            pos_ = close + 1;
            if (!sz) return std::nullopt;
            return static_cast<std::int64_t>(*sz);
        }
        if (name == "_IO" || name == "_IOR" || name == "_IOW" || name == "_IOWR" || name == "_IOC") {
            return ioc_call(name);
        }
        if (name == "_IOC_NONE") return ioc::kNone;
        if (name == "_IOC_READ") return ioc::kRead;
        if (name == "_IOC_WRITE") return ioc::kWrite;
        if (at("(")) {
            auto it = ev_.db_.macros().find(name);
            if (it == ev_.db_.macros().end() || !it->second.params) return std::nullopt;
            auto args = call_args();
            if (!args || args->size() != it->second.params->size()) return std::nullopt;
            return expand(it->second, *args);
        }
        return ev_.value(name);
    }

    std::optional<std::int64_t> expand(const MacroDef& macro, const std::vector<std::string>& args) {
        std::string out;
        auto body_toks = c::lex(macro.body);
        std::size_t last = 0;
        for (const auto& bt : body_toks) {
            out += macro.body.substr(last, bt.begin - last);
            last = bt.end;
            auto p = std::find(macro.params->begin(), macro.params->end(), bt.text);
            if (bt.kind == TokenKind::Ident && p != macro.params->end()) {
                out += "(" + args[static_cast<std::size_t>(p - macro.params->begin())] + ")";
            } else {
                out += bt.text;
            }
        }
        return ev_.evaluate(out);
    }

    ConstantEvaluator& ev_;
    std::string_view text_;
    std::vector<Token> toks_;
    std::size_t pos_ = 0;
};

ConstantEvaluator::ConstantEvaluator(const DefinitionDatabase& db, std::map<std::string, std::int64_t> builtins)
    : db_(db), builtins_(std::move(builtins)) {}

std::optional<std::int64_t> ConstantEvaluator::value(std::string_view name) {
    if (auto it = memo_.find(name); it != memo_.end()) return it->second;
    if (auto it = builtins_.find(std::string(name)); it != builtins_.end()) return it->second;
    if (in_progress_.count(name) || depth_ > kMaxDepth) return std::nullopt;
    in_progress_.emplace(name);
    std::optional<std::int64_t> result;
    std::string key(name);
    if (auto m = db_.macros().find(key); m != db_.macros().end() && !m->second.params) {
        result = evaluate(m->second.body);
    } else if (auto e = db_.enumerators().find(key); e != db_.enumerators().end()) {
        result = evaluate(e->second);
    } else if (auto lit = parse_int_literal(name)) {
        result = lit;
    }
    in_progress_.erase(in_progress_.find(name));
    memo_.emplace(key, result);
    return result;
}

std::optional<std::int64_t> ConstantEvaluator::evaluate(std::string_view expr) {
    if (depth_ > kMaxDepth) return std::nullopt;
    ++depth_;
    auto v = ExprParser(*this, expr).run();
    --depth_;
    return v;
}

std::optional<std::uint64_t> ConstantEvaluator::size_of(std::string_view c_type) {
    auto l = layout_of(c_type);
    if (!l) return std::nullopt;
    return l->size;
}

std::optional<ConstantEvaluator::Layout> ConstantEvaluator::layout_of(std::string_view c_type) {
    auto toks = c::lex(c_type);
    // macro arguments arrive parenthesized: sizeof((struct foo))
    while (toks.size() >= 2 && toks.front().kind == TokenKind::Punct && toks.front().text == "(" &&
           c::match_bracket(toks, 0) == toks.size() - 1) {
        toks.erase(toks.begin());
        toks.pop_back();
    }
    std::vector<std::string_view> words;
    int pointers = 0;
    for (const auto& t : toks) {
        if (t.kind == TokenKind::Punct && t.text == "*") {
            ++pointers;
        } else if (t.kind == TokenKind::Ident) {
            if (t.text == "const" || t.text == "volatile" || t.text == "__user") continue;
            words.push_back(t.text);
        } else {
            return std::nullopt;
        }
    }
    if (pointers > 0) return Layout{8, 8};
    if (words.empty()) return std::nullopt;
    if (words[0] == "struct" || words[0] == "union") {
        if (words.size() != 2) return std::nullopt;
        return aggregate_layout(words[0], words[1]);
    }
    if (words[0] == "enum") return Layout{4, 4};
    // unsigned/signed modifiers do not change size
    std::vector<std::string_view> core;
    for (auto w : words) {
        if (w != "unsigned" && w != "signed") core.push_back(w);
    }
    if (core.empty()) return Layout{4, 4};
    if (core.size() == 2 && core[0] == "long" && (core[1] == "long" || core[1] == "int")) return Layout{8, 8};
    if (core.size() == 2 && core[0] == "short" && core[1] == "int") return Layout{2, 2};
    if (core.size() != 1) return std::nullopt;
    if (auto it = scalar_sizes().find(core[0]); it != scalar_sizes().end()) return Layout{it->second, it->second};
    // typedef'd aggregates are indexed under their alias
    for (const auto& d : db_.lookup(core[0])) {
        if (d.kind == DefKind::Struct) return aggregate_layout("struct", core[0]);
        if (d.kind == DefKind::Union) return aggregate_layout("union", core[0]);
    }
    return std::nullopt;
}

std::optional<ConstantEvaluator::Layout> ConstantEvaluator::aggregate_layout(std::string_view tag_kind,
                                                                             std::string_view name) {
    DefKind want = tag_kind == "struct" ? DefKind::Struct : DefKind::Union;
    for (const auto& d : db_.lookup(name)) {
        if (d.kind != want) continue;
        auto open = d.text.find('{');
        auto close = d.text.rfind('}');
        if (open == std::string::npos || close == std::string::npos || close < open) return std::nullopt;
        bool packed = d.text.find("__packed", close) != std::string::npos ||
                      d.text.find("packed", close) != std::string::npos;
        if (depth_ > kMaxDepth) return std::nullopt;
        ++depth_;
        auto l = body_layout(std::string_view(d.text).substr(open + 1, close - open - 1), want == DefKind::Union,
                             packed);
        --depth_;
        return l;
    }
    return std::nullopt;
}

std::optional<ConstantEvaluator::Layout> ConstantEvaluator::body_layout(std::string_view body, bool is_union,
                                                                        bool packed) {
    auto toks = c::lex(body);
    Layout agg{0, 1};
    std::size_t i = 0;
    auto place = [&](Layout member) {
        std::uint64_t align = packed ? 1 : member.align;
        agg.align = std::max(agg.align, align);
        if (is_union) {
            agg.size = std::max(agg.size, member.size);
        } else {
            agg.size = (agg.size + align - 1) / align * align + member.size;
        }
    };
    while (i < toks.size()) {
        if (toks[i].directive != 0) {
            ++i;
            continue;
        }
        // one member declaration up to ';'
        std::size_t end = i;
        while (end < toks.size() && !(toks[end].kind == TokenKind::Punct && toks[end].text == ";")) {
            if (toks[end].kind == TokenKind::Punct && toks[end].text == "{") end = c::match_bracket(toks, end);
            ++end;
        }
        if (end >= toks.size()) return std::nullopt;
        std::optional<Layout> base;
        std::size_t decl = i;
        // inline aggregate: struct|union [tag] { ... } declarators
        if ((toks[i].text == "struct" || toks[i].text == "union") &&
            ((i + 1 < end && toks[i + 1].text == "{") || (i + 2 < end && toks[i + 2].text == "{"))) {
            std::size_t open = toks[i + 1].text == "{" ? i + 1 : i + 2;
            std::size_t close = c::match_bracket(toks, open);
            if (close >= end) return std::nullopt;
            base = body_layout(body.substr(toks[open].end, toks[close].begin - toks[open].end),
                               toks[i].text == "union", packed);
            decl = close + 1;
        } else {
            // type words run until the last identifier before '[' , ',' or end
            std::size_t name_at = end;
            for (std::size_t k = i; k < end; ++k) {
                if (toks[k].kind == TokenKind::Punct && (toks[k].text == "[" || toks[k].text == ",")) break;
                if (toks[k].kind == TokenKind::Punct && toks[k].text == ":") return std::nullopt;  // bitfield
                if (toks[k].kind == TokenKind::Ident) name_at = k;
            }
            if (name_at == end || name_at == i) return std::nullopt;
            std::size_t type_end = name_at;
            while (type_end > i && toks[type_end - 1].kind == TokenKind::Punct && toks[type_end - 1].text == "*") {
                --type_end;
            }
            base = layout_of(body.substr(toks[i].begin, toks[type_end - 1].end - toks[i].begin));
            decl = type_end;
        }
        if (!base) return std::nullopt;
        // declarators: [*]name[dims], ...
        std::size_t k = decl;
        bool any = false;
        while (k < end) {
            int ptr = 0;
            while (k < end && toks[k].text == "*") {
                ++ptr;
                ++k;
            }
            if (k >= end || toks[k].kind != TokenKind::Ident) return std::nullopt;
            ++k;
            Layout member = ptr ? Layout{8, 8} : *base;
            std::uint64_t count = 1;
            bool flexible = false;
            while (k < end && toks[k].text == "[") {
                std::size_t close = c::match_bracket(toks, k);
                if (close >= end) return std::nullopt;
                if (close == k + 1) {
                    flexible = true;
                } else {
                    auto n = evaluate(body.substr(toks[k + 1].begin, toks[close - 1].end - toks[k + 1].begin));
                    if (!n || *n < 0) return std::nullopt;
                    count *= static_cast<std::uint64_t>(*n);
                }
                k = close + 1;
            }
            member.size = flexible ? 0 : member.size * count;
            place(member);
            any = true;
            if (k < end && toks[k].text == ",") ++k;
        }
        if (!any) place(*base);  // anonymous inline struct/union
        i = end + 1;
    }
    std::uint64_t a = agg.align;
    agg.size = (agg.size + a - 1) / a * a;
    return agg;
}

}  // namespace speckernel
