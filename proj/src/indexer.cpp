#include "speckernel/indexer.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "speckernel/c_lexer.hpp"
#include "speckernel/errors.hpp"

namespace speckernel {

using c::Token;
using c::TokenKind;
using nlohmann::json;

std::string_view to_string(DefKind kind) {
    switch (kind) {
    case DefKind::Function: return "Function";
    case DefKind::Struct: return "Struct";
    case DefKind::Union: return "Union";
    case DefKind::Enum: return "Enum";
    case DefKind::Macro: return "Macro";
    case DefKind::GlobalVar: return "GlobalVar";
    }
    return "Function";
}

std::optional<DefKind> def_kind_from_string(std::string_view s) {
    for (auto k : {DefKind::Function, DefKind::Struct, DefKind::Union, DefKind::Enum, DefKind::Macro,
                   DefKind::GlobalVar}) {
        if (to_string(k) == s) return k;
    }
    return std::nullopt;
}

std::string_view to_string(HandlerKind kind) {
    switch (kind) {
    case HandlerKind::FileOps: return "FileOps";
    case HandlerKind::ProtoOps: return "ProtoOps";
    case HandlerKind::MiscDevice: return "MiscDevice";
    case HandlerKind::Other: return "Other";
    }
    return "Other";
}

std::vector<std::string> default_trigger_fields() {
    return {"ioctl", "unlocked_ioctl", "compat_ioctl", "setsockopt", "getsockopt"};
}

std::map<std::string, std::vector<std::string>> IndexerConfig::default_positional_fields() {
    return {
        {"file_operations",
         {"owner", "llseek", "read", "write", "read_iter", "write_iter", "iopoll", "iterate_shared",
          "poll", "unlocked_ioctl", "compat_ioctl", "mmap", "mmap_supported_flags", "open", "flush",
          "release", "fsync", "fasync", "lock", "get_unmapped_area", "check_flags", "flock",
          "splice_write", "splice_read", "splice_eof", "setlease", "fallocate", "show_fdinfo"}},
        {"proto_ops",
         {"family", "flags", "owner", "release", "bind", "connect", "socketpair", "accept",
          "getname", "poll", "ioctl", "compat_ioctl", "gettstamp", "listen", "shutdown",
          "setsockopt", "getsockopt", "show_fdinfo", "sendmsg", "recvmsg", "mmap", "splice_read",
          "splice_eof", "set_peek_off", "peek_len", "read_sock", "read_skb", "sendmsg_locked",
          "set_rcvlowat"}},
    };
}

namespace {

bool is_punct(const Token& t, std::string_view p) { return t.kind == TokenKind::Punct && t.text == p; }
bool is_ident(const Token& t, std::string_view p) { return t.kind == TokenKind::Ident && t.text == p; }

bool is_tag_keyword(const Token& t) {
    return is_ident(t, "struct") || is_ident(t, "union") || is_ident(t, "enum");
}

// Declaration specifiers that may precede a struct/union/enum definition.
bool is_specifier(const Token& t) {
    static const std::set<std::string_view> kSpecifiers = {
        "typedef", "static", "const", "extern", "volatile", "inline", "__maybe_unused",
        "__attribute__", "__packed", "__aligned", "__randomize_layout"};
    return t.kind == TokenKind::Ident && kSpecifiers.count(t.text) > 0;
}

class Scanner {
public:
    Scanner(std::string_view path, std::string_view text)
        : path_(path), text_(text), toks_(c::lex(text)) {}

    ScanResult run() {
        std::size_t i = 0;
        std::size_t start = npos;
        while (i < toks_.size()) {
            const Token& t = toks_[i];
            if (t.directive != 0) {
                std::size_t end = i;
                while (end < toks_.size() && toks_[end].directive == t.directive) ++end;
                handle_directive(i, end);
                i = end;
                continue;
            }
            if (start == npos) start = i;
            if (is_punct(t, "(") || is_punct(t, "[")) {
                std::size_t close = std::min(skip_bracket(i), toks_.size() - 1);
                nested_directives(i, close);
                i = close + 1;
                continue;
            }
            if (is_punct(t, "{")) {
                std::size_t close = skip_bracket(i);
                if (is_function_header(start, i)) {
                    emit_function(start, i, close);
                    start = npos;
                }
                nested_directives(i, std::min(close, toks_.size() - 1));
                i = close + 1;
                continue;
            }
            if (is_punct(t, ";")) {
                handle_statement(start, i);
                start = npos;
            }
            ++i;
        }
        std::stable_sort(out_.definitions.begin(), out_.definitions.end(),
                         [](const Definition& a, const Definition& b) { return a.lines.start < b.lines.start; });
        return std::move(out_);
    }

private:
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    // Matching close, skipping tokens that belong to directives.
    std::size_t skip_bracket(std::size_t open) const {
        auto opener = toks_[open].text;
        std::string_view closer = opener == "{" ? "}" : opener == "(" ? ")" : "]";
        int depth = 0;
        for (std::size_t i = open; i < toks_.size(); ++i) {
            const Token& t = toks_[i];
            if (t.directive != 0 || t.kind != TokenKind::Punct) continue;
            if (t.text == opener) {
                ++depth;
            } else if (t.text == closer && --depth == 0) {
                return i;
            }
        }
        return toks_.size() - 1;
    }

    bool has_top_level(std::size_t from, std::size_t to, std::string_view p) const {
        for (std::size_t i = from; i < to; ++i) {
            if (toks_[i].directive != 0) continue;
            if (is_punct(toks_[i], "(") || is_punct(toks_[i], "[") || is_punct(toks_[i], "{")) {
                i = skip_bracket(i);
                continue;
            }
            if (is_punct(toks_[i], p)) return true;
        }
        return false;
    }

    // `specifiers ... name ( params ) [attributes] {`
    bool is_function_header(std::size_t start, std::size_t brace) const {
        if (brace == start) return false;
        if (has_top_level(start, brace, "=")) return false;
        std::size_t j = start;
        while (j < brace && is_specifier(toks_[j])) ++j;
        if (j < brace && is_tag_keyword(toks_[j])) {
            // `struct foo {` is a tag definition; `struct foo *fn(void) {` is a function
            if (j + 2 >= brace) return false;
        }
        return function_name_index(start, brace) != npos;
    }

    std::size_t function_name_index(std::size_t start, std::size_t brace) const {
        for (std::size_t i = start; i < brace; ++i) {
            if (toks_[i].directive != 0) continue;
            if (is_punct(toks_[i], "(")) {
                if (i == start || toks_[i - 1].kind != TokenKind::Ident) return npos;
                std::size_t close = skip_bracket(i);
                if (close >= brace) return npos;
                // only attributes may follow the parameter list
                for (std::size_t k = close + 1; k < brace; ++k) {
                    if (toks_[k].directive != 0) continue;
                    if (is_ident(toks_[k], "__attribute__") || is_ident(toks_[k], "__acquires") ||
                        is_ident(toks_[k], "__releases") || is_ident(toks_[k], "__must_hold")) {
                        if (k + 1 < brace && is_punct(toks_[k + 1], "(")) k = skip_bracket(k + 1);
                        continue;
                    }
                    return npos;
                }
                return i - 1;
            }
        }
        return npos;
    }

    Definition make(DefKind kind, std::string name, std::size_t first, std::size_t last) const {
        Definition d;
        d.kind = kind;
        d.name = std::move(name);
        d.file = std::string(path_);
        d.lines = {toks_[first].line, toks_[last].line + count_newlines(toks_[last].text)};
        d.text = std::string(text_.substr(toks_[first].begin, toks_[last].end - toks_[first].begin));
        return d;
    }

    static int count_newlines(std::string_view s) {
        return static_cast<int>(std::count(s.begin(), s.end(), '\n'));
    }

    void emit_function(std::size_t start, std::size_t brace, std::size_t close) {
        std::size_t name = function_name_index(start, brace);
        out_.definitions.push_back(make(DefKind::Function, std::string(toks_[name].text), start, close));
    }

    void handle_statement(std::size_t start, std::size_t semi) {
        if (start == npos || start >= semi) return;
        // tag definition: [specifiers] struct|union|enum [name] { ... } [declarators] ;
        std::size_t j = start;
        bool is_typedef = false;
        while (j < semi && is_specifier(toks_[j])) {
            if (is_ident(toks_[j], "typedef")) is_typedef = true;
            ++j;
        }
        std::size_t eq = npos;
        for (std::size_t i = start; i < semi; ++i) {
            if (toks_[i].directive != 0) continue;
            if (is_punct(toks_[i], "(") || is_punct(toks_[i], "[") || is_punct(toks_[i], "{")) {
                i = skip_bracket(i);
                continue;
            }
            if (is_punct(toks_[i], "=")) {
                eq = i;
                break;
            }
        }
        if (j + 1 < semi && is_tag_keyword(toks_[j])) {
            std::size_t k = j + 1;
            std::string tag;
            if (toks_[k].kind == TokenKind::Ident) {
                tag = std::string(toks_[k].text);
                ++k;
            }
            if (k < semi && is_punct(toks_[k], "{") && (eq == npos || eq > k)) {
                std::size_t close = skip_bracket(k);
                std::string name = tag;
                if (name.empty() && is_typedef && close + 1 < semi &&
                    toks_[close + 1].kind == TokenKind::Ident) {
                    name = std::string(toks_[close + 1].text);
                }
                if (is_ident(toks_[j], "enum")) collect_enumerators(k, close);
                if (!name.empty()) {
                    DefKind kind = is_ident(toks_[j], "struct")  ? DefKind::Struct
                                   : is_ident(toks_[j], "union") ? DefKind::Union
                                                                 : DefKind::Enum;
                    out_.definitions.push_back(make(kind, name, start, semi));
                }
                if (eq != npos) emit_global(start, eq, semi);
                return;
            }
        }
        if (eq != npos && eq + 1 < semi && is_punct(toks_[eq + 1], "{")) emit_global(start, eq, semi);
    }

    void emit_global(std::size_t start, std::size_t eq, std::size_t semi) {
        // declarator name: last identifier before '=' outside of brackets
        for (std::size_t i = eq; i-- > start;) {
            if (is_punct(toks_[i], "]")) {
                while (i > start && !is_punct(toks_[i], "[")) --i;
                continue;
            }
            if (toks_[i].kind == TokenKind::Ident && !is_specifier(toks_[i])) {
                out_.definitions.push_back(
                    make(DefKind::GlobalVar, std::string(toks_[i].text), start, semi));
                return;
            }
        }
    }

    void collect_enumerators(std::size_t open, std::size_t close) {
        std::string prev;
        std::size_t i = open + 1;
        while (i < close) {
            if (toks_[i].directive != 0) {
                ++i;
                continue;
            }
            if (toks_[i].kind != TokenKind::Ident) {
                ++i;
                continue;
            }
            std::string name(toks_[i].text);
            std::string expr;
            std::size_t k = i + 1;
            if (k < close && is_punct(toks_[k], "=")) {
                ++k;
                std::size_t begin = k;
                int depth = 0;
                while (k < close) {
                    if (is_punct(toks_[k], "(")) ++depth;
                    if (is_punct(toks_[k], ")")) --depth;
                    if (depth == 0 && is_punct(toks_[k], ",")) break;
                    ++k;
                }
                if (begin < k) {
                    expr = std::string(
                        text_.substr(toks_[begin].begin, toks_[k - 1].end - toks_[begin].begin));
                }
            } else {
                expr = prev.empty() ? "0" : "(" + prev + ") + 1";
            }
            out_.enumerators.emplace_back(name, expr);
            prev = name;
            while (k < close && !is_punct(toks_[k], ",")) ++k;
            i = k + 1;
        }
    }

    // #defines inside struct bodies and the like (uapi headers do this)
    void nested_directives(std::size_t open, std::size_t close) {
        std::size_t k = open + 1;
        while (k < close) {
            if (toks_[k].directive == 0) {
                ++k;
                continue;
            }
            std::size_t end = k;
            while (end < toks_.size() && toks_[end].directive == toks_[k].directive) ++end;
            handle_directive(k, end);
            k = end;
        }
    }

    void handle_directive(std::size_t begin, std::size_t end) {
        if (end - begin < 3 || !is_ident(toks_[begin + 1], "define")) return;
        const Token& name = toks_[begin + 2];
        if (name.kind != TokenKind::Ident) return;
        MacroDef macro;
        std::size_t body = begin + 3;
        // function-like only when '(' immediately follows the name
        if (body < end && is_punct(toks_[body], "(") && toks_[body].begin == name.end) {
            std::vector<std::string> params;
            std::size_t k = body + 1;
            while (k < end && !is_punct(toks_[k], ")")) {
                if (toks_[k].kind == TokenKind::Ident || is_punct(toks_[k], "...")) {
                    params.emplace_back(toks_[k].text);
                }
                ++k;
            }
            macro.params = std::move(params);
            body = k + 1;
        }
        if (body < end) {
            macro.body = std::string(text_.substr(toks_[body].begin, toks_[end - 1].end - toks_[body].begin));
            // collapse continuation lines
            std::string flat;
            for (std::size_t p = 0; p < macro.body.size(); ++p) {
                if (macro.body[p] == '\\' && p + 1 < macro.body.size() && macro.body[p + 1] == '\n') {
                    flat += ' ';
                    ++p;
                    continue;
                }
                flat += macro.body[p];
            }
            macro.body = std::move(flat);
        }
        out_.macros.emplace(std::string(name.text), macro);
        out_.definitions.push_back(make(DefKind::Macro, std::string(name.text), begin, end - 1));
    }

    std::string_view path_;
    std::string_view text_;
    std::vector<Token> toks_;
    ScanResult out_;
};

bool definition_less(const Definition& a, const Definition& b) {
    if (a.file != b.file) return a.file < b.file;
    if (a.lines.start != b.lines.start) return a.lines.start < b.lines.start;
    return a.name < b.name;
}

// Binary content or invalid UTF-8 is treated as unreadable.
std::optional<std::string> validate_text(const std::string& data) {
    std::size_t i = 0;
    while (i < data.size()) {
        auto c = static_cast<unsigned char>(data[i]);
        if (c == 0) return "contains NUL bytes";
        int extra = c < 0x80 ? 0 : (c >> 5) == 0x6 ? 1 : (c >> 4) == 0xE ? 2 : (c >> 3) == 0x1E ? 3 : -1;
        if (extra < 0) return "invalid UTF-8";
        for (int k = 1; k <= extra; ++k) {
            if (i + k >= data.size() || (static_cast<unsigned char>(data[i + k]) >> 6) != 0x2) {
                return "invalid UTF-8";
            }
        }
        i += extra + 1;
    }
    return std::nullopt;
}

}  // namespace

ScanResult scan_source(std::string_view path, std::string_view text) { return Scanner(path, text).run(); }

class DatabaseBuilder {
public:
    static void add(DefinitionDatabase& db, const std::string& path, std::string text) {
        db.add_file(path, std::move(text));
    }
    static void finish(DefinitionDatabase& db) { db.finish(); }
    static void skipped(DefinitionDatabase& db, std::string path) { db.skipped_.push_back(std::move(path)); }
    static void radius(DefinitionDatabase& db, int r) { db.snippet_radius_ = r; }
};

void DefinitionDatabase::add_file(const std::string& path, std::string text) {
    auto& stored = sources_[path];
    stored = std::move(text);
    ScanResult scan = scan_source(path, stored);
    for (auto& d : scan.definitions) {
        by_file_[path].push_back(d);
        by_name_[d.name].push_back(std::move(d));
    }
    for (auto& [name, macro] : scan.macros) macros_.emplace(name, std::move(macro));
    for (auto& [name, expr] : scan.enumerators) enumerators_.emplace(name, std::move(expr));
    for (const auto& tok : c::lex(stored)) {
        if (tok.kind == TokenKind::Ident) {
            occurrences_[std::string(tok.text)].push_back({path, tok.begin, tok.line});
        }
    }
}

void DefinitionDatabase::finish() {
    for (auto& [_, defs] : by_name_) std::sort(defs.begin(), defs.end(), definition_less);
    for (auto& [_, defs] : by_file_) std::sort(defs.begin(), defs.end(), definition_less);
    for (auto& [_, occ] : occurrences_) {
        std::sort(occ.begin(), occ.end(), [](const Occurrence& a, const Occurrence& b) {
            return a.file != b.file ? a.file < b.file : a.begin < b.begin;
        });
    }
    std::sort(skipped_.begin(), skipped_.end());
}

const std::vector<Definition>& DefinitionDatabase::lookup(std::string_view identifier) const {
    static const std::vector<Definition> kEmpty;
    auto it = by_name_.find(std::string(identifier));
    return it == by_name_.end() ? kEmpty : it->second;
}

const std::vector<DefinitionDatabase::Occurrence>& DefinitionDatabase::occurrences(
    std::string_view identifier) const {
    static const std::vector<Occurrence> kEmpty;
    auto it = occurrences_.find(std::string(identifier));
    return it == occurrences_.end() ? kEmpty : it->second;
}

std::size_t DefinitionDatabase::size() const {
    std::size_t n = 0;
    for (const auto& [_, defs] : by_name_) n += defs.size();
    return n;
}

json to_json(const Definition& d) {
    return json{{"kind", to_string(d.kind)},
                {"name", d.name},
                {"file", d.file},
                {"lines", {d.lines.start, d.lines.end}},
                {"text", d.text}};
}

json to_json(const UsageReference& u) {
    return json{{"identifier", u.identifier},
                {"file", u.file},
                {"line", u.line},
                {"window", {u.window.start, u.window.end}},
                {"snippet", u.snippet}};
}

json to_json(const HandlerRegistration& h) {
    json usages = json::array();
    for (const auto& u : h.usages) usages.push_back(to_json(u));
    return json{{"struct_name", h.struct_name},
                {"struct_type", h.struct_type},
                {"kind", to_string(h.kind)},
                {"bound_ops", h.bound_ops},
                {"file", h.file},
                {"line", h.line},
                {"usages", usages}};
}

HandlerRegistration handler_from_json(const json& j) {
    HandlerRegistration h;
    h.struct_name = j.at("struct_name").get<std::string>();
    h.struct_type = j.value("struct_type", "");
    std::string kind = j.value("kind", "Other");
    for (auto k : {HandlerKind::FileOps, HandlerKind::ProtoOps, HandlerKind::MiscDevice, HandlerKind::Other}) {
        if (to_string(k) == kind) h.kind = k;
    }
    h.bound_ops = j.at("bound_ops").get<std::map<std::string, std::string>>();
    h.file = j.value("file", "");
    h.line = j.value("line", 0);
    for (const auto& u : j.value("usages", json::array())) {
        UsageReference r;
        r.identifier = u.at("identifier").get<std::string>();
        r.file = u.at("file").get<std::string>();
        r.line = u.at("line").get<int>();
        r.window = {u.at("window")[0].get<int>(), u.at("window")[1].get<int>()};
        r.snippet = u.at("snippet").get<std::string>();
        h.usages.push_back(std::move(r));
    }
    return h;
}

json handlers_to_json(const std::vector<HandlerRegistration>& handlers) {
    json arr = json::array();
    for (const auto& h : handlers) arr.push_back(to_json(h));
    return json{{"schema", 1}, {"handlers", arr}};
}

json DefinitionDatabase::to_json() const {
    json defs = json::array();
    for (const auto& [_, list] : by_file_) {
        for (const auto& d : list) defs.push_back(speckernel::to_json(d));
    }
    json macros = json::object();
    for (const auto& [name, m] : macros_) {
        json entry{{"body", m.body}};
        if (m.params) entry["params"] = *m.params;
        macros[name] = entry;
    }
    return json{{"schema", 1},
                {"snippet_radius", snippet_radius_},
                {"definitions", defs},
                {"macros", macros},
                {"enumerators", enumerators_},
                {"skipped", skipped_},
                {"sources", sources_}};
}

DefinitionDatabase DefinitionDatabase::from_json(const json& j) {
    if (j.value("schema", 0) != 1) throw Error("unsupported definition database schema");
    DefinitionDatabase db;
    db.snippet_radius_ = j.value("snippet_radius", 20);
    // re-scan sources so the occurrence index is rebuilt; then check it agrees
    for (const auto& [path, text] : j.at("sources").items()) db.add_file(path, text.get<std::string>());
    db.skipped_ = j.value("skipped", std::vector<std::string>{});
    db.finish();
    return db;
}

bool glob_match(std::string_view pattern, std::string_view path) {
    // '**/' matches zero or more directories, '*' matches within a segment, '?' one char
    if (pattern.empty()) return path.empty();
    if (pattern.substr(0, 3) == "**/") {
        if (glob_match(pattern.substr(3), path)) return true;
        for (std::size_t i = 0; i < path.size(); ++i) {
            if (path[i] == '/' && glob_match(pattern.substr(3), path.substr(i + 1))) return true;
        }
        return false;
    }
    if (pattern.substr(0, 2) == "**") {
        for (std::size_t i = 0; i <= path.size(); ++i) {
            if (glob_match(pattern.substr(2), path.substr(i))) return true;
        }
        return false;
    }
    if (pattern[0] == '*') {
        for (std::size_t i = 0; i <= path.size(); ++i) {
            if (glob_match(pattern.substr(1), path.substr(i))) return true;
            if (i < path.size() && path[i] == '/') break;
        }
        return false;
    }
    if (path.empty()) return false;
    if (pattern[0] == '?' ? path[0] != '/' : pattern[0] == path[0]) {
        return glob_match(pattern.substr(1), path.substr(1));
    }
    return false;
}

DefinitionDatabase index_sources(std::map<std::string, std::string> files, const IndexerConfig& cfg) {
    DefinitionDatabase db;
    DatabaseBuilder::radius(db, cfg.snippet_radius);
    for (auto& [path, text] : files) {
        if (auto bad = validate_text(text)) {
            if (!cfg.skip_unreadable) throw IoError(path, *bad);
            DatabaseBuilder::skipped(db, path);
            continue;
        }
        DatabaseBuilder::add(db, path, std::move(text));
    }
    DatabaseBuilder::finish(db);
    return db;
}

DefinitionDatabase index_corpus(const SourceCorpus& corpus, const IndexerConfig& cfg) {
    namespace fs = std::filesystem;
    std::error_code ec;
    if (!fs::is_directory(corpus.root_path, ec)) {
        throw IoError(corpus.root_path.string(), "not a directory");
    }
    std::map<std::string, std::string> files;
    std::vector<std::string> unreadable;
    for (auto it = fs::recursive_directory_iterator(corpus.root_path, ec);
         it != fs::recursive_directory_iterator(); it.increment(ec)) {
        if (ec) break;
        if (!it->is_regular_file()) continue;
        std::string rel = fs::relative(it->path(), corpus.root_path).generic_string();
        bool included = std::any_of(corpus.include_globs.begin(), corpus.include_globs.end(),
                                    [&](const auto& g) { return glob_match(g, rel); });
        bool excluded = std::any_of(corpus.exclude_globs.begin(), corpus.exclude_globs.end(),
                                    [&](const auto& g) { return glob_match(g, rel); });
        if (!included || excluded) continue;
        std::ifstream in(it->path(), std::ios::binary);
        if (!in) {
            if (!cfg.skip_unreadable) throw IoError(rel, "open failed");
            unreadable.push_back(rel);
            continue;
        }
        std::ostringstream buf;
        buf << in.rdbuf();
        files.emplace(rel, buf.str());
    }
    DefinitionDatabase db = index_sources(std::move(files), cfg);
    for (auto& rel : unreadable) DatabaseBuilder::skipped(db, rel);
    DatabaseBuilder::finish(db);
    return db;
}

std::vector<Definition> extract_code(const DefinitionDatabase& db, std::string_view identifier) {
    return db.lookup(identifier);
}

std::vector<UsageReference> find_usages(const DefinitionDatabase& db, std::string_view identifier) {
    std::vector<UsageReference> out;
    const auto& defs = db.lookup(identifier);
    for (const auto& occ : db.occurrences(identifier)) {
        bool inside_definition = std::any_of(defs.begin(), defs.end(), [&](const Definition& d) {
            return d.file == occ.file && occ.line >= d.lines.start && occ.line <= d.lines.end;
        });
        if (inside_definition) continue;
        const std::string& src = db.sources().at(occ.file);
        int total = c::line_of(src, src.size());
        if (!src.empty() && src.back() == '\n') --total;
        int lo = std::max(1, occ.line - db.snippet_radius());
        int hi = std::min(std::max(total, occ.line), occ.line + db.snippet_radius());
        std::istringstream lines(src);
        std::string line;
        std::string snippet;
        for (int n = 1; n <= hi && std::getline(lines, line); ++n) {
            if (n >= lo) snippet += line + "\n";
        }
        out.push_back({std::string(identifier), occ.file, occ.line, {lo, hi}, std::move(snippet)});
    }
    return out;
}

namespace {

HandlerKind classify(std::string_view struct_type) {
    if (struct_type == "file_operations") return HandlerKind::FileOps;
    if (struct_type == "proto_ops") return HandlerKind::ProtoOps;
    if (struct_type == "miscdevice") return HandlerKind::MiscDevice;
    return HandlerKind::Other;
}

bool looks_like_function(std::string_view ident) {
    // all-caps identifiers are constants or module macros such as THIS_MODULE
    return std::any_of(ident.begin(), ident.end(), [](char ch) { return std::islower(static_cast<unsigned char>(ch)); });
}

}  // namespace

std::vector<HandlerRegistration> find_operation_handlers(const DefinitionDatabase& db,
                                                         const std::vector<std::string>& trigger_fields,
                                                         const IndexerConfig& cfg) {
    std::vector<HandlerRegistration> out;
    for (const auto& [file, defs] : db.file_index()) {
        for (const auto& d : defs) {
            if (d.kind != DefKind::GlobalVar) continue;
            auto toks = c::lex(d.text);
            std::string struct_type;
            std::size_t eq = toks.size();
            for (std::size_t i = 0; i < toks.size(); ++i) {
                if (is_ident(toks[i], "struct") && i + 1 < toks.size() && struct_type.empty()) {
                    struct_type = std::string(toks[i + 1].text);
                }
                if (is_punct(toks[i], "=")) {
                    eq = i;
                    break;
                }
            }
            if (eq + 1 >= toks.size() || !is_punct(toks[eq + 1], "{")) continue;
            // arrays of handler structs are not single registrations
            if (eq > 0 && is_punct(toks[eq - 1], "]")) continue;
            std::size_t open = eq + 1;
            std::size_t close = c::match_bracket(toks, open);

            HandlerRegistration reg;
            std::size_t position = 0;
            bool designated = false;
            std::size_t i = open + 1;
            while (i < close) {
                // one initializer element, up to the next top-level ','
                std::size_t end = i;
                while (end < close && !is_punct(toks[end], ",")) {
                    if (is_punct(toks[end], "{") || is_punct(toks[end], "(") || is_punct(toks[end], "[")) {
                        end = c::match_bracket(toks, end);
                    }
                    ++end;
                }
                if (end > i) {
                    if (is_punct(toks[i], ".") && i + 3 <= end && toks[i + 1].kind == TokenKind::Ident &&
                        is_punct(toks[i + 2], "=")) {
                        designated = true;
                        if (i + 4 == end && toks[i + 3].kind == TokenKind::Ident &&
                            looks_like_function(toks[i + 3].text)) {
                            reg.bound_ops[std::string(toks[i + 1].text)] = std::string(toks[i + 3].text);
                        }
                    } else if (!designated) {
                        auto table = cfg.positional_fields.find(struct_type);
                        if (table != cfg.positional_fields.end() && position < table->second.size() &&
                            i + 1 == end && toks[i].kind == TokenKind::Ident && looks_like_function(toks[i].text)) {
                            reg.bound_ops[table->second[position]] = std::string(toks[i].text);
                        }
                    }
                    ++position;
                }
                i = end + 1;
            }
            bool triggered = std::any_of(trigger_fields.begin(), trigger_fields.end(),
                                         [&](const std::string& f) { return reg.bound_ops.count(f) > 0; });
            if (!triggered) continue;
            reg.struct_name = d.name;
            reg.struct_type = struct_type;
            reg.kind = classify(struct_type);
            reg.file = d.file;
            reg.line = d.lines.start;
            reg.usages = find_usages(db, d.name);
            out.push_back(std::move(reg));
        }
    }
    return out;
}

}  // namespace speckernel
