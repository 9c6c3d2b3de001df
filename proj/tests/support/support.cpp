#include "support.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>
#include <stdexcept>

namespace sktest {

using namespace speckernel;
using nlohmann::json;

fs::path fixtures_dir() { return SPECKERNEL_FIXTURES; }
fs::path fixture(const std::string& rel) { return fixtures_dir() / rel; }
fs::path assets_dir() { return SPECKERNEL_TEST_ASSETS; }
fs::path cli_path() { return SPECKERNEL_CLI; }

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << text;
}

TempDir::TempDir(const std::string& tag) {
    static std::atomic<unsigned> counter{0};
    path_ = fs::temp_directory_path() /
            (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

CliResult run_cli(const std::string& args) {
    CliResult r;
    std::string cmd = "'" + cli_path().string() + "' " + args + " 2>&1";
    FILE* p = ::popen(cmd.c_str(), "r");
    if (!p) return r;
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.output.append(buf, n);
    int status = ::pclose(p);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::map<std::string, std::string> snapshot_tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    if (!fs::exists(root)) return out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        out[fs::relative(e.path(), root).generic_string()] = read_text(e.path());
    }
    return out;
}

std::uint32_t oracle_ioc(std::uint32_t dir, std::uint32_t type, std::uint32_t nr, std::uint32_t size) {
    // bits: nr 0..7, type 8..15, size 16..29, dir 30..31
    std::uint32_t v = 0;
    v += nr;
    v += type * 256u;
    v += size * 65536u;
    v += dir * 1073741824u;
    return v;
}

// ---------------------------------------------------------------------------
// naive scanner: comment stripping, regexes, a brace counter

namespace {

// Comments and literal contents become spaces; newlines survive.
std::string blank_noise(const std::string& s) {
    std::string out = s;
    enum { Code, Line, Block, Str, Chr } st = Code;
    for (std::size_t i = 0; i < out.size(); ++i) {
        char c = out[i];
        char n = i + 1 < out.size() ? out[i + 1] : '\0';
        switch (st) {
            case Code:
                if (c == '/' && n == '/') {
                    st = Line;
                    out[i] = ' ';
                } else if (c == '/' && n == '*') {
                    st = Block;
                    out[i] = out[i + 1] = ' ';
                    ++i;
                } else if (c == '"') {
                    st = Str;
                } else if (c == '\'') {
                    st = Chr;
                }
                break;
            case Line:
                if (c == '\n') {
                    st = Code;
                } else {
                    out[i] = ' ';
                }
                break;
            case Block:
                if (c == '*' && n == '/') {
                    out[i] = out[i + 1] = ' ';
                    ++i;
                    st = Code;
                } else if (c != '\n') {
                    out[i] = ' ';
                }
                break;
            case Str:
            case Chr:
                if (c == '\\') {
                    out[i] = ' ';
                    if (i + 1 < out.size() && out[i + 1] != '\n') out[i + 1] = ' ';
                    ++i;
                } else if ((st == Str && c == '"') || (st == Chr && c == '\'')) {
                    st = Code;
                } else if (c != '\n') {
                    out[i] = ' ';
                }
                break;
        }
    }
    return out;
}

std::vector<std::string> split_lines(const std::string& s) {
    std::vector<std::string> lines;
    std::string cur;
    for (char c : s) {
        if (c == '\n') {
            lines.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    lines.push_back(cur);
    return lines;
}

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string collapse_ws(const std::string& s) {
    std::string out;
    bool space = false;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            space = true;
            continue;
        }
        if (space && !out.empty()) out += ' ';
        space = false;
        out += c;
    }
    return out;
}

// drop __attribute__((...)) groups
std::string drop_attributes(std::string s) {
    for (;;) {
        auto at = s.find("__attribute__");
        if (at == std::string::npos) return s;
        auto open = s.find('(', at);
        if (open == std::string::npos) return s;
        int depth = 0;
        std::size_t k = open;
        for (; k < s.size(); ++k) {
            if (s[k] == '(') ++depth;
            if (s[k] == ')' && --depth == 0) break;
        }
        s.erase(at, k + 1 - at);
    }
}

}  // namespace

std::set<NameKind> naive_scan_file(const std::string& rel_path, const std::string& raw) {
    std::set<NameKind> out;
    std::string text = blank_noise(raw);
    auto lines = split_lines(text);

    // macros, then directive lines are blanked so their braces do not count
    static const std::regex define_re(R"(^\s*#\s*define\s+([A-Za-z_][A-Za-z0-9_]*))");
    for (std::size_t i = 0; i < lines.size(); ++i) {
        std::string l = lines[i];
        auto first = l.find_first_not_of(" \t");
        if (first == std::string::npos || l[first] != '#') continue;
        std::smatch m;
        if (std::regex_search(l, m, define_re)) out.emplace(rel_path, m[1].str(), "Macro");
        for (std::size_t k = i;; ++k) {
            bool cont = !lines[k].empty() && trim(lines[k]).size() && trim(lines[k]).back() == '\\';
            lines[k].assign(lines[k].size(), ' ');
            if (!cont || k + 1 >= lines.size()) {
                i = k;
                break;
            }
        }
    }
    std::string body;
    for (const auto& l : lines) body += l + "\n";

    static const std::regex tag_re(
        R"(^(?:(?:typedef|static|const|extern|volatile|inline)\s+)*(struct|union|enum)(?:\s+([A-Za-z_]\w*))?$)");
    static const std::regex ident_re(R"([A-Za-z_]\w*)");
    static const std::set<std::string> keywords = {"static", "const", "struct", "union", "enum", "typedef",
                                                   "extern", "volatile", "inline", "unsigned", "signed"};

    auto matching = [&](std::size_t open, char o, char c) {
        int depth = 0;
        for (std::size_t k = open; k < body.size(); ++k) {
            if (body[k] == o) ++depth;
            if (body[k] == c && --depth == 0) return k;
        }
        return body.size();
    };

    std::string chunk;
    std::size_t i = 0;
    while (i < body.size()) {
        char c = body[i];
        if (c == '(' || c == '[') {
            std::size_t close = matching(i, c, c == '(' ? ')' : ']');
            chunk += body.substr(i, close + 1 - i);
            i = close + 1;
            continue;
        }
        if (c == ';') {
            chunk.clear();
            ++i;
            continue;
        }
        if (c != '{') {
            chunk += c;
            ++i;
            continue;
        }
        std::size_t close = matching(i, '{', '}');
        std::string header = collapse_ws(drop_attributes(chunk));
        chunk.clear();
        std::smatch m;
        auto eq = header.find('=');
        if (eq != std::string::npos) {
            std::string left = header.substr(0, eq);
            // strip trailing [..] groups
            while (!left.empty() && (left.back() == ' ' || left.back() == ']')) {
                if (left.back() == ']') left.erase(left.rfind('['));
                else left.pop_back();
            }
            std::string last;
            for (auto it = std::sregex_iterator(left.begin(), left.end(), ident_re); it != std::sregex_iterator(); ++it) {
                last = it->str();
            }
            if (!last.empty()) out.emplace(rel_path, last, "GlobalVar");
            std::size_t semi = body.find(';', close);
            i = semi == std::string::npos ? body.size() : semi + 1;
            continue;
        }
        if (std::regex_match(header, m, tag_re)) {
            std::string kind = m[1].str() == "struct" ? "Struct" : m[1].str() == "union" ? "Union" : "Enum";
            std::string name = m[2].str();
            std::size_t semi = body.find(';', close);
            if (semi == std::string::npos) semi = body.size();
            if (name.empty() && header.rfind("typedef", 0) == 0) {
                std::string trailer = drop_attributes(body.substr(close + 1, semi - close - 1));
                std::smatch t;
                if (std::regex_search(trailer, t, ident_re)) name = t.str();
            }
            if (!name.empty()) out.emplace(rel_path, name, kind);
            i = semi + 1;
            continue;
        }
        auto paren = header.find('(');
        if (paren != std::string::npos && !header.empty() && header.back() == ')') {
            std::string before = trim(header.substr(0, paren));
            std::smatch t;
            std::string name;
            for (auto it = std::sregex_iterator(before.begin(), before.end(), ident_re); it != std::sregex_iterator();
                 ++it) {
                name = it->str();
            }
            bool adjacent = !before.empty() && (std::isalnum(static_cast<unsigned char>(before.back())) ||
                                                before.back() == '_');
            if (!name.empty() && adjacent && !keywords.count(name)) out.emplace(rel_path, name, "Function");
        }
        i = close + 1;
    }
    return out;
}

std::set<NameKind> naive_scan_tree(const fs::path& root) {
    std::set<NameKind> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        auto ext = e.path().extension().string();
        if (ext != ".c" && ext != ".h") continue;
        auto one = naive_scan_file(fs::relative(e.path(), root).generic_string(), read_text(e.path()));
        out.insert(one.begin(), one.end());
    }
    return out;
}

// ---------------------------------------------------------------------------
// spec generator

namespace {

using namespace speckernel::syz;

struct Gen {
    std::mt19937& rng;
    int counter = 0;

    int pick(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
    bool coin(int percent = 50) { return pick(1, 100) <= percent; }

    std::string fresh(const std::string& prefix) { return prefix + std::to_string(counter++); }

    std::string ident() {
        static const char* stems[] = {"alpha", "beta", "gamma", "dev", "cmd", "arg", "buf", "ctl", "q", "zz"};
        return std::string(stems[pick(0, 9)]) + "_" + std::to_string(pick(0, 99));
    }
    std::string const_name() {
        static const char* stems[] = {"FOO", "BAR_BAZ", "DM_VERSION", "KVM_RUN", "X"};
        return std::string(stems[pick(0, 4)]) + "_" + std::to_string(pick(0, 9));
    }
    std::string int_name() {
        static const char* names[] = {"int8", "int16", "int32", "int64", "intptr"};
        return names[pick(0, 4)];
    }
    Operand operand() {
        if (coin()) return const_name();
        return static_cast<std::int64_t>(pick(-1000, 100000));
    }
    std::string comment() {
        static const char* words[] = {"handled", "in", "ctl_ioctl", "TODO", "x86", "value:", "[0:3]", "(out)"};
        std::string c;
        int n = pick(1, 5);
        for (int i = 0; i < n; ++i) c += (i ? " " : "") + std::string(words[pick(0, 7)]);
        return c;
    }
    std::vector<std::string> comments() {
        std::vector<std::string> out;
        if (coin(30)) {
            int n = pick(1, 2);
            for (int i = 0; i < n; ++i) out.push_back(comment());
        }
        return out;
    }

    TypeExpr type(int depth, const std::vector<std::string>& named, const std::vector<std::string>& flag_sets,
                  const std::vector<std::string>& siblings) {
        int choice = pick(0, depth > 2 ? 3 : 8);
        switch (choice) {
            case 0: {
                IntType t{int_name(), {}};
                if (coin(40)) {
                    std::int64_t lo = pick(-50, 50);
                    t.range = Range{lo, lo + pick(0, 100)};
                }
                return {t};
            }
            case 1: return {ConstType{operand(), coin() ? "" : int_name()}};
            case 2: {
                if (flag_sets.empty()) return {IntType{int_name(), {}}};
                return {FlagsType{flag_sets[pick(0, static_cast<int>(flag_sets.size()) - 1)], coin() ? "" : int_name()}};
            }
            case 3: {
                if (siblings.empty()) return {StringType{}};
                std::vector<std::string> path{siblings[pick(0, static_cast<int>(siblings.size()) - 1)]};
                if (coin(20)) path.push_back(ident());
                return {LenType{path, coin() ? "" : int_name()}};
            }
            case 4:
            case 5: {
                Dir d = static_cast<Dir>(pick(0, 2));
                return {PtrType{d, type(depth + 1, named, flag_sets, {})}};
            }
            case 6: {
                ArrayType a{type(depth + 1, named, flag_sets, {}), std::nullopt};
                if (coin()) {
                    if (coin()) a.length = const_name();
                    else a.length = static_cast<std::int64_t>(pick(0, 64));
                }
                return {a};
            }
            case 7: {
                StringType s;
                if (coin()) {
                    static const char* lits[] = {"/dev/msm", "/dev/mapper/control", "kvm", "", "/dev/loop#", "a b"};
                    s.literal = lits[pick(0, 5)];
                }
                return {s};
            }
            default: {
                if (named.empty()) return {IntType{int_name(), {}}};
                return {NamedType{named[pick(0, static_cast<int>(named.size()) - 1)]}};
            }
        }
    }

    std::vector<Field> fields(int n, bool allow_dir, const std::vector<std::string>& named,
                              const std::vector<std::string>& flag_sets) {
        std::vector<Field> out;
        std::vector<std::string> names;
        for (int i = 0; i < n; ++i) names.push_back(fresh("f"));
        for (int i = 0; i < n; ++i) {
            std::vector<std::string> siblings;
            for (int k = 0; k < n; ++k) {
                if (k != i) siblings.push_back(names[k]);
            }
            Field f{names[i], type(0, named, flag_sets, siblings), std::nullopt};
            if (allow_dir && coin(20)) f.dir = static_cast<Dir>(pick(0, 2));
            out.push_back(std::move(f));
        }
        return out;
    }
};

}  // namespace

SpecFile random_spec(std::mt19937& rng) {
    Gen g{rng};
    SpecFile s;
    int n_inc = g.pick(0, 3);
    for (int i = 0; i < n_inc; ++i) s.includes.push_back("uapi/linux/" + g.ident() + ".h");

    std::vector<std::string> resources, types, flag_sets;
    int n_res = g.pick(0, 3);
    for (int i = 0; i < n_res; ++i) {
        ResourceDecl r;
        r.name = g.fresh("res_");
        r.underlying = g.coin() ? "fd" : (resources.empty() || g.coin() ? g.int_name() : resources.back());
        r.comments = g.comments();
        resources.push_back(r.name);
        s.resources.push_back(r);
    }
    int n_types = g.pick(0, 4);
    for (int i = 0; i < n_types; ++i) types.push_back(g.fresh("t_"));
    int n_flags = g.pick(0, 2);
    for (int i = 0; i < n_flags; ++i) flag_sets.push_back(g.fresh("fl_"));

    std::vector<std::string> named = types;
    named.insert(named.end(), resources.begin(), resources.end());

    int n_sys = g.pick(0, 6);
    for (int i = 0; i < n_sys; ++i) {
        SyscallDesc sc;
        sc.base_name = g.coin() ? "ioctl" : g.fresh("sys_");
        sc.variant = g.coin(70) ? g.fresh("v") : "";
        if (sc.base_name == "ioctl" && sc.variant.empty()) sc.variant = g.fresh("v");
        sc.params = g.fields(g.pick(0, 4), false, named, flag_sets);
        if (!resources.empty() && g.coin(40)) sc.ret = resources[g.pick(0, static_cast<int>(resources.size()) - 1)];
        sc.comments = g.comments();
        s.syscalls.push_back(std::move(sc));
    }
    for (const auto& name : types) {
        TypeDef t;
        t.name = name;
        t.is_union = g.coin(25);
        t.fields = g.fields(g.pick(1, 5), true, named, flag_sets);
        t.comments = g.comments();
        s.types.push_back(std::move(t));
    }
    for (const auto& name : flag_sets) {
        FlagSet f;
        f.name = name;
        int n = g.pick(1, 5);
        for (int k = 0; k < n; ++k) f.values.push_back(g.operand());
        f.comments = g.comments();
        s.flag_sets.push_back(std::move(f));
    }
    link_resources(s);
    return s;
}

json dependency_graph(const fs::path& out_dir, const std::string& spec_name) {
    json g;
    SpecFile spec = parse_spec(read_text(out_dir / "specs" / (spec_name + ".txt")));
    g["resources"] = json::array();
    for (const auto& r : spec.resources) {
        bool from_command = std::any_of(r.produced_by.begin(), r.produced_by.end(), [&](const std::string& p) {
            const auto* sc = spec.find_syscall(p);
            return sc && sc->identifier_const;
        });
        if (!from_command) continue;
        auto consumed = r.consumed_by;
        std::sort(consumed.begin(), consumed.end());
        g["resources"].push_back(
            {{"name", r.name}, {"underlying", r.underlying}, {"produced_by", r.produced_by}, {"consumed_by", consumed}});
    }
    g["edges"] = json::array();
    for (const auto& e : fs::directory_iterator(out_dir / "state")) {
        json st = json::parse(read_text(e.path()));
        if (st.value("spec_name", "") != spec_name) continue;
        for (const auto& d : st["dependencies"]) {
            std::string producer_handler;
            for (const auto& id : st["identifiers"]) {
                if (id["const_name"] == d["producer_const"]) producer_handler = id["handler"];
            }
            for (const auto& c : d["consumers"]) {
                g["edges"].push_back({{"producer_handler", producer_handler},
                                      {"producer", d["producer_syscall"]},
                                      {"resource", d["resource"]},
                                      {"consumer_handler", c}});
            }
        }
    }
    return g;
}

json ast_counts(const SpecFile& spec) {
    int fields = 0, params = 0, unions = 0, comments = 0;
    for (const auto& r : spec.resources) comments += static_cast<int>(r.comments.size());
    for (const auto& s : spec.syscalls) {
        params += static_cast<int>(s.params.size());
        comments += static_cast<int>(s.comments.size());
    }
    for (const auto& t : spec.types) {
        fields += static_cast<int>(t.fields.size());
        unions += t.is_union ? 1 : 0;
        comments += static_cast<int>(t.comments.size());
    }
    for (const auto& f : spec.flag_sets) comments += static_cast<int>(f.comments.size());
    return {{"includes", spec.includes.size()}, {"resources", spec.resources.size()},
            {"syscalls", spec.syscalls.size()}, {"types", spec.types.size()},
            {"unions", unions},                 {"flag_sets", spec.flag_sets.size()},
            {"fields", fields},                 {"params", params},
            {"comments", comments}};
}

}  // namespace sktest
