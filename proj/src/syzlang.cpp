#include <algorithm>
#include <set>
#include <sstream>

#include "speckernel/syzlang.hpp"

namespace speckernel::syz {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::string quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    return out + "\"";
}

std::string render_field(const Field& f) {
    std::string line = "\t" + f.name + "\t" + render_type(f.type);
    if (f.dir) line += " (" + std::string(to_string(*f.dir)) + ")";
    return line;
}

std::string render_syscall(const SyscallDesc& s) {
    std::string out = s.full_name() + "(";
    for (std::size_t i = 0; i < s.params.size(); ++i) {
        if (i) out += ", ";
        out += s.params[i].name + " " + render_type(s.params[i].type);
    }
    out += ")";
    if (s.ret) out += " " + *s.ret;
    return out;
}

std::string render_resource(const ResourceDecl& r) { return "resource " + r.name + "[" + r.underlying + "]"; }

std::string render_flag_set(const FlagSet& fs) {
    std::string out = fs.name + " =";
    for (std::size_t i = 0; i < fs.values.size(); ++i) out += (i ? ", " : " ") + render_operand(fs.values[i]);
    return out;
}

std::vector<std::string> render_typedef(const TypeDef& t) {
    std::vector<std::string> lines;
    lines.push_back(t.name + (t.is_union ? " [" : " {"));
    for (const auto& f : t.fields) lines.push_back(render_field(f));
    lines.push_back(t.is_union ? "]" : "}");
    return lines;
}

void add_comments(std::vector<std::string>& lines, const std::vector<std::string>& comments) {
    for (const auto& c : comments) lines.push_back(c.empty() ? "#" : "# " + c);
}

// Emits the canonical text line by line, recording where each declaration lands.
struct Emitter {
    std::vector<std::string> lines;
    std::vector<DeclLocation> locations;

    void separate() {
        if (!lines.empty() && !lines.back().empty()) lines.emplace_back();
    }
    void decl(const std::string& target, const std::vector<std::string>& comments,
              const std::vector<std::string>& body) {
        int first = static_cast<int>(lines.size()) + 1;
        add_comments(lines, comments);
        lines.insert(lines.end(), body.begin(), body.end());
        locations.push_back({target, first, static_cast<int>(lines.size())});
    }
};

Emitter emit(const SpecFile& spec) {
    Emitter e;
    for (const auto& inc : spec.includes) e.lines.push_back("include <" + inc + ">");
    if (!spec.resources.empty()) {
        e.separate();
        for (const auto& r : spec.resources) e.decl(r.name, r.comments, {render_resource(r)});
    }
    if (!spec.syscalls.empty()) {
        e.separate();
        for (const auto& s : spec.syscalls) e.decl(s.full_name(), s.comments, {render_syscall(s)});
    }
    for (const auto& t : spec.types) {
        e.separate();
        e.decl(t.name, t.comments, render_typedef(t));
    }
    if (!spec.flag_sets.empty()) {
        e.separate();
        for (const auto& fs : spec.flag_sets) e.decl(fs.name, fs.comments, {render_flag_set(fs)});
    }
    return e;
}

void collect_names(const TypeExpr& t, std::vector<std::string>& out) {
    std::visit(overloaded{
                   [&](const FlagsType& f) { out.push_back(f.set); },
                   [&](const PtrType& p) { collect_names(*p.elem, out); },
                   [&](const ArrayType& a) { collect_names(*a.elem, out); },
                   [&](const NamedType& n) { out.push_back(n.name); },
                   [](const auto&) {},
               },
               t.node);
}

void collect_constants(const TypeExpr& t, std::vector<std::string>& out) {
    std::visit(overloaded{
                   [&](const ConstType& c) {
                       if (auto* s = std::get_if<std::string>(&c.value)) out.push_back(*s);
                   },
                   [&](const PtrType& p) { collect_constants(*p.elem, out); },
                   [&](const ArrayType& a) {
                       collect_constants(*a.elem, out);
                       if (a.length) {
                           if (auto* s = std::get_if<std::string>(&*a.length)) out.push_back(*s);
                       }
                   },
                   [](const auto&) {},
               },
               t.node);
}

void dedup_keep_order(std::vector<std::string>& v) {
    std::set<std::string> seen;
    std::vector<std::string> out;
    for (auto& s : v) {
        if (seen.insert(s).second) out.push_back(std::move(s));
    }
    v = std::move(out);
}

// Resource names appearing in a type with their effective direction.
void resource_uses(const TypeExpr& t, Dir dir, const std::set<std::string>& resources, const SpecFile& spec,
                   std::set<std::string>& visiting, std::vector<std::pair<std::string, Dir>>& out) {
    std::visit(overloaded{
                   [&](const PtrType& p) { resource_uses(*p.elem, p.dir, resources, spec, visiting, out); },
                   [&](const ArrayType& a) { resource_uses(*a.elem, dir, resources, spec, visiting, out); },
                   [&](const NamedType& n) {
                       if (resources.count(n.name)) {
                           out.emplace_back(n.name, dir);
                           return;
                       }
                       const TypeDef* td = spec.find_type(n.name);
                       if (!td || !visiting.insert(n.name).second) return;
                       for (const auto& f : td->fields) {
                           resource_uses(f.type, f.dir.value_or(dir), resources, spec, visiting, out);
                       }
                       visiting.erase(n.name);
                   },
                   [](const auto&) {},
               },
               t.node);
}

}  // namespace

std::string render_operand(const Operand& op) {
    if (auto* i = std::get_if<std::int64_t>(&op)) return std::to_string(*i);
    return std::get<std::string>(op);
}

std::string render_type(const TypeExpr& type) {
    return std::visit(
        overloaded{
            [](const IntType& t) {
                std::string s = t.name;
                if (t.range) s += "[" + std::to_string(t.range->lo) + ":" + std::to_string(t.range->hi) + "]";
                return s;
            },
            [](const ConstType& t) {
                return "const[" + render_operand(t.value) + (t.base.empty() ? "" : ", " + t.base) + "]";
            },
            [](const FlagsType& t) { return "flags[" + t.set + (t.base.empty() ? "" : ", " + t.base) + "]"; },
            [](const PtrType& t) {
                return "ptr[" + std::string(to_string(t.dir)) + ", " + render_type(*t.elem) + "]";
            },
            [](const ArrayType& t) {
                std::string s = "array[" + render_type(*t.elem);
                if (t.length) s += ", " + render_operand(*t.length);
                return s + "]";
            },
            [](const StringType& t) { return t.literal ? "string[" + quote(*t.literal) + "]" : std::string("string"); },
            [](const LenType& t) {
                std::string path;
                for (std::size_t i = 0; i < t.path.size(); ++i) path += (i ? ":" : "") + t.path[i];
                return "len[" + path + (t.base.empty() ? "" : ", " + t.base) + "]";
            },
            [](const NamedType& t) { return t.name; },
        },
        type.node);
}

std::string render_spec(const SpecFile& spec) {
    Emitter e = emit(spec);
    std::string out;
    for (const auto& l : e.lines) out += l + "\n";
    return out;
}

std::vector<DeclLocation> layout(const SpecFile& spec) { return emit(spec).locations; }

std::optional<std::string> render_declaration(const SpecFile& spec, std::string_view target) {
    Emitter e = emit(spec);
    for (const auto& loc : e.locations) {
        if (loc.target != target) continue;
        std::string out;
        for (int l = loc.first_line; l <= loc.last_line; ++l) {
            if (l > loc.first_line) out += "\n";
            out += e.lines[l - 1];
        }
        return out;
    }
    return std::nullopt;
}

SyscallDesc* SpecFile::find_syscall(std::string_view full_name) {
    for (auto& s : syscalls) {
        if (s.full_name() == full_name) return &s;
    }
    return nullptr;
}
const SyscallDesc* SpecFile::find_syscall(std::string_view full_name) const {
    return const_cast<SpecFile*>(this)->find_syscall(full_name);
}
TypeDef* SpecFile::find_type(std::string_view name) {
    for (auto& t : types) {
        if (t.name == name) return &t;
    }
    return nullptr;
}
const TypeDef* SpecFile::find_type(std::string_view name) const { return const_cast<SpecFile*>(this)->find_type(name); }
const ResourceDecl* SpecFile::find_resource(std::string_view name) const {
    for (const auto& r : resources) {
        if (r.name == name) return &r;
    }
    return nullptr;
}
const FlagSet* SpecFile::find_flag_set(std::string_view name) const {
    for (const auto& f : flag_sets) {
        if (f.name == name) return &f;
    }
    return nullptr;
}

void link_resources(SpecFile& spec) {
    std::set<std::string> names;
    for (const auto& r : spec.resources) names.insert(r.name);
    std::map<std::string, std::vector<std::string>> produced;
    std::map<std::string, std::vector<std::string>> consumed;
    for (auto& s : spec.syscalls) {
        s.identifier_const.reset();
        std::size_t cmd_index = s.base_name == "ioctl" ? 1
                                : (s.base_name == "setsockopt" || s.base_name == "getsockopt") ? 2
                                                                                               : s.params.size();
        if (cmd_index < s.params.size()) {
            if (auto* c = std::get_if<ConstType>(&s.params[cmd_index].type.node)) {
                if (auto* n = std::get_if<std::string>(&c->value)) s.identifier_const = *n;
            }
        }
        if (s.ret && names.count(*s.ret)) produced[*s.ret].push_back(s.full_name());
        for (const auto& p : s.params) {
            std::vector<std::pair<std::string, Dir>> uses;
            std::set<std::string> visiting;
            resource_uses(p.type, Dir::In, names, spec, visiting, uses);
            for (const auto& [name, dir] : uses) {
                if (dir == Dir::Out || dir == Dir::InOut) produced[name].push_back(s.full_name());
                if (dir == Dir::In || dir == Dir::InOut) consumed[name].push_back(s.full_name());
            }
        }
    }
    for (auto& r : spec.resources) {
        r.produced_by = produced[r.name];
        r.consumed_by = consumed[r.name];
        dedup_keep_order(r.produced_by);
        dedup_keep_order(r.consumed_by);
    }
}

std::vector<std::string> referenced_names(const TypeExpr& type) {
    std::vector<std::string> out;
    collect_names(type, out);
    dedup_keep_order(out);
    return out;
}

std::vector<std::string> referenced_names(const SpecFile& spec, std::string_view target) {
    std::vector<std::string> out;
    if (const auto* s = spec.find_syscall(target)) {
        for (const auto& p : s->params) collect_names(p.type, out);
        if (s->ret) out.push_back(*s->ret);
    } else if (const auto* t = spec.find_type(target)) {
        for (const auto& f : t->fields) collect_names(f.type, out);
    } else if (const auto* r = spec.find_resource(target)) {
        out.push_back(r->underlying);
    }
    dedup_keep_order(out);
    return out;
}

std::vector<std::string> referenced_constants(const SpecFile& spec, std::string_view target) {
    std::vector<std::string> out;
    if (const auto* s = spec.find_syscall(target)) {
        for (const auto& p : s->params) collect_constants(p.type, out);
    } else if (const auto* t = spec.find_type(target)) {
        for (const auto& f : t->fields) collect_constants(f.type, out);
    } else if (const auto* fs = spec.find_flag_set(target)) {
        for (const auto& v : fs->values) {
            if (auto* n = std::get_if<std::string>(&v)) out.push_back(*n);
        }
    }
    dedup_keep_order(out);
    return out;
}

std::vector<std::string> declaration_names(const SpecFile& spec) {
    std::vector<std::string> out;
    for (const auto& loc : layout(spec)) out.push_back(loc.target);
    return out;
}

bool remove_declaration(SpecFile& spec, std::string_view target) {
    auto erase = [&](auto& vec, auto name_of) {
        auto it = std::find_if(vec.begin(), vec.end(), [&](const auto& x) { return name_of(x) == target; });
        if (it == vec.end()) return false;
        vec.erase(it);
        return true;
    };
    bool removed = erase(spec.syscalls, [](const SyscallDesc& s) { return s.full_name(); }) ||
                   erase(spec.types, [](const TypeDef& t) { return t.name; }) ||
                   erase(spec.resources, [](const ResourceDecl& r) { return r.name; }) ||
                   erase(spec.flag_sets, [](const FlagSet& f) { return f.name; });
    if (removed) link_resources(spec);
    return removed;
}

}  // namespace speckernel::syz
