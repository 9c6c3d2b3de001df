#include "speckernel/validator.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

#include "speckernel/const_eval.hpp"
#include "speckernel/errors.hpp"

namespace speckernel {

using namespace syz;

std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::UndefinedType: return "UndefinedType";
    case ErrorCode::UnknownConstant: return "UnknownConstant";
    case ErrorCode::NonConstantArrayLength: return "NonConstantArrayLength";
    case ErrorCode::UnmatchedDependency: return "UnmatchedDependency";
    case ErrorCode::DuplicateSyscall: return "DuplicateSyscall";
    case ErrorCode::IllegalRange: return "IllegalRange";
    case ErrorCode::CyclicType: return "CyclicType";
    case ErrorCode::SyntaxError: return "SyntaxError";
    }
    return "SyntaxError";
}

std::optional<ErrorCode> error_code_from_string(std::string_view s) {
    for (auto c : {ErrorCode::UndefinedType, ErrorCode::UnknownConstant, ErrorCode::NonConstantArrayLength,
                   ErrorCode::UnmatchedDependency, ErrorCode::DuplicateSyscall, ErrorCode::IllegalRange,
                   ErrorCode::CyclicType, ErrorCode::SyntaxError}) {
        if (to_string(c) == s) return c;
    }
    return std::nullopt;
}

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

int int_bits(std::string_view name) {
    if (name == "int8") return 8;
    if (name == "int16") return 16;
    if (name == "int32") return 32;
    return 64;
}

// Lines of each declaration body in the canonical rendering.
struct Lines {
    std::map<std::string, int> body_line;

    explicit Lines(const SpecFile& spec) {
        auto comments_of = [&](const std::string& target) -> std::size_t {
            if (auto* s = spec.find_syscall(target)) return s->comments.size();
            if (auto* t = spec.find_type(target)) return t->comments.size();
            if (auto* r = spec.find_resource(target)) return r->comments.size();
            if (auto* f = spec.find_flag_set(target)) return f->comments.size();
            return 0;
        };
        for (const auto& loc : layout(spec)) {
            body_line.emplace(loc.target, loc.first_line + static_cast<int>(comments_of(loc.target)));
        }
    }
    int of(const std::string& target, int offset = 0) const {
        auto it = body_line.find(target);
        return it == body_line.end() ? 0 : it->second + offset;
    }
};

class Checker {
public:
    Checker(const SpecFile& spec, const ValidatorConfig& cfg, const std::map<std::string, std::int64_t>& constants)
        : spec_(spec), cfg_(cfg), constants_(constants), lines_(spec) {}

    std::vector<ValidationError> run(std::vector<ValidationError> constant_errors) {
        check_duplicates();
        for (const auto& r : spec_.resources) {
            if (!is_int_type_name(r.underlying) && !spec_.find_resource(r.underlying) &&
                !cfg_.builtin_resources.count(r.underlying)) {
                add(ErrorCode::UndefinedType, r.name, 0, "resource base " + r.underlying + " is not defined");
            }
        }
        for (const auto& s : spec_.syscalls) {
            std::vector<std::string> siblings;
            for (const auto& p : s.params) siblings.push_back(p.name);
            for (const auto& p : s.params) check_type(p.type, s.full_name(), 0, siblings);
            if (s.ret && !spec_.find_resource(*s.ret) && !cfg_.builtin_resources.count(*s.ret)) {
                add(ErrorCode::UndefinedType, s.full_name(), 0, "return resource " + *s.ret + " is not defined");
            }
        }
        for (const auto& t : spec_.types) {
            std::vector<std::string> siblings;
            for (const auto& f : t.fields) siblings.push_back(f.name);
            for (std::size_t i = 0; i < t.fields.size(); ++i) {
                check_type(t.fields[i].type, t.name, static_cast<int>(i) + 1, siblings);
            }
        }
        check_cycles();
        check_dependencies();
        for (auto& e : constant_errors) errors_.push_back(std::move(e));
        std::stable_sort(errors_.begin(), errors_.end(), [](const auto& a, const auto& b) { return a.line < b.line; });
        return std::move(errors_);
    }

private:
    void add(ErrorCode code, const std::string& target, int offset, std::string message) {
        errors_.push_back({code, std::move(message), target, "<spec>", lines_.of(target, offset)});
    }

    void check_duplicates() {
        std::set<std::string> seen;
        for (const auto& s : spec_.syscalls) {
            if (!seen.insert(s.full_name()).second) {
                add(ErrorCode::DuplicateSyscall, s.full_name(), 0, "syscall " + s.full_name() + " is redeclared");
            }
        }
        std::set<std::string> types;
        auto dup = [&](const std::string& name) {
            if (!types.insert(name).second) {
                add(ErrorCode::DuplicateSyscall, name, 0, "declaration " + name + " is redeclared");
            }
        };
        for (const auto& r : spec_.resources) dup(r.name);
        for (const auto& t : spec_.types) dup(t.name);
        for (const auto& f : spec_.flag_sets) dup(f.name);
    }

    void check_type(const TypeExpr& type, const std::string& target, int offset,
                    const std::vector<std::string>& siblings) {
        std::visit(
            overloaded{
                [&](const IntType& t) {
                    if (!t.range) return;
                    int bits = int_bits(t.name);
                    __int128 min = -(static_cast<__int128>(1) << (bits - 1));
                    __int128 max = (static_cast<__int128>(1) << bits) - 1;
                    if (t.range->lo > t.range->hi) {
                        add(ErrorCode::IllegalRange, target, offset,
                            "range [" + std::to_string(t.range->lo) + ":" + std::to_string(t.range->hi) +
                                "] has lower bound above upper bound");
                    } else if (t.range->lo < min || t.range->hi > max) {
                        add(ErrorCode::IllegalRange, target, offset,
                            "range [" + std::to_string(t.range->lo) + ":" + std::to_string(t.range->hi) +
                                "] does not fit in " + t.name);
                    }
                },
                [&](const FlagsType& t) {
                    if (!spec_.find_flag_set(t.set) && !cfg_.builtin_flag_sets.count(t.set)) {
                        add(ErrorCode::UndefinedType, target, offset, "flag set " + t.set + " is not defined");
                    }
                },
                [&](const PtrType& t) { check_type(*t.elem, target, offset, siblings); },
                [&](const ArrayType& t) {
                    check_type(*t.elem, target, offset, siblings);
                    if (!t.length) return;
                    if (auto* n = std::get_if<std::string>(&*t.length)) {
                        if (std::find(siblings.begin(), siblings.end(), *n) != siblings.end()) {
                            add(ErrorCode::NonConstantArrayLength, target, offset,
                                *n + " is unsupported on all arches (array length refers to field " + *n +
                                    "; use array[T] with a len[] field)");
                        }
                    } else if (std::get<std::int64_t>(*t.length) < 0) {
                        add(ErrorCode::IllegalRange, target, offset, "negative array length");
                    }
                },
                [&](const LenType& t) {
                    if (t.path.front() != "parent" &&
                        std::find(siblings.begin(), siblings.end(), t.path.front()) == siblings.end()) {
                        add(ErrorCode::UndefinedType, target, offset,
                            "len target " + t.path.front() + " is not a sibling field");
                    }
                },
                [&](const NamedType& t) {
                    if (!spec_.find_type(t.name) && !spec_.find_resource(t.name) &&
                        !cfg_.builtin_resources.count(t.name)) {
                        add(ErrorCode::UndefinedType, target, offset, "type " + t.name + " is not defined");
                    }
                },
                [](const auto&) {},
            },
            type.node);
    }

    // Named types reachable without pointer indirection.
    static void inline_refs(const TypeExpr& t, std::vector<std::string>& out) {
        std::visit(overloaded{
                       [&](const ArrayType& a) { inline_refs(*a.elem, out); },
                       [&](const NamedType& n) { out.push_back(n.name); },
                       [](const auto&) {},
                   },
                   t.node);
    }

    void check_cycles() {
        std::map<std::string, std::vector<std::string>> edges;
        for (const auto& t : spec_.types) {
            for (const auto& f : t.fields) inline_refs(f.type, edges[t.name]);
        }
        // a type is cyclic when it can reach itself
        for (const auto& t : spec_.types) {
            std::set<std::string> seen;
            std::vector<std::string> stack(edges[t.name].begin(), edges[t.name].end());
            bool cyclic = false;
            while (!stack.empty() && !cyclic) {
                std::string n = stack.back();
                stack.pop_back();
                if (n == t.name) cyclic = true;
                if (!seen.insert(n).second) continue;
                auto it = edges.find(n);
                if (it != edges.end()) stack.insert(stack.end(), it->second.begin(), it->second.end());
            }
            if (cyclic) {
                add(ErrorCode::CyclicType, t.name, 0, "type " + t.name + " contains itself without a pointer");
            }
        }
    }

    void check_dependencies() {
        for (const auto& r : spec_.resources) {
            if (r.consumed_by.empty() || !r.produced_by.empty() || cfg_.builtin_resources.count(r.name)) continue;
            for (const auto& consumer : r.consumed_by) {
                add(ErrorCode::UnmatchedDependency, consumer, 0,
                    "resource " + r.name + " is consumed but no syscall produces it");
            }
        }
    }

    const SpecFile& spec_;
    const ValidatorConfig& cfg_;
    const std::map<std::string, std::int64_t>& constants_;
    Lines lines_;
    std::vector<ValidationError> errors_;
};

void array_length_names(const TypeExpr& e, std::set<std::string>& out) {
    if (auto* a = std::get_if<ArrayType>(&e.node)) {
        if (a->length) {
            if (auto* n = std::get_if<std::string>(&*a->length)) out.insert(*n);
        }
        array_length_names(*a->elem, out);
    } else if (auto* p = std::get_if<PtrType>(&e.node)) {
        array_length_names(*p->elem, out);
    }
}

// Array lengths naming a sibling field or parameter; reported as NonConstantArrayLength instead.
std::set<std::string> sibling_lengths(const std::vector<Field>& fields) {
    std::set<std::string> lengths;
    for (const auto& f : fields) array_length_names(f.type, lengths);
    std::set<std::string> out;
    for (const auto& f : fields) {
        if (lengths.count(f.name)) out.insert(f.name);
    }
    return out;
}

}  // namespace

std::pair<SpecFile, std::vector<ValidationError>> resolve_constants(const SpecFile& spec,
                                                                    const DefinitionDatabase& db,
                                                                    const ValidatorConfig& cfg) {
    SpecFile out = spec;
    std::vector<ValidationError> errors;
    ConstantEvaluator eval(db, cfg.builtin_constants);
    Lines lines(spec);
    for (const auto& target : declaration_names(spec)) {
        std::set<std::string> skip;
        if (const auto* t = spec.find_type(target)) skip = sibling_lengths(t->fields);
        if (const auto* s = spec.find_syscall(target)) skip = sibling_lengths(s->params);
        for (const auto& name : referenced_constants(spec, target)) {
            if (skip.count(name)) continue;
            if (auto v = eval.value(name)) {
                out.constants[name] = *v;
            } else {
                errors.push_back({ErrorCode::UnknownConstant, name + " is unsupported on all arches", target,
                                  "<spec>", lines.of(target)});
            }
        }
    }
    return {std::move(out), std::move(errors)};
}

std::vector<ValidationError> validate_spec(const SpecFile& spec, const DefinitionDatabase& db,
                                           const ValidatorConfig& cfg) {
    SpecFile linked = spec;
    link_resources(linked);
    auto [resolved, constant_errors] = resolve_constants(linked, db, cfg);
    return Checker(linked, cfg, resolved.constants).run(std::move(constant_errors));
}

std::vector<ValidationError> check_spec_text(std::string_view text, const DefinitionDatabase& db,
                                             const ValidatorConfig& cfg, std::string_view file) {
    std::vector<ValidationError> errors;
    try {
        errors = validate_spec(parse_spec(text), db, cfg);
    } catch (const speckernel::SyntaxError& e) {
        errors.push_back({ErrorCode::SyntaxError, e.what(), "", std::string(file), e.line()});
        return errors;
    }
    for (auto& e : errors) e.file = std::string(file);
    return errors;
}

std::string render_constants(const std::map<std::string, std::int64_t>& constants) {
    std::string out;
    for (const auto& [name, value] : constants) out += name + " = " + std::to_string(value) + "\n";
    return out;
}

nlohmann::json to_json(const ValidationError& e) {
    return nlohmann::json{{"code", to_string(e.code)},
                          {"message", e.message},
                          {"target", e.target},
                          {"location", {{"file", e.file}, {"line", e.line}}}};
}

nlohmann::json errors_to_json(const std::vector<ValidationError>& errors) {
    auto arr = nlohmann::json::array();
    for (const auto& e : errors) arr.push_back(to_json(e));
    return arr;
}

}  // namespace speckernel
