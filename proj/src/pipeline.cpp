#include "speckernel/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <set>
#include <sstream>

#include "speckernel/c_lexer.hpp"

namespace speckernel {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::string_view kIdentifierStage = "identifier_deduction";
constexpr std::string_view kTypeStage = "type_recovery";
constexpr std::string_view kDependencyStage = "dependency_analysis";
constexpr std::string_view kInitStage = "handler_init";

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return out;
}

std::string json_text(const json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) return {};
    const json& v = j[key];
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
    return {};
}

AnalysisContext make_actx(PipelineContext& ctx) {
    AnalysisContext a{ctx.db, ctx.prompts, ctx.service};
    a.max_iter = ctx.cfg.max_iter;
    a.unknown_cap = ctx.cfg.unknown_cap;
    a.token_budget = ctx.cfg.token_budget;
    return a;
}

void absorb(StageLog& log, const AnalysisContext& a) {
    log.queries += a.queries;
    log.prompt_chars += a.prompt_chars;
    log.response_chars += a.response_chars;
    log.notes.insert(log.notes.end(), a.notes.begin(), a.notes.end());
}

json run_root(PipelineContext& ctx, StageLog& log, Stage stage, const std::string& target,
              const std::vector<std::string>& code, const std::vector<std::string>& usage,
              const std::optional<std::string>& prior, AnalysisContext* shared = nullptr) {
    if (shared) {
        shared->visited.insert(target);
        return analyze(code, usage, 1, stage, *shared, target, prior);
    }
    AnalysisContext a = make_actx(ctx);
    a.visited.insert(target);
    json r = analyze(code, usage, 1, stage, a, target, prior);
    absorb(log, a);
    return r;
}

std::string handler_summary(const HandlerRegistration& h) {
    std::string out = "struct " + h.struct_type + " " + h.struct_name + " (" + std::string(to_string(h.kind)) + ")";
    for (const auto& [field, fn] : h.bound_ops) out += "\n." + field + " = " + fn;
    return out;
}

std::string init_summary(const HandlerInitSpec& init) {
    if (init.init_syscall.empty()) return "handle obtained as resource " + init.resource_name;
    if (init.shape == HandlerInitSpec::Shape::Socket) {
        return "socket(" + init.domain + ", " + init.type + ", " + init.protocol + ") returning " + init.resource_name;
    }
    return init.init_syscall + " on " + init.device_path + " returning " + init.resource_name;
}

std::vector<std::string> usage_blocks(const std::vector<UsageReference>& usages) {
    std::vector<std::string> out;
    for (const auto& u : usages) {
        out.push_back("// usage of " + u.identifier + " at " + u.file + ":" + std::to_string(u.line) + "\n" +
                      u.snippet);
    }
    return out;
}

// (trigger field, function, syscall) triples to analyze, in a fixed order
std::vector<std::tuple<std::string, std::string, std::string>> entry_points(const HandlerRegistration& h) {
    std::vector<std::tuple<std::string, std::string, std::string>> out;
    for (const char* f : {"unlocked_ioctl", "ioctl", "compat_ioctl"}) {
        if (auto it = h.bound_ops.find(f); it != h.bound_ops.end()) {
            out.emplace_back(f, it->second, "ioctl");
            break;
        }
    }
    for (const char* f : {"setsockopt", "getsockopt"}) {
        if (auto it = h.bound_ops.find(f); it != h.bound_ops.end()) out.emplace_back(f, it->second, f);
    }
    return out;
}

bool is_type_keyword(std::string_view s) { return s == "none" || s == "NONE" || s == "None"; }

syz::SpecFile definitions_spec(const TypeDefinitions& defs) {
    syz::SpecFile s;
    s.resources = defs.resources;
    s.types = defs.types;
    s.flag_sets = defs.flag_sets;
    return s;
}

void merge_definitions(TypeDefinitions& into, const TypeDefinitions& from) {
    for (const auto& r : from.resources) {
        bool dup = std::any_of(into.resources.begin(), into.resources.end(),
                               [&](const auto& x) { return x.name == r.name; });
        if (!dup) into.resources.push_back(r);
    }
    for (const auto& t : from.types) {
        bool dup = std::any_of(into.types.begin(), into.types.end(), [&](const auto& x) { return x.name == t.name; });
        if (!dup) into.types.push_back(t);
    }
    for (const auto& f : from.flag_sets) {
        bool dup = std::any_of(into.flag_sets.begin(), into.flag_sets.end(),
                               [&](const auto& x) { return x.name == f.name; });
        if (!dup) into.flag_sets.push_back(f);
    }
}

TypeDefinitions parse_definitions(const std::string& text) {
    TypeDefinitions defs;
    if (text.empty()) return defs;
    syz::SpecFile s = syz::parse_spec(text);
    for (auto& r : s.resources) {
        // producers and consumers are recomputed once the spec is assembled
        r.produced_by.clear();
        r.consumed_by.clear();
        defs.resources.push_back(std::move(r));
    }
    defs.types = std::move(s.types);
    defs.flag_sets = std::move(s.flag_sets);
    return defs;
}

}  // namespace

const HandlerRegistration* PipelineContext::find_handler(std::string_view struct_name) const {
    for (const auto& h : handlers) {
        if (h.struct_name == struct_name) return &h;
    }
    return nullptr;
}

std::string sanitize_name(std::string_view s) {
    std::string out;
    for (char ch : s) {
        unsigned char c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            out += static_cast<char>(std::tolower(c));
        } else if (!out.empty() && out.back() != '_') {
            out += '_';
        }
    }
    while (!out.empty() && out.back() == '_') out.pop_back();
    return out;
}

std::optional<HandlerInitSpec> handler_init_from_result(const json& result) {
    if (!result.is_object()) return std::nullopt;
    HandlerInitSpec init;
    std::string name = json_text(result, "name");
    if (result.contains("socket") && result["socket"].is_object()) {
        const json& sock = result["socket"];
        init.shape = HandlerInitSpec::Shape::Socket;
        init.domain = json_text(sock, "domain");
        init.type = json_text(sock, "type");
        init.protocol = json_text(sock, "protocol");
        if (init.domain.empty() || init.type.empty()) return std::nullopt;
        if (init.protocol.empty()) init.protocol = "0";
        init.init_syscall = "socket";
        if (name.empty()) name = init.domain.rfind("AF_", 0) == 0 ? init.domain.substr(3) : init.domain;
        init.name = sanitize_name(name);
        init.resource_name = "sock_" + init.name;
    } else {
        std::string device = json_text(result, "device");
        if (device.empty()) return std::nullopt;
        while (!device.empty() && device.front() == '/') device.erase(0, 1);
        if (device.rfind("dev/", 0) == 0) device.erase(0, 4);
        if (device.empty()) return std::nullopt;
        init.device_path = "/dev/" + device;
        init.init_syscall = device.find('#') != std::string::npos ? "syz_open_dev" : "openat";
        if (name.empty()) {
            auto slash = device.find_last_of('/');
            name = slash == std::string::npos ? device : device.substr(slash + 1);
        }
        init.name = sanitize_name(name);
        init.resource_name = "fd_" + init.name;
    }
    if (init.name.empty()) return std::nullopt;
    return init;
}

HandlerInitSpec infer_handler_init(const HandlerRegistration& handler, PipelineContext& ctx, StageLog& log) {
    auto code = related_code_for(ctx.db, handler.struct_name);
    if (handler.usages.empty()) log.notes.push_back("no usages of " + handler.struct_name + "; definition only");
    json r = run_root(ctx, log, Stage::HandlerInit, handler.struct_name, code, usage_blocks(handler.usages),
                      handler_summary(handler));
    auto init = handler_init_from_result(r);
    if (!init) throw UnresolvedHandlerInit(handler.struct_name);
    return *init;
}

std::vector<IdentifierFinding> deduce_identifiers(const HandlerRegistration& handler, const HandlerInitSpec& init,
                                                  PipelineContext& ctx, StageLog& log,
                                                  std::vector<std::string>* return_relevant) {
    std::vector<IdentifierFinding> out;
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& [field, fn, syscall] : entry_points(handler)) {
        auto code = related_code_for(ctx.db, fn);
        if (code.empty()) {
            log.notes.push_back("definition not found: " + fn + " (." + field + " of " + handler.struct_name + ")");
            log.unresolved.push_back("function " + fn);
            continue;
        }
        std::vector<std::string> usage{"bound as ." + field + " in " + handler.struct_name + "; reached through the " +
                                       syscall + " syscall"};
        json r = run_root(ctx, log, Stage::IdentifierDeduction, fn, code, usage, init_summary(init));
        if (!r.is_object()) continue;
        for (const auto& item : r.value("identifiers", json::array())) {
            IdentifierFinding f;
            f.const_name = json_text(item, "name");
            if (f.const_name.empty() || !c::is_identifier(f.const_name)) {
                log.notes.push_back("identifier entry without a usable name: " + item.dump());
                continue;
            }
            f.handling_function = json_text(item, "handler");
            if (f.handling_function.empty()) f.handling_function = fn;
            f.usage_info = json_text(item, "usage");
            f.modified = item.value("modified", false);
            std::string sc = json_text(item, "syscall");
            f.syscall = sc.empty() ? syscall : sc;
            f.level = json_text(item, "level");
            f.handler = handler.struct_name;
            f.resource = init.resource_name;
            if (seen.emplace(f.syscall, f.const_name).second) out.push_back(std::move(f));
        }
        if (return_relevant) {
            for (const auto& item : r.value("return_relevant", json::array())) {
                std::string name = item.is_string() ? item.get<std::string>() : json_text(item, "function");
                if (!name.empty() &&
                    std::find(return_relevant->begin(), return_relevant->end(), name) == return_relevant->end()) {
                    return_relevant->push_back(name);
                }
            }
        }
    }
    return out;
}

std::pair<std::vector<TypeFinding>, TypeDefinitions> recover_types(const std::vector<IdentifierFinding>& findings,
                                                                   PipelineContext& ctx, StageLog& log) {
    std::vector<TypeFinding> types;
    std::vector<std::string> pending;
    for (const auto& f : findings) {
        auto code = related_code_for(ctx.db, f.handling_function);
        if (code.empty()) log.notes.push_back("definition not found: " + f.handling_function);
        std::vector<std::string> usage;
        if (!f.usage_info.empty()) usage.push_back(f.usage_info);
        std::string prior = "command " + f.const_name + " of " + f.syscall + ", handled in " + f.handling_function;
        if (f.modified) prior += "; the command value is transformed before comparison";
        AnalysisContext a = make_actx(ctx);
        a.visited.insert(f.handling_function);
        json r = analyze(code, usage, 1, Stage::TypeRecovery, a, f.const_name, prior);
        absorb(log, a);

        const json* entry = nullptr;
        json list = r.is_object() ? r.value("types", json::array()) : json::array();
        for (const auto& t : list) {
            if (json_text(t, "identifier") == f.const_name) {
                entry = &t;
                break;
            }
        }
        if (!entry && list.size() == 1) entry = &list[0];

        TypeFinding tf;
        tf.identifier = f.const_name;
        tf.syscall = f.syscall;
        if (entry) {
            std::string arg = json_text(*entry, "arg");
            if (is_type_keyword(arg)) {
                tf.arg_type = "const[0]";
            } else if (!arg.empty() && arg != "UNKNOWN") {
                try {
                    tf.arg_type = syz::render_type(syz::parse_type(arg));
                } catch (const SyntaxError& e) {
                    log.notes.push_back("argument type of " + f.const_name + " does not parse: " + e.what());
                }
            }
            for (const auto& p : entry->value("pending", json::array())) {
                if (!p.is_string()) continue;
                std::string name = p.get<std::string>();
                tf.pending_types.push_back(name);
                if (std::find(pending.begin(), pending.end(), name) == pending.end()) pending.push_back(name);
            }
        }
        if (tf.arg_type.empty()) log.unresolved.push_back("argument of " + f.const_name);
        types.push_back(std::move(tf));
    }

    // one context for every pending type so nested types are defined once
    TypeDefinitions defs;
    AnalysisContext a = make_actx(ctx);
    for (const auto& name : pending) {
        if (a.visited.count(name)) continue;
        auto code = related_code_for(ctx.db, name);
        if (code.empty()) log.notes.push_back("definition not found: " + name);
        json r = run_root(ctx, log, Stage::TypeDefinition, name, code, {}, std::nullopt, &a);
        if (!r.is_object()) continue;
        for (const auto& d : r.value("definitions", json::array())) {
            if (!d.is_string()) continue;
            try {
                merge_definitions(defs, parse_definitions(d.get<std::string>()));
            } catch (const SyntaxError& e) {
                log.notes.push_back("definition for " + name + " does not parse: " + e.what());
            }
        }
    }
    absorb(log, a);
    for (const auto& name : pending) {
        bool defined = std::any_of(defs.types.begin(), defs.types.end(), [&](const auto& t) { return t.name == name; }) ||
                       std::any_of(defs.resources.begin(), defs.resources.end(),
                                   [&](const auto& r) { return r.name == name; });
        if (!defined) log.unresolved.push_back("type " + name);
    }
    return {types, defs};
}

std::vector<DependencyFinding> analyze_dependencies(const HandlerRegistration& handler, const HandlerInitSpec& init,
                                                    const std::vector<IdentifierFinding>& findings,
                                                    const std::vector<std::string>& return_relevant,
                                                    PipelineContext& ctx, StageLog& log) {
    std::vector<DependencyFinding> out;
    for (const auto& fn : return_relevant) {
        auto code = related_code_for(ctx.db, fn);
        if (code.empty()) {
            log.notes.push_back("definition not found: " + fn);
            continue;
        }
        std::vector<std::string> usage;
        for (const auto& f : findings) {
            if (f.handling_function == fn) usage.push_back(f.const_name + " is handled in " + fn);
        }
        json r = run_root(ctx, log, Stage::DependencyAnalysis, fn, code, usage,
                          init_summary(init) + "\nhandler " + handler.struct_name);
        if (!r.is_object()) continue;
        for (const auto& item : r.value("resources", json::array())) {
            std::string cname = json_text(item, "identifier");
            auto producer = std::find_if(findings.begin(), findings.end(),
                                         [&](const IdentifierFinding& f) { return f.const_name == cname; });
            if (producer == findings.end()) {
                log.notes.push_back("resource for unknown command " + cname + " ignored");
                continue;
            }
            std::string consumer = json_text(item, "consumer_handler");
            std::string resource = json_text(item, "resource");
            if (resource.empty() || !c::is_identifier(resource)) {
                std::string stem = consumer.empty() ? cname : consumer;
                if (stem.size() > 5 && stem.substr(stem.size() - 5) == "_fops") stem.resize(stem.size() - 5);
                resource = "fd_" + sanitize_name(stem);
            }
            auto it = std::find_if(out.begin(), out.end(),
                                   [&](const DependencyFinding& d) { return d.resource_name == resource; });
            if (it == out.end()) {
                DependencyFinding d;
                d.producer_syscall = producer->syscall + "$" + lower(cname);
                d.producer_const = cname;
                d.resource_name = resource;
                out.push_back(d);
                it = out.end() - 1;
            }
            if (!consumer.empty() &&
                std::find(it->consumer_handlers.begin(), it->consumer_handlers.end(), consumer) ==
                    it->consumer_handlers.end()) {
                it->consumer_handlers.push_back(consumer);
            }
        }
    }
    return out;
}

syz::SpecFile assemble_spec(const HandlerInitSpec& init, const std::vector<IdentifierFinding>& identifiers,
                            const std::vector<TypeFinding>& types, const TypeDefinitions& defs,
                            const std::vector<DependencyFinding>& dependencies, const DefinitionDatabase& db,
                            std::vector<std::string>* unresolved) {
    using namespace syz;
    SpecFile s;
    auto named = [](std::string n) { return TypeExpr{NamedType{std::move(n)}}; };
    auto constant = [](std::string n) { return TypeExpr{ConstType{std::move(n), ""}}; };
    auto fallback = [] { return parse_type("ptr[in, array[int8]]"); };

    bool socket = init.shape == HandlerInitSpec::Shape::Socket;
    if (!init.resource_name.empty()) s.resources.push_back({init.resource_name, socket ? "sock" : "fd", {}, {}, {}});
    for (const auto& d : dependencies) {
        if (!s.find_resource(d.resource_name)) s.resources.push_back({d.resource_name, "fd", {}, {}, {}});
    }
    for (const auto& r : defs.resources) {
        if (!s.find_resource(r.name)) s.resources.push_back(r);
    }

    if (init.init_syscall == "openat") {
        SyscallDesc sc;
        sc.base_name = "openat";
        sc.variant = init.name;
        sc.params = {{"fd", constant("AT_FDCWD"), {}},
                     {"file", TypeExpr{PtrType{Dir::In, TypeExpr{StringType{init.device_path}}}}, {}},
                     {"flags", TypeExpr{FlagsType{"open_flags", ""}}, {}},
                     {"mode", TypeExpr{ConstType{std::int64_t{0}, ""}}, {}}};
        sc.ret = init.resource_name;
        s.syscalls.push_back(std::move(sc));
    } else if (init.init_syscall == "syz_open_dev") {
        SyscallDesc sc;
        sc.base_name = "syz_open_dev";
        sc.variant = init.name;
        sc.params = {{"dev", TypeExpr{PtrType{Dir::In, TypeExpr{StringType{init.device_path}}}}, {}},
                     {"id", TypeExpr{IntType{"intptr", {}}}, {}},
                     {"flags", TypeExpr{FlagsType{"open_flags", ""}}, {}}};
        sc.ret = init.resource_name;
        s.syscalls.push_back(std::move(sc));
    } else if (init.init_syscall == "socket") {
        auto operand = [&](const std::string& v) -> TypeExpr {
            try {
                return TypeExpr{ConstType{std::stoll(v, nullptr, 0), ""}};
            } catch (const std::exception&) {
                return constant(v);
            }
        };
        SyscallDesc sc;
        sc.base_name = "socket";
        sc.variant = init.name;
        sc.params = {{"domain", operand(init.domain), {}},
                     {"type", operand(init.type), {}},
                     {"proto", operand(init.protocol), {}}};
        sc.ret = init.resource_name;
        s.syscalls.push_back(std::move(sc));
    }

    std::set<std::string> known;
    for (const auto& t : defs.types) known.insert(t.name);
    for (const auto& f : defs.flag_sets) known.insert(f.name);
    for (const auto& r : s.resources) known.insert(r.name);
    known.insert({"fd", "sock", "open_flags"});

    std::vector<const IdentifierFinding*> order;
    for (const auto& f : identifiers) order.push_back(&f);
    std::stable_sort(order.begin(), order.end(), [](const auto* a, const auto* b) {
        return std::tie(a->const_name, a->syscall) < std::tie(b->const_name, b->syscall);
    });

    std::vector<SyscallDesc> commands;
    for (const IdentifierFinding* f : order) {
        SyscallDesc sc;
        sc.base_name = f->syscall;
        sc.variant = lower(f->const_name);
        for (int n = 2; std::any_of(commands.begin(), commands.end(),
                                    [&](const SyscallDesc& o) { return o.full_name() == sc.full_name(); });
             ++n) {
            sc.variant = lower(f->const_name) + "_" + std::to_string(n);
        }
        sc.source_handler = f->handler;
        sc.identifier_const = f->const_name;

        TypeExpr arg;
        auto tf = std::find_if(types.begin(), types.end(), [&](const auto& t) {
            return t.identifier == f->const_name && t.syscall == f->syscall;
        });
        bool ok = tf != types.end() && !tf->arg_type.empty();
        if (ok) {
            arg = parse_type(tf->arg_type);
            for (const auto& n : referenced_names(arg)) {
                if (!known.count(n)) ok = false;
            }
            if (!ok && unresolved) unresolved->push_back("argument of " + f->const_name + " names undefined types");
        }
        if (!ok) arg = fallback();

        TypeExpr handle = named(f->resource.empty() ? (socket ? "sock" : "fd") : f->resource);
        if (f->syscall == "setsockopt" || f->syscall == "getsockopt") {
            TypeExpr level = f->level.empty() ? TypeExpr{IntType{"int32", {}}} : constant(f->level);
            sc.params = {{"fd", handle, {}}, {"level", level, {}}, {"optname", constant(f->const_name), {}},
                         {"optval", arg, {}}};
            if (f->syscall == "setsockopt") {
                sc.params.push_back({"optlen", TypeExpr{LenType{{"optval"}, ""}}, {}});
            } else {
                sc.params.push_back({"optlen", TypeExpr{PtrType{Dir::InOut, TypeExpr{IntType{"int32", {}}}}}, {}});
            }
        } else {
            sc.params = {{"fd", handle, {}}, {"cmd", constant(f->const_name), {}}, {"arg", arg, {}}};
        }
        for (const auto& d : dependencies) {
            if (d.producer_const == f->const_name && d.producer_syscall == f->syscall + "$" + lower(f->const_name)) {
                sc.ret = d.resource_name;
            }
        }
        if (f->modified) {
            sc.comments.push_back(f->const_name + " is transformed before comparison in " + f->handling_function);
        }
        commands.push_back(std::move(sc));
    }
    for (auto& c : commands) s.syscalls.push_back(std::move(c));
    s.types = defs.types;
    s.flag_sets = defs.flag_sets;

    // headers defining the constants in use
    std::set<std::string> consts;
    for (const auto& name : declaration_names(s)) {
        for (const auto& c : referenced_constants(s, name)) consts.insert(c);
    }
    std::set<std::string> headers;
    for (const auto& c : consts) {
        for (const auto& d : db.lookup(c)) {
            if (d.kind != DefKind::Macro || d.file.size() < 2 || d.file.substr(d.file.size() - 2) != ".h") continue;
            std::string h = d.file;
            if (h.rfind("include/", 0) == 0) h.erase(0, 8);
            headers.insert(h);
            break;
        }
    }
    s.includes.assign(headers.begin(), headers.end());
    link_resources(s);
    return s;
}

bool HandlerState::completed(std::string_view stage) const {
    return std::find(stages_completed.begin(), stages_completed.end(), stage) != stages_completed.end();
}

namespace {

json init_to_json(const HandlerInitSpec& i) {
    json j{{"shape", i.shape == HandlerInitSpec::Shape::Socket ? "socket" : "driver"},
           {"init_syscall", i.init_syscall},
           {"name", i.name},
           {"resource_name", i.resource_name}};
    if (i.shape == HandlerInitSpec::Shape::Socket) {
        j["domain"] = i.domain;
        j["type"] = i.type;
        j["protocol"] = i.protocol;
    } else {
        j["device_path"] = i.device_path;
    }
    return j;
}

HandlerInitSpec init_from_json(const json& j) {
    HandlerInitSpec i;
    i.shape = j.value("shape", "driver") == "socket" ? HandlerInitSpec::Shape::Socket : HandlerInitSpec::Shape::Driver;
    i.init_syscall = j.value("init_syscall", "");
    i.name = j.value("name", "");
    i.resource_name = j.value("resource_name", "");
    i.device_path = j.value("device_path", "");
    i.domain = j.value("domain", "");
    i.type = j.value("type", "");
    i.protocol = j.value("protocol", "");
    return i;
}

}  // namespace

json to_json(const HandlerState& s) {
    json j;
    j["schema"] = 1;
    j["handler"] = s.handler;
    j["stages_completed"] = s.stages_completed;
    j["init"] = s.init ? init_to_json(*s.init) : json();
    j["spec_name"] = s.spec_name;
    j["identifiers"] = json::array();
    for (const auto& f : s.identifiers) {
        j["identifiers"].push_back({{"const_name", f.const_name},
                                    {"handling_function", f.handling_function},
                                    {"usage_info", f.usage_info},
                                    {"modified", f.modified},
                                    {"syscall", f.syscall},
                                    {"level", f.level},
                                    {"handler", f.handler},
                                    {"resource", f.resource}});
    }
    j["return_relevant"] = s.return_relevant;
    j["types"] = json::array();
    for (const auto& t : s.types) {
        j["types"].push_back({{"identifier", t.identifier},
                              {"syscall", t.syscall},
                              {"arg_type", t.arg_type},
                              {"pending", t.pending_types}});
    }
    j["type_definitions"] = s.type_definitions;
    j["dependencies"] = json::array();
    for (const auto& d : s.dependencies) {
        j["dependencies"].push_back({{"producer_syscall", d.producer_syscall},
                                     {"producer_const", d.producer_const},
                                     {"resource", d.resource_name},
                                     {"consumers", d.consumer_handlers}});
    }
    j["consumers"] = s.consumers;
    j["notes"] = s.log.notes;
    j["unresolved"] = s.log.unresolved;
    j["usage"] = {{"queries", s.log.queries},
                  {"prompt_chars", s.log.prompt_chars},
                  {"response_chars", s.log.response_chars}};
    j["error"] = s.error;
    return j;
}

HandlerState handler_state_from_json(const json& j) {
    HandlerState s;
    s.handler = j.at("handler").get<std::string>();
    s.stages_completed = j.value("stages_completed", std::vector<std::string>{});
    if (j.contains("init") && j["init"].is_object()) s.init = init_from_json(j["init"]);
    s.spec_name = j.value("spec_name", "");
    for (const auto& f : j.value("identifiers", json::array())) {
        IdentifierFinding x;
        x.const_name = f.value("const_name", "");
        x.handling_function = f.value("handling_function", "");
        x.usage_info = f.value("usage_info", "");
        x.modified = f.value("modified", false);
        x.syscall = f.value("syscall", "ioctl");
        x.level = f.value("level", "");
        x.handler = f.value("handler", "");
        x.resource = f.value("resource", "");
        s.identifiers.push_back(std::move(x));
    }
    s.return_relevant = j.value("return_relevant", std::vector<std::string>{});
    for (const auto& t : j.value("types", json::array())) {
        s.types.push_back({t.value("identifier", ""), t.value("arg_type", ""),
                           t.value("pending", std::vector<std::string>{}), t.value("syscall", "ioctl")});
    }
    s.type_definitions = j.value("type_definitions", "");
    for (const auto& d : j.value("dependencies", json::array())) {
        s.dependencies.push_back({d.value("producer_syscall", ""), d.value("producer_const", ""),
                                  d.value("resource", ""), d.value("consumers", std::vector<std::string>{})});
    }
    s.consumers = j.value("consumers", std::vector<std::string>{});
    s.log.notes = j.value("notes", std::vector<std::string>{});
    s.log.unresolved = j.value("unresolved", std::vector<std::string>{});
    if (j.contains("usage")) {
        s.log.queries = j["usage"].value("queries", std::size_t{0});
        s.log.prompt_chars = j["usage"].value("prompt_chars", std::size_t{0});
        s.log.response_chars = j["usage"].value("response_chars", std::size_t{0});
    }
    s.error = j.value("error", "");
    return s;
}

void write_file_atomic(const fs::path& path, const std::string& data) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    static std::atomic<unsigned> counter{0};
    fs::path tmp = path;
    tmp += ".tmp" + std::to_string(counter++);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError(tmp.string(), "cannot write");
        out << data;
        if (!out) throw IoError(tmp.string(), "write failed");
    }
    fs::rename(tmp, path);
}

void save_state(const fs::path& file, const HandlerState& state) {
    write_file_atomic(file, to_json(state).dump(2) + "\n");
}

std::optional<HandlerState> load_state(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) return std::nullopt;
    try {
        return handler_state_from_json(json::parse(in));
    } catch (const json::exception&) {
        return std::nullopt;  // a torn or foreign file restarts the handler
    }
}

void run_handler_init(const HandlerRegistration& handler, HandlerState& state, PipelineContext& ctx,
                      const std::optional<fs::path>& state_file) {
    state.handler = handler.struct_name;
    if (state.completed(kInitStage)) return;
    state.init = infer_handler_init(handler, ctx, state.log);
    if (state.spec_name.empty()) state.spec_name = state.init->name;
    state.stages_completed.emplace_back(kInitStage);
    if (state_file) save_state(*state_file, state);
}

void run_handler_stages(const HandlerRegistration& handler, HandlerState& state, PipelineContext& ctx,
                        const std::optional<fs::path>& state_file) {
    if (!state.init) throw UnresolvedHandlerInit(handler.struct_name);
    auto checkpoint = [&](std::string_view stage) {
        state.stages_completed.emplace_back(stage);
        if (state_file) save_state(*state_file, state);
    };

    if (!state.completed(kIdentifierStage)) {
        state.return_relevant.clear();
        state.identifiers = deduce_identifiers(handler, *state.init, ctx, state.log, &state.return_relevant);
        checkpoint(kIdentifierStage);
    }
    if (!state.completed(kTypeStage)) {
        auto [types, defs] = recover_types(state.identifiers, ctx, state.log);
        state.types = std::move(types);
        state.type_definitions = syz::render_spec(definitions_spec(defs));
        checkpoint(kTypeStage);
    }
    if (!state.completed(kDependencyStage)) {
        TypeDefinitions defs = parse_definitions(state.type_definitions);
        state.dependencies =
            analyze_dependencies(handler, *state.init, state.identifiers, state.return_relevant, ctx, state.log);

        // handlers reached only through a produced resource join this spec
        std::set<std::string> merged{handler.struct_name};
        std::vector<std::pair<std::size_t, int>> queue;
        for (std::size_t i = 0; i < state.dependencies.size(); ++i) queue.emplace_back(i, 1);
        for (std::size_t q = 0; q < queue.size(); ++q) {
            auto [index, depth] = queue[q];
            DependencyFinding dep = state.dependencies[index];
            for (const auto& consumer : dep.consumer_handlers) {
                if (!merged.insert(consumer).second) continue;
                const HandlerRegistration* ch = ctx.find_handler(consumer);
                if (!ch) {
                    state.log.notes.push_back("consumer handler " + consumer + " not among discovered handlers");
                    state.log.unresolved.push_back("handler " + consumer);
                    continue;
                }
                HandlerInitSpec cinit;
                cinit.name = sanitize_name(consumer);
                cinit.resource_name = dep.resource_name;
                std::vector<std::string> rr;
                auto ids = deduce_identifiers(*ch, cinit, ctx, state.log, &rr);
                std::vector<IdentifierFinding> fresh;
                for (auto& f : ids) {
                    bool dup = std::any_of(state.identifiers.begin(), state.identifiers.end(), [&](const auto& x) {
                        return x.const_name == f.const_name && x.syscall == f.syscall;
                    });
                    if (!dup) fresh.push_back(f);
                }
                auto [types, more] = recover_types(fresh, ctx, state.log);
                state.types.insert(state.types.end(), types.begin(), types.end());
                merge_definitions(defs, more);
                state.identifiers.insert(state.identifiers.end(), fresh.begin(), fresh.end());
                state.consumers.push_back(consumer);
                if (depth >= ctx.cfg.max_consumer_depth) {
                    if (!rr.empty()) state.log.notes.push_back("dependency chain cut at " + consumer);
                    continue;
                }
                auto deps = analyze_dependencies(*ch, cinit, fresh, rr, ctx, state.log);
                for (auto& d : deps) {
                    bool dup = std::any_of(state.dependencies.begin(), state.dependencies.end(),
                                           [&](const auto& x) { return x.resource_name == d.resource_name; });
                    if (dup) continue;
                    state.dependencies.push_back(std::move(d));
                    queue.emplace_back(state.dependencies.size() - 1, depth + 1);
                }
            }
        }
        state.type_definitions = syz::render_spec(definitions_spec(defs));
        checkpoint(kDependencyStage);
    }
}

syz::SpecFile assemble_from_state(const HandlerState& state, const DefinitionDatabase& db,
                                  std::vector<std::string>* unresolved) {
    if (!state.init) throw UnresolvedHandlerInit(state.handler);
    HandlerInitSpec init = *state.init;
    if (!state.spec_name.empty() && state.spec_name != init.name) {
        // a renamed handler keeps its resource distinct from the colliding one
        init.name = state.spec_name;
        std::string prefix = init.shape == HandlerInitSpec::Shape::Socket ? "sock_" : "fd_";
        std::string old = init.resource_name;
        init.resource_name = prefix + init.name;
        auto ids = state.identifiers;
        for (auto& f : ids) {
            if (f.resource == old) f.resource = init.resource_name;
        }
        return assemble_spec(init, ids, state.types, parse_definitions(state.type_definitions), state.dependencies, db,
                             unresolved);
    }
    return assemble_spec(init, state.identifiers, state.types, parse_definitions(state.type_definitions),
                         state.dependencies, db, unresolved);
}

}  // namespace speckernel
