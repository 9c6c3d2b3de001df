#include "speckernel/repair.hpp"

#include <algorithm>
#include <set>

#include <nlohmann/json.hpp>

#include "speckernel/errors.hpp"

namespace speckernel {

using nlohmann::json;

json to_json(const RepairReport& r) {
    json j;
    j["fixed"] = json::array();
    for (const auto& [target, rounds] : r.fixed) j["fixed"].push_back({{"target", target}, {"rounds", rounds}});
    j["pruned"] = json::array();
    for (const auto& [target, errors] : r.pruned) {
        j["pruned"].push_back({{"target", target}, {"errors", errors_to_json(errors)}});
    }
    j["final_error_count"] = r.final_error_count;
    j["queries"] = r.queries;
    j["notes"] = r.notes;
    return j;
}

std::map<std::string, std::vector<ValidationError>> match_errors(const syz::SpecFile& spec,
                                                                  const std::vector<ValidationError>& errors) {
    std::map<std::string, std::vector<ValidationError>> out;
    std::vector<syz::DeclLocation> places;
    for (const auto& e : errors) {
        std::string key = e.target;
        if (key.empty()) {
            if (places.empty()) places = syz::layout(spec);
            // enclosing declaration, else the closest one starting above the line
            const syz::DeclLocation* best = nullptr;
            for (const auto& p : places) {
                if (p.first_line <= e.line && (!best || p.first_line > best->first_line)) best = &p;
            }
            if (best) key = best->target;
        }
        out[key].push_back(e);
    }
    return out;
}

std::vector<std::string> related_code_for_target(const syz::SpecFile& spec, std::string_view target,
                                                 const DefinitionDatabase& db) {
    std::vector<std::string> out;
    std::set<std::string> seen;
    auto add = [&](const std::string& name) {
        if (!seen.insert(name).second) return;
        for (const auto& d : extract_code(db, name)) out.push_back(format_definition(d));
    };
    if (const auto* sc = spec.find_syscall(target)) {
        if (sc->identifier_const) add(*sc->identifier_const);
    } else {
        add(std::string(target));
    }
    for (const auto& name : syz::referenced_names(spec, target)) add(name);
    return out;
}

std::optional<syz::SpecFile> repair_description(const RepairTask& task, RepairContext& ctx) {
    std::string errors = "Validator errors:";
    for (const auto& e : task.errors) errors += "\n- " + std::string(to_string(e.code)) + ": " + e.message;
    std::vector<std::string> usage{"Current description:\n" + task.current_text, errors};
    Prompt prompt = gen_prompt(ctx.prompts, Stage::Repair, task.target, task.related_code, usage,
                               "repair round " + std::to_string(task.round), ctx.token_budget);
    AnalysisResponse response;
    ++ctx.queries;
    try {
        response = ctx.service.query(prompt);
    } catch (const MalformedResponse& e) {
        ctx.notes.push_back("repair of " + task.target + " round " + std::to_string(task.round) + ": " + e.what());
        return std::nullopt;
    }
    const json& r = response.result;
    std::string text;
    if (r.is_object() && r.contains("description") && r["description"].is_string()) {
        text = r["description"].get<std::string>();
    } else if (r.is_string()) {
        text = r.get<std::string>();
    }
    if (text.empty()) {
        ctx.notes.push_back("repair of " + task.target + " round " + std::to_string(task.round) + ": no description");
        return std::nullopt;
    }
    syz::SpecFile replacement;
    try {
        replacement = syz::parse_spec(text);
    } catch (const SyntaxError& e) {
        ctx.notes.push_back("repair of " + task.target + " round " + std::to_string(task.round) +
                            ": replacement does not parse: " + e.what());
        return std::nullopt;
    }

    // at most one nested type definition per round
    for (const auto& u : response.unknowns) {
        if (u.kind != UnknownKind::Type || replacement.find_type(u.identifier)) continue;
        Prompt nested = gen_prompt(ctx.prompts, Stage::TypeDefinition, u.identifier,
                                   related_code_for(ctx.db, u.identifier),
                                   u.usage_info.empty() ? std::vector<std::string>{} : std::vector{u.usage_info},
                                   std::nullopt, ctx.token_budget);
        ++ctx.queries;
        try {
            AnalysisResponse def = ctx.service.query(nested);
            for (const auto& d : def.result.value("definitions", json::array())) {
                if (!d.is_string()) continue;
                syz::SpecFile more = syz::parse_spec(d.get<std::string>());
                for (auto& t : more.types) {
                    if (!replacement.find_type(t.name)) replacement.types.push_back(std::move(t));
                }
                for (auto& f : more.flag_sets) {
                    if (!replacement.find_flag_set(f.name)) replacement.flag_sets.push_back(std::move(f));
                }
            }
        } catch (const MalformedResponse& e) {
            ctx.notes.push_back("type definition for " + u.identifier + " during repair: " + e.what());
        } catch (const SyntaxError& e) {
            ctx.notes.push_back("type definition for " + u.identifier + " during repair does not parse: " + e.what());
        } catch (const json::exception& e) {
            ctx.notes.push_back("type definition for " + u.identifier + " during repair: " + e.what());
        }
        break;
    }
    auto names = syz::declaration_names(replacement);
    if (std::find(names.begin(), names.end(), task.target) == names.end()) {
        ctx.notes.push_back("repair of " + task.target + " round " + std::to_string(task.round) +
                            ": replacement does not define the target");
        return std::nullopt;
    }
    return replacement;
}

bool substitute_declaration(syz::SpecFile& spec, std::string_view target, const syz::SpecFile& replacement) {
    bool done = false;
    if (auto* sc = spec.find_syscall(target)) {
        const auto* rep = replacement.find_syscall(target);
        if (!rep) return false;
        std::string handler = sc->source_handler;
        *sc = *rep;
        sc->source_handler = handler;
        done = true;
    } else if (auto* t = spec.find_type(target)) {
        const auto* rep = replacement.find_type(target);
        if (!rep) return false;
        *t = *rep;
        done = true;
    } else {
        for (auto& r : spec.resources) {
            if (r.name != target) continue;
            const auto* rep = replacement.find_resource(target);
            if (!rep) return false;
            r = *rep;
            done = true;
        }
        for (auto& f : spec.flag_sets) {
            if (f.name != target) continue;
            const auto* rep = replacement.find_flag_set(target);
            if (!rep) return false;
            f = *rep;
            done = true;
        }
    }
    if (!done) return false;

    auto existing = syz::declaration_names(spec);
    auto has = [&](const std::string& n) { return std::find(existing.begin(), existing.end(), n) != existing.end(); };
    for (const auto& r : replacement.resources) {
        if (!has(r.name)) spec.resources.push_back(r);
    }
    for (const auto& s : replacement.syscalls) {
        if (!has(s.full_name())) spec.syscalls.push_back(s);
    }
    for (const auto& t : replacement.types) {
        if (!has(t.name)) spec.types.push_back(t);
    }
    for (const auto& f : replacement.flag_sets) {
        if (!has(f.name)) spec.flag_sets.push_back(f);
    }
    for (const auto& inc : replacement.includes) {
        if (std::find(spec.includes.begin(), spec.includes.end(), inc) == spec.includes.end()) {
            spec.includes.push_back(inc);
        }
    }
    syz::link_resources(spec);
    return true;
}

std::vector<std::string> prune_declaration(syz::SpecFile& spec, std::string_view target) {
    std::vector<std::string> removed;
    if (!syz::remove_declaration(spec, target)) return removed;
    removed.emplace_back(target);
    for (std::size_t i = 0; i < removed.size(); ++i) {
        const std::string gone = removed[i];
        for (const auto& name : syz::declaration_names(spec)) {
            auto refs = syz::referenced_names(spec, name);
            if (std::find(refs.begin(), refs.end(), gone) == refs.end()) continue;
            if (syz::remove_declaration(spec, name)) removed.push_back(name);
        }
    }
    return removed;
}

std::pair<syz::SpecFile, RepairReport> repair_spec(const syz::SpecFile& spec, RepairContext& ctx) {
    RepairReport report;
    syz::SpecFile cur = spec;
    syz::link_resources(cur);
    std::map<std::string, int> attempts;
    const std::size_t queries_before = ctx.queries;
    const std::size_t notes_before = ctx.notes.size();

    for (int round = 1; round <= ctx.max_rounds; ++round) {
        auto errors = validate_spec(cur, ctx.db, ctx.validator);
        if (errors.empty()) break;
        for (const auto& [target, errs] : match_errors(cur, errors)) {
            if (target.empty()) continue;
            auto text = syz::render_declaration(cur, target);
            if (!text) continue;
            RepairTask task{target, *text, errs, related_code_for_target(cur, target, ctx.db), round};
            ++attempts[target];
            auto replacement = repair_description(task, ctx);
            if (replacement && !substitute_declaration(cur, target, *replacement)) {
                ctx.notes.push_back("replacement for " + target + " could not be substituted");
            }
        }
    }

    std::set<std::string> pruned;
    for (;;) {
        auto errors = validate_spec(cur, ctx.db, ctx.validator);
        if (errors.empty()) break;
        bool progress = false;
        for (const auto& [target, errs] : match_errors(cur, errors)) {
            if (target.empty()) continue;
            syz::SpecFile before = cur;
            auto removed = prune_declaration(cur, target);
            for (const auto& name : removed) {
                progress = true;
                pruned.insert(name);
                auto own = name == target ? errs : std::vector<ValidationError>{};
                std::string text = syz::render_declaration(before, name).value_or("");
                report.pruned_text += "# " + name + "\n";
                for (const auto& e : own) report.pruned_text += "# " + std::string(to_string(e.code)) + ": " + e.message + "\n";
                if (name != target) report.pruned_text += "# removed with " + target + "\n";
                report.pruned_text += text + "\n\n";
                report.pruned.emplace_back(name, own);
            }
        }
        if (!progress) break;
    }

    auto final_errors = validate_spec(cur, ctx.db, ctx.validator);
    report.final_error_count = final_errors.size();
    auto names = syz::declaration_names(cur);
    for (const auto& [target, n] : attempts) {
        if (pruned.count(target)) continue;
        if (std::find(names.begin(), names.end(), target) == names.end()) continue;
        report.fixed.emplace_back(target, n);
    }
    report.queries = ctx.queries - queries_before;
    report.notes.assign(ctx.notes.begin() + static_cast<std::ptrdiff_t>(notes_before), ctx.notes.end());
    return {cur, report};
}

}  // namespace speckernel
