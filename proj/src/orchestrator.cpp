#include "speckernel/orchestrator.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <regex>
#include <sstream>
#include <thread>

#include "speckernel/errors.hpp"
#include "speckernel/repair.hpp"
#include "speckernel/validator.hpp"

namespace speckernel {

using nlohmann::json;
namespace fs = std::filesystem;

// ---- config ----

void RunConfig::check() const {
    if (pipeline.max_iter < 1) throw Error("max_iter must be at least 1");
    if (parallel < 1) throw Error("parallel must be at least 1");
    if (max_rounds < 0) throw Error("max_rounds must be non-negative");
    if (pipeline.unknown_cap < 1) throw Error("unknown_cap must be at least 1");
    if (output_dir.empty()) throw Error("output directory must be set");
    if (!handler_filter.empty()) {
        try {
            std::regex re(handler_filter);
        } catch (const std::regex_error& e) {
            throw Error("bad handler filter '" + handler_filter + "': " + e.what());
        }
    }
    backend.check();
}

namespace {

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

// TOML-ish scalar or flat array parsed into json
json parse_value(const std::string& raw, int line) {
    auto fail = [&](const std::string& why) {
        throw Error("config line " + std::to_string(line) + ": " + why);
    };
    if (raw.empty()) fail("missing value");
    if (raw.front() == '[') {
        if (raw.back() != ']') fail("unterminated array");
        json arr = json::array();
        std::string body = raw.substr(1, raw.size() - 2);
        std::size_t i = 0;
        while (i < body.size()) {
            while (i < body.size() && (body[i] == ' ' || body[i] == ',' || body[i] == '\t')) ++i;
            if (i >= body.size()) break;
            if (body[i] != '"' && body[i] != '\'') fail("arrays hold quoted strings only");
            char q = body[i];
            auto end = body.find(q, i + 1);
            if (end == std::string::npos) fail("unterminated string in array");
            arr.push_back(body.substr(i + 1, end - i - 1));
            i = end + 1;
        }
        return arr;
    }
    if (raw.front() == '"' || raw.front() == '\'') {
        if (raw.size() < 2 || raw.back() != raw.front()) fail("unterminated string");
        std::string s = raw.substr(1, raw.size() - 2);
        if (raw.front() == '"') {
            std::string out;
            for (std::size_t i = 0; i < s.size(); ++i) {
                if (s[i] == '\\' && i + 1 < s.size()) {
                    char n = s[++i];
                    out += n == 'n' ? '\n' : n == 't' ? '\t' : n;
                } else {
                    out += s[i];
                }
            }
            return out;
        }
        return s;
    }
    if (raw == "true") return true;
    if (raw == "false") return false;
    try {
        std::size_t used = 0;
        if (raw.find_first_of(".eE") == std::string::npos) {
            long long v = std::stoll(raw, &used, 0);
            if (used == raw.size()) return v;
        } else {
            double v = std::stod(raw, &used);
            if (used == raw.size()) return v;
        }
    } catch (const std::exception&) {
    }
    fail("cannot parse value '" + raw + "'");
    return {};
}

std::string strip_comment(const std::string& line) {
    char quote = 0;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char ch = line[i];
        if (quote) {
            if (ch == '\\' && quote == '"') {
                ++i;
            } else if (ch == quote) {
                quote = 0;
            }
        } else if (ch == '"' || ch == '\'') {
            quote = ch;
        } else if (ch == '#') {
            return line.substr(0, i);
        }
    }
    return line;
}

void set_key(RunConfig& cfg, const std::string& key, const json& v, const fs::path& base, int line) {
    auto fail = [&](const std::string& why) {
        throw Error("config line " + std::to_string(line) + ": " + key + ": " + why);
    };
    auto str = [&]() -> std::string {
        if (!v.is_string()) fail("expected a string");
        return v.get<std::string>();
    };
    auto path = [&]() -> fs::path {
        fs::path p = str();
        return p.is_relative() && !base.empty() ? base / p : p;
    };
    auto integer = [&]() -> long long {
        if (!v.is_number_integer()) fail("expected an integer");
        return v.get<long long>();
    };
    auto number = [&]() -> double {
        if (!v.is_number()) fail("expected a number");
        return v.get<double>();
    };
    auto boolean = [&]() -> bool {
        if (!v.is_boolean()) fail("expected true or false");
        return v.get<bool>();
    };
    auto strings = [&]() -> std::vector<std::string> {
        if (v.is_string()) return {v.get<std::string>()};
        if (!v.is_array()) fail("expected an array of strings");
        return v.get<std::vector<std::string>>();
    };

    if (key == "corpus" || key == "corpus.root" || key == "root") {
        cfg.corpus.root_path = path();
    } else if (key == "include_globs") {
        cfg.corpus.include_globs = strings();
    } else if (key == "exclude_globs") {
        cfg.corpus.exclude_globs = strings();
    } else if (key == "trigger_fields") {
        cfg.trigger_fields = strings();
    } else if (key == "snippet_radius") {
        cfg.indexer.snippet_radius = static_cast<int>(integer());
    } else if (key == "skip_unreadable") {
        cfg.indexer.skip_unreadable = boolean();
    } else if (key == "backend" || key == "backend.kind" || key == "kind") {
        auto k = backend_kind_from_string(str());
        if (!k) fail("unknown backend '" + str() + "'");
        cfg.backend.kind = *k;
    } else if (key == "endpoint_url") {
        cfg.backend.endpoint_url = str();
    } else if (key == "model" || key == "model_name") {
        cfg.backend.model_name = str();
    } else if (key == "temperature") {
        cfg.backend.temperature = number();
    } else if (key == "max_retries") {
        cfg.backend.max_retries = static_cast<int>(integer());
    } else if (key == "cache_dir") {
        cfg.backend.cache_dir = path();
    } else if (key == "transcripts" || key == "transcript_dir") {
        cfg.backend.transcript_dir = path();
    } else if (key == "script") {
        cfg.backend.script_path = path();
    } else if (key == "max_in_flight") {
        cfg.backend.max_in_flight = static_cast<int>(integer());
    } else if (key == "requests_per_second") {
        cfg.backend.requests_per_second = number();
    } else if (key == "max_iter") {
        cfg.pipeline.max_iter = static_cast<int>(integer());
    } else if (key == "unknown_cap") {
        cfg.pipeline.unknown_cap = static_cast<std::size_t>(integer());
    } else if (key == "token_budget") {
        cfg.pipeline.token_budget = static_cast<std::size_t>(integer());
    } else if (key == "parallel") {
        cfg.parallel = static_cast<int>(integer());
    } else if (key == "max_rounds") {
        cfg.max_rounds = static_cast<int>(integer());
    } else if (key == "out" || key == "output_dir") {
        cfg.output_dir = path();
    } else if (key == "assets") {
        cfg.assets_dir = path();
    } else if (key == "defs") {
        cfg.defs_path = path();
    } else if (key == "handlers") {
        cfg.handler_filter = str();
    } else if (key == "resume") {
        cfg.resume = boolean();
    } else {
        fail("unknown key");
    }
}

}  // namespace

void apply_config_text(RunConfig& cfg, std::string_view text, const fs::path& base_dir) {
    std::istringstream in{std::string(text)};
    std::string raw;
    std::string section;
    int n = 0;
    while (std::getline(in, raw)) {
        ++n;
        std::string line = trim(strip_comment(raw));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw Error("config line " + std::to_string(n) + ": bad section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos) throw Error("config line " + std::to_string(n) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        json value = parse_value(trim(line.substr(eq + 1)), n);
        std::string qualified = section.empty() ? key : section + "." + key;
        // sections only group keys; "corpus.root" and "backend.kind" are the qualified spellings that matter
        try {
            set_key(cfg, qualified, value, base_dir, n);
        } catch (const Error&) {
            if (section.empty()) throw;
            set_key(cfg, key, value, base_dir, n);
        }
    }
}

void apply_config_file(RunConfig& cfg, const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError(file.string(), "cannot read config");
    std::ostringstream buf;
    buf << in.rdbuf();
    apply_config_text(cfg, buf.str(), file.parent_path());
}

void Console::line(const std::string& text) {
    std::lock_guard lock(mu_);
    out_ << text << '\n' << std::flush;
}

void Console::warn(const std::string& text) {
    std::lock_guard lock(mu_);
    err_ << "warning: " << text << '\n' << std::flush;
}

// ---- shared plumbing ----

namespace {

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError(p.string(), "cannot read");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

fs::path defs_file(const RunConfig& cfg) {
    return cfg.defs_path.empty() ? cfg.output_dir / "defs.json" : cfg.defs_path;
}

struct Indexed {
    DefinitionDatabase db;
    std::vector<HandlerRegistration> handlers;
};

Indexed index_and_write(const RunConfig& cfg, Console& console) {
    Indexed x;
    x.db = index_corpus(cfg.corpus, cfg.indexer);
    x.handlers = find_operation_handlers(x.db, cfg.trigger_fields, cfg.indexer);
    write_file_atomic(cfg.output_dir / "defs.json", x.db.to_json().dump(1) + "\n");
    write_file_atomic(cfg.output_dir / "handlers.json", handlers_to_json(x.handlers).dump(2) + "\n");
    for (const auto& s : x.db.skipped_files()) console.warn("skipped unreadable file " + s);
    console.line("indexed " + std::to_string(x.db.size()) + " definitions from " +
                 std::to_string(x.db.file_index().size()) + " files; " + std::to_string(x.handlers.size()) +
                 " handlers; " + std::to_string(x.db.skipped_files().size()) + " skipped");
    return x;
}

// corpus given: index it; otherwise read the database written by an earlier index
Indexed load_or_index(const RunConfig& cfg, Console& console) {
    if (!cfg.corpus.root_path.empty()) return index_and_write(cfg, console);
    fs::path defs = defs_file(cfg);
    std::error_code ec;
    if (!fs::is_regular_file(defs, ec)) throw Error("no corpus given and " + defs.string() + " does not exist");
    Indexed x;
    x.db = DefinitionDatabase::from_json(json::parse(read_text(defs)));
    x.handlers = find_operation_handlers(x.db, cfg.trigger_fields, cfg.indexer);
    return x;
}

void for_each_parallel(std::size_t n, int parallel, const std::function<void(std::size_t)>& job) {
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) job(i);
    };
    int threads = std::max(1, std::min<int>(parallel, static_cast<int>(n)));
    if (threads == 1) {
        worker();
        return;
    }
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
}

BackendConfig effective_backend(const RunConfig& cfg) {
    BackendConfig b = cfg.backend;
    // live model answers are worth keeping between runs
    if (b.cache_dir.empty() && (b.kind == BackendKind::Http || b.kind == BackendKind::Record)) {
        b.cache_dir = cfg.output_dir / "cache";
    }
    return b;
}

fs::path assets_of(const RunConfig& cfg) { return cfg.assets_dir.empty() ? default_assets_dir() : cfg.assets_dir; }

json load_report(const RunConfig& cfg) {
    fs::path p = cfg.output_dir / "report.json";
    std::error_code ec;
    if (!fs::is_regular_file(p, ec)) return json{{"schema", 1}, {"handlers", json::array()}};
    return json::parse(read_text(p));
}

void write_report(const RunConfig& cfg, json report) {
    std::size_t clean = 0;
    std::size_t failed = 0;
    for (const auto& h : report["handlers"]) {
        if (h.value("status", "") == "clean") ++clean;
        if (h.value("status", "") == "failed") ++failed;
    }
    report["summary"] = {{"handlers", report["handlers"].size()}, {"clean_specs", clean}, {"failed", failed}};
    write_file_atomic(cfg.output_dir / "report.json", report.dump(2) + "\n");
}

json state_entry(const HandlerState& s) {
    std::size_t type_defs = 0;
    if (!s.type_definitions.empty()) {
        try {
            type_defs = syz::parse_spec(s.type_definitions).types.size();
        } catch (const SyntaxError&) {
        }
    }
    json e;
    e["handler"] = s.handler;
    e["spec"] = s.spec_name.empty() ? json() : json(s.spec_name);
    e["stages_completed"] = s.stages_completed;
    e["counts"] = {{"identifiers", s.identifiers.size()},
                   {"types", s.types.size()},
                   {"type_definitions", type_defs},
                   {"dependencies", s.dependencies.size()}};
    e["consumers"] = s.consumers;
    e["unresolved"] = s.log.unresolved;
    e["notes"] = s.log.notes;
    e["usage"] = {{"queries", s.log.queries},
                  {"prompt_chars", s.log.prompt_chars},
                  {"response_chars", s.log.response_chars},
                  {"approx_tokens", (s.log.prompt_chars + s.log.response_chars) / 4}};
    if (!s.error.empty()) e["error"] = s.error;
    return e;
}

void write_spec(const fs::path& dir, const std::string& name, const syz::SpecFile& spec, const DefinitionDatabase& db) {
    write_file_atomic(dir / (name + ".txt"), syz::render_spec(spec));
    auto [resolved, errors] = resolve_constants(spec, db);
    write_file_atomic(dir / (name + ".const"), render_constants(resolved.constants));
}

int generate_with(const RunConfig& cfg, Console& console, const Indexed& x) {
    std::vector<HandlerRegistration> selected;
    std::regex filter(cfg.handler_filter.empty() ? std::string(".*") : cfg.handler_filter);
    for (const auto& h : x.handlers) {
        if (std::regex_search(h.struct_name, filter)) selected.push_back(h);
    }
    std::sort(selected.begin(), selected.end(),
              [](const auto& a, const auto& b) { return a.struct_name < b.struct_name; });

    json report{{"schema", 1}, {"handlers", json::array()}};
    if (selected.empty()) {
        console.line("0 handlers selected");
        write_report(cfg, report);
        return kExitOk;
    }

    PromptLibrary prompts(assets_of(cfg));
    BackendConfig bcfg = effective_backend(cfg);
    QueryService service(bcfg);
    PipelineContext ctx{x.db, prompts, service, x.handlers, cfg.pipeline};
    const fs::path state_dir = cfg.output_dir / "state";

    std::vector<HandlerState> states(selected.size());
    auto state_path = [&](std::size_t i) { return state_dir / (selected[i].struct_name + ".json"); };
    for (std::size_t i = 0; i < selected.size(); ++i) {
        if (cfg.resume) {
            if (auto s = load_state(state_path(i))) states[i] = std::move(*s);
        }
        states[i].handler = selected[i].struct_name;
        states[i].error.clear();
    }

    auto guarded = [&](std::size_t i, const std::function<void()>& body) {
        try {
            body();
        } catch (const Error& e) {
            states[i].error = e.what();
            console.warn(selected[i].struct_name + ": " + e.what());
            save_state(state_path(i), states[i]);
        }
    };

    for_each_parallel(selected.size(), cfg.parallel,
                      [&](std::size_t i) { guarded(i, [&] { run_handler_init(selected[i], states[i], ctx, state_path(i)); }); });

    // one spec per handler; a repeated device or socket name gets the struct name appended
    std::map<std::string, std::string> owner;
    for (std::size_t i = 0; i < selected.size(); ++i) {
        auto& s = states[i];
        if (!s.init || !s.error.empty()) continue;
        std::string name = s.init->name;
        if (owner.count(name)) {
            std::string renamed = name + "_" + sanitize_name(s.handler);
            s.log.notes.push_back("name " + name + " already used by " + owner[name] + "; spec renamed " + renamed);
            name = renamed;
        }
        owner.emplace(name, s.handler);
        if (s.spec_name != name) {
            s.spec_name = name;
            save_state(state_path(i), s);
        }
    }

    for_each_parallel(selected.size(), cfg.parallel, [&](std::size_t i) {
        if (!states[i].init || !states[i].error.empty()) return;
        guarded(i, [&] {
            run_handler_stages(selected[i], states[i], ctx, state_path(i));
            console.line(selected[i].struct_name + ": " + std::to_string(states[i].identifiers.size()) +
                         " identifiers, " + std::to_string(states[i].dependencies.size()) + " dependencies");
        });
    });

    std::map<std::string, std::string> merged_into;
    for (const auto& s : states) {
        if (!s.error.empty()) continue;
        for (const auto& c : s.consumers) merged_into.emplace(c, s.handler);
    }

    std::size_t generated = 0;
    for (std::size_t i = 0; i < selected.size(); ++i) {
        auto& s = states[i];
        json entry = state_entry(s);
        if (!s.error.empty() && merged_into.count(s.handler)) {
            entry["status"] = "merged";
            entry["merged_into"] = merged_into[s.handler];
        } else if (!s.error.empty()) {
            entry["status"] = "failed";
        } else {
            std::vector<std::string> unresolved;
            syz::SpecFile spec = assemble_from_state(s, x.db, &unresolved);
            for (const auto& u : unresolved) entry["unresolved"].push_back(u);
            write_spec(cfg.output_dir / "specs", s.spec_name, spec, x.db);
            auto errors = validate_spec(spec, x.db);
            entry["validation"] = {{"errors_before_repair", errors.size()}};
            entry["status"] = errors.empty() ? "clean" : "generated";
            ++generated;
        }
        report["handlers"].push_back(entry);
    }
    write_report(cfg, report);
    console.line("generated " + std::to_string(generated) + " of " + std::to_string(selected.size()) + " handlers");
    std::size_t merged = merged_into.size();
    return generated > 0 || merged >= selected.size() ? kExitOk : kExitFailure;
}

}  // namespace

// ---- commands ----

int cmd_index(const RunConfig& cfg, Console& console) {
    if (cfg.corpus.root_path.empty()) throw Error("index needs --corpus");
    try {
        index_and_write(cfg, console);
    } catch (const IoError& e) {
        console.warn(e.what());
        return kExitInput;
    }
    return kExitOk;
}

int cmd_handlers(const RunConfig& cfg, Console& console) {
    Indexed x = load_or_index(cfg, console);
    for (const auto& h : x.handlers) {
        std::string ops;
        for (const auto& [field, fn] : h.bound_ops) ops += " " + field + "=" + fn;
        console.line(h.struct_name + "\t" + std::string(to_string(h.kind)) + "\t" + h.file + ":" +
                     std::to_string(h.line) + "\t" + std::to_string(h.usages.size()) + " usages\t" + ops.substr(1));
    }
    return kExitOk;
}

int cmd_generate(const RunConfig& cfg, Console& console) {
    cfg.check();
    Indexed x = load_or_index(cfg, console);
    return generate_with(cfg, console, x);
}

int cmd_validate(const RunConfig& cfg, const std::vector<fs::path>& specs, Console& console,
                 const std::optional<fs::path>& report_path) {
    DefinitionDatabase db;
    std::error_code ec;
    if (!cfg.corpus.root_path.empty()) {
        db = index_corpus(cfg.corpus, cfg.indexer);
    } else if (fs::is_regular_file(defs_file(cfg), ec)) {
        db = DefinitionDatabase::from_json(json::parse(read_text(defs_file(cfg))));
    }
    std::vector<ValidationError> all;
    bool parse_failure = false;
    for (const auto& p : specs) {
        std::string text = read_text(p);
        try {
            syz::SpecFile spec = syz::parse_spec(text);
            for (auto e : validate_spec(spec, db)) {
                e.file = p.generic_string();
                all.push_back(std::move(e));
            }
        } catch (const SyntaxError& e) {
            parse_failure = true;
            all.push_back({ErrorCode::SyntaxError, e.what(), "", p.generic_string(), e.line()});
        }
    }
    std::string out = errors_to_json(all).dump(2);
    console.line(out);
    if (report_path) write_file_atomic(*report_path, out + "\n");
    if (parse_failure) return kExitInput;
    return all.empty() ? kExitOk : kExitFailure;
}

namespace {

int repair_with(const RunConfig& cfg, Console& console, const DefinitionDatabase& db) {
    json report = load_report(cfg);
    fs::path spec_dir = cfg.output_dir / "specs";
    std::vector<fs::path> files;
    std::error_code ec;
    if (fs::is_directory(spec_dir, ec)) {
        for (const auto& entry : fs::directory_iterator(spec_dir)) {
            if (entry.path().extension() == ".txt") files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());

    PromptLibrary prompts(assets_of(cfg));
    BackendConfig bcfg = effective_backend(cfg);
    QueryService service(bcfg);

    std::vector<json> results(files.size());
    std::vector<std::string> failures(files.size());
    for_each_parallel(files.size(), cfg.parallel, [&](std::size_t i) {
        std::string name = files[i].stem().string();
        try {
            syz::SpecFile spec = syz::parse_spec(read_text(files[i]));
            RepairContext rctx{db, prompts, service};
            rctx.max_rounds = cfg.max_rounds;
            rctx.token_budget = cfg.pipeline.token_budget;
            rctx.max_iter = cfg.pipeline.max_iter;
            auto [fixed, rep] = repair_spec(spec, rctx);
            write_spec(spec_dir, name, fixed, db);
            fs::path pruned = cfg.output_dir / "pruned" / (name + ".txt");
            if (!rep.pruned_text.empty()) {
                write_file_atomic(pruned, rep.pruned_text);
            } else {
                fs::remove(pruned, ec);
            }
            results[i] = to_json(rep);
            console.line(name + ": " + std::to_string(rep.fixed.size()) + " fixed, " +
                         std::to_string(rep.pruned.size()) + " pruned, " + std::to_string(rep.final_error_count) +
                         " errors left");
        } catch (const Error& e) {
            failures[i] = e.what();
            console.warn(name + ": " + e.what());
        }
    });

    std::size_t clean = 0;
    for (std::size_t i = 0; i < files.size(); ++i) {
        std::string name = files[i].stem().string();
        json* entry = nullptr;
        for (auto& h : report["handlers"]) {
            if (h.value("spec", json()).is_string() && h["spec"] == name) entry = &h;
        }
        if (!entry) {
            report["handlers"].push_back({{"handler", name}, {"spec", name}});
            entry = &report["handlers"].back();
        }
        if (!failures[i].empty()) {
            (*entry)["status"] = "failed";
            (*entry)["error"] = failures[i];
            continue;
        }
        (*entry)["repair"] = results[i];
        bool ok = results[i]["final_error_count"] == 0;
        (*entry)["status"] = ok ? "clean" : "generated";
        if (ok) ++clean;
    }
    write_report(cfg, report);
    return clean > 0 || files.empty() ? kExitOk : kExitFailure;
}

}  // namespace

int cmd_repair(const RunConfig& cfg, Console& console) {
    cfg.check();
    Indexed x = load_or_index(cfg, console);
    return repair_with(cfg, console, x.db);
}

int cmd_run(const RunConfig& cfg, Console& console) {
    cfg.check();
    if (cfg.corpus.root_path.empty()) throw Error("run needs --corpus");
    Indexed x;
    try {
        x = index_and_write(cfg, console);
    } catch (const IoError& e) {
        console.warn(e.what());
        return kExitInput;
    }
    if (x.handlers.empty()) {
        console.line("no handlers found");
        write_report(cfg, json{{"schema", 1}, {"handlers", json::array()}});
        return kExitNoHandlers;
    }
    if (!cfg.resume) {
        std::error_code ec;
        fs::remove_all(cfg.output_dir / "specs", ec);
        fs::remove_all(cfg.output_dir / "pruned", ec);
        fs::remove_all(cfg.output_dir / "state", ec);
    }
    generate_with(cfg, console, x);
    repair_with(cfg, console, x.db);

    json report = load_report(cfg);
    std::size_t clean = 0;
    for (const auto& h : report["handlers"]) {
        if (h.value("status", "") == "clean") ++clean;
    }
    console.line(std::to_string(clean) + " clean specs in " + (cfg.output_dir / "specs").generic_string());
    return clean > 0 ? kExitOk : kExitFailure;
}

int cmd_report(const RunConfig& cfg, Console& console, bool raw_json) {
    fs::path p = cfg.output_dir / "report.json";
    std::error_code ec;
    if (!fs::is_regular_file(p, ec)) throw Error(p.string() + " does not exist");
    json report = json::parse(read_text(p));
    if (raw_json) {
        console.line(report.dump(2));
        return kExitOk;
    }
    for (const auto& h : report["handlers"]) {
        std::string line = h.value("handler", "?") + "\t" + h.value("status", "?");
        if (h.contains("spec") && h["spec"].is_string()) line += "\tspec=" + h["spec"].get<std::string>();
        if (h.contains("counts")) {
            line += "\tidentifiers=" + std::to_string(h["counts"].value("identifiers", 0)) +
                    " types=" + std::to_string(h["counts"].value("type_definitions", 0)) +
                    " deps=" + std::to_string(h["counts"].value("dependencies", 0));
        }
        if (h.contains("repair")) {
            line += "\tfixed=" + std::to_string(h["repair"]["fixed"].size()) +
                    " pruned=" + std::to_string(h["repair"]["pruned"].size());
        }
        if (h.contains("merged_into")) line += "\tmerged into " + h["merged_into"].get<std::string>();
        if (h.contains("error")) line += "\t" + h["error"].get<std::string>();
        console.line(line);
    }
    if (report.contains("summary")) console.line("summary: " + report["summary"].dump());
    return kExitOk;
}

}  // namespace speckernel
