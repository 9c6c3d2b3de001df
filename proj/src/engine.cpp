#include "speckernel/engine.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "speckernel/c_lexer.hpp"
#include "speckernel/errors.hpp"

#ifndef SPECKERNEL_ASSETS_DIR
#define SPECKERNEL_ASSETS_DIR "assets"
#endif

namespace speckernel {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::array<Stage, 6> kStages = {Stage::HandlerInit,        Stage::IdentifierDeduction,
                                          Stage::TypeRecovery,       Stage::DependencyAnalysis,
                                          Stage::TypeDefinition,     Stage::Repair};

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError(p.string(), "open failed");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
}

}  // namespace

std::string_view to_string(Stage stage) {
    switch (stage) {
    case Stage::HandlerInit: return "HandlerInit";
    case Stage::IdentifierDeduction: return "IdentifierDeduction";
    case Stage::TypeRecovery: return "TypeRecovery";
    case Stage::DependencyAnalysis: return "DependencyAnalysis";
    case Stage::TypeDefinition: return "TypeDefinition";
    case Stage::Repair: return "Repair";
    }
    return "HandlerInit";
}

std::string_view asset_name(Stage stage) {
    switch (stage) {
    case Stage::HandlerInit: return "handler_init";
    case Stage::IdentifierDeduction: return "identifier_deduction";
    case Stage::TypeRecovery: return "type_recovery";
    case Stage::DependencyAnalysis: return "dependency_analysis";
    case Stage::TypeDefinition: return "type_definition";
    case Stage::Repair: return "repair";
    }
    return "handler_init";
}

std::optional<Stage> stage_from_string(std::string_view s) {
    for (auto st : kStages) {
        if (to_string(st) == s || asset_name(st) == s) return st;
    }
    return std::nullopt;
}

PromptAsset parse_prompt_asset(std::string_view text) {
    PromptAsset asset;
    std::string section;
    std::string current_example_part;
    std::string buf;
    FewShotExample example;
    bool has_input = false;

    auto flush_example_part = [&] {
        if (current_example_part == "INPUT") {
            example.input = trim(buf);
            has_input = true;
        } else if (current_example_part == "OUTPUT" && has_input) {
            example.output = trim(buf);
            asset.examples.push_back(example);
            example = {};
            has_input = false;
        }
        buf.clear();
    };
    auto flush_section = [&] {
        if (section == "SYSTEM") asset.system = trim(buf);
        if (section == "TEMPLATE") asset.templ = trim(buf);
        if (section == "EXAMPLES") flush_example_part();
        buf.clear();
        current_example_part.clear();
    };

    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.rfind("=== ", 0) == 0 && line.size() > 8 && line.substr(line.size() - 4) == " ===") {
            flush_section();
            section = line.substr(4, line.size() - 8);
            continue;
        }
        if (section == "EXAMPLES" && line.rfind("--- ", 0) == 0 && line.size() > 8 &&
            line.substr(line.size() - 4) == " ---") {
            flush_example_part();
            current_example_part = line.substr(4, line.size() - 8);
            continue;
        }
        buf += line + "\n";
    }
    flush_section();
    return asset;
}

PromptLibrary::PromptLibrary(fs::path dir) : dir_(std::move(dir)) {}

const PromptAsset& PromptLibrary::get(Stage stage) const {
    std::lock_guard lock(mu_);
    if (auto it = cache_.find(stage); it != cache_.end()) return it->second;
    fs::path file = dir_ / "prompts" / (std::string(asset_name(stage)) + ".md");
    std::error_code ec;
    if (!fs::is_regular_file(file, ec)) throw AssetMissing(std::string(asset_name(stage)));
    auto [it, _] = cache_.emplace(stage, parse_prompt_asset(read_file(file)));
    return it->second;
}

fs::path default_assets_dir() {
    if (const char* env = std::getenv("SPECKERNEL_ASSETS"); env && *env) return env;
    return SPECKERNEL_ASSETS_DIR;
}

std::string format_definition(const Definition& d) {
    return "// " + d.file + ":" + std::to_string(d.lines.start) + "-" + std::to_string(d.lines.end) + " (" +
           std::string(to_string(d.kind)) + " " + d.name + ")\n" + d.text;
}

std::vector<std::string> related_code_for(const DefinitionDatabase& db, std::string_view identifier) {
    std::vector<std::string> out;
    for (const auto& d : extract_code(db, identifier)) out.push_back(format_definition(d));
    return out;
}

namespace {

std::string render_examples(const std::vector<FewShotExample>& examples) {
    std::string out;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        out += "## Example " + std::to_string(i + 1) + "\n### Input\n" + examples[i].input + "\n### Output\n" +
               examples[i].output + "\n\n";
    }
    return out;
}

std::string render_blocks(const std::vector<std::string>& blocks, std::string_view empty) {
    if (blocks.empty()) return std::string(empty);
    std::string out;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        if (i) out += "\n\n";
        out += "```\n" + blocks[i] + "\n```";
    }
    return out;
}

std::string fill(const PromptAsset& asset, std::string_view target, const std::vector<std::string>& code,
                 const std::vector<std::string>& usage, const std::optional<std::string>& prior) {
    std::string body = asset.templ;
    replace_all(body, "{{target}}", target);
    replace_all(body, "{{prior_findings}}", prior ? *prior : "none");
    replace_all(body, "{{related_code}}", render_blocks(code, "(no code available)"));
    replace_all(body, "{{usage_info}}", render_blocks(usage, "(no usage information)"));
    std::string examples = render_examples(asset.examples);
    return examples.empty() ? body : "# Examples\n\n" + examples + "# Task\n\n" + body;
}

}  // namespace

Prompt gen_prompt(const PromptLibrary& library, Stage stage, std::string_view target,
                  const std::vector<std::string>& related_code, const std::vector<std::string>& usage_info,
                  const std::optional<std::string>& prior_findings, std::size_t token_budget) {
    const PromptAsset& asset = library.get(stage);
    Prompt p;
    p.stage = stage;
    p.target = std::string(target);
    p.system_text = asset.system;
    p.few_shot_examples = asset.examples;
    p.related_code = related_code;
    p.usage_info = usage_info;
    p.prior_findings = prior_findings;

    const std::size_t limit = token_budget * 4;  // budget units are characters / 4
    auto total = [&](const std::string& text) { return p.system_text.size() + 2 + text.size(); };
    p.text = fill(asset, target, p.related_code, p.usage_info, p.prior_findings);
    // shrink the longest code block until the prompt fits
    while (total(p.text) > limit) {
        std::string* longest = nullptr;
        for (auto* blocks : {&p.related_code, &p.usage_info}) {
            for (auto& b : *blocks) {
                if (!longest || b.size() > longest->size()) longest = &b;
            }
        }
        const std::size_t marker = kTruncationMarker.size() + 1;
        if (!longest || longest->size() <= marker) break;
        std::size_t excess = total(p.text) - limit;
        std::size_t keep = longest->size() > excess + marker ? longest->size() - excess - marker : 0;
        // cut at most half of a block per pass so other long blocks share the loss
        keep = std::max(keep, longest->size() / 2 > marker ? std::min(longest->size() / 2, longest->size() - marker)
                                                           : std::size_t{0});
        if (keep + marker >= longest->size()) keep = longest->size() > 2 * marker ? longest->size() - 2 * marker : 0;
        *longest = longest->substr(0, keep) + "\n" + std::string(kTruncationMarker);
        p.text = fill(asset, target, p.related_code, p.usage_info, p.prior_findings);
    }
    if (total(p.text) > limit) {
        std::size_t room = limit > p.system_text.size() + 2 + kTruncationMarker.size() + 1
                               ? limit - p.system_text.size() - 2 - kTruncationMarker.size() - 1
                               : 0;
        p.text = p.text.substr(0, room) + "\n" + std::string(kTruncationMarker);
    }
    return p;
}

AnalysisResponse parse_envelope(std::string_view raw) {
    std::string text(raw);
    // tolerate a fenced ```json block around the object
    if (auto fence = text.find("```"); fence != std::string::npos) {
        auto body_start = text.find('\n', fence);
        auto close = body_start == std::string::npos ? std::string::npos : text.find("```", body_start);
        if (close != std::string::npos) text = text.substr(body_start + 1, close - body_start - 1);
    }
    json j;
    try {
        j = json::parse(trim(text));
    } catch (const json::parse_error& e) {
        throw MalformedResponse(std::string(raw), std::string("not a JSON object: ") + e.what());
    }
    if (!j.is_object()) throw MalformedResponse(std::string(raw), "top level is not an object");
    if (!j.contains("result")) throw MalformedResponse(std::string(raw), "missing \"result\"");
    if (!j.contains("unknowns") || !j["unknowns"].is_array()) {
        throw MalformedResponse(std::string(raw), "missing \"unknowns\" array");
    }
    AnalysisResponse r;
    r.result = j["result"];
    r.raw_text = std::string(raw);
    std::set<std::string> seen;
    for (const auto& u : j["unknowns"]) {
        if (!u.is_object() || !u.contains("identifier") || !u["identifier"].is_string()) {
            throw MalformedResponse(std::string(raw), "unknown entry without identifier");
        }
        UnknownTarget t;
        t.identifier = u["identifier"].get<std::string>();
        if (!c::is_identifier(t.identifier)) {
            throw MalformedResponse(std::string(raw), "unknown identifier '" + t.identifier + "' is not a C identifier");
        }
        std::string kind = u.value("kind", "Function");
        if (kind == "Function" || kind == "function") {
            t.kind = UnknownKind::Function;
        } else if (kind == "Type" || kind == "type") {
            t.kind = UnknownKind::Type;
        } else {
            throw MalformedResponse(std::string(raw), "unknown kind '" + kind + "'");
        }
        if (u.contains("usage_info") && !u["usage_info"].is_string()) {
            throw MalformedResponse(std::string(raw), "usage_info is not a string");
        }
        t.usage_info = u.value("usage_info", "");
        if (seen.insert(t.identifier).second) r.unknowns.push_back(std::move(t));
    }
    return r;
}

std::optional<BackendKind> backend_kind_from_string(std::string_view s) {
    if (s == "http") return BackendKind::Http;
    if (s == "replay") return BackendKind::Replay;
    if (s == "record") return BackendKind::Record;
    if (s == "scripted") return BackendKind::Scripted;
    return std::nullopt;
}

void BackendConfig::check() const {
    if (temperature < 0 || temperature > 2) throw Error("temperature must be within [0, 2]");
    if (max_retries < 0) throw Error("max_retries must be non-negative");
    if ((kind == BackendKind::Replay || kind == BackendKind::Record) && transcript_dir.empty()) {
        throw Error("replay and record backends require a transcript directory");
    }
    if (kind == BackendKind::Scripted && script_path.empty()) throw Error("scripted backend requires a script file");
}

std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += kHex[digest[i] >> 4];
        out += kHex[digest[i] & 0xf];
    }
    return out;
}

std::string conversation_text(const std::vector<Message>& messages) {
    std::string out;
    for (const auto& m : messages) out += "[" + m.role + "]\n" + m.content + "\n";
    return out;
}

std::string cache_key(Stage stage, const BackendConfig& cfg, const std::vector<Message>& messages) {
    std::ostringstream temp;
    temp << cfg.temperature;
    return sha256_hex(std::string(to_string(stage)) + "\n" + cfg.model_name + "\n" + temp.str() + "\n" +
                      conversation_text(messages));
}

namespace {

// write-then-rename so concurrent readers never observe partial files
void atomic_write(const fs::path& path, const std::string& data) {
    fs::create_directories(path.parent_path());
    static std::atomic<unsigned> counter{0};
    fs::path tmp = path;
    tmp += ".tmp" + std::to_string(counter++);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError(tmp.string(), "cannot write");
        out << data;
    }
    fs::rename(tmp, path);
}

std::optional<std::string> read_transcript(const fs::path& dir, const std::string& key) {
    fs::path file = dir / (key + ".json");
    std::error_code ec;
    if (!fs::is_regular_file(file, ec)) return std::nullopt;
    json j = json::parse(read_file(file));
    return j.at("response").get<std::string>();
}

void write_transcript(const fs::path& dir, const std::string& key, const std::vector<Message>& messages,
                      const std::string& response) {
    json j{{"prompt", conversation_text(messages)}, {"response", response}};
    atomic_write(dir / (key + ".json"), j.dump(2) + "\n");
}

}  // namespace

ReplayBackend::ReplayBackend(fs::path dir) : dir_(std::move(dir)) {}

std::string ReplayBackend::complete(Stage, const std::vector<Message>&, const std::string& key) {
    if (auto r = read_transcript(dir_, key)) return *r;
    throw ReplayMiss(key);
}

RecordBackend::RecordBackend(std::unique_ptr<ModelBackend> inner, fs::path dir)
    : inner_(std::move(inner)), dir_(std::move(dir)) {}

std::string RecordBackend::complete(Stage stage, const std::vector<Message>& messages, const std::string& key) {
    std::string response = inner_->complete(stage, messages, key);
    write_transcript(dir_, key, messages, response);
    return response;
}

ScriptedBackend::ScriptedBackend(json rules) {
    const json& list = rules.is_object() ? rules.at("rules") : rules;
    for (const auto& r : list) {
        Rule rule;
        if (r.contains("stage")) {
            rule.stage = stage_from_string(r["stage"].get<std::string>());
            if (!rule.stage) throw Error("scripted rule has unknown stage " + r["stage"].dump());
        }
        auto strings = [&](const char* key) {
            std::vector<std::string> out;
            if (!r.contains(key)) return out;
            if (r[key].is_string()) {
                out.push_back(r[key].get<std::string>());
            } else {
                out = r[key].get<std::vector<std::string>>();
            }
            return out;
        };
        rule.contains = strings("contains");
        rule.excludes = strings("excludes");
        const json& resp = r.at("response");
        rule.response = resp.is_string() ? resp.get<std::string>() : resp.dump();
        rule.uses_left = r.value("uses", -1);
        rules_.push_back(std::move(rule));
    }
}

std::unique_ptr<ScriptedBackend> ScriptedBackend::from_file(const fs::path& path) {
    return std::make_unique<ScriptedBackend>(json::parse(read_file(path)));
}

std::string ScriptedBackend::complete(Stage stage, const std::vector<Message>& messages, const std::string& key) {
    std::string text = conversation_text(messages);
    std::lock_guard lock(mu_);
    for (auto& rule : rules_) {
        if (rule.uses_left == 0) continue;
        if (rule.stage && *rule.stage != stage) continue;
        bool match = std::all_of(rule.contains.begin(), rule.contains.end(),
                                 [&](const std::string& s) { return text.find(s) != std::string::npos; }) &&
                     std::none_of(rule.excludes.begin(), rule.excludes.end(),
                                  [&](const std::string& s) { return text.find(s) != std::string::npos; });
        if (!match) continue;
        if (rule.uses_left > 0) --rule.uses_left;
        return rule.response;
    }
    throw ReplayMiss(key);
}

std::unique_ptr<ModelBackend> make_backend(const BackendConfig& cfg) {
    cfg.check();
    switch (cfg.kind) {
    case BackendKind::Replay: return std::make_unique<ReplayBackend>(cfg.transcript_dir);
    case BackendKind::Scripted: return ScriptedBackend::from_file(cfg.script_path);
    case BackendKind::Record: {
        std::unique_ptr<ModelBackend> inner;
        if (!cfg.script_path.empty()) {
            inner = ScriptedBackend::from_file(cfg.script_path);
        } else {
            inner = std::make_unique<HttpBackend>(cfg);
        }
        return std::make_unique<RecordBackend>(std::move(inner), cfg.transcript_dir);
    }
    case BackendKind::Http: return std::make_unique<HttpBackend>(cfg);
    }
    throw Error("unsupported backend");
}

QueryService::QueryService(BackendConfig cfg, std::unique_ptr<ModelBackend> backend)
    : cfg_(std::move(cfg)), backend_(std::move(backend)) {}

std::string QueryService::ask(Stage stage, const std::vector<Message>& messages) {
    std::string key = cache_key(stage, cfg_, messages);
    {
        std::lock_guard lock(mu_);
        if (auto it = memory_cache_.find(key); it != memory_cache_.end()) {
            ++cache_hits_;
            return it->second;
        }
    }
    if (!cfg_.cache_dir.empty()) {
        if (auto r = read_transcript(cfg_.cache_dir, key)) {
            ++cache_hits_;
            std::lock_guard lock(mu_);
            memory_cache_.emplace(key, *r);
            return *r;
        }
    }
    ++backend_queries_;
    prompt_chars_ += conversation_text(messages).size();
    std::string raw = backend_->complete(stage, messages, key);
    response_chars_ += raw.size();
    if (!cfg_.cache_dir.empty()) write_transcript(cfg_.cache_dir, key, messages, raw);
    std::lock_guard lock(mu_);
    memory_cache_.emplace(key, raw);
    return raw;
}

AnalysisResponse QueryService::query(const Prompt& prompt) {
    std::vector<Message> messages{{"system", prompt.system_text}, {"user", prompt.text}};
    for (int attempt = 0;; ++attempt) {
        std::string raw = ask(prompt.stage, messages);
        try {
            return parse_envelope(raw);
        } catch (const MalformedResponse& e) {
            if (attempt >= cfg_.max_retries) throw;
            messages.push_back({"assistant", raw});
            messages.push_back({"user", std::string("Your previous answer could not be parsed (") + e.what() +
                                            "). Reformat your answer as a single JSON object of the form "
                                            "{\"result\": ..., \"unknowns\": [...]} with no other text."});
        }
    }
}

AnalysisResponse query_backend(const Prompt& prompt, QueryService& service) { return service.query(prompt); }

void update_result(json& parent, const json& child) {
    if (child.is_null()) return;
    if (parent.is_null()) {
        parent = child;
        return;
    }
    if (parent.is_object() && child.is_object()) {
        for (const auto& [key, value] : child.items()) {
            if (parent.contains(key)) {
                update_result(parent[key], value);
            } else {
                parent[key] = value;
            }
        }
        return;
    }
    if (parent.is_array() && child.is_array()) {
        for (const auto& v : child) {
            if (std::find(parent.begin(), parent.end(), v) == parent.end()) parent.push_back(v);
        }
    }
    // scalars and mismatched shapes: the parent's value wins
}

json analyze(const std::vector<std::string>& related_code, const std::vector<std::string>& usage_info, int step,
             Stage stage, AnalysisContext& ctx, std::string_view target,
             const std::optional<std::string>& prior_findings) {
    if (step > ctx.max_iter) return json();
    Prompt prompt = gen_prompt(ctx.prompts, stage, target, related_code, usage_info, prior_findings, ctx.token_budget);
    AnalysisResponse response;
    ++ctx.queries;
    try {
        response = ctx.service.query(prompt);
        ctx.prompt_chars += prompt.system_text.size() + prompt.text.size();
        ctx.response_chars += response.raw_text.size();
    } catch (const MalformedResponse& e) {
        ctx.notes.push_back(std::string(to_string(stage)) + " step " + std::to_string(step) + " on " +
                            std::string(target) + ": " + e.what() + "; step contributes nothing");
        return json();
    }
    json result = response.result;
    std::size_t followed = 0;
    for (const auto& unknown : response.unknowns) {
        if (ctx.visited.count(unknown.identifier)) continue;
        if (followed == ctx.unknown_cap) {
            ctx.notes.push_back("unknown " + unknown.identifier + " not followed: fan-out cap " +
                                std::to_string(ctx.unknown_cap) + " reached");
            continue;
        }
        ++followed;
        ctx.visited.insert(unknown.identifier);
        auto code = related_code_for(ctx.db, unknown.identifier);
        if (code.empty()) ctx.notes.push_back("definition not found: " + unknown.identifier);
        std::vector<std::string> usage;
        if (!unknown.usage_info.empty()) usage.push_back(unknown.usage_info);
        json child = analyze(code, usage, step + 1, stage, ctx, unknown.identifier, prior_findings);
        update_result(result, child);
    }
    return result;
}

}  // namespace speckernel
