#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "speckernel/indexer.hpp"

namespace speckernel {

enum class Stage { HandlerInit, IdentifierDeduction, TypeRecovery, DependencyAnalysis, TypeDefinition, Repair };

std::string_view to_string(Stage stage);       // "IdentifierDeduction"
std::string_view asset_name(Stage stage);      // "identifier_deduction"
std::optional<Stage> stage_from_string(std::string_view s);  // accepts either spelling

struct FewShotExample {
    std::string input;
    std::string output;
};

// Versioned prompt material for one stage, loaded from assets/prompts/<stage>.md.
struct PromptAsset {
    std::string system;
    std::vector<FewShotExample> examples;
    std::string templ;
};

// Parses the SYSTEM / EXAMPLES / TEMPLATE sections of an asset file.
PromptAsset parse_prompt_asset(std::string_view text);

class PromptLibrary {
public:
    explicit PromptLibrary(std::filesystem::path dir);
    // Throws AssetMissing when the stage file does not exist.
    const PromptAsset& get(Stage stage) const;
    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
    mutable std::mutex mu_;
    mutable std::map<Stage, PromptAsset> cache_;
};

// Default asset directory: $SPECKERNEL_ASSETS, else the source-tree assets/.
std::filesystem::path default_assets_dir();

struct Prompt {
    Stage stage = Stage::IdentifierDeduction;
    std::string target;  // identifier under analysis
    std::string system_text;
    std::vector<FewShotExample> few_shot_examples;
    std::vector<std::string> related_code;
    std::vector<std::string> usage_info;
    std::optional<std::string> prior_findings;
    std::string text;  // fully rendered user message
};

inline constexpr std::size_t kDefaultTokenBudget = 24000;
inline constexpr std::string_view kTruncationMarker = "[... truncated ...]";

// Code block with a location header, as shown to the model.
std::string format_definition(const Definition& d);

Prompt gen_prompt(const PromptLibrary& library, Stage stage, std::string_view target,
                  const std::vector<std::string>& related_code, const std::vector<std::string>& usage_info,
                  const std::optional<std::string>& prior_findings, std::size_t token_budget = kDefaultTokenBudget);

enum class UnknownKind { Function, Type };

struct UnknownTarget {
    std::string identifier;
    UnknownKind kind = UnknownKind::Function;
    std::string usage_info;
    bool operator==(const UnknownTarget&) const = default;
};

struct AnalysisResponse {
    nlohmann::json result;
    std::vector<UnknownTarget> unknowns;
    std::string raw_text;
};

// Throws MalformedResponse unless raw is exactly one {"result", "unknowns"} envelope.
AnalysisResponse parse_envelope(std::string_view raw);

enum class BackendKind { Http, Replay, Record, Scripted };
std::optional<BackendKind> backend_kind_from_string(std::string_view s);

struct BackendConfig {
    BackendKind kind = BackendKind::Replay;
    std::string endpoint_url = "https://api.openai.com/v1/chat/completions";
    std::string model_name = "gpt-4";
    double temperature = 0.1;
    int max_retries = 3;
    std::filesystem::path cache_dir;       // persistent response cache; empty disables
    std::filesystem::path transcript_dir;  // Replay source / Record destination
    std::filesystem::path script_path;     // Scripted rules; also the inner model for Record when set
    int max_in_flight = 4;
    double requests_per_second = 0;  // 0 = unlimited

    void check() const;  // throws Error on invalid settings
};

struct Message {
    std::string role;
    std::string content;
};

std::string sha256_hex(std::string_view data);
std::string conversation_text(const std::vector<Message>& messages);
std::string cache_key(Stage stage, const BackendConfig& cfg, const std::vector<Message>& messages);

class ModelBackend {
public:
    virtual ~ModelBackend() = default;
    virtual std::string complete(Stage stage, const std::vector<Message>& messages, const std::string& key) = 0;
};

// Answers from `<key>.json` files holding {"prompt", "response"}; throws ReplayMiss.
class ReplayBackend : public ModelBackend {
public:
    explicit ReplayBackend(std::filesystem::path dir);
    std::string complete(Stage stage, const std::vector<Message>& messages, const std::string& key) override;

private:
    std::filesystem::path dir_;
};

// Forwards to an inner backend and persists every exchange as a transcript file.
class RecordBackend : public ModelBackend {
public:
    RecordBackend(std::unique_ptr<ModelBackend> inner, std::filesystem::path dir);
    std::string complete(Stage stage, const std::vector<Message>& messages, const std::string& key) override;

private:
    std::unique_ptr<ModelBackend> inner_;
    std::filesystem::path dir_;
};

// Rule-driven stand-in for a model. Each rule matches on stage and substrings of the
// conversation; rules with "uses" are consumed in order, which scripts retry sequences.
class ScriptedBackend : public ModelBackend {
public:
    explicit ScriptedBackend(nlohmann::json rules);
    static std::unique_ptr<ScriptedBackend> from_file(const std::filesystem::path& path);
    std::string complete(Stage stage, const std::vector<Message>& messages, const std::string& key) override;

private:
    struct Rule {
        std::optional<Stage> stage;
        std::vector<std::string> contains;
        std::vector<std::string> excludes;
        std::string response;
        int uses_left = -1;  // -1 = unlimited
    };
    std::mutex mu_;
    std::vector<Rule> rules_;
};

// POSTs chat-completion requests; API key from SPECKERNEL_API_KEY.
class HttpBackend : public ModelBackend {
public:
    explicit HttpBackend(const BackendConfig& cfg);
    ~HttpBackend() override;
    std::string complete(Stage stage, const std::vector<Message>& messages, const std::string& key) override;

private:
    struct Limits;
    BackendConfig cfg_;
    std::unique_ptr<Limits> limits_;
};

std::unique_ptr<ModelBackend> make_backend(const BackendConfig& cfg);

// Cache-fronted, retrying query front end shared by all stages. Thread-safe.
class QueryService {
public:
    QueryService(BackendConfig cfg, std::unique_ptr<ModelBackend> backend);
    explicit QueryService(const BackendConfig& cfg) : QueryService(cfg, make_backend(cfg)) {}

    AnalysisResponse query(const Prompt& prompt);

    const BackendConfig& config() const { return cfg_; }
    std::size_t backend_queries() const { return backend_queries_; }
    std::size_t cache_hits() const { return cache_hits_; }
    std::size_t prompt_chars() const { return prompt_chars_; }
    std::size_t response_chars() const { return response_chars_; }

private:
    std::string ask(Stage stage, const std::vector<Message>& messages);

    BackendConfig cfg_;
    std::unique_ptr<ModelBackend> backend_;
    std::mutex mu_;
    std::map<std::string, std::string> memory_cache_;
    std::atomic<std::size_t> backend_queries_{0};
    std::atomic<std::size_t> cache_hits_{0};
    std::atomic<std::size_t> prompt_chars_{0};
    std::atomic<std::size_t> response_chars_{0};
};

AnalysisResponse query_backend(const Prompt& prompt, QueryService& service);

struct AnalysisContext {
    const DefinitionDatabase& db;
    const PromptLibrary& prompts;
    QueryService& service;
    int max_iter = 5;
    std::size_t unknown_cap = 8;
    std::size_t token_budget = kDefaultTokenBudget;
    std::set<std::string> visited;
    std::vector<std::string> notes;
    std::size_t queries = 0;  // queries issued through this context
    std::size_t prompt_chars = 0;
    std::size_t response_chars = 0;
};

// Merges a child step's result into its parent: arrays are unioned in order,
// objects merged key-wise, scalars keep the parent's value unless it is null.
void update_result(nlohmann::json& parent, const nlohmann::json& child);

// Bounded recursive analysis. Returns a null json when step exceeds max_iter.
// The caller seeds ctx.visited with the root identifier.
nlohmann::json analyze(const std::vector<std::string>& related_code, const std::vector<std::string>& usage_info,
                       int step, Stage stage, AnalysisContext& ctx, std::string_view target,
                       const std::optional<std::string>& prior_findings = std::nullopt);

// Definition texts for an identifier, formatted for prompts.
std::vector<std::string> related_code_for(const DefinitionDatabase& db, std::string_view identifier);

}  // namespace speckernel
