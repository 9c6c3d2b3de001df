#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "speckernel/engine.hpp"
#include "speckernel/errors.hpp"
#include "speckernel/indexer.hpp"
#include "speckernel/syzlang.hpp"

namespace speckernel {

class UnresolvedHandlerInit : public Error {
public:
    explicit UnresolvedHandlerInit(const std::string& handler)
        : Error("cannot infer device or socket for handler " + handler) {}
};

struct HandlerInitSpec {
    enum class Shape { Driver, Socket };
    Shape shape = Shape::Driver;
    std::string device_path;   // "/dev/mapper/control"
    std::string init_syscall;  // openat, syz_open_dev or socket
    std::string domain;        // socket triple, constant names or literals
    std::string type;
    std::string protocol;
    std::string name;           // sanitized, drives variant and resource names
    std::string resource_name;  // fd_<name> or sock_<name>

    bool operator==(const HandlerInitSpec&) const = default;
};

struct IdentifierFinding {
    std::string const_name;
    std::string handling_function;
    std::string usage_info;
    bool modified = false;
    std::string syscall = "ioctl";  // ioctl, setsockopt or getsockopt
    std::string level;              // sockopt level constant, when given
    std::string handler;            // struct that dispatches this command
    std::string resource;           // resource consumed as the first argument

    bool operator==(const IdentifierFinding&) const = default;
};

struct TypeFinding {
    std::string identifier;  // const_name of the finding
    std::string arg_type;    // rendered TypeExpr; empty when unresolved
    std::vector<std::string> pending_types;
    std::string syscall = "ioctl";

    bool operator==(const TypeFinding&) const = default;
};

struct TypeDefinitions {
    std::vector<syz::ResourceDecl> resources;  // handle types declared alongside structs
    std::vector<syz::TypeDef> types;
    std::vector<syz::FlagSet> flag_sets;
};

struct DependencyFinding {
    std::string producer_syscall;  // e.g. ioctl$kvm_create_vm
    std::string producer_const;
    std::string resource_name;
    std::vector<std::string> consumer_handlers;

    bool operator==(const DependencyFinding&) const = default;
};

struct PipelineConfig {
    int max_iter = 5;
    std::size_t unknown_cap = 8;
    std::size_t token_budget = kDefaultTokenBudget;
    int max_consumer_depth = 4;  // handler chains followed through dependencies
};

// Notes, unresolved items and usage gathered while running stages.
struct StageLog {
    std::vector<std::string> notes;
    std::vector<std::string> unresolved;
    std::size_t queries = 0;
    std::size_t prompt_chars = 0;
    std::size_t response_chars = 0;
};

struct PipelineContext {
    const DefinitionDatabase& db;
    const PromptLibrary& prompts;
    QueryService& service;
    std::vector<HandlerRegistration> handlers;  // every known handler, for dependency consumers
    PipelineConfig cfg;

    const HandlerRegistration* find_handler(std::string_view struct_name) const;
};

// Lowercase, non-alphanumerics folded to '_'.
std::string sanitize_name(std::string_view s);

HandlerInitSpec infer_handler_init(const HandlerRegistration& handler, PipelineContext& ctx, StageLog& log);
// Builds the init spec from a HandlerInit result object; nullopt when it names nothing usable.
std::optional<HandlerInitSpec> handler_init_from_result(const nlohmann::json& result);

// return_relevant receives the functions the model marked as producing resources.
std::vector<IdentifierFinding> deduce_identifiers(const HandlerRegistration& handler, const HandlerInitSpec& init,
                                                  PipelineContext& ctx, StageLog& log,
                                                  std::vector<std::string>* return_relevant = nullptr);

std::pair<std::vector<TypeFinding>, TypeDefinitions> recover_types(const std::vector<IdentifierFinding>& findings,
                                                                   PipelineContext& ctx, StageLog& log);

std::vector<DependencyFinding> analyze_dependencies(const HandlerRegistration& handler, const HandlerInitSpec& init,
                                                    const std::vector<IdentifierFinding>& findings,
                                                    const std::vector<std::string>& return_relevant,
                                                    PipelineContext& ctx, StageLog& log);

// Arguments naming undefined types fall back to ptr[in, array[int8]]; such names land in unresolved.
syz::SpecFile assemble_spec(const HandlerInitSpec& init, const std::vector<IdentifierFinding>& identifiers,
                            const std::vector<TypeFinding>& types, const TypeDefinitions& defs,
                            const std::vector<DependencyFinding>& dependencies, const DefinitionDatabase& db,
                            std::vector<std::string>* unresolved = nullptr);

// Everything known about one handler; persisted as state/<handler>.json.
struct HandlerState {
    std::string handler;
    std::vector<std::string> stages_completed;
    std::optional<HandlerInitSpec> init;
    std::string spec_name;  // init name, disambiguated on collisions
    std::vector<IdentifierFinding> identifiers;
    std::vector<std::string> return_relevant;
    std::vector<TypeFinding> types;
    std::string type_definitions;  // rendered syzlang
    std::vector<DependencyFinding> dependencies;
    std::vector<std::string> consumers;  // handlers merged into this spec
    StageLog log;
    std::string error;

    bool completed(std::string_view stage) const;
};

nlohmann::json to_json(const HandlerState& s);
HandlerState handler_state_from_json(const nlohmann::json& j);

// Runs the stages not yet in state.stages_completed, saving state after each when state_file is set.
// HandlerInit must already be done (see run_handler_init) so names can be disambiguated first.
void run_handler_stages(const HandlerRegistration& handler, HandlerState& state, PipelineContext& ctx,
                        const std::optional<std::filesystem::path>& state_file);
void run_handler_init(const HandlerRegistration& handler, HandlerState& state, PipelineContext& ctx,
                      const std::optional<std::filesystem::path>& state_file);

syz::SpecFile assemble_from_state(const HandlerState& state, const DefinitionDatabase& db,
                                  std::vector<std::string>* unresolved = nullptr);

void save_state(const std::filesystem::path& file, const HandlerState& state);
std::optional<HandlerState> load_state(const std::filesystem::path& file);

// Atomic text write (temp file + rename).
void write_file_atomic(const std::filesystem::path& path, const std::string& data);

}  // namespace speckernel
