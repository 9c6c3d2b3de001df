#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "speckernel/engine.hpp"
#include "speckernel/indexer.hpp"
#include "speckernel/syzlang.hpp"
#include "speckernel/validator.hpp"

namespace speckernel {

struct RepairTask {
    std::string target;
    std::string current_text;
    std::vector<ValidationError> errors;
    std::vector<std::string> related_code;
    int round = 1;
};

struct RepairReport {
    std::vector<std::pair<std::string, int>> fixed;  // target, rounds used
    std::vector<std::pair<std::string, std::vector<ValidationError>>> pruned;
    std::size_t final_error_count = 0;
    std::size_t queries = 0;
    std::vector<std::string> notes;
    std::string pruned_text;  // verbatim pruned declarations, for out/pruned/<handler>.txt

    bool empty() const { return fixed.empty() && pruned.empty(); }
};

nlohmann::json to_json(const RepairReport& r);

struct RepairContext {
    const DefinitionDatabase& db;
    const PromptLibrary& prompts;
    QueryService& service;
    ValidatorConfig validator;
    int max_rounds = 3;
    int max_iter = 5;
    std::size_t token_budget = kDefaultTokenBudget;
    std::size_t queries = 0;
    std::vector<std::string> notes;
};

// Groups errors by target; unattributed syntax errors are placed by line using layout().
std::map<std::string, std::vector<ValidationError>> match_errors(const syz::SpecFile& spec,
                                                                  const std::vector<ValidationError>& errors);

// C source relevant to a declaration: its command constant, handling code, or the same-named C type.
std::vector<std::string> related_code_for_target(const syz::SpecFile& spec, std::string_view target,
                                                 const DefinitionDatabase& db);

// The model's replacement for task.target plus any helper declarations it introduced.
// nullopt when the answer does not contain a usable replacement.
std::optional<syz::SpecFile> repair_description(const RepairTask& task, RepairContext& ctx);

// Swaps in the replacement for target; new helper declarations are appended.
// Returns false when the replacement does not define target.
bool substitute_declaration(syz::SpecFile& spec, std::string_view target, const syz::SpecFile& replacement);

// Removes target and, transitively, every declaration referencing a removed name.
std::vector<std::string> prune_declaration(syz::SpecFile& spec, std::string_view target);

std::pair<syz::SpecFile, RepairReport> repair_spec(const syz::SpecFile& spec, RepairContext& ctx);

}  // namespace speckernel
