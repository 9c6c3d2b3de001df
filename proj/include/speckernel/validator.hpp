#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "speckernel/indexer.hpp"
#include "speckernel/syzlang.hpp"

namespace speckernel {

enum class ErrorCode {
    UndefinedType,
    UnknownConstant,
    NonConstantArrayLength,
    UnmatchedDependency,
    DuplicateSyscall,
    IllegalRange,
    CyclicType,
    SyntaxError,
};

std::string_view to_string(ErrorCode code);
std::optional<ErrorCode> error_code_from_string(std::string_view s);

struct ValidationError {
    ErrorCode code = ErrorCode::SyntaxError;
    std::string message;
    std::string target;  // offending declaration; empty only for unattributed syntax errors
    std::string file = "<spec>";
    int line = 0;

    bool operator==(const ValidationError&) const = default;
};

struct ValidatorConfig {
    // Resources that may be consumed without a producer in the same file.
    std::set<std::string> builtin_resources{"fd", "sock"};
    std::set<std::string> builtin_flag_sets{"open_flags"};
    std::map<std::string, std::int64_t> builtin_constants{{"AT_FDCWD", -100}};
};

// Resolve every named constant against the macro/enumerator tables.
std::pair<syz::SpecFile, std::vector<ValidationError>> resolve_constants(const syz::SpecFile& spec,
                                                                         const DefinitionDatabase& db,
                                                                         const ValidatorConfig& cfg = {});

std::vector<ValidationError> validate_spec(const syz::SpecFile& spec, const DefinitionDatabase& db,
                                           const ValidatorConfig& cfg = {});

// Parse then validate; a parse failure becomes a single SyntaxError entry.
std::vector<ValidationError> check_spec_text(std::string_view text, const DefinitionDatabase& db,
                                             const ValidatorConfig& cfg = {}, std::string_view file = "<spec>");

// `NAME = value` lines sorted by name.
std::string render_constants(const std::map<std::string, std::int64_t>& constants);

nlohmann::json to_json(const ValidationError& e);
nlohmann::json errors_to_json(const std::vector<ValidationError>& errors);

}  // namespace speckernel
