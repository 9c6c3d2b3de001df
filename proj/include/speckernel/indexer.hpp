#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace speckernel {

enum class DefKind { Function, Struct, Union, Enum, Macro, GlobalVar };

std::string_view to_string(DefKind kind);
std::optional<DefKind> def_kind_from_string(std::string_view s);

struct LineSpan {
    int start = 0;
    int end = 0;
    bool operator==(const LineSpan&) const = default;
};

struct Definition {
    DefKind kind = DefKind::Function;
    std::string name;
    std::string file;  // relative to the corpus root, '/' separated
    LineSpan lines;
    std::string text;

    bool operator==(const Definition&) const = default;
};

struct MacroDef {
    std::optional<std::vector<std::string>> params;  // set for function-like macros
    std::string body;

    bool operator==(const MacroDef&) const = default;
};

struct UsageReference {
    std::string identifier;
    std::string file;
    int line = 0;
    LineSpan window;
    std::string snippet;

    bool operator==(const UsageReference&) const = default;
};

enum class HandlerKind { FileOps, ProtoOps, MiscDevice, Other };

std::string_view to_string(HandlerKind kind);

struct HandlerRegistration {
    std::string struct_name;
    std::string struct_type;  // e.g. "file_operations"
    HandlerKind kind = HandlerKind::Other;
    std::map<std::string, std::string> bound_ops;
    std::string file;
    int line = 0;
    std::vector<UsageReference> usages;

    bool operator==(const HandlerRegistration&) const = default;
};

struct SourceCorpus {
    std::filesystem::path root_path;
    std::vector<std::string> include_globs{"**/*.c", "**/*.h"};
    std::vector<std::string> exclude_globs;
};

struct IndexerConfig {
    bool skip_unreadable = true;
    int snippet_radius = 20;
    // Declaration order of function-pointer fields for positional initializers.
    std::map<std::string, std::vector<std::string>> positional_fields = default_positional_fields();

    static std::map<std::string, std::vector<std::string>> default_positional_fields();
};

std::vector<std::string> default_trigger_fields();

// Immutable once built; safe for concurrent readers.
class DefinitionDatabase {
public:
    DefinitionDatabase() = default;

    const std::vector<Definition>& lookup(std::string_view identifier) const;
    const std::map<std::string, std::vector<Definition>>& definitions() const { return by_name_; }
    const std::map<std::string, std::vector<Definition>>& file_index() const { return by_file_; }
    const std::map<std::string, MacroDef>& macros() const { return macros_; }
    // Enumerator name -> constant expression (relative to the previous enumerator when implicit).
    const std::map<std::string, std::string>& enumerators() const { return enumerators_; }
    const std::map<std::string, std::string>& sources() const { return sources_; }
    const std::vector<std::string>& skipped_files() const { return skipped_; }

    std::size_t size() const;
    int snippet_radius() const { return snippet_radius_; }

    nlohmann::json to_json() const;
    static DefinitionDatabase from_json(const nlohmann::json& j);

    struct Occurrence {
        std::string file;
        std::size_t begin;
        int line;
    };
    // Every token occurrence of identifier, ordered by (file, offset).
    const std::vector<Occurrence>& occurrences(std::string_view identifier) const;

private:
    friend class DatabaseBuilder;

    void add_file(const std::string& path, std::string text);
    void finish();

    std::map<std::string, std::vector<Definition>> by_name_;
    std::map<std::string, std::vector<Definition>> by_file_;
    std::map<std::string, MacroDef> macros_;
    std::map<std::string, std::string> enumerators_;
    std::map<std::string, std::string> sources_;
    std::map<std::string, std::vector<Occurrence>> occurrences_;
    std::vector<std::string> skipped_;
    int snippet_radius_ = 20;
};

// Top-level declarations of a single C translation unit, in source order.
struct ScanResult {
    std::vector<Definition> definitions;
    std::map<std::string, MacroDef> macros;
    std::vector<std::pair<std::string, std::string>> enumerators;
};
ScanResult scan_source(std::string_view path, std::string_view text);

DefinitionDatabase index_corpus(const SourceCorpus& corpus, const IndexerConfig& cfg = {});
// Index an in-memory set of files (path -> contents).
DefinitionDatabase index_sources(std::map<std::string, std::string> files,
                                 const IndexerConfig& cfg = {});

std::vector<HandlerRegistration> find_operation_handlers(
    const DefinitionDatabase& db, const std::vector<std::string>& trigger_fields = default_trigger_fields(),
    const IndexerConfig& cfg = {});

std::vector<Definition> extract_code(const DefinitionDatabase& db, std::string_view identifier);
std::vector<UsageReference> find_usages(const DefinitionDatabase& db, std::string_view identifier);

bool glob_match(std::string_view pattern, std::string_view path);

nlohmann::json to_json(const Definition& d);
nlohmann::json to_json(const UsageReference& u);
nlohmann::json to_json(const HandlerRegistration& h);
HandlerRegistration handler_from_json(const nlohmann::json& j);
nlohmann::json handlers_to_json(const std::vector<HandlerRegistration>& handlers);

}  // namespace speckernel
