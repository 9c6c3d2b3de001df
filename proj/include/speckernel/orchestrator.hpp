#pragma once

#include <filesystem>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "speckernel/engine.hpp"
#include "speckernel/indexer.hpp"
#include "speckernel/pipeline.hpp"

namespace speckernel {

struct RunConfig {
    SourceCorpus corpus;
    IndexerConfig indexer;
    std::vector<std::string> trigger_fields = default_trigger_fields();
    BackendConfig backend;
    PipelineConfig pipeline;
    int parallel = 1;
    int max_rounds = 3;
    std::filesystem::path output_dir = "out";
    std::filesystem::path assets_dir;  // empty = default_assets_dir()
    std::filesystem::path defs_path;   // validate/handlers input; empty = <out>/defs.json
    std::string handler_filter;        // regex over handler struct names
    bool resume = false;

    void check() const;  // throws Error
};

// Applies `key = value` lines (TOML subset: strings, numbers, booleans, string arrays,
// [section] headers). Relative paths resolve against base_dir.
void apply_config_text(RunConfig& cfg, std::string_view text, const std::filesystem::path& base_dir = {});
void apply_config_file(RunConfig& cfg, const std::filesystem::path& file);

// Serialized line output shared by worker threads.
class Console {
public:
    Console(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}
    void line(const std::string& text);
    void warn(const std::string& text);

private:
    std::mutex mu_;
    std::ostream& out_;
    std::ostream& err_;
};

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitInput = 2;  // unreadable corpus file or unparsable spec
inline constexpr int kExitNoHandlers = 3;

int cmd_index(const RunConfig& cfg, Console& console);
int cmd_handlers(const RunConfig& cfg, Console& console);
int cmd_generate(const RunConfig& cfg, Console& console);
// Writes the JSON error array to stdout and, when report_path is set, to that file.
int cmd_validate(const RunConfig& cfg, const std::vector<std::filesystem::path>& specs, Console& console,
                 const std::optional<std::filesystem::path>& report_path = std::nullopt);
int cmd_repair(const RunConfig& cfg, Console& console);
int cmd_run(const RunConfig& cfg, Console& console);
int cmd_report(const RunConfig& cfg, Console& console, bool raw_json = false);

}  // namespace speckernel
