#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "speckernel/syzlang.hpp"

namespace sktest {

namespace fs = std::filesystem;

fs::path fixtures_dir();
fs::path fixture(const std::string& rel);
fs::path assets_dir();
fs::path cli_path();

std::string read_text(const fs::path& p);
void write_text(const fs::path& p, const std::string& text);

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "sk");
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    fs::path path_;
};

// Runs the CLI with the given arguments; stdout+stderr captured.
struct CliResult {
    int exit_code = -1;
    std::string output;
};
CliResult run_cli(const std::string& args);

// Every regular file under root as relative path -> bytes.
std::map<std::string, std::string> snapshot_tree(const fs::path& root);

// Linux asm-generic ioctl number layout, written out independently of the library.
std::uint32_t oracle_ioc(std::uint32_t dir, std::uint32_t type, std::uint32_t nr, std::uint32_t size);

// (file, name, kind) for every definition a plain text scan finds under root.
using NameKind = std::tuple<std::string, std::string, std::string>;
std::set<NameKind> naive_scan_tree(const fs::path& root);
std::set<NameKind> naive_scan_file(const std::string& rel_path, const std::string& text);

// Random well-formed SpecFile in canonical form (resources linked, no constants).
speckernel::syz::SpecFile random_spec(std::mt19937& rng);

// Produced/consumed resources plus handler-to-handler edges, from an out/ tree.
nlohmann::json dependency_graph(const fs::path& out_dir, const std::string& spec_name);

// Hand-countable AST sizes.
nlohmann::json ast_counts(const speckernel::syz::SpecFile& spec);

}  // namespace sktest
