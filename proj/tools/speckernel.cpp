#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "speckernel/errors.hpp"
#include "speckernel/orchestrator.hpp"

namespace sk = speckernel;
namespace fs = std::filesystem;

namespace {

// Flag values; only the ones given on the command line override the config file.
struct Overrides {
    std::optional<std::string> config;
    std::optional<std::string> corpus;
    std::optional<std::string> out;
    std::optional<std::string> backend;
    std::optional<std::string> transcripts;
    std::optional<std::string> script;
    std::optional<std::string> cache_dir;
    std::optional<std::string> model;
    std::optional<std::string> endpoint;
    std::optional<double> temperature;
    std::optional<int> max_iter;
    std::optional<int> max_rounds;
    std::optional<std::string> handlers;
    std::optional<int> parallel;
    std::optional<std::string> assets;
    std::optional<std::string> defs;
    bool resume = false;
    bool no_skip_unreadable = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config, "config file (key = value)");
    cmd->add_option("--corpus", o.corpus, "kernel source tree to index");
    cmd->add_option("--out", o.out, "output directory (default out)");
    cmd->add_option("--backend", o.backend, "model backend")
        ->check(CLI::IsMember({"http", "replay", "record", "scripted"}));
    cmd->add_option("--transcripts", o.transcripts, "transcript directory for replay/record");
    cmd->add_option("--script", o.script, "scripted model rules (JSON)");
    cmd->add_option("--cache-dir", o.cache_dir, "persistent response cache");
    cmd->add_option("--model", o.model, "model name");
    cmd->add_option("--endpoint", o.endpoint, "chat completion endpoint URL");
    cmd->add_option("--temperature", o.temperature, "sampling temperature (default 0.1)");
    cmd->add_option("--max-iter", o.max_iter, "analysis depth bound (default 5)");
    cmd->add_option("--max-rounds", o.max_rounds, "repair rounds per description (default 3)");
    cmd->add_option("--handlers", o.handlers, "regex over handler struct names");
    cmd->add_option("--parallel", o.parallel, "handlers processed concurrently");
    cmd->add_option("--assets", o.assets, "prompt asset directory");
    cmd->add_option("--defs", o.defs, "definition database (default <out>/defs.json)");
    cmd->add_flag("--resume", o.resume, "reuse per-handler state from an earlier run");
    cmd->add_flag("--no-skip-unreadable", o.no_skip_unreadable, "abort on unreadable source files");
}

sk::RunConfig build_config(const Overrides& o) {
    sk::RunConfig cfg;
    if (o.config) sk::apply_config_file(cfg, *o.config);
    if (o.corpus) cfg.corpus.root_path = *o.corpus;
    if (o.out) cfg.output_dir = *o.out;
    if (o.backend) cfg.backend.kind = *sk::backend_kind_from_string(*o.backend);
    if (o.transcripts) cfg.backend.transcript_dir = *o.transcripts;
    if (o.script) cfg.backend.script_path = *o.script;
    if (o.cache_dir) cfg.backend.cache_dir = *o.cache_dir;
    if (o.model) cfg.backend.model_name = *o.model;
    if (o.endpoint) cfg.backend.endpoint_url = *o.endpoint;
    if (o.temperature) cfg.backend.temperature = *o.temperature;
    if (o.max_iter) cfg.pipeline.max_iter = *o.max_iter;
    if (o.max_rounds) cfg.max_rounds = *o.max_rounds;
    if (o.handlers) cfg.handler_filter = *o.handlers;
    if (o.parallel) cfg.parallel = *o.parallel;
    if (o.assets) cfg.assets_dir = *o.assets;
    if (o.defs) cfg.defs_path = *o.defs;
    if (o.resume) cfg.resume = true;
    if (o.no_skip_unreadable) cfg.indexer.skip_unreadable = false;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"speckernel: syscall specification synthesis for kernel drivers and sockets"};
    app.require_subcommand(1);
    Overrides o;

    auto* index = app.add_subcommand("index", "index a corpus into defs.json and handlers.json");
    auto* handlers = app.add_subcommand("handlers", "list discovered operation handlers");
    auto* generate = app.add_subcommand("generate", "run the analysis stages and write specs");
    auto* validate = app.add_subcommand("validate", "check spec files");
    auto* repair = app.add_subcommand("repair", "validate and repair the specs under <out>/specs");
    auto* run = app.add_subcommand("run", "index, generate, validate and repair");
    auto* report = app.add_subcommand("report", "summarize <out>/report.json");
    for (auto* cmd : {index, handlers, generate, validate, repair, run, report}) add_common(cmd, o);

    std::vector<std::string> spec_paths;
    std::optional<std::string> report_path;
    validate->add_option("specs", spec_paths, "spec files")->required();
    validate->add_option("--report", report_path, "also write the JSON report here");
    bool raw_json = false;
    report->add_flag("--json", raw_json, "print the raw report");

    CLI11_PARSE(app, argc, argv);

    sk::Console console(std::cout, std::cerr);
    try {
        sk::RunConfig cfg = build_config(o);
        if (*index) return sk::cmd_index(cfg, console);
        if (*handlers) return sk::cmd_handlers(cfg, console);
        if (*generate) return sk::cmd_generate(cfg, console);
        if (*validate) {
            std::vector<fs::path> paths(spec_paths.begin(), spec_paths.end());
            std::optional<fs::path> rp;
            if (report_path) rp = *report_path;
            return sk::cmd_validate(cfg, paths, console, rp);
        }
        if (*repair) return sk::cmd_repair(cfg, console);
        if (*run) return sk::cmd_run(cfg, console);
        if (*report) return sk::cmd_report(cfg, console, raw_json);
    } catch (const sk::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return sk::kExitFailure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return sk::kExitFailure;
    }
    return sk::kExitFailure;
}
