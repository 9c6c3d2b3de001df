#include <algorithm>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "speckernel/errors.hpp"
#include "speckernel/pipeline.hpp"
#include "speckernel/validator.hpp"
#include "support.hpp"

using namespace speckernel;
using namespace sktest;
using nlohmann::json;

namespace {

struct Golden {
    std::string corpus;
    std::string spec;
};

const Golden kGoldens[] = {{"dm", "dm_ctl"}, {"kvm", "kvm"}, {"vfio", "vfio_pci"}, {"rds", "rds"}};

DefinitionDatabase index_fixture(const std::string& rel) {
    SourceCorpus c;
    c.root_path = fixture(rel);
    return index_corpus(c);
}

CliResult replay(const std::string& corpus, const fs::path& out) {
    return run_cli("run --corpus '" + fixture(corpus).string() + "' --out '" + out.string() +
                   "' --backend replay --transcripts '" + fixture(corpus + "_model/transcripts").string() + "'");
}

// In-process run of every handler with a scripted model, returning rendered specs by name.
std::map<std::string, std::string> run_scripted(const std::string& corpus, const fs::path& script,
                                                std::vector<HandlerState>* states = nullptr) {
    auto db = index_fixture(corpus);
    PromptLibrary prompts(assets_dir());
    BackendConfig cfg;
    cfg.kind = BackendKind::Scripted;
    cfg.script_path = script;
    QueryService service(cfg);
    PipelineContext ctx{db, prompts, service, find_operation_handlers(db), {}};
    std::map<std::string, std::string> out;
    for (const auto& h : ctx.handlers) {
        HandlerState st;
        st.handler = h.struct_name;
        try {
            run_handler_init(h, st, ctx, std::nullopt);
            st.spec_name = st.init->name;
            run_handler_stages(h, st, ctx, std::nullopt);
        } catch (const Error& e) {
            st.error = e.what();
        }
        if (st.init && st.error.empty()) out[st.spec_name] = syz::render_spec(assemble_from_state(st, db));
        if (states) states->push_back(st);
    }
    return out;
}

}  // namespace

TEST_CASE("pipeline: replayed runs reproduce the golden specs") {
    for (const auto& g : kGoldens) {
        CAPTURE(g.corpus);
        TempDir out("sk-golden");
        auto r = replay(g.corpus, out.path());
        CAPTURE(r.output);
        CHECK(r.exit_code == 0);
        CHECK(read_text(out / ("specs/" + g.spec + ".txt")) ==
              read_text(fixture(g.corpus + "_model/golden/" + g.spec + ".txt")));
        CHECK(read_text(out / ("specs/" + g.spec + ".const")) ==
              read_text(fixture(g.corpus + "_model/golden/" + g.spec + ".const")));
        auto errs = check_spec_text(read_text(out / ("specs/" + g.spec + ".txt")), index_fixture(g.corpus));
        CHECK(errs.empty());
    }
}

TEST_CASE("pipeline: in-process scripted run matches the replayed golden") {
    for (const auto& g : kGoldens) {
        CAPTURE(g.corpus);
        auto specs = run_scripted(g.corpus, fixture(g.corpus + "_model/script.json"));
        REQUIRE(specs.count(g.spec));
        CHECK(specs[g.spec] == read_text(fixture(g.corpus + "_model/golden/" + g.spec + ".txt")));
    }
}

TEST_CASE("pipeline: device mapper control description") {
    auto text = read_text(fixture("dm_model/golden/dm_ctl.txt"));
    auto spec = syz::parse_spec(text);
    const auto* open = spec.find_syscall("openat$dm_ctl");
    REQUIRE(open);
    CHECK(syz::render_type(open->params[1].type) == "ptr[in, string[\"/dev/mapper/control\"]]");
    CHECK(spec.find_syscall("ioctl$dm_version"));
    int commands = 0;
    for (const auto& s : spec.syscalls) commands += s.identifier_const.has_value();
    CHECK(commands >= 4);
    // commands compared after _IOC_NR carry a note
    CHECK(spec.find_syscall("ioctl$dm_version")->comments.size() == 1);
}

TEST_CASE("pipeline: nested struct gets a len field") {
    auto text = read_text(fixture("vfio_model/golden/vfio_pci.txt"));
    CHECK(text.find("\n\tcount\tlen[devices]\n") != std::string::npos);
    auto spec = syz::parse_spec(text);
    CHECK(spec.find_type("vfio_pci_dependent_device"));
}

TEST_CASE("pipeline: unsupported argument types fall back to a byte buffer") {
    std::vector<HandlerState> states;
    auto specs = run_scripted("rds", fixture("rds_model/script.json"), &states);
    auto spec = syz::parse_spec(specs.at("rds"));
    const auto* set = spec.find_syscall("setsockopt$rds_recverr");
    REQUIRE(set);
    CHECK(syz::render_type(set->params[3].type) == "ptr[in, array[int8]]");
    const auto* get = spec.find_syscall("getsockopt$rds_recverr");
    REQUIRE(get);
    CHECK(syz::render_type(get->params[3].type) == "ptr[out, int32]");
    REQUIRE(states.size() == 1);
    bool noted = false;
    for (const auto& n : states[0].log.notes) noted |= n.find("unsupported construct 'bool'") != std::string::npos;
    CHECK(noted);
    bool unresolved = false;
    for (const auto& u : states[0].log.unresolved) unresolved |= u == "argument of RDS_RECVERR";
    CHECK(unresolved);
}

TEST_CASE("pipeline: dependency chain across handlers") {
    TempDir out("sk-kvm");
    auto r = replay("kvm", out.path());
    REQUIRE(r.exit_code == 0);
    auto graph = dependency_graph(out.path(), "kvm");
    auto golden = json::parse(read_text(fixture("kvm_model/golden/dependency_graph.json")));
    CHECK(graph["resources"] == golden["resources"]);
    auto sorted = [](json edges) {
        std::sort(edges.begin(), edges.end());
        return edges;
    };
    CHECK(sorted(graph["edges"]) == sorted(golden["edges"]));

    auto spec = syz::parse_spec(read_text(out / "specs/kvm.txt"));
    const auto* run = spec.find_syscall("ioctl$kvm_run");
    REQUIRE(run);
    CHECK(std::get<syz::NamedType>(run->params[0].type.node).name == "fd_kvm_vcpu");
}

TEST_CASE("pipeline: msm description assembled from findings") {
    auto db = index_fixture("syzlang/consts");
    HandlerInitSpec init;
    init.device_path = "/dev/msm";
    init.init_syscall = "openat";
    init.name = "msm";
    init.resource_name = "fd_msm";
    std::vector<IdentifierFinding> ids = {
        {"DRM_IOCTL_MSM_SUBMITQUEUE_NEW", "msm_ioctl_submitqueue_new", "", false, "ioctl", "", "msm_fops", "fd_msm"},
        {"DRM_IOCTL_MSM_SUBMITQUEUE_CLOSE", "msm_ioctl_submitqueue_close", "", false, "ioctl", "", "msm_fops", "fd_msm"},
    };
    std::vector<TypeFinding> types = {
        {"DRM_IOCTL_MSM_SUBMITQUEUE_NEW", "ptr[inout, rm_msm_submitqueue]", {"rm_msm_submitqueue"}, "ioctl"},
        {"DRM_IOCTL_MSM_SUBMITQUEUE_CLOSE", "ptr[in, msm_submitqueue_id]", {"msm_submitqueue_id"}, "ioctl"},
    };
    auto defs_spec = syz::parse_spec(
        "resource msm_submitqueue_id[int32]\n\nrm_msm_submitqueue {\n\tflags\tint32\n\tprio\tint32[0:3]\n"
        "\tid\tmsm_submitqueue_id\t(out)\n}\n");
    TypeDefinitions defs;
    for (auto r : defs_spec.resources) {
        r.produced_by.clear();
        r.consumed_by.clear();
        defs.resources.push_back(r);
    }
    defs.types = defs_spec.types;
    std::vector<std::string> unresolved;
    auto spec = assemble_spec(init, ids, types, defs, {}, db, &unresolved);
    CHECK(unresolved.empty());
    CHECK(validate_spec(spec, db).empty());

    // variant names are derived from the constant; rename to the hand-written ones
    for (auto& s : spec.syscalls) {
        if (s.variant == "drm_ioctl_msm_submitqueue_new") s.variant = "NEW";
        if (s.variant == "drm_ioctl_msm_submitqueue_close") s.variant = "CLOSE";
    }
    syz::link_resources(spec);
    auto expected = syz::parse_spec(read_text(fixture("syzlang/msm.txt")));
    auto by_name = [](std::vector<syz::SyscallDesc> v) {
        std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.full_name() < b.full_name(); });
        return v;
    };
    CHECK(spec.includes == expected.includes);
    // consumer lists follow syscall order, which differs
    auto sorted_res = [](std::vector<syz::ResourceDecl> v) {
        for (auto& r : v) std::sort(r.consumed_by.begin(), r.consumed_by.end());
        return v;
    };
    CHECK(sorted_res(spec.resources) == sorted_res(expected.resources));
    CHECK(by_name(spec.syscalls) == by_name(expected.syscalls));
    CHECK(spec.types == expected.types);
    CHECK(spec.flag_sets == expected.flag_sets);
}

TEST_CASE("pipeline: handler init results") {
    auto dev = handler_init_from_result({{"device", "/dev/mapper/control"}});
    REQUIRE(dev);
    CHECK(dev->device_path == "/dev/mapper/control");
    CHECK(dev->init_syscall == "openat");
    CHECK(dev->name == "control");
    CHECK(dev->resource_name == "fd_control");

    auto numbered = handler_init_from_result({{"device", "loop#"}, {"name", "Loop-Dev"}});
    REQUIRE(numbered);
    CHECK(numbered->init_syscall == "syz_open_dev");
    CHECK(numbered->device_path == "/dev/loop#");
    CHECK(numbered->name == "loop_dev");

    auto sock = handler_init_from_result({{"socket", {{"domain", "AF_RDS"}, {"type", "SOCK_SEQPACKET"}}}});
    REQUIRE(sock);
    CHECK(sock->shape == HandlerInitSpec::Shape::Socket);
    CHECK(sock->protocol == "0");
    CHECK(sock->name == "rds");
    CHECK(sock->resource_name == "sock_rds");

    CHECK_FALSE(handler_init_from_result(json::object()));
    CHECK_FALSE(handler_init_from_result({{"device", "/dev/"}}));
    CHECK_FALSE(handler_init_from_result({{"socket", {{"type", "SOCK_STREAM"}}}}));
    CHECK_FALSE(handler_init_from_result(json()));

    CHECK(sanitize_name("KVM_CREATE-VM!!") == "kvm_create_vm");
    CHECK(sanitize_name("__x__") == "x");
}

TEST_CASE("pipeline: handler state survives json") {
    std::vector<HandlerState> states;
    run_scripted("kvm", fixture("kvm_model/script.json"), &states);
    REQUIRE(states.size() == 3);
    for (const auto& st : states) {
        CAPTURE(st.handler);
        auto back = handler_state_from_json(to_json(st));
        CHECK(to_json(back) == to_json(st));
        CHECK(back.identifiers == st.identifiers);
        CHECK(back.types == st.types);
        CHECK(back.dependencies == st.dependencies);
        CHECK(back.init == st.init);
    }
    TempDir tmp("sk-state");
    save_state(tmp / "s.json", states[0]);
    auto loaded = load_state(tmp / "s.json");
    REQUIRE(loaded);
    CHECK(to_json(*loaded) == to_json(states[0]));
    CHECK_FALSE(load_state(tmp / "missing.json"));
}

TEST_CASE("pipeline: unresolved handler init is reported") {
    TempDir tmp("sk-noinit");
    write_text(tmp / "script.json", R"({"rules": [{"stage": "HandlerInit", "response": {"result": {}, "unknowns": []}}]})");
    std::vector<HandlerState> states;
    auto specs = run_scripted("dm", tmp / "script.json", &states);
    CHECK(specs.empty());
    REQUIRE(states.size() == 1);
    CHECK(states[0].error == "cannot infer device or socket for handler _ctl_fops");
}
