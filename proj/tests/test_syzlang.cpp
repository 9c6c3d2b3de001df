#include <random>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "speckernel/errors.hpp"
#include "speckernel/syzlang.hpp"
#include "support.hpp"

using namespace speckernel;
using namespace speckernel::syz;
using namespace sktest;

namespace {

SpecFile load(const std::string& rel) { return parse_spec(read_text(fixture(rel))); }

std::vector<std::string> valid_names() {
    auto counts = nlohmann::json::parse(read_text(fixture("syzlang/valid/counts.json")));
    std::vector<std::string> out;
    for (const auto& [name, _] : counts.items()) out.push_back(name);
    return out;
}

}  // namespace

TEST_CASE("syzlang: msm submit queue description") {
    auto spec = load("syzlang/msm.txt");
    CHECK(spec.includes == std::vector<std::string>{"uapi/drm/msm_drm.h"});
    REQUIRE(spec.resources.size() == 2);
    REQUIRE(spec.syscalls.size() == 3);
    REQUIRE(spec.types.size() == 1);

    const auto* id = spec.find_resource("msm_submitqueue_id");
    REQUIRE(id);
    CHECK(id->underlying == "int32");
    CHECK(id->produced_by == std::vector<std::string>{"ioctl$NEW"});
    CHECK(id->consumed_by == std::vector<std::string>{"ioctl$CLOSE"});
    const auto* fd = spec.find_resource("fd_msm");
    REQUIRE(fd);
    CHECK(fd->produced_by == std::vector<std::string>{"openat$msm"});
    CHECK(fd->consumed_by.size() == 2);

    const auto* nw = spec.find_syscall("ioctl$NEW");
    REQUIRE(nw);
    CHECK(nw->identifier_const == std::optional<std::string>("DRM_IOCTL_MSM_SUBMITQUEUE_NEW"));
    const auto& arg = std::get<PtrType>(nw->params[2].type.node);
    CHECK(arg.dir == Dir::InOut);
    CHECK(std::get<NamedType>(arg.elem->node).name == "rm_msm_submitqueue");

    const auto* q = spec.find_type("rm_msm_submitqueue");
    REQUIRE(q);
    REQUIRE(q->fields.size() == 3);
    CHECK(std::get<IntType>(q->fields[1].type.node).range == std::optional<Range>(Range{0, 3}));
    CHECK(q->fields[2].dir == std::optional<Dir>(Dir::Out));
}

TEST_CASE("syzlang: parse then render is the identity on the msm description") {
    auto spec = load("syzlang/msm.txt");
    auto text = render_spec(spec);
    CHECK(parse_spec(text) == spec);
    CHECK(render_spec(parse_spec(text)) == text);
}

TEST_CASE("syzlang: round trip over generated specs") {
    std::mt19937 rng(20240611);
    int checked = 0;
    for (int i = 0; i < 300; ++i) {
        auto spec = random_spec(rng);
        auto text = render_spec(spec);
        CAPTURE(text);
        SpecFile back;
        REQUIRE_NOTHROW(back = parse_spec(text));
        CHECK(back == spec);
        CHECK(render_spec(back) == text);
        ++checked;
    }
    CHECK(checked >= 200);
}

TEST_CASE("syzlang: valid corpus counts") {
    auto counts = nlohmann::json::parse(read_text(fixture("syzlang/valid/counts.json")));
    CHECK(counts.size() == 10);
    for (const auto& name : valid_names()) {
        CAPTURE(name);
        auto spec = load("syzlang/valid/" + name);
        CHECK(ast_counts(spec) == counts[name]);
        auto text = render_spec(spec);
        CHECK(parse_spec(text) == spec);
    }
}

TEST_CASE("syzlang: layout matches rendered lines") {
    for (const auto& name : valid_names()) {
        CAPTURE(name);
        auto spec = load("syzlang/valid/" + name);
        auto text = render_spec(spec);
        std::vector<std::string> lines;
        std::string cur;
        for (char c : text) {
            if (c == '\n') {
                lines.push_back(cur);
                cur.clear();
            } else {
                cur += c;
            }
        }
        auto names = declaration_names(spec);
        auto loc = layout(spec);
        REQUIRE(loc.size() == names.size());
        for (std::size_t i = 0; i < loc.size(); ++i) {
            CHECK(loc[i].target == names[i]);
            REQUIRE(loc[i].first_line >= 1);
            REQUIRE(loc[i].last_line <= static_cast<int>(lines.size()));
            auto decl = render_declaration(spec, loc[i].target);
            REQUIRE(decl);
            std::string joined;
            for (int l = loc[i].first_line; l <= loc[i].last_line; ++l) {
                joined += lines[static_cast<std::size_t>(l - 1)];
                if (l != loc[i].last_line) joined += "\n";
            }
            CHECK(joined == *decl);
        }
    }
}

TEST_CASE("syzlang: unsupported constructs are named") {
    const std::vector<std::pair<std::string, std::string>> cases = {
        {"t {\n\tb\tbool32\n}\n", "bool"},
        {"t {\n\tv\tvma\n}\n", "vma"},
        {"t {\n\tc\tcsum[parent, inet, int16]\n}\n", "csum"},
        {"t {\n\tb\tbuffer[in]\n}\n", "buffer"},
        {"t {\n\tx\tint32be\n}\n", "big-endian ints"},
        {"t {\n\tp\tptr64[in, int8]\n}\n", "ptr64"},
        {"t {\n\tx\tint32\n} [packed]\n", "type attributes"},
        {"t {\n\tx\tint32 (if[value[y] == 1])\n}\n", "conditional fields"},
        {"resource r[int32]: 0, 1\n", "resource special values"},
        {"t {\n\ta\tarray[int8, 1:4]\n}\n", "array length ranges"},
        {"t {\n\ts\tstring[names]\n}\n", "string flag sets"},
        {"t {\n\tf\tfoo[int8]\n}\n", "type templates"},
    };
    for (const auto& [src, construct] : cases) {
        CAPTURE(src);
        try {
            parse_spec(src);
            FAIL("parsed");
        } catch (const SyntaxError& e) {
            CHECK(e.expected() == "unsupported construct '" + construct + "'");
            CHECK(e.line() >= 1);
        }
    }
}

TEST_CASE("syzlang: syntax errors carry a position") {
    try {
        parse_spec("resource r[int32]\n\nioctl$x(fd r, cmd const[1] arg int8)\n");
        FAIL("parsed");
    } catch (const SyntaxError& e) {
        CHECK(e.line() == 3);
        CHECK(e.column() == 28);
        CHECK(e.expected() == "expected ')'");
    }
    CHECK_THROWS_AS(parse_spec("t {\n\tx\tint32\n"), SyntaxError);
    CHECK_THROWS_AS(parse_spec("x = \n"), SyntaxError);
    CHECK_THROWS_AS(parse_type("ptr[sideways, int8]"), SyntaxError);
    CHECK_NOTHROW(parse_spec(""));
    CHECK(parse_spec("# just a comment\n").empty());
}

TEST_CASE("syzlang: type expressions render canonically") {
    CHECK(render_type(parse_type("ptr[inout, array[int8, 0x10]]")) == "ptr[inout, array[int8, 16]]");
    CHECK(render_type(parse_type("len[a:b, int64]")) == "len[a:b, int64]");
    CHECK(render_type(parse_type("int16[-5:5]")) == "int16[-5:5]");
    CHECK(render_type(parse_type("const[-1]")) == "const[-1]");
    CHECK(render_type(parse_type("string[\"/dev/x\"]")) == "string[\"/dev/x\"]");
    CHECK(render_operand(Operand{std::string("FOO")}) == "FOO");
    CHECK(render_operand(Operand{std::int64_t{42}}) == "42");
}

TEST_CASE("syzlang: references and removal") {
    auto spec = load("syzlang/valid/dep_chain.txt");
    auto refs = referenced_names(spec, "demo_split_args");
    CHECK(std::find(refs.begin(), refs.end(), "demo_session") != refs.end());
    CHECK(std::find(refs.begin(), refs.end(), "demo_subsession") != refs.end());
    auto consts = referenced_constants(spec, "ioctl$DEMO_FLUSH");
    CHECK(consts == std::vector<std::string>{"DEMO_FLUSH"});

    const auto* sub = spec.find_resource("demo_subsession");
    REQUIRE(sub);
    CHECK(sub->produced_by == std::vector<std::string>{"ioctl$DEMO_QUERY"});
    CHECK(sub->consumed_by == std::vector<std::string>{"ioctl$DEMO_FLUSH"});

    CHECK(remove_declaration(spec, "ioctl$DEMO_FLUSH"));
    CHECK_FALSE(remove_declaration(spec, "ioctl$DEMO_FLUSH"));
    link_resources(spec);
    CHECK(spec.find_resource("demo_subsession")->consumed_by.empty());
    CHECK(parse_spec(render_spec(spec)) == spec);
}

TEST_CASE("syzlang: comments survive trimmed") {
    auto spec = parse_spec("#   padded comment   \nresource r[fd]\n");
    REQUIRE(spec.resources.size() == 1);
    CHECK(spec.resources[0].comments == std::vector<std::string>{"padded comment"});
    CHECK(render_spec(spec) == "# padded comment\nresource r[fd]\n");
}
