#include <sstream>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "speckernel/const_eval.hpp"
#include "speckernel/errors.hpp"
#include "speckernel/indexer.hpp"
#include "speckernel/orchestrator.hpp"
#include "speckernel/syzlang.hpp"
#include "speckernel/validator.hpp"

namespace py = pybind11;
namespace sk = speckernel;

// Structured values cross the boundary as JSON text; the Python side decodes them.
PYBIND11_MODULE(_speckernel, m) {
    // later registrations are tried first, so the base goes in before the subclass
    auto base = py::register_exception<sk::Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<sk::SyntaxError>(m, "SpecSyntaxError", base.ptr());

    py::class_<sk::DefinitionDatabase>(m, "DefinitionDatabase")
        .def_static(
            "index",
            [](const std::filesystem::path& root, std::vector<std::string> include,
               std::vector<std::string> exclude) {
                sk::SourceCorpus c;
                c.root_path = root;
                if (!include.empty()) c.include_globs = std::move(include);
                c.exclude_globs = std::move(exclude);
                py::gil_scoped_release release;
                return sk::index_corpus(c);
            },
            py::arg("root"), py::arg("include_globs") = std::vector<std::string>{},
            py::arg("exclude_globs") = std::vector<std::string>{})
        .def_static("from_sources",
                    [](std::map<std::string, std::string> files) { return sk::index_sources(std::move(files)); })
        .def_static("from_json_text",
                    [](const std::string& text) {
                        return sk::DefinitionDatabase::from_json(nlohmann::json::parse(text));
                    })
        .def("to_json_text", [](const sk::DefinitionDatabase& db) { return db.to_json().dump(); })
        .def("handlers_json_text",
             [](const sk::DefinitionDatabase& db) {
                 return sk::handlers_to_json(sk::find_operation_handlers(db)).dump();
             })
        .def("constant",
             [](const sk::DefinitionDatabase& db, const std::string& name) {
                 sk::ConstantEvaluator ev(db);
                 return ev.value(name);
             })
        .def("size_of", [](const sk::DefinitionDatabase& db, const std::string& c_type) {
            sk::ConstantEvaluator ev(db);
            return ev.size_of(c_type);
        });

    m.def("canonical", [](const std::string& text) { return sk::syz::render_spec(sk::syz::parse_spec(text)); },
          "parse a description and render it back in canonical form");
    m.def("declaration_names",
          [](const std::string& text) { return sk::syz::declaration_names(sk::syz::parse_spec(text)); });
    m.def(
        "check_json_text",
        [](const std::string& text, const sk::DefinitionDatabase& db, const std::string& file) {
            return sk::errors_to_json(sk::check_spec_text(text, db, {}, file)).dump();
        },
        py::arg("text"), py::arg("db"), py::arg("file") = "<spec>");

    m.def(
        "run",
        [](const std::string& config_text, const std::filesystem::path& base_dir) {
            sk::RunConfig cfg;
            sk::apply_config_text(cfg, config_text, base_dir);
            std::ostringstream out;
            int code;
            {
                py::gil_scoped_release release;
                sk::Console console(out, out);
                code = sk::cmd_run(cfg, console);
            }
            return py::make_tuple(code, out.str());
        },
        py::arg("config_text"), py::arg("base_dir") = std::filesystem::path{});
}
