"""Python access to the speckernel indexer, syzlang toolkit, validator and pipeline."""

import json
import os
from pathlib import Path

_packaged_assets = Path(__file__).with_name("assets")
if "SPECKERNEL_ASSETS" not in os.environ and _packaged_assets.is_dir():
    os.environ["SPECKERNEL_ASSETS"] = str(_packaged_assets)

from ._speckernel import DefinitionDatabase, Error, SpecSyntaxError, canonical, declaration_names  # noqa: E402
from . import _speckernel  # noqa: E402

__all__ = [
    "DefinitionDatabase",
    "Error",
    "SpecSyntaxError",
    "canonical",
    "declaration_names",
    "index",
    "handlers",
    "definitions",
    "check",
    "run",
]


def index(root, include_globs=(), exclude_globs=()):
    return DefinitionDatabase.index(Path(root), list(include_globs), list(exclude_globs))


def definitions(db):
    return json.loads(db.to_json_text())


def handlers(db):
    return json.loads(db.handlers_json_text())["handlers"]


def check(text, db, file="<spec>"):
    """Validation errors for a description, as dicts."""
    return json.loads(_speckernel.check_json_text(text, db, file))


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return json.dumps(str(v))


def run(corpus, out, **options):
    """Full run; options use config-file keys (backend, transcripts, script, max_iter, ...).

    Returns (exit_code, console_text).
    """
    lines = [f"corpus = {_toml_value(os.fspath(corpus))}", f"out = {_toml_value(os.fspath(out))}"]
    lines += [f"{k} = {_toml_value(os.fspath(v) if isinstance(v, os.PathLike) else v)}" for k, v in options.items()]
    return _speckernel.run("\n".join(lines) + "\n")
