"""``claimed`` command line.

    claimed compile <path> [--out DIR] [--build] [--push] [--major] [--config PATH]
    claimed [run] <name[:version]> [k=v ...] [--backend B] [--data-dir PATH]
    claimed ls [--category C]
    claimed pipeline-run <file> [--backend B]

Every subcommand accepts ``--json`` and ``--config``. Exit codes: 0 success,
1 user or compilation error, 2 runtime environment error; a failing
operator's own exit code is passed through.
"""

from __future__ import annotations

import json
import logging
import re
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

from .catalog import Catalog, split_spec
from .codegen import compile_operator
from .config import claimed_home, load_config
from .errors import ClaimedError, CompilationError, OperatorFailed, RuntimeUnavailable
from .ingest import category_of, load_operator_source
from .interface import extract_interface, validate_interface
from .pipeline import load_pipeline, execute_pipeline
from .runner import (
    BackendKind,
    RuntimeBackend,
    detect_backend,
    make_request,
    new_run_id,
    provision_data_dir,
    run_operator,
)

log = logging.getLogger("claimed")

SYNOPSIS = """usage: claimed compile <path> [--out DIR] [--build] [--push] [--major] [--config PATH] [--json]
       claimed [run] <name[:version]> [k=v ...] [--backend docker|podman|process] [--data-dir PATH] [--config PATH] [--json]
       claimed ls [--category C] [--config PATH] [--json]
       claimed pipeline-run <file> [--backend docker|podman|process] [--config PATH] [--json]"""

# flag name -> takes a value
_COMMON = {"config": True, "json": False}
FLAGS: dict[str, dict[str, bool]] = {
    "compile": {**_COMMON, "out": True, "build": False, "push": False, "major": False},
    "run": {**_COMMON, "backend": True, "data-dir": True},
    "ls": {**_COMMON, "category": True},
    "pipeline-run": {**_COMMON, "backend": True},
}
POSITIONALS = {"compile": 1, "run": 1, "ls": 0, "pipeline-run": 1}
BACKENDS = tuple(k.value for k in BackendKind)
PARAM_KEY_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


class UsageError(ClaimedError):
    def __init__(self, message: str):
        super().__init__(f"{message}\n{SYNOPSIS}")


@dataclass(frozen=True)
class Invocation:
    subcommand: str
    positional: tuple[str, ...] = ()
    flags: dict[str, str | bool] = field(default_factory=dict)
    params: tuple[tuple[str, str], ...] = ()


def parse_invocation(argv: list[str]) -> Invocation:
    if not argv:
        raise UsageError("missing command")
    if argv[0] in FLAGS:
        sub, rest = argv[0], argv[1:]
    else:
        # bare grammar: claimed <name:version> k=v ...
        sub, rest = "run", argv
    spec = FLAGS[sub]
    positional: list[str] = []
    flags: dict[str, str | bool] = {}
    params: list[tuple[str, str]] = []
    i = 0
    while i < len(rest):
        tok = rest[i]
        i += 1
        if tok.startswith("--"):
            name, eq, value = tok[2:].partition("=")
            if name not in spec:
                raise UsageError(f"unknown option --{name} for '{sub}'")
            if spec[name]:
                if not eq:
                    if i >= len(rest):
                        raise UsageError(f"option --{name} needs a value")
                    value = rest[i]
                    i += 1
                flags[name] = value
            else:
                if eq:
                    raise UsageError(f"option --{name} takes no value")
                flags[name] = True
        elif sub == "run" and "=" in tok:
            key, _, value = tok.partition("=")
            if not PARAM_KEY_RE.match(key):
                raise UsageError(f"invalid parameter name {key!r}")
            params.append((key, value))
        else:
            positional.append(tok)
    if len(positional) != POSITIONALS[sub]:
        raise UsageError(f"'{sub}' expects {POSITIONALS[sub]} positional argument(s), got {len(positional)}")
    if "backend" in flags and flags["backend"] not in BACKENDS:
        raise UsageError(f"--backend must be one of {', '.join(BACKENDS)}")
    return Invocation(sub, tuple(positional), flags, tuple(params))


def render_invocation(inv: Invocation) -> list[str]:
    argv = [inv.subcommand, *inv.positional]
    argv += [f"{k}={v}" for k, v in inv.params]
    for name, value in inv.flags.items():
        argv += [f"--{name}"] if value is True else [f"--{name}", str(value)]
    return argv


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2) + "\n")


def _backend(inv: Invocation) -> RuntimeBackend:
    choice = inv.flags.get("backend")
    if choice:
        backend = RuntimeBackend(BackendKind(choice))
        backend.probe()
        return backend
    return detect_backend()


def cmd_compile(inv: Invocation) -> int:
    config = load_config(inv.flags.get("config"))
    path = Path(inv.positional[0])
    if not path.exists():
        raise ClaimedError(f"no such file: {path}")
    src = load_operator_source(path)
    iface = extract_interface(src)
    notes = validate_interface(iface)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        category_of(src.name, prefix=config.image_prefix, extra=config.extra_categories)
    notes += [str(w.message) for w in caught]
    for note in notes:
        log.warning(note)

    artifacts = compile_operator(src, config, iface)
    catalog = Catalog(claimed_home(), config)
    entry = catalog.register(src.name, artifacts, major=bool(inv.flags.get("major")))
    stamped = artifacts.stamped(str(entry.version))
    out_dir = Path(inv.flags.get("out") or Path("target") / src.name)
    stamped.write(out_dir)

    if inv.flags.get("build") or inv.flags.get("push"):
        backend = _backend(inv)
        if not backend.is_container:
            raise RuntimeUnavailable("--build/--push need docker or podman")
        if inv.flags.get("build"):
            backend.build(entry.image_ref, out_dir)
        if inv.flags.get("push"):
            backend.push(entry.image_ref)

    if inv.flags.get("json"):
        _emit(
            {
                "name": entry.name,
                "version": str(entry.version),
                "image_ref": entry.image_ref,
                "digest": entry.digest,
                "out_dir": str(out_dir),
                "warnings": notes,
            }
        )
    else:
        print(entry.spec)
    return 0


def cmd_run(inv: Invocation) -> int:
    config = load_config(inv.flags.get("config"))
    catalog = Catalog(claimed_home(), config)
    spec = inv.positional[0]
    split_spec(spec)
    backend = _backend(inv)
    if inv.flags.get("data-dir"):
        data_dir = Path(inv.flags["data-dir"])
        data_dir.mkdir(parents=True, exist_ok=True)
    else:
        data_dir = provision_data_dir(new_run_id(), catalog.home)
    req = make_request(catalog, spec, dict(inv.params), data_dir, backend)
    # machine-readable output owns stdout in --json mode
    sink = sys.stderr if inv.flags.get("json") else sys.stdout
    try:
        result = run_operator(req, stdout=sink, stderr=sys.stderr)
    except OperatorFailed as exc:
        result = exc.result
    if inv.flags.get("json"):
        _emit(
            {
                "operator": req.entry.spec,
                "exit_code": result.exit_code,
                "duration": result.duration,
                "data_dir": str(result.data_dir_host),
            }
        )
    return result.exit_code


def cmd_ls(inv: Invocation) -> int:
    config = load_config(inv.flags.get("config"))
    entries = Catalog(claimed_home(), config).list_entries(inv.flags.get("category"))
    if inv.flags.get("json"):
        _emit([{"name": e.name, **e.to_json()} for e in entries])
        return 0
    rows = [("NAME", "VERSION", "CATEGORY", "DIGEST")]
    rows += [(e.name, str(e.version), e.category, e.digest[:12]) for e in entries]
    widths = [max(len(r[i]) for r in rows) for i in range(3)]
    for r in rows:
        print("  ".join(c.ljust(w) for c, w in zip(r[:3], widths)) + "  " + r[3])
    return 0


def cmd_pipeline_run(inv: Invocation) -> int:
    config = load_config(inv.flags.get("config"))
    catalog = Catalog(claimed_home(), config)
    spec = load_pipeline(inv.positional[0])
    backend = _backend(inv)
    sink = sys.stderr if inv.flags.get("json") else sys.stdout
    record = execute_pipeline(spec, catalog, backend, stdout=sink, stderr=sys.stderr)
    if inv.flags.get("json"):
        _emit(record.to_dict())
    else:
        for sid, res in record.step_results.items():
            print(f"{sid}\t{res.status}\t{res.operator or '-'}", file=sys.stderr)
        print(record.run_id)
    return 0 if record.succeeded else 1


COMMANDS = {
    "compile": cmd_compile,
    "run": cmd_run,
    "ls": cmd_ls,
    "pipeline-run": cmd_pipeline_run,
}


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    logging.basicConfig(level=logging.INFO, format="claimed: %(levelname)s: %(message)s", stream=sys.stderr)
    if argv and argv[0] in ("-h", "--help", "help"):
        print(SYNOPSIS)
        return 0
    try:
        inv = parse_invocation(argv)
        return COMMANDS[inv.subcommand](inv)
    except CompilationError as exc:
        print(f"claimed: compilation error: {inv.positional[0]}: {exc.detail()}", file=sys.stderr)
        return 1
    except ClaimedError as exc:
        print(f"claimed: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
