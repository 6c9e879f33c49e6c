"""Turn notebooks and plain scripts into role-tagged operator sources.

A notebook operator follows a small set of cell conventions: a markdown title
holding the operator name, a description, an install cell, an import cell,
an interface cell reading environment variables, an optional argv shim and
any number of body cells. Scripts follow an equivalent line-based layout.
"""

from __future__ import annotations

import ast
import json
import re
import shlex
import warnings
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable

from .errors import (
    CompilationError,
    DuplicateRole,
    InvalidOperatorName,
    MalformedCell,
    MissingMandatoryCell,
    SourceDecodeError,
)
from .patterns import find_env_reads, has_env_read, source_lines

NAME_RE = re.compile(r"^[a-z][a-z0-9]*(-[a-z0-9]+)*$")

CATEGORIES = (
    "analyze",
    "anomaly",
    "checkpoint",
    "deploy",
    "filter",
    "geo",
    "input",
    "metric",
    "monitoring",
    "nlp",
    "output",
    "predict",
    "sim",
    "train",
    "transform",
    "util",
    "visualize",
)

NOTEBOOK_INSTALL_RE = re.compile(r"^\s*[!%]\s*pip3?\s+install\b(?P<rest>.*)$")
SCRIPT_INSTALL_RE = re.compile(r"^\s*#\s*!?\s*pip3?\s+install\b(?P<rest>.*)$")
_CODING_RE = re.compile(r"^#.*coding[:=]")

# pip options that consume the following token
_PIP_VALUE_OPTS = {
    "-r", "--requirement", "-c", "--constraint", "-e", "--editable",
    "-i", "--index-url", "--extra-index-url", "-f", "--find-links",
    "-t", "--target", "--trusted-host", "--prefix", "--root", "--platform",
    "--python-version", "--implementation", "--abi", "--cache-dir", "--src",
    "--upgrade-strategy", "--progress-bar", "--global-option", "--install-option",
}


class SourceKind(str, Enum):
    NOTEBOOK = "notebook"
    SCRIPT = "script"


class Role(str, Enum):
    NAME = "name"
    DESCRIPTION = "description"
    DEPENDENCIES = "dependencies"
    IMPORTS = "imports"
    INTERFACE = "interface"
    ARGV_SHIM = "argv_shim"
    BODY = "body"


MANDATORY_ROLES = (Role.NAME, Role.DESCRIPTION, Role.DEPENDENCIES, Role.INTERFACE)


@dataclass(frozen=True)
class RawSource:
    path: Path
    kind: SourceKind
    text: str


@dataclass(frozen=True)
class SourceCell:
    index: int
    role: Role
    code: str
    leading_comments: tuple[str, ...] = ()
    # notebook cell index, or 1-based line number for scripts
    origin: int | None = None


@dataclass(frozen=True)
class OperatorSource:
    name: str
    description: str
    cells: tuple[SourceCell, ...]
    dependency_specs: tuple[str, ...]
    kind: SourceKind = SourceKind.NOTEBOOK

    def cells_with(self, role: Role) -> list[SourceCell]:
        return [c for c in self.cells if c.role == role]

    def cell(self, role: Role) -> SourceCell:
        found = self.cells_with(role)
        if not found:
            raise MissingMandatoryCell(role.value)
        return found[0]


class UnknownCategoryWarning(UserWarning):
    pass


def read_source(path: str | Path) -> RawSource:
    path = Path(path)
    data = path.read_bytes()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise SourceDecodeError(f"{path} is not valid UTF-8: {exc}") from exc
    kind = SourceKind.NOTEBOOK if path.suffix == ".ipynb" else SourceKind.SCRIPT
    return RawSource(path=path, kind=kind, text=text)


def parse_source(raw: RawSource) -> OperatorSource:
    if raw.kind == SourceKind.NOTEBOOK:
        return parse_notebook(raw)
    return parse_script(raw)


def load_operator_source(path: str | Path) -> OperatorSource:
    return parse_source(read_source(path))


def category_of(name: str, *, prefix: str = "claimed-", extra: Iterable[str] = ()) -> str:
    """Category is the name's first kebab segment, after dropping the image prefix."""
    if prefix and name.startswith(prefix):
        name = name[len(prefix):]
    category = name.split("-", 1)[0]
    if category not in CATEGORIES and category not in set(extra):
        warnings.warn(
            f"operator {name!r} uses unknown category {category!r}",
            UnknownCategoryWarning,
            stacklevel=2,
        )
    return category


def extract_dependencies(src: OperatorSource) -> list[str]:
    cell = src.cell(Role.DEPENDENCIES)
    rx = NOTEBOOK_INSTALL_RE if src.kind == SourceKind.NOTEBOOK else SCRIPT_INSTALL_RE
    return _install_specs(cell.code, rx)


def _install_specs(code: str, rx: re.Pattern) -> list[str]:
    specs: list[str] = []
    for line in source_lines(code):
        m = rx.match(line)
        if not m:
            continue
        try:
            tokens = shlex.split(m.group("rest"), comments=True)
        except ValueError:
            tokens = m.group("rest").split()
        skip = False
        for tok in tokens:
            if skip:
                skip = False
                continue
            if tok.startswith("-"):
                skip = tok in _PIP_VALUE_OPTS
                continue
            if tok not in specs:
                specs.append(tok)
    return specs


def _validate_name(name: str, cell: int | None) -> str:
    if not NAME_RE.match(name):
        raise InvalidOperatorName(name, cell=cell)
    return name


def _leading_comments(code: str) -> tuple[str, ...]:
    out = []
    for line in source_lines(code):
        s = line.strip()
        if not s:
            if out:
                break
            continue
        if not s.startswith("#"):
            break
        out.append(s.lstrip("#").strip())
    return tuple(out)


def _collapse(lines: Iterable[str]) -> str:
    parts = [ln.strip().lstrip("#").strip() for ln in lines]
    return " ".join(p for p in parts if p)


def _is_import_only(code: str) -> bool:
    try:
        tree = ast.parse(code)
    except SyntaxError:
        return False
    return bool(tree.body) and all(isinstance(n, (ast.Import, ast.ImportFrom)) for n in tree.body)


def _is_argv_shim(code: str) -> bool:
    if not re.search(r"\bsys\.argv\b", code):
        return False
    return bool(
        re.search(r"\bexec\s*\(", code)
        or re.search(r"os\.environ\[[^\]'\"]+\]\s*=(?!=)", code)
    )


def _cell_text(cell: dict) -> str:
    src = cell.get("source", "")
    if isinstance(src, list):
        src = "".join(src)
    return str(src).replace("\r\n", "\n")


def parse_notebook(raw: RawSource) -> OperatorSource:
    try:
        doc = json.loads(raw.text)
    except json.JSONDecodeError as exc:
        raise CompilationError(f"{raw.path} is not valid notebook JSON: {exc}") from exc
    nb_cells = doc.get("cells") if isinstance(doc, dict) else None
    if not isinstance(nb_cells, list):
        raise CompilationError(f"{raw.path} has no top-level 'cells' list")

    markdown = [(i, _cell_text(c)) for i, c in enumerate(nb_cells) if c.get("cell_type") == "markdown"]
    code = [(i, _cell_text(c)) for i, c in enumerate(nb_cells) if c.get("cell_type") == "code"]

    if not markdown:
        raise MissingMandatoryCell(Role.NAME.value)
    first_idx, first_text = markdown[0]
    lines = source_lines(first_text)
    heading_at = next((k for k, ln in enumerate(lines) if ln.strip()), None)
    if heading_at is None:
        raise MissingMandatoryCell(Role.NAME.value)
    heading = lines[heading_at]
    name = _validate_name(heading.strip().lstrip("#").strip(), first_idx)

    description = _collapse(lines[heading_at + 1:])
    desc_idx = first_idx
    if not description and len(markdown) > 1:
        desc_idx, second = markdown[1]
        description = _collapse(source_lines(second))
    if not description:
        raise MissingMandatoryCell(Role.DESCRIPTION.value)

    claimed: dict[Role, int] = {}
    tagged: list[tuple[int, Role, str]] = []
    for origin, text in code:
        role = _classify_code_cell(origin, text, claimed)
        tagged.append((origin, role, text))

    for role in (Role.DEPENDENCIES, Role.INTERFACE):
        if role not in claimed:
            raise MissingMandatoryCell(role.value)

    cells = [
        SourceCell(0, Role.NAME, heading, origin=first_idx),
        SourceCell(1, Role.DESCRIPTION, description, origin=desc_idx),
    ]
    for origin, role, text in tagged:
        cells.append(SourceCell(len(cells), role, text, _leading_comments(text), origin))

    dep_code = next(text for _, role, text in tagged if role == Role.DEPENDENCIES)
    return OperatorSource(
        name=name,
        description=description,
        cells=tuple(cells),
        dependency_specs=tuple(_install_specs(dep_code, NOTEBOOK_INSTALL_RE)),
        kind=SourceKind.NOTEBOOK,
    )


def _claim(role: Role, origin: int, claimed: dict[Role, int]) -> Role:
    if role in claimed:
        raise DuplicateRole(role.value, cell=origin, first=claimed[role])
    claimed[role] = origin
    return role


def _classify_code_cell(origin: int, text: str, claimed: dict[Role, int]) -> Role:
    lines = source_lines(text)
    if any(NOTEBOOK_INSTALL_RE.match(ln) for ln in lines):
        other = [
            ln for ln in lines
            if ln.strip() and not ln.strip().startswith("#") and not NOTEBOOK_INSTALL_RE.match(ln)
        ]
        if Role.DEPENDENCIES in claimed:
            raise DuplicateRole(Role.DEPENDENCIES.value, cell=origin, first=claimed[Role.DEPENDENCIES])
        if other:
            raise MalformedCell(
                "install directives must sit in a cell of their own; found other code: "
                + other[0].strip(),
                role=Role.DEPENDENCIES.value,
                cell=origin,
            )
        return _claim(Role.DEPENDENCIES, origin, claimed)
    if _is_argv_shim(text):
        return _claim(Role.ARGV_SHIM, origin, claimed)
    if Role.INTERFACE not in claimed and has_env_read(text):
        return _claim(Role.INTERFACE, origin, claimed)
    if Role.IMPORTS not in claimed and _is_import_only(text):
        return _claim(Role.IMPORTS, origin, claimed)
    return Role.BODY


def _kebab(stem: str) -> str:
    s = re.sub(r"[^a-z0-9]+", "-", stem.lower())
    return s.strip("-")


def _strip_blank_edges(lines: list[tuple[int, str]]) -> list[tuple[int, str]]:
    while lines and not lines[0][1].strip():
        lines = lines[1:]
    while lines and not lines[-1][1].strip():
        lines = lines[:-1]
    return lines


def parse_script(raw: RawSource) -> OperatorSource:
    """Parse a plain script.

    The name comes from the file stem; a leading docstring or comment block
    stands in for the title cell and its first line is the description.
    ``# pip install`` comment lines form the dependencies cell, the first
    contiguous run of env reads (with the comments above them) the interface.
    """
    lines = raw.text.replace("\r\n", "\n").split("\n")
    n = len(lines)

    pos = 0
    while pos < n and (
        not lines[pos].strip()
        or (pos == 0 and lines[pos].startswith("#!"))
        or _CODING_RE.match(lines[pos])
    ):
        pos += 1

    header: list[str] | None = None
    header_start = pos
    if pos < n:
        first = lines[pos].lstrip()
        m = re.match(r"^[rRuU]?(\"\"\"|''')", first)
        if m:
            delim = m.group(1)
            after = first[m.end():]
            if delim in after:
                header = [after[: after.index(delim)]]
                pos += 1
            else:
                header = [after]
                pos += 1
                while pos < n and delim not in lines[pos]:
                    header.append(lines[pos])
                    pos += 1
                if pos >= n:
                    raise CompilationError("unterminated module docstring", role="name", cell=header_start + 1)
                header.append(lines[pos][: lines[pos].index(delim)])
                pos += 1
        elif first.startswith("#") and not SCRIPT_INSTALL_RE.match(first):
            header = []
            while pos < n and lines[pos].lstrip().startswith("#") and not SCRIPT_INSTALL_RE.match(lines[pos]):
                header.append(lines[pos].lstrip().lstrip("#"))
                pos += 1
    if header is None:
        raise MissingMandatoryCell(Role.NAME.value)

    name = _validate_name(_kebab(raw.path.stem), header_start + 1)
    description = next((h.strip() for h in header if h.strip()), "")
    if not description:
        raise MissingMandatoryCell(Role.DESCRIPTION.value)

    rest = [(i + 1, lines[i]) for i in range(pos, n)]
    installs = [(no, ln) for no, ln in rest if SCRIPT_INSTALL_RE.match(ln)]
    rest = [(no, ln) for no, ln in rest if not SCRIPT_INSTALL_RE.match(ln)]

    def is_comment(ln: str) -> bool:
        return ln.lstrip().startswith("#")

    env_at = [k for k, (_, ln) in enumerate(rest) if find_env_reads(ln)]
    if not env_at:
        raise MissingMandatoryCell(Role.INTERFACE.value)

    start = env_at[0]
    while start > 0 and is_comment(rest[start - 1][1]):
        start -= 1
    scan = env_at[0]
    last_env = env_at[0]
    while scan < len(rest):
        ln = rest[scan][1]
        if find_env_reads(ln):
            last_env = scan
        elif ln.strip() and not is_comment(ln):
            break
        scan += 1
    end = last_env + 1

    cells = [
        SourceCell(0, Role.NAME, name, origin=header_start + 1),
        SourceCell(1, Role.DESCRIPTION, description, origin=header_start + 1),
        SourceCell(
            2,
            Role.DEPENDENCIES,
            "\n".join(ln for _, ln in installs),
            origin=installs[0][0] if installs else None,
        ),
    ]

    def add(role: Role, chunk: list[tuple[int, str]]) -> None:
        chunk = _strip_blank_edges(chunk)
        if not chunk:
            return
        text = "\n".join(ln for _, ln in chunk)
        cells.append(SourceCell(len(cells), role, text, _leading_comments(text), chunk[0][0]))

    pre = rest[:start]
    pre_text = "\n".join(ln for _, ln in pre)
    add(Role.IMPORTS if _is_import_only(pre_text) else Role.BODY, pre)
    add(Role.INTERFACE, rest[start:end])
    add(Role.BODY, rest[end:])

    return OperatorSource(
        name=name,
        description=description,
        cells=tuple(cells),
        dependency_specs=tuple(_install_specs(cells[2].code, SCRIPT_INSTALL_RE)),
        kind=SourceKind.SCRIPT,
    )
