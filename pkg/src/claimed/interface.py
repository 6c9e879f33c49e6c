"""Typed parameter interface derived from an operator's interface cell."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from enum import Enum

from .errors import DuplicateParameter, EmptyInterface, InvalidDefault
from .ingest import OperatorSource, Role
from .patterns import EnvRead, find_env_reads, source_lines

STREAM_PARAM = "claimed_stream"
OUTPUT_PREFIX = "output_"

_TRUE = {"true", "1", "yes"}
_BOOL_LEXICAL = _TRUE | {"false", "0", "no"}


class PType(str, Enum):
    STRING = "string"
    INTEGER = "integer"
    FLOAT = "float"
    BOOLEAN = "boolean"


class Direction(str, Enum):
    INPUT_REQUIRED = "input_required"
    INPUT_OPTIONAL = "input_optional"
    OUTPUT = "output"


_CASTS = {"int": PType.INTEGER, "float": PType.FLOAT, "bool": PType.BOOLEAN}


@dataclass(frozen=True)
class Parameter:
    name: str
    ptype: PType
    default: str | None
    description: str
    direction: Direction
    source_index: int

    @property
    def is_input(self) -> bool:
        return self.direction != Direction.OUTPUT

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ptype"] = self.ptype.value
        d["direction"] = self.direction.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Parameter":
        return cls(
            name=d["name"],
            ptype=PType(d["ptype"]),
            default=d["default"],
            description=d["description"],
            direction=Direction(d["direction"]),
            source_index=int(d["source_index"]),
        )


@dataclass(frozen=True)
class OperatorInterface:
    params: tuple[Parameter, ...]
    operator_name: str

    @property
    def inputs(self) -> list[Parameter]:
        return [p for p in self.params if p.is_input]

    @property
    def outputs(self) -> list[Parameter]:
        return [p for p in self.params if not p.is_input]

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    def get(self, name: str) -> Parameter | None:
        return next((p for p in self.params if p.name == name), None)

    @property
    def streaming(self) -> bool:
        p = self.get(STREAM_PARAM)
        return p is not None and (p.default or "").strip().lower() in _TRUE

    def to_dict(self) -> dict:
        return {"operator_name": self.operator_name, "params": [p.to_dict() for p in self.params]}

    @classmethod
    def from_dict(cls, d: dict) -> "OperatorInterface":
        return cls(
            params=tuple(Parameter.from_dict(p) for p in d["params"]),
            operator_name=d["operator_name"],
        )


def _ptype_of(read: EnvRead) -> PType:
    return _CASTS.get(read.cast or "", PType.STRING)


def infer_type(statement: str) -> PType:
    """Type of the first env read on ``statement``; string unless cast by int/float/bool."""
    reads = find_env_reads(statement)
    if not reads:
        return PType.STRING
    return _ptype_of(reads[0])


def _default_fits(ptype: PType, default: str) -> bool:
    if ptype == PType.INTEGER:
        try:
            int(default)
        except ValueError:
            return False
        return True
    if ptype == PType.FLOAT:
        try:
            float(default)
        except ValueError:
            return False
        return True
    if ptype == PType.BOOLEAN:
        return default.strip().lower() in _BOOL_LEXICAL
    return True


def extract_interface(src: OperatorSource) -> OperatorInterface:
    cell = src.cell(Role.INTERFACE)
    params: list[Parameter] = []
    seen: set[str] = set()
    comments: list[str] = []

    for line in source_lines(cell.code):
        stripped = line.strip()
        if not stripped:
            comments = []
            continue
        if stripped.startswith("#"):
            text = stripped.lstrip("#").strip()
            if text:
                comments.append(text)
            continue
        for k, read in enumerate(find_env_reads(line)):
            if read.name in seen:
                raise DuplicateParameter(read.name, cell=cell.origin)
            seen.add(read.name)
            ptype = _ptype_of(read)
            if read.default is not None and not _default_fits(ptype, read.default):
                raise InvalidDefault(
                    f"default {read.default!r} of parameter {read.name!r} is not a valid {ptype.value}",
                    role=Role.INTERFACE.value,
                    cell=cell.origin,
                )
            if read.name.startswith(OUTPUT_PREFIX):
                direction = Direction.OUTPUT
            elif read.default is not None:
                direction = Direction.INPUT_OPTIONAL
            else:
                direction = Direction.INPUT_REQUIRED
            params.append(
                Parameter(
                    name=read.name,
                    ptype=ptype,
                    default=read.default,
                    description=" ".join(comments) if k == 0 else "",
                    direction=direction,
                    source_index=len(params),
                )
            )
        comments = []

    if not params:
        raise EmptyInterface(cell=cell.origin)
    return OperatorInterface(params=tuple(params), operator_name=src.name)


def validate_interface(iface: OperatorInterface) -> list[str]:
    warnings: list[str] = []
    if not iface.outputs:
        warnings.append(
            f"operator {iface.operator_name!r} declares no output parameters "
            f"(name one '{OUTPUT_PREFIX}...' if it produces data)"
        )
    for p in iface.params:
        if not p.description:
            warnings.append(f"parameter {p.name!r} has no description comment")
    by_lower: dict[str, list[str]] = {}
    for p in iface.params:
        by_lower.setdefault(p.name.lower(), []).append(p.name)
    for names in by_lower.values():
        if len(names) > 1:
            warnings.append(f"parameters {', '.join(repr(n) for n in names)} differ only by case")
    return warnings
