"""Regex families that recognise environment-variable reads in source lines.

Each language registers a parser whose ``search_expressions`` returns a
mapping of resource kind to an ordered list of ``(family, regex)`` pairs.
Only Python is implemented; other languages plug in as new parsers.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Dict, List, Tuple

ENV_NAME = r"[a-zA-Z_][A-Za-z0-9_]*"

# quoted string default, or a bare literal (number / True / False / None)
_DEFAULT = r"""(?:(?P<dq>["'])(?P<default>.*?)(?P=dq)|(?P<literal>[-+]?\d[\w.]*|True|False|None)\b)"""

ENVIRON_INDEX = rf"""os\.environ\[\s*(?P<q>["'])(?P<name>{ENV_NAME})(?P=q)\s*\](?:\s*=(?!=)\s*{_DEFAULT})?"""
GETENV = rf"""os\.getenv\(\s*(?P<q>["'])(?P<name>{ENV_NAME})(?P=q)\s*(?:,\s*{_DEFAULT})?"""
ENVIRON_GET = rf"""os\.environ\.get\(\s*(?P<q>["'])(?P<name>{ENV_NAME})(?P=q)\s*(?:,\s*{_DEFAULT})?"""

_CAST_BEFORE = re.compile(r"\b(int|float|bool)\(\s*$")


@dataclass(frozen=True)
class EnvRead:
    name: str
    default: str | None
    family: str
    cast: str | None
    start: int


class ScriptParser:
    """Base class: subclasses provide regexes per resource kind."""

    def search_expressions(self) -> Dict[str, List[Tuple[str, str]]]:
        raise NotImplementedError

    def __init__(self) -> None:
        self._compiled = {
            kind: [(family, re.compile(rx)) for family, rx in exprs]
            for kind, exprs in self.search_expressions().items()
        }

    def env_reads(self, line: str) -> list[EnvRead]:
        """All env reads on one line, ordered by position. Comment lines yield nothing."""
        if line.lstrip().startswith("#"):
            return []
        found: list[EnvRead] = []
        for family, rx in self._compiled.get("env_vars", []):
            for m in rx.finditer(line):
                default = m.group("default")
                if default is None:
                    literal = m.group("literal")
                    default = None if literal in (None, "None") else literal
                cast = _CAST_BEFORE.search(line[: m.start()])
                found.append(
                    EnvRead(
                        name=m.group("name"),
                        default=default,
                        family=family,
                        cast=cast.group(1) if cast else None,
                        start=m.start(),
                    )
                )
        found.sort(key=lambda r: r.start)
        return found


class PythonScriptParser(ScriptParser):
    def search_expressions(self) -> Dict[str, List[Tuple[str, str]]]:
        return {
            "env_vars": [
                ("environ_index", ENVIRON_INDEX),
                ("getenv", GETENV),
                ("environ_get", ENVIRON_GET),
            ]
        }


PYTHON = PythonScriptParser()


def find_env_reads(line: str) -> list[EnvRead]:
    return PYTHON.env_reads(line)


def source_lines(text: str) -> list[str]:
    """Split on newlines only; ``str.splitlines`` also breaks on characters
    such as ``\\x1e`` that may legally appear inside string literals."""
    return text.replace("\r\n", "\n").split("\n")


def has_env_read(text: str) -> bool:
    return any(find_env_reads(line) for line in source_lines(text))
