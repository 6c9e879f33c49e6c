"""Versioned operator catalog backed by a single locked JSON document.

Layout under ``$CLAIMED_HOME`` (default ``~/.claimed``)::

    catalog.json                       name -> [entry, ...]
    catalog.json.lock                  advisory lock guarding writes
    artifacts/<name>/<M.m>/...         compiled files for each version
"""

from __future__ import annotations

import json
import os
import tempfile
import threading
import warnings
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

from filelock import FileLock, Timeout

from .codegen import CompiledArtifacts, ENTRYPOINT_FILE, script_filename
from .config import Config, claimed_home
from .errors import CatalogLocked, CorruptCatalog, NotFound, VersionNotFound
from .ingest import category_of
from .interface import OperatorInterface

ENTRY_KEYS = frozenset({"version", "digest", "image_ref", "interface", "created_at", "category"})
LOCK_TIMEOUT = 5.0


@dataclass(frozen=True, order=True)
class Version:
    major: int
    minor: int

    @classmethod
    def parse(cls, text: str) -> "Version":
        major, sep, minor = str(text).partition(".")
        if not sep or not major.isdigit() or not minor.isdigit():
            raise ValueError(f"invalid version {text!r} (expected M.m)")
        return cls(int(major), int(minor))

    def __str__(self) -> str:
        return f"{self.major}.{self.minor}"


INITIAL_VERSION = Version(0, 1)


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    version: Version
    digest: str
    image_ref: str
    interface: OperatorInterface
    created_at: str
    category: str

    @property
    def spec(self) -> str:
        return f"{self.name}:{self.version}"

    def to_json(self) -> dict:
        return {
            "version": str(self.version),
            "digest": self.digest,
            "image_ref": self.image_ref,
            "interface": self.interface.to_dict(),
            "created_at": self.created_at,
            "category": self.category,
        }

    @classmethod
    def from_json(cls, name: str, d: dict) -> "CatalogEntry":
        return cls(
            name=name,
            version=Version.parse(d["version"]),
            digest=d["digest"],
            image_ref=d["image_ref"],
            interface=OperatorInterface.from_dict(d["interface"]),
            created_at=d["created_at"],
            category=d["category"],
        )


def split_spec(spec: str) -> tuple[str, str | None]:
    """``name``, ``name:M.m`` or ``name:latest`` -> (name, version or None)."""
    name, sep, version = spec.rpartition(":")
    if not sep:
        return spec, None
    if version == "latest" or version == "":
        return name, None
    return name, version


def _utcnow() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


class Catalog:
    def __init__(
        self,
        home: str | Path | None = None,
        config: Config | None = None,
        *,
        lock_timeout: float = LOCK_TIMEOUT,
        clock: Callable[[], str] = _utcnow,
    ):
        self.home = Path(home) if home is not None else claimed_home()
        self.config = config or Config()
        self.path = self.home / "catalog.json"
        self.lock_timeout = lock_timeout
        self._clock = clock
        self._mutex = threading.Lock()

    # -- storage -----------------------------------------------------------

    def _file_lock(self) -> FileLock:
        self.home.mkdir(parents=True, exist_ok=True)
        return FileLock(str(self.path) + ".lock", timeout=self.lock_timeout)

    def _load(self) -> dict[str, list[CatalogEntry]]:
        try:
            text = self.path.read_text(encoding="utf-8")
        except FileNotFoundError:
            return {}
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CorruptCatalog(f"{self.path}: not valid JSON ({exc})") from exc
        if not isinstance(doc, dict):
            raise CorruptCatalog(f"{self.path}: top level must be an object")
        out: dict[str, list[CatalogEntry]] = {}
        for name, entries in doc.items():
            if not isinstance(entries, list):
                raise CorruptCatalog(f"{self.path}: entries of {name!r} must be a list")
            parsed = []
            for raw in entries:
                if not isinstance(raw, dict) or set(raw) != ENTRY_KEYS:
                    raise CorruptCatalog(f"{self.path}: malformed entry for {name!r}")
                try:
                    parsed.append(CatalogEntry.from_json(name, raw))
                except (KeyError, ValueError, TypeError) as exc:
                    raise CorruptCatalog(f"{self.path}: malformed entry for {name!r} ({exc})") from exc
            versions = [e.version for e in parsed]
            if any(a >= b for a, b in zip(versions, versions[1:])):
                raise CorruptCatalog(f"{self.path}: versions of {name!r} are not strictly increasing")
            out[name] = parsed
        return out

    def _commit(self, data: dict[str, list[CatalogEntry]]) -> None:
        doc = {name: [e.to_json() for e in entries] for name, entries in sorted(data.items())}
        fd, tmp = tempfile.mkstemp(prefix=".catalog-", suffix=".tmp", dir=self.home)
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(doc, fh, indent=2, sort_keys=False)
                fh.write("\n")
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, self.path)
        except BaseException:
            try:
                os.unlink(tmp)
            except FileNotFoundError:
                pass
            raise

    def artifact_dir(self, entry: CatalogEntry) -> Path:
        return self.home / "artifacts" / entry.name / str(entry.version)

    def script_path(self, entry: CatalogEntry) -> Path:
        return self.artifact_dir(entry) / script_filename(entry.name)

    def entrypoint_path(self, entry: CatalogEntry) -> Path:
        return self.artifact_dir(entry) / ENTRYPOINT_FILE

    # -- operations --------------------------------------------------------

    def register(self, name: str, artifacts: CompiledArtifacts, *, major: bool = False) -> CatalogEntry:
        """Record ``artifacts`` under ``name``.

        An unchanged digest returns the latest entry as is; otherwise the
        minor version is bumped (or the major one, with ``major=True``).
        """
        with self._mutex:
            try:
                lock = self._file_lock()
                lock.acquire()
            except Timeout as exc:
                raise CatalogLocked(f"could not lock {self.path} within {self.lock_timeout}s") from exc
            try:
                data = self._load()
                history = data.get(name, [])
                if history and history[-1].digest == artifacts.digest:
                    return history[-1]
                if not history:
                    version = INITIAL_VERSION
                elif major:
                    version = Version(history[-1].version.major + 1, 0)
                else:
                    last = history[-1].version
                    version = Version(last.major, last.minor + 1)
                stamped = artifacts.stamped(str(version))
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    category = category_of(
                        name, prefix=self.config.image_prefix, extra=self.config.extra_categories
                    )
                entry = CatalogEntry(
                    name=name,
                    version=version,
                    digest=artifacts.digest,
                    image_ref=stamped.image_ref,
                    interface=artifacts.interface,
                    created_at=self._clock(),
                    category=category,
                )
                stamped.write(self.artifact_dir(entry))
                data[name] = history + [entry]
                self._commit(data)
                return entry
            finally:
                lock.release()

    def _lookup(self, data: dict[str, list[CatalogEntry]], name: str) -> list[CatalogEntry]:
        if data.get(name):
            return data[name]
        prefix = self.config.image_prefix
        if prefix and name.startswith(prefix) and data.get(name[len(prefix):]):
            return data[name[len(prefix):]]
        raise NotFound(name)

    def resolve(self, spec: str) -> CatalogEntry:
        name, version = split_spec(spec)
        history = self._lookup(self._load(), name)
        if version is None:
            return history[-1]
        try:
            wanted = Version.parse(version)
        except ValueError:
            raise VersionNotFound(name, version) from None
        for entry in history:
            if entry.version == wanted:
                return entry
        raise VersionNotFound(name, version)

    def list_entries(self, category: str | None = None) -> list[CatalogEntry]:
        entries = [e for history in self._load().values() for e in history]
        if category is not None:
            entries = [e for e in entries if e.category == category]
        return sorted(entries, key=lambda e: (e.name, e.version))
