from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ClaimedError

CONFIG_ENV = "C3_CONFIG"
HOME_ENV = "CLAIMED_HOME"
RUNTIME_ENV = "CLAIMED_RUNTIME"


@dataclass(frozen=True)
class Config:
    registry: str = "local"
    image_prefix: str = "claimed-"
    base_image: str = "python:3.11-slim"
    container_path: str = "/opt/app/"
    # where the per-run data directory is mounted inside containers
    data_path: str = "/data/"
    extra_categories: tuple[str, ...] = field(default_factory=tuple)

    def image_repo(self, name: str) -> str:
        return f"{self.registry}/{self.image_prefix}{name}"


def claimed_home(env: dict | None = None) -> Path:
    env = os.environ if env is None else env
    value = env.get(HOME_ENV)
    return Path(value) if value else Path.home() / ".claimed"


def load_config(path: str | os.PathLike | None = None, env: dict | None = None) -> Config:
    """Read a config file (TOML when the suffix is ``.toml``, YAML otherwise).

    Without an explicit path the ``C3_CONFIG`` variable is consulted; with
    neither, defaults apply.
    """
    env = os.environ if env is None else env
    if path is None:
        path = env.get(CONFIG_ENV) or None
    if path is None:
        return Config()
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ClaimedError(f"cannot read config {p}: {exc}") from exc
    try:
        data = tomllib.loads(text) if p.suffix == ".toml" else yaml.safe_load(text)
    except (tomllib.TOMLDecodeError, yaml.YAMLError) as exc:
        raise ClaimedError(f"invalid config {p}: {exc}") from exc
    data = data or {}
    if not isinstance(data, dict):
        raise ClaimedError(f"invalid config {p}: expected a key/value mapping")
    known = {f.name for f in fields(Config)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ClaimedError(f"invalid config {p}: unknown keys {', '.join(unknown)}")
    if "extra_categories" in data:
        data["extra_categories"] = tuple(data["extra_categories"] or ())
    return Config(**{k: (v if k == "extra_categories" else str(v)) for k, v in data.items()})
