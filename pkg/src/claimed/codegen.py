"""Emit the deployable artifact set for a parsed operator.

Four files come out of a compilation: the operator script, a POSIX shell
bootstrap that maps ``key=value`` arguments onto environment variables, a
Dockerfile and a Kubeflow-style component descriptor.
"""

from __future__ import annotations

import hashlib
import json
import re
import shlex
from dataclasses import dataclass, replace
from pathlib import Path

import yaml

from .config import Config
from .errors import InvalidBaseImage
from .ingest import OperatorSource, Role
from .interface import OperatorInterface, PType, extract_interface

ENTRYPOINT_FILE = "entrypoint.sh"
BUILD_FILE = "Dockerfile"

KFP_TYPES = {
    PType.STRING: "String",
    PType.INTEGER: "Integer",
    PType.FLOAT: "Float",
    PType.BOOLEAN: "Boolean",
}

_IMAGE_RE = re.compile(
    r"^[a-z0-9]+(?:[._-][a-z0-9]+)*(?::\d+)?"
    r"(?:/[a-z0-9]+(?:[._-][a-z0-9]+)*)*"
    r"(?::[A-Za-z0-9_][A-Za-z0-9_.-]{0,127})?"
    r"(?:@sha256:[a-f0-9]{64})?$"
)


def _lf(text: str) -> str:
    return text.replace("\r\n", "\n").replace("\r", "\n")


def script_filename(name: str) -> str:
    return f"{name}.py"


def descriptor_filename(name: str) -> str:
    return f"{name}.yaml"


@dataclass(frozen=True)
class CompiledArtifacts:
    name: str
    description: str
    interface: OperatorInterface
    script_text: str
    entrypoint_text: str
    buildfile_text: str
    component_descriptor_text: str
    digest: str
    image_ref: str
    container_path: str = "/opt/app/"
    version: str | None = None

    def stamped(self, version: str) -> "CompiledArtifacts":
        """Same artifacts with the catalog-assigned version in the image tag."""
        repo = self.image_ref.rsplit(":", 1)[0] if self.version else self.image_ref
        image_ref = f"{repo}:{version}"
        return replace(
            self,
            version=version,
            image_ref=image_ref,
            component_descriptor_text=generate_component_descriptor(
                self.interface, image_ref, self.description, self.container_path
            ),
        )

    def files(self) -> dict[str, str]:
        return {
            script_filename(self.name): self.script_text,
            ENTRYPOINT_FILE: self.entrypoint_text,
            BUILD_FILE: self.buildfile_text,
            descriptor_filename(self.name): self.component_descriptor_text,
        }

    def write(self, out_dir: str | Path) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for fname, text in self.files().items():
            p = out / fname
            p.write_text(text, encoding="utf-8", newline="\n")
            written.append(p)
        return written


def generate_script(src: OperatorSource) -> str:
    keep = (Role.IMPORTS, Role.INTERFACE, Role.BODY)
    chunks = [_lf(c.code).strip("\n") for c in src.cells if c.role in keep]
    return "\n\n".join(c for c in chunks if c.strip()) + "\n"


def generate_entrypoint(iface: OperatorInterface) -> str:
    declared = " ".join(iface.names)
    script = script_filename(iface.operator_name)
    return f"""#!/bin/sh
# Bootstrap for operator {iface.operator_name}.
# Every key=value argument naming a declared parameter is exported as an
# environment variable (value is everything after the first '='), then the
# operator script runs. Undeclared keys are reported and ignored.
declared=" {declared} "
for arg in "$@"; do
    case "$arg" in
        *=*) ;;
        *) printf 'claimed: warning: ignoring argument %s (expected key=value)\\n' "$arg" >&2; continue ;;
    esac
    key=${{arg%%=*}}
    value=${{arg#*=}}
    case "$key" in
        ''|[!A-Za-z_]*|*[!A-Za-z0-9_]*)
            printf 'claimed: warning: ignoring argument with invalid key %s\\n' "$key" >&2; continue ;;
    esac
    case "$declared" in
        *" $key "*) export "$key=$value" ;;
        *) printf 'claimed: warning: ignoring undeclared parameter %s\\n' "$key" >&2 ;;
    esac
done
here=$(dirname -- "$0")
exec "${{CLAIMED_PYTHON:-python3}}" "$here/{script}"
"""


def generate_buildfile(
    src: OperatorSource,
    iface: OperatorInterface,
    base_image: str,
    container_path: str = "/opt/app/",
) -> str:
    if not base_image or not _IMAGE_RE.match(base_image):
        raise InvalidBaseImage(f"invalid base image reference {base_image!r}")
    path = container_path.rstrip("/") + "/"
    lines = [f"FROM {base_image}"]
    if src.dependency_specs:
        lines.append("RUN pip install --no-cache-dir " + " ".join(shlex.quote(d) for d in src.dependency_specs))
    lines.append(f"COPY {script_filename(iface.operator_name)} {ENTRYPOINT_FILE} {path}")
    lines.append(f"WORKDIR {path.rstrip('/') or '/'}")
    lines.append(f'ENTRYPOINT ["sh", "{path}{ENTRYPOINT_FILE}"]')
    return "\n".join(lines) + "\n"


def _param_entry(p) -> dict:
    entry = {"name": p.name, "type": KFP_TYPES[p.ptype], "description": p.description}
    if p.default is not None:
        entry["default"] = p.default
    return entry


def dump_yaml(doc) -> str:
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=False, allow_unicode=True, width=4096)


def generate_component_descriptor(
    iface: OperatorInterface,
    image_ref: str,
    description: str,
    container_path: str = "/opt/app/",
) -> str:
    path = container_path.rstrip("/") + "/"
    doc = {
        "name": iface.operator_name,
        "description": description,
        "inputs": [_param_entry(p) for p in iface.inputs],
        "outputs": [_param_entry(p) for p in iface.outputs],
        "implementation": {
            "container": {
                "image": image_ref,
                "command": ["sh", f"{path}{ENTRYPOINT_FILE}"],
                "args": [{"concat": [f"{p.name}=", {"inputValue": p.name}]} for p in iface.inputs],
            }
        },
    }
    return dump_yaml(doc)


def compute_digest(script_text: str, buildfile_text: str, iface: OperatorInterface) -> str:
    payload = {
        "script": _lf(script_text),
        "buildfile": _lf(buildfile_text),
        "interface": [p.to_dict() for p in iface.params],
    }
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def compile_operator(
    src: OperatorSource,
    config: Config | None = None,
    iface: OperatorInterface | None = None,
) -> CompiledArtifacts:
    config = config or Config()
    iface = iface or extract_interface(src)
    script = generate_script(src)
    buildfile = generate_buildfile(src, iface, config.base_image, config.container_path)
    image_ref = config.image_repo(src.name)
    return CompiledArtifacts(
        name=src.name,
        description=src.description,
        interface=iface,
        script_text=script,
        entrypoint_text=generate_entrypoint(iface),
        buildfile_text=buildfile,
        component_descriptor_text=generate_component_descriptor(
            iface, image_ref, src.description, config.container_path
        ),
        digest=compute_digest(script, buildfile, iface),
        image_ref=image_ref,
        container_path=config.container_path,
    )
