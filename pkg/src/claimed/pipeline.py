"""Local executor for declarative multi-step operator pipelines.

Pipeline document (YAML)::

    name: upload-and-list
    steps:
      - id: upload
        operator: output-upload-to-cos:0.2
        params: {source_file: x.csv}
      - id: list
        operator: util-cos
        params: {path: "${steps.upload.params.source_file}"}
        depends_on: [upload]

All steps of a run share one data directory. A failed step marks every
transitive dependent as skipped.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import IO

import yaml

from .catalog import Catalog
from .config import claimed_home
from .errors import (
    ClaimedError,
    CycleDetected,
    OperatorFailed,
    ParseError,
    PipelineError,
    UnknownStepRef,
)
from .runner import (
    RunResult,
    RuntimeBackend,
    bridge_stream,
    make_request,
    new_run_id,
    provision_data_dir,
    run_operator,
)

STEP_ID_RE = re.compile(r"^[A-Za-z0-9_-]+$")
PARAM_KEY_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
REF_RE = re.compile(r"\$\{steps\.([A-Za-z0-9_-]+)\.params\.([A-Za-z_][A-Za-z0-9_]*)\}")

PENDING, RUNNING, SUCCEEDED, FAILED, SKIPPED = "pending", "running", "succeeded", "failed", "skipped"


@dataclass(frozen=True)
class Step:
    id: str
    operator: str
    params: dict[str, str] = field(default_factory=dict)
    depends_on: tuple[str, ...] = ()
    stream_to: str | None = None
    line: int | None = None

    def to_dict(self) -> dict:
        d = {"id": self.id, "operator": self.operator, "params": dict(self.params)}
        if self.depends_on:
            d["depends_on"] = list(self.depends_on)
        if self.stream_to:
            d["stream_to"] = self.stream_to
        return d


@dataclass(frozen=True)
class PipelineSpec:
    name: str
    steps: tuple[Step, ...]

    def step(self, step_id: str) -> Step:
        return next(s for s in self.steps if s.id == step_id)

    def to_dict(self) -> dict:
        return {"name": self.name, "steps": [s.to_dict() for s in self.steps]}


def _scalar(value) -> str:
    if isinstance(value, (dict, list)):
        raise TypeError("parameter values must be scalars")
    return "" if value is None else str(value)


def load_pipeline(path: str | Path) -> PipelineSpec:
    path = Path(path)
    return parse_pipeline(path.read_text(encoding="utf-8"), source=str(path))


def parse_pipeline(text: str, source: str = "<pipeline>") -> PipelineSpec:
    try:
        root = yaml.compose(text)
        doc = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        raise ParseError(f"{source}: {exc.problem or exc}", mark.line + 1 if mark else None) from exc
    except yaml.YAMLError as exc:
        raise ParseError(f"{source}: {exc}") from exc

    if not isinstance(doc, dict):
        raise ParseError(f"{source}: top level must be a mapping with 'name' and 'steps'", 1)
    unknown = set(doc) - {"name", "steps"}
    if unknown:
        raise ParseError(f"{source}: unknown top-level keys {sorted(unknown)}", 1)
    steps_raw = doc.get("steps")
    if steps_raw is None:
        steps_raw = []
    if not isinstance(steps_raw, list):
        raise ParseError(f"{source}: 'steps' must be a list", _key_line(root, "steps"))
    step_lines = _step_lines(root)

    steps: list[Step] = []
    for i, raw in enumerate(steps_raw):
        line = step_lines[i] if i < len(step_lines) else None
        steps.append(_parse_step(raw, line, source))
    spec = PipelineSpec(name=str(doc.get("name") or Path(source).stem), steps=tuple(steps))
    validate_pipeline(spec)
    return spec


def _key_line(root, key: str) -> int | None:
    if isinstance(root, yaml.MappingNode):
        for k, v in root.value:
            if getattr(k, "value", None) == key:
                return v.start_mark.line + 1
    return None


def _step_lines(root) -> list[int]:
    if isinstance(root, yaml.MappingNode):
        for k, v in root.value:
            if getattr(k, "value", None) == "steps" and isinstance(v, yaml.SequenceNode):
                return [n.start_mark.line + 1 for n in v.value]
    return []


def _parse_step(raw, line: int | None, source: str) -> Step:
    if not isinstance(raw, dict):
        raise ParseError(f"{source}: each step must be a mapping", line)
    unknown = set(raw) - {"id", "operator", "params", "depends_on", "stream_to"}
    if unknown:
        raise ParseError(f"{source}: step has unknown keys {sorted(unknown)}", line)
    step_id = raw.get("id")
    if not isinstance(step_id, str) or not STEP_ID_RE.match(step_id):
        raise ParseError(f"{source}: step id {step_id!r} must match {STEP_ID_RE.pattern}", line)
    operator = raw.get("operator")
    if not isinstance(operator, str) or not operator:
        raise ParseError(f"{source}: step {step_id!r} needs an 'operator'", line)
    params_raw = raw.get("params") or {}
    if not isinstance(params_raw, dict):
        raise ParseError(f"{source}: params of step {step_id!r} must be a mapping", line)
    params = {}
    for k, v in params_raw.items():
        if not isinstance(k, str) or not PARAM_KEY_RE.match(k):
            raise ParseError(f"{source}: step {step_id!r} has invalid parameter name {k!r}", line)
        try:
            params[k] = _scalar(v)
        except TypeError:
            raise ParseError(f"{source}: parameter {k!r} of step {step_id!r} must be a scalar", line) from None
    deps = raw.get("depends_on") or []
    if isinstance(deps, str):
        deps = [deps]
    if not isinstance(deps, list) or not all(isinstance(d, str) for d in deps):
        raise ParseError(f"{source}: depends_on of step {step_id!r} must be a list of step ids", line)
    stream_to = raw.get("stream_to")
    if stream_to is not None and not isinstance(stream_to, str):
        raise ParseError(f"{source}: stream_to of step {step_id!r} must be a step id", line)
    return Step(step_id, operator, params, tuple(deps), stream_to, line)


def _find_cycle(spec: PipelineSpec) -> list[str] | None:
    deps = {s.id: s.depends_on for s in spec.steps}
    color: dict[str, int] = {}
    stack: list[str] = []

    def visit(node: str) -> list[str] | None:
        color[node] = 1
        stack.append(node)
        for d in deps[node]:
            if color.get(d) == 1:
                return stack[stack.index(d):] + [d]
            if d not in color:
                found = visit(d)
                if found:
                    return found
        stack.pop()
        color[node] = 2
        return None

    for s in spec.steps:
        if s.id not in color:
            found = visit(s.id)
            if found:
                # reported in execution direction: dependency first
                return list(reversed(found))
    return None


def ancestors(spec: PipelineSpec, step_id: str) -> set[str]:
    deps = {s.id: s.depends_on for s in spec.steps}
    seen: set[str] = set()
    todo = list(deps[step_id])
    while todo:
        d = todo.pop()
        if d not in seen:
            seen.add(d)
            todo.extend(deps[d])
    return seen


def validate_pipeline(spec: PipelineSpec) -> None:
    ids: set[str] = set()
    for s in spec.steps:
        if s.id in ids:
            raise ParseError(f"duplicate step id {s.id!r}", s.line)
        ids.add(s.id)
    for s in spec.steps:
        for d in s.depends_on:
            if d not in ids:
                raise UnknownStepRef(f"step {s.id!r} depends on unknown step {d!r}")
        if s.stream_to is not None and s.stream_to not in ids:
            raise UnknownStepRef(f"step {s.id!r} streams to unknown step {s.stream_to!r}")
    cycle = _find_cycle(spec)
    if cycle:
        raise CycleDetected(cycle)

    targets: dict[str, str] = {}
    for s in spec.steps:
        if s.stream_to is None:
            continue
        if s.stream_to == s.id:
            raise PipelineError(f"step {s.id!r} cannot stream to itself")
        if s.stream_to in targets:
            raise PipelineError(f"step {s.stream_to!r} is the stream target of more than one step")
        if s.id in targets or any(t.stream_to for t in spec.steps if t.id == s.stream_to):
            raise PipelineError(f"step {s.id!r}: streaming chains longer than a pair are not supported")
        if s.id not in spec.step(s.stream_to).depends_on:
            raise PipelineError(f"stream target {s.stream_to!r} must list {s.id!r} in depends_on")
        targets[s.stream_to] = s.id

    for s in spec.steps:
        before = ancestors(spec, s.id)
        for value in s.params.values():
            for ref_step, ref_param in REF_RE.findall(value):
                if ref_step not in ids:
                    raise UnknownStepRef(f"step {s.id!r} references unknown step {ref_step!r}")
                if ref_step not in before:
                    raise UnknownStepRef(
                        f"step {s.id!r} references step {ref_step!r}, which is not among its dependencies"
                    )
                if ref_param not in spec.step(ref_step).params:
                    raise UnknownStepRef(f"step {s.id!r} references undefined parameter {ref_step}.{ref_param}")
    execution_order(spec)


def execution_order(spec: PipelineSpec) -> list[list[str]]:
    """Scheduling units in execution order.

    A unit is a single step, or a ``[producer, consumer]`` streaming pair.
    Among ready units the one earliest in the document goes first.
    """
    by_id = {s.id: s for s in spec.steps}
    producer_of = {s.stream_to: s.id for s in spec.steps if s.stream_to}
    done: set[str] = set()
    remaining = [s.id for s in spec.steps]
    units: list[list[str]] = []
    while remaining:
        for sid in remaining:
            if sid in producer_of:
                continue
            step = by_id[sid]
            ready = all(d in done for d in step.depends_on)
            if ready and step.stream_to:
                ready = all(d in done or d == sid for d in by_id[step.stream_to].depends_on)
            if ready:
                unit = [sid] + ([step.stream_to] if step.stream_to else [])
                break
        else:
            raise PipelineError("streaming pair cannot be scheduled: " + ", ".join(remaining))
        units.append(unit)
        done.update(unit)
        remaining = [r for r in remaining if r not in unit]
    return units


def substitute(value: str, resolved: dict[str, dict[str, str]]) -> str:
    return REF_RE.sub(lambda m: resolved[m.group(1)][m.group(2)], value)


@dataclass
class StepResult:
    status: str = PENDING
    operator: str | None = None
    result: RunResult | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "operator": self.operator,
            "result": self.result.to_dict() if self.result else None,
            "error": self.error,
        }


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


@dataclass
class RunRecord:
    run_id: str
    pipeline: PipelineSpec
    step_results: dict[str, StepResult]
    data_dir_host: Path
    started_at: str
    finished_at: str | None = None

    @property
    def succeeded(self) -> bool:
        return all(r.status == SUCCEEDED for r in self.step_results.values())

    def statuses(self) -> dict[str, str]:
        return {k: v.status for k, v in self.step_results.items()}

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "pipeline": self.pipeline.to_dict(),
            "step_results": {k: v.to_dict() for k, v in self.step_results.items()},
            "data_dir_host": str(self.data_dir_host),
            "started_at": self.started_at,
            "finished_at": self.finished_at,
        }

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        tmp.replace(path)
        return path


def execute_pipeline(
    spec: PipelineSpec,
    catalog: Catalog,
    backend: RuntimeBackend,
    *,
    home: str | Path | None = None,
    run_id: str | None = None,
    stdout: IO[str] | None = None,
    stderr: IO[str] | None = None,
) -> RunRecord:
    home = Path(home) if home is not None else catalog.home if catalog is not None else claimed_home()
    run_id = run_id or new_run_id()
    data_dir = provision_data_dir(run_id, home)
    record = RunRecord(
        run_id=run_id,
        pipeline=spec,
        step_results={s.id: StepResult() for s in spec.steps},
        data_dir_host=data_dir,
        started_at=_now(),
    )
    record_path = home / "runs" / run_id / "record.json"
    record.save(record_path)

    resolved: dict[str, dict[str, str]] = {}
    results = record.step_results
    for unit in execution_order(spec):
        blocked = [
            d
            for sid in unit
            for d in spec.step(sid).depends_on
            if d not in unit and results[d].status in (FAILED, SKIPPED)
        ]
        if blocked:
            for sid in unit:
                results[sid].status = SKIPPED
                results[sid].error = f"dependency {blocked[0]!r} did not succeed"
            record.save(record_path)
            continue

        try:
            requests = []
            for sid in unit:
                step = spec.step(sid)
                params = {k: substitute(v, resolved) for k, v in step.params.items()}
                resolved[sid] = params
                req = make_request(catalog, step.operator, params, data_dir, backend)
                results[sid].operator = req.entry.spec
                requests.append(req)
        except ClaimedError as exc:
            for sid in unit:
                results[sid].status = FAILED
                results[sid].error = str(exc)
            record.save(record_path)
            continue

        for sid in unit:
            results[sid].status = RUNNING
        record.save(record_path)

        if len(unit) == 1:
            sid = unit[0]
            try:
                results[sid].result = run_operator(requests[0], stdout=stdout, stderr=stderr)
                results[sid].status = SUCCEEDED
            except OperatorFailed as exc:
                results[sid].result = exc.result
                results[sid].status = FAILED
                results[sid].error = str(exc)
            except ClaimedError as exc:
                results[sid].status = FAILED
                results[sid].error = str(exc)
        else:
            prod, cons = unit
            try:
                p_res, c_res = bridge_stream(requests[0], requests[1], stdout=stdout, stderr=stderr)
                results[prod].result, results[cons].result = p_res, c_res
                results[prod].status = results[cons].status = SUCCEEDED
            except OperatorFailed as exc:
                role = getattr(exc, "role", "producer")
                failed, other = (prod, cons) if role == "producer" else (cons, prod)
                results[failed].result = exc.result
                results[failed].status = FAILED
                results[failed].error = str(exc)
                results[other].result = getattr(exc, "peer_result", None)
                if role == "producer":
                    results[other].status = SKIPPED
                    results[other].error = f"stream producer {prod!r} failed"
                else:
                    results[other].status = SUCCEEDED if results[other].result else FAILED
            except ClaimedError as exc:
                for sid in unit:
                    results[sid].status = FAILED
                    results[sid].error = str(exc)
        record.save(record_path)

    record.finished_at = _now()
    record.save(record_path)
    return record
