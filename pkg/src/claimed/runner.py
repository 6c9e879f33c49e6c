"""Run a single operator on docker, podman or as a local process.

Container runtimes are driven by shelling out; every command goes through a
:class:`Shell`, so tests can swap in a recorder. The argv templates are::

    <bin> version                                  probe
    <bin> image inspect <image>                    presence check
    <bin> pull <image>                             fetch when absent
    <bin> run --rm -e K=V ... -v <host>:<data> <image> [k=v ...]
    <bin> build -t <image> -f <dir>/Dockerfile <dir>
    <bin> push <image>

The process backend runs the compiled bootstrap (``sh entrypoint.sh``) from
the catalog's artifact store with the parameters in its environment.
"""

from __future__ import annotations

import logging
import os
import shutil
import socket
import subprocess
import sys
import threading
import time
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import IO, Mapping

from .catalog import Catalog, CatalogEntry
from .config import RUNTIME_ENV, Config, claimed_home
from .errors import (
    ClaimedError,
    ImageBuildFailed,
    ImagePullFailed,
    MissingRequiredInput,
    NotStreamable,
    OperatorFailed,
    RuntimeUnavailable,
    StreamTimeout,
    UnknownParameter,
)
from .interface import Direction

log = logging.getLogger(__name__)

STREAM_PORT_ENV = "claimed_stream_port"
STREAM_URL_ENV = "claimed_stream_url"
STREAM_TIMEOUT = 30.0
CONTAINER_HOST_ALIAS = "host.docker.internal"


class BackendKind(str, Enum):
    DOCKER = "docker"
    PODMAN = "podman"
    PROCESS = "process"


class StreamRole(str, Enum):
    NONE = "none"
    PRODUCER = "producer"
    CONSUMER = "consumer"


class Shell:
    """Executes external commands. Replace with a recorder to test argv."""

    def run(self, argv: list[str]) -> subprocess.CompletedProcess:
        return subprocess.run(argv, capture_output=True, text=True, check=False)

    def popen(self, argv: list[str], *, env: Mapping[str, str] | None = None, cwd: str | None = None):
        return subprocess.Popen(
            argv,
            env=dict(env) if env is not None else None,
            cwd=cwd,
            stdin=subprocess.DEVNULL,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
        )


@dataclass
class RuntimeBackend:
    kind: BackendKind
    binary_path: str | None = None
    shell: Shell = field(default_factory=Shell)
    _probed: bool = field(default=False, repr=False)

    def __post_init__(self) -> None:
        self.kind = BackendKind(self.kind)
        if self.is_container and not self.binary_path:
            self.binary_path = self.kind.value

    @property
    def is_container(self) -> bool:
        return self.kind != BackendKind.PROCESS

    def _bin(self) -> str:
        assert self.binary_path
        return self.binary_path

    def _call(self, argv: list[str]) -> subprocess.CompletedProcess:
        try:
            return self.shell.run(argv)
        except OSError as exc:
            raise RuntimeUnavailable(f"cannot execute {argv[0]}: {exc}") from exc

    def probe(self) -> None:
        if not self.is_container or self._probed:
            return
        res = self._call([self._bin(), "version"])
        if res.returncode != 0:
            raise RuntimeUnavailable(
                f"{self.kind.value} is not usable ({self._bin()} version exited {res.returncode})"
            )
        self._probed = True

    def ensure_image(self, image: str) -> None:
        self.probe()
        if self._call([self._bin(), "image", "inspect", image]).returncode == 0:
            return
        res = self._call([self._bin(), "pull", image])
        if res.returncode != 0:
            raise ImagePullFailed(f"pulling {image} failed: {(res.stderr or '').strip()}")

    def run_argv(
        self,
        image: str,
        env: list[tuple[str, str]],
        host_dir: Path,
        container_dir: str,
        *,
        args: list[str] = (),
        publish_port: int | None = None,
        add_host: bool = False,
    ) -> list[str]:
        argv = [self._bin(), "run", "--rm"]
        for k, v in env:
            argv += ["-e", f"{k}={v}"]
        argv += ["-v", f"{host_dir}:{container_dir.rstrip('/') or '/'}"]
        if publish_port is not None:
            argv += ["-p", f"127.0.0.1:{publish_port}:{publish_port}"]
        if add_host:
            argv += ["--add-host", f"{CONTAINER_HOST_ALIAS}:host-gateway"]
        argv.append(image)
        argv += list(args)
        return argv

    def build(self, image_ref: str, context_dir: str | Path) -> None:
        self.probe()
        context = Path(context_dir)
        res = self._call([self._bin(), "build", "-t", image_ref, "-f", str(context / "Dockerfile"), str(context)])
        if res.returncode != 0:
            raise ImageBuildFailed(f"building {image_ref} failed: {(res.stderr or '').strip()}")

    def push(self, image_ref: str) -> None:
        self.probe()
        res = self._call([self._bin(), "push", image_ref])
        if res.returncode != 0:
            raise ImageBuildFailed(f"pushing {image_ref} failed: {(res.stderr or '').strip()}")


def detect_backend(env: Mapping[str, str] | None = None, shell: Shell | None = None) -> RuntimeBackend:
    """``CLAIMED_RUNTIME`` wins; otherwise docker, then podman, then the process backend."""
    env = os.environ if env is None else env
    shell = shell or Shell()
    forced = env.get(RUNTIME_ENV)
    if forced:
        try:
            kind = BackendKind(forced)
        except ValueError:
            raise ClaimedError(f"{RUNTIME_ENV}={forced!r}: expected docker, podman or process") from None
        path = shutil.which(kind.value) if kind != BackendKind.PROCESS else None
        return RuntimeBackend(kind, path or (kind.value if kind != BackendKind.PROCESS else None), shell)
    for kind in (BackendKind.DOCKER, BackendKind.PODMAN):
        path = shutil.which(kind.value)
        if not path:
            continue
        backend = RuntimeBackend(kind, path, shell)
        try:
            backend.probe()
        except RuntimeUnavailable:
            continue
        return backend
    log.warning("no usable docker or podman found; falling back to the process backend")
    return RuntimeBackend(BackendKind.PROCESS, None, shell)


@dataclass
class RunRequest:
    entry: CatalogEntry
    params: dict[str, str]
    data_dir_host: Path
    backend: RuntimeBackend
    # catalog artifact directory; needed by the process backend only
    artifact_dir: Path | None = None
    stream_role: StreamRole = StreamRole.NONE
    stream_peer: str | None = None
    # "env" injects params as environment variables, "argv" as k=v arguments
    transport: str = "env"
    config: Config = field(default_factory=Config)


@dataclass
class RunResult:
    exit_code: int
    stdout_log: str
    stderr_log: str
    duration: float
    data_dir_host: Path

    def to_dict(self) -> dict:
        return {
            "exit_code": self.exit_code,
            "stdout_log": self.stdout_log,
            "stderr_log": self.stderr_log,
            "duration": self.duration,
            "data_dir_host": str(self.data_dir_host),
        }


def make_request(
    catalog: Catalog,
    spec: str,
    params: Mapping[str, str],
    data_dir_host: Path,
    backend: RuntimeBackend,
    **kwargs,
) -> RunRequest:
    entry = catalog.resolve(spec)
    return RunRequest(
        entry=entry,
        params=dict(params),
        data_dir_host=Path(data_dir_host),
        backend=backend,
        artifact_dir=catalog.artifact_dir(entry),
        config=catalog.config,
        **kwargs,
    )


def validate_request(req: RunRequest) -> None:
    iface = req.entry.interface
    declared = set(iface.names)
    for key in req.params:
        if key not in declared:
            raise UnknownParameter(key)
    for p in iface.params:
        if p.direction == Direction.INPUT_REQUIRED and p.name not in req.params:
            raise MissingRequiredInput(p.name)


def new_run_id() -> str:
    return f"{datetime.now(timezone.utc):%Y%m%dT%H%M%SZ}-{uuid.uuid4().hex[:8]}"


def provision_data_dir(run_id: str, home: str | Path | None = None) -> Path:
    """Create (idempotently) and return ``<home>/runs/<run_id>/data``."""
    home = Path(home) if home is not None else claimed_home()
    path = home / "runs" / run_id / "data"
    path.mkdir(parents=True, exist_ok=True)
    return path


def data_dir_value(path: str | Path) -> str:
    """Operators concatenate ``data_dir + filename``, so keep a trailing slash."""
    return str(path).rstrip(os.sep) + os.sep


def _pump(stream: IO[bytes], sink: IO[str] | None, buf: list[str]) -> None:
    for raw in iter(stream.readline, b""):
        text = raw.decode("utf-8", errors="replace")
        buf.append(text)
        if sink is not None:
            try:
                sink.write(text)
                sink.flush()
            except (ValueError, OSError):
                pass
    stream.close()


class Execution:
    """One launched operator; :func:`run_operator` is ``start()`` + ``wait()``."""

    def __init__(
        self,
        req: RunRequest,
        *,
        stdout: IO[str] | None = None,
        stderr: IO[str] | None = None,
        extra_env: Mapping[str, str] | None = None,
        publish_port: int | None = None,
        add_host: bool = False,
    ):
        self.req = req
        self.stdout = stdout
        self.stderr = stderr
        self.extra_env = dict(extra_env or {})
        self.publish_port = publish_port
        self.add_host = add_host
        self.proc = None
        self._out: list[str] = []
        self._err: list[str] = []
        self._threads: list[threading.Thread] = []
        self._t0 = 0.0

    def command(self) -> tuple[list[str], dict[str, str] | None, str | None]:
        req = self.req
        params = list(req.params.items())
        args = [f"{k}={v}" for k, v in params] if req.transport == "argv" else []
        env_pairs = params if req.transport == "env" else []
        if req.backend.is_container:
            if "data_dir" not in req.params:
                env_pairs = env_pairs + [("data_dir", req.config.data_path)]
            env_pairs = env_pairs + list(self.extra_env.items())
            argv = req.backend.run_argv(
                req.entry.image_ref,
                env_pairs,
                Path(req.data_dir_host).resolve(),
                req.config.data_path,
                args=args,
                publish_port=self.publish_port,
                add_host=self.add_host,
            )
            return argv, None, None
        if req.artifact_dir is None:
            raise ClaimedError("the process backend needs the operator's artifact directory")
        entrypoint = Path(req.artifact_dir) / "entrypoint.sh"
        if not entrypoint.exists():
            raise ClaimedError(f"compiled artifacts missing: {entrypoint}")
        env = dict(os.environ)
        env.setdefault("CLAIMED_PYTHON", sys.executable)
        env.update(env_pairs)
        if "data_dir" not in req.params:
            env["data_dir"] = data_dir_value(req.data_dir_host)
        env.update(self.extra_env)
        return ["sh", str(entrypoint), *args], env, str(req.data_dir_host)

    def start(self) -> "Execution":
        validate_request(self.req)
        argv, env, cwd = self.command()
        if self.req.backend.is_container:
            self.req.backend.ensure_image(self.req.entry.image_ref)
        stdout = self.stdout if self.stdout is not None else sys.stdout
        stderr = self.stderr if self.stderr is not None else sys.stderr
        self._t0 = time.monotonic()
        try:
            self.proc = self.req.backend.shell.popen(argv, env=env, cwd=cwd)
        except OSError as exc:
            raise RuntimeUnavailable(f"cannot launch {argv[0]}: {exc}") from exc
        for stream, sink, buf in ((self.proc.stdout, stdout, self._out), (self.proc.stderr, stderr, self._err)):
            t = threading.Thread(target=_pump, args=(stream, sink, buf), daemon=True)
            t.start()
            self._threads.append(t)
        return self

    def alive(self) -> bool:
        return self.proc is not None and self.proc.poll() is None

    def terminate(self, grace: float = 5.0) -> None:
        if not self.alive():
            return
        self.proc.terminate()
        try:
            self.proc.wait(timeout=grace)
        except subprocess.TimeoutExpired:
            self.proc.kill()

    def wait(self) -> RunResult:
        try:
            code = self.proc.wait()
        except KeyboardInterrupt:
            self.terminate()
            raise
        for t in self._threads:
            t.join()
        if code < 0:
            code = 128 - code
        return RunResult(
            exit_code=code,
            stdout_log="".join(self._out),
            stderr_log="".join(self._err),
            duration=time.monotonic() - self._t0,
            data_dir_host=Path(self.req.data_dir_host),
        )


def run_operator(
    req: RunRequest,
    *,
    stdout: IO[str] | None = None,
    stderr: IO[str] | None = None,
    check: bool = True,
) -> RunResult:
    """Validate, launch and wait for one operator.

    Raises :class:`OperatorFailed` (carrying the result) on a nonzero exit
    unless ``check`` is false.
    """
    result = Execution(req, stdout=stdout, stderr=stderr).start().wait()
    if check and result.exit_code != 0:
        raise OperatorFailed(result)
    return result


def free_port() -> int:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def _listening(port: int) -> bool:
    try:
        with socket.create_connection(("127.0.0.1", port), timeout=0.25):
            return True
    except OSError:
        return False


def bridge_stream(
    producer_req: RunRequest,
    consumer_req: RunRequest,
    *,
    timeout: float = STREAM_TIMEOUT,
    stdout: IO[str] | None = None,
    stderr: IO[str] | None = None,
) -> tuple[RunResult, RunResult]:
    """Run a streaming producer/consumer pair connected over loopback HTTP.

    The consumer starts first and gets ``claimed_stream_port``; once that
    port accepts connections the producer starts with ``claimed_stream_url``.
    """
    for side, req in (("producer", producer_req), ("consumer", consumer_req)):
        if not req.entry.interface.streaming:
            raise NotStreamable(
                f"{side} {req.entry.spec} does not declare streaming support (claimed_stream parameter)"
            )
        validate_request(req)

    port = free_port()
    consumer_req.stream_role = StreamRole.CONSUMER
    producer_req.stream_role = StreamRole.PRODUCER
    consumer = Execution(
        consumer_req,
        stdout=stdout,
        stderr=stderr,
        extra_env={STREAM_PORT_ENV: str(port)},
        publish_port=port if consumer_req.backend.is_container else None,
    ).start()

    deadline = time.monotonic() + timeout
    while not _listening(port):
        if not consumer.alive():
            result = consumer.wait()
            if result.exit_code != 0:
                exc = OperatorFailed(result)
                exc.role = "consumer"
                raise exc
            raise StreamTimeout(f"consumer {consumer_req.entry.spec} exited without listening on port {port}")
        if time.monotonic() >= deadline:
            consumer.terminate()
            consumer.wait()
            raise StreamTimeout(f"consumer {consumer_req.entry.spec} did not listen on port {port} within {timeout:g}s")
        time.sleep(0.05)

    host = CONTAINER_HOST_ALIAS if producer_req.backend.is_container else "127.0.0.1"
    url = f"http://{host}:{port}/"
    producer_req.stream_peer = f"{host}:{port}"
    consumer_req.stream_peer = f"{host}:{port}"
    try:
        producer = Execution(
            producer_req,
            stdout=stdout,
            stderr=stderr,
            extra_env={STREAM_URL_ENV: url},
            add_host=producer_req.backend.is_container,
        ).start()
        produced = producer.wait()
    except BaseException:
        consumer.terminate()
        raise
    if produced.exit_code != 0:
        consumer.terminate()
        consumed = consumer.wait()
        exc = OperatorFailed(produced)
        exc.role = "producer"
        exc.peer_result = consumed
        raise exc
    consumed = consumer.wait()
    if consumed.exit_code != 0:
        exc = OperatorFailed(consumed)
        exc.role = "consumer"
        exc.peer_result = produced
        raise exc
    return produced, consumed
