"""Exception hierarchy shared by the compiler, catalog, runner and pipeline."""

from __future__ import annotations


class ClaimedError(Exception):
    """Base class for every error this package raises on purpose."""

    exit_code = 1


# -- compilation -----------------------------------------------------------


class CompilationError(ClaimedError):
    """An operator source violates the authoring conventions.

    ``role`` and ``cell`` (the originating notebook cell index or script line)
    are filled in whenever they are known so the CLI can point the author at
    the offending spot.
    """

    def __init__(self, message: str, *, role: str | None = None, cell: int | None = None):
        super().__init__(message)
        self.role = role
        self.cell = cell

    def detail(self) -> str:
        where = []
        if self.cell is not None:
            where.append(f"cell {self.cell}")
        if self.role is not None:
            where.append(f"role '{self.role}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        return prefix + str(self)


class SourceDecodeError(CompilationError):
    pass


_ROLE_HINTS = {
    "name": "start the source with a markdown heading (notebook) or a docstring/comment block (script) naming the operator",
    "description": "describe the operator right below its name",
    "dependencies": "add a code cell with an install directive such as '!pip install <packages>'",
    "interface": "add a code cell declaring parameters, e.g. x = os.environ.get('x', 'default')",
}


class MissingMandatoryCell(CompilationError):
    def __init__(self, role: str):
        hint = _ROLE_HINTS.get(role, "")
        msg = f"missing mandatory cell '{role}'"
        if hint:
            msg += f": {hint}"
        super().__init__(msg, role=role)


class DuplicateRole(CompilationError):
    def __init__(self, role: str, cell: int | None = None, first: int | None = None):
        msg = f"more than one cell claims role '{role}'"
        if first is not None:
            msg += f" (first claimed by cell {first})"
        super().__init__(msg, role=role, cell=cell)


class MalformedCell(CompilationError):
    pass


class InvalidOperatorName(CompilationError):
    def __init__(self, name: str, cell: int | None = None):
        super().__init__(
            f"operator name {name!r} is not lowercase kebab-case (e.g. 'output-upload-to-cos')",
            role="name",
            cell=cell,
        )
        self.name = name


class DuplicateParameter(CompilationError):
    def __init__(self, name: str, cell: int | None = None):
        super().__init__(f"parameter {name!r} is declared more than once", role="interface", cell=cell)
        self.name = name


class EmptyInterface(CompilationError):
    def __init__(self, cell: int | None = None):
        super().__init__(
            "interface cell declares no parameters (no environment-variable reads found)",
            role="interface",
            cell=cell,
        )


class InvalidDefault(CompilationError):
    pass


class InvalidBaseImage(CompilationError):
    pass


# -- catalog ---------------------------------------------------------------


class CatalogError(ClaimedError):
    pass


class CatalogLocked(CatalogError):
    pass


class CorruptCatalog(CatalogError):
    pass


class NotFound(CatalogError):
    def __init__(self, name: str):
        super().__init__(f"operator {name!r} not found in catalog")
        self.name = name


class VersionNotFound(CatalogError):
    def __init__(self, name: str, version: str):
        super().__init__(f"operator {name!r} has no version {version!r}")
        self.name = name
        self.version = version


# -- runner ----------------------------------------------------------------


class RunError(ClaimedError):
    pass


class UnknownParameter(RunError):
    def __init__(self, name: str):
        super().__init__(f"unknown parameter {name!r} (not declared by the operator)")
        self.name = name


class MissingRequiredInput(RunError):
    def __init__(self, name: str):
        super().__init__(f"missing required input {name!r}")
        self.name = name


class NotStreamable(RunError):
    pass


class RuntimeEnvironmentError(ClaimedError):
    """Problems with the local execution substrate rather than the user's input."""

    exit_code = 2


class RuntimeUnavailable(RuntimeEnvironmentError):
    pass


class ImagePullFailed(RuntimeEnvironmentError):
    pass


class ImageBuildFailed(RuntimeEnvironmentError):
    pass


class StreamTimeout(RuntimeEnvironmentError):
    pass


class OperatorFailed(ClaimedError):
    """The operator process ran and exited nonzero; ``result`` holds its logs."""

    def __init__(self, result):
        super().__init__(f"operator exited with code {result.exit_code}")
        self.result = result

    @property
    def exit_code(self) -> int:  # type: ignore[override]
        return self.result.exit_code


# -- pipeline --------------------------------------------------------------


class PipelineError(ClaimedError):
    pass


class ParseError(PipelineError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CycleDetected(PipelineError):
    def __init__(self, cycle: list[str]):
        super().__init__("dependency cycle: " + " -> ".join(cycle))
        self.cycle = cycle


class UnknownStepRef(PipelineError):
    pass
