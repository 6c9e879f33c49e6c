"""Compile convention-following notebooks and scripts into containerised
operators, keep a versioned catalog of them, and run them locally."""

from .catalog import Catalog, CatalogEntry, Version
from .codegen import CompiledArtifacts, compile_operator
from .config import Config, load_config
from .ingest import OperatorSource, Role, category_of, extract_dependencies, load_operator_source
from .interface import OperatorInterface, Parameter, extract_interface, validate_interface
from .pipeline import PipelineSpec, RunRecord, execute_pipeline, load_pipeline
from .runner import RunRequest, RunResult, RuntimeBackend, bridge_stream, run_operator

__all__ = [
    "Catalog",
    "CatalogEntry",
    "CompiledArtifacts",
    "Config",
    "OperatorInterface",
    "OperatorSource",
    "Parameter",
    "PipelineSpec",
    "Role",
    "RunRecord",
    "RunRequest",
    "RunResult",
    "RuntimeBackend",
    "Version",
    "bridge_stream",
    "category_of",
    "compile_operator",
    "execute_pipeline",
    "extract_dependencies",
    "extract_interface",
    "load_config",
    "load_operator_source",
    "run_operator",
    "validate_interface",
]

__version__ = "0.1.0"
