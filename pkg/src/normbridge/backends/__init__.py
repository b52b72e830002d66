"""Pluggable inference backends for the pipeline's tasks."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

from ..model import CategorySet
from .base import (
    Backend,
    BackendError,
    BackendKind,
    BackendRequest,
    BackendResponse,
    BackendSet,
    BackendSpec,
    BothBackendsFailed,
    BoundBackend,
    Task,
    as_distribution,
    default_timeout_s,
    invoke_with_fallback,
)
from .parsing import DEFAULT_LABELS, GenerationLabels, ParseError, parse_generation
from .remote import RemoteHttpBackend
from .stubs import (
    DelayProvider,
    FaultInjector,
    ScriptedBackend,
    build_stub,
    load_lexicon,
    parse_lexicon,
)

__all__ = [
    "Backend",
    "BackendError",
    "BackendKind",
    "BackendRequest",
    "BackendResponse",
    "BackendSet",
    "BackendSpec",
    "BothBackendsFailed",
    "BoundBackend",
    "DEFAULT_LABELS",
    "DelayProvider",
    "FaultInjector",
    "GenerationLabels",
    "ParseError",
    "RemoteHttpBackend",
    "ScriptedBackend",
    "Task",
    "as_distribution",
    "build_backend",
    "build_backend_set",
    "build_stub",
    "default_timeout_s",
    "invoke_with_fallback",
    "load_lexicon",
    "parse_generation",
    "parse_lexicon",
]


def build_backend(
    spec: BackendSpec,
    categories: CategorySet,
    base_dir: Path | None = None,
    delay_provider: DelayProvider | None = None,
) -> BoundBackend:
    """Materialize a spec into a callable backend."""
    if spec.kind is BackendKind.REMOTE_HTTP:
        url = spec.config.get("url")
        if not url:
            raise ValueError(f"{spec.task.value}: RemoteHTTP spec needs a url")
        return BoundBackend(spec, RemoteHttpBackend(url, spec.timeout_s, spec.config.get("headers")))
    fn = build_stub(spec.task, spec.config, categories, base_dir, delay_provider)
    return BoundBackend(spec, fn)


def build_backend_set(
    routes: Mapping[Task, tuple[BackendSpec, BackendSpec | None]],
    categories: CategorySet,
    base_dir: Path | None = None,
    delay_provider: DelayProvider | None = None,
    generation_labels: GenerationLabels | None = None,
) -> BackendSet:
    bound: dict[Task, tuple[BoundBackend, BoundBackend | None]] = {}
    for task, (primary, backup) in routes.items():
        bound[task] = (
            build_backend(primary, categories, base_dir, delay_provider),
            build_backend(backup, categories, base_dir, delay_provider) if backup else None,
        )
    return BackendSet(bound, categories, generation_labels)
