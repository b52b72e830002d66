"""Backend adapter contracts and the primary-to-backup fallback policy.

A backend is any async callable taking a BackendRequest and returning a
task-specific JSON-ish payload:

    ASR / MT / RemediationGen / JustificationGen -> {"text": str}
    CategoryCls   -> {"label": str, "probs": [K floats]?}
    ViolationCls  -> {"violated": bool | "label": "violate"/"adhere",
                      "probs": [p_adhere, p_violate]?}
    ImpactCls     -> {"label": "High" | "Low"}

Classifiers that only emit a discrete label are lifted to a degenerate
one-hot distribution so downstream consumers (the stacking combiner
included) can treat every backend uniformly.
"""

from __future__ import annotations

import asyncio
import logging
import time
from dataclasses import dataclass
from enum import Enum
from typing import Any, Awaitable, Callable, Mapping, Sequence

from ..model import CategorySet, Impact, Provenance, Utterance
from .parsing import GenerationLabels, has_generation_labels, parse_generation

log = logging.getLogger("normbridge.backends")

PROB_ATOL = 1e-9

DEFAULT_CLASSIFIER_TIMEOUT_S = 3.0
DEFAULT_GENERATION_TIMEOUT_S = 10.0


class Task(str, Enum):
    ASR = "ASR"
    MT = "MT"
    CATEGORY_CLS = "CategoryCls"
    VIOLATION_CLS = "ViolationCls"
    IMPACT_CLS = "ImpactCls"
    REMEDIATION_GEN = "RemediationGen"
    JUSTIFICATION_GEN = "JustificationGen"


GENERATION_TASKS = (Task.REMEDIATION_GEN, Task.JUSTIFICATION_GEN)


class BackendKind(str, Enum):
    REMOTE_HTTP = "RemoteHTTP"
    LOCAL_STUB = "LocalStub"
    RULE_BASED = "RuleBased"


def default_timeout_s(task: Task) -> float:
    if task in GENERATION_TASKS:
        return DEFAULT_GENERATION_TIMEOUT_S
    return DEFAULT_CLASSIFIER_TIMEOUT_S


@dataclass(frozen=True)
class BackendSpec:
    task: Task
    kind: BackendKind
    timeout_s: float
    config: Mapping[str, Any]


@dataclass(frozen=True)
class BackendRequest:
    task: Task
    current: Utterance
    context: tuple[Utterance, ...] = ()
    category: str | None = None
    remediation: str | None = None


@dataclass(frozen=True)
class BackendResponse:
    task: Task
    payload: Any
    provenance: Provenance
    latency_s: float


Backend = Callable[[BackendRequest], Awaitable[Any]]


class BackendError(RuntimeError):
    """A backend call failed, timed out, or returned an unusable payload."""


class BothBackendsFailed(BackendError):
    """Primary and backup (if any) both failed; the engine faults the turn."""


@dataclass(frozen=True)
class BoundBackend:
    spec: BackendSpec
    fn: Backend


async def _attempt(bound: BoundBackend, request: BackendRequest, validate) -> Any:
    payload = await asyncio.wait_for(bound.fn(request), timeout=bound.spec.timeout_s)
    return validate(payload)


async def invoke_with_fallback(
    primary: BoundBackend,
    backup: BoundBackend | None,
    request: BackendRequest,
    validate: Callable[[Any], Any] = lambda payload: payload,
) -> BackendResponse:
    """Call the primary; on timeout, error, or bad payload activate the backup.

    The response's provenance records which backend produced it. Raises
    BothBackendsFailed when neither side yields a valid payload.
    """
    started = time.perf_counter()
    try:
        payload = await _attempt(primary, request, validate)
        return BackendResponse(
            request.task, payload, Provenance.PRIMARY, time.perf_counter() - started
        )
    except asyncio.CancelledError:
        raise
    except Exception as primary_err:
        log.warning("primary %s backend failed (%s); activating backup",
                    request.task.value, primary_err)
        if backup is None:
            raise BothBackendsFailed(
                f"{request.task.value}: primary failed ({primary_err}) and no backup configured"
            ) from primary_err
        backup_started = time.perf_counter()
        try:
            payload = await _attempt(backup, request, validate)
        except asyncio.CancelledError:
            raise
        except Exception as backup_err:
            raise BothBackendsFailed(
                f"{request.task.value}: primary failed ({primary_err}); "
                f"backup failed ({backup_err})"
            ) from backup_err
        return BackendResponse(
            request.task, payload, Provenance.BACKUP, time.perf_counter() - backup_started
        )


def as_distribution(probs: Sequence[float] | None, label_index: int, k: int) -> list[float]:
    """Validate a distribution, or lift a discrete label to a one-hot one."""
    if probs is None:
        return [1.0 if i == label_index else 0.0 for i in range(k)]
    values = [float(p) for p in probs]
    if len(values) != k:
        raise BackendError(f"expected {k} probabilities, got {len(values)}")
    if any(p < 0 for p in values):
        raise BackendError("probabilities must be non-negative")
    if abs(sum(values) - 1.0) > PROB_ATOL:
        raise BackendError(f"probabilities sum to {sum(values)!r}, not 1")
    return values


class BackendSet:
    """Typed facade over the per-task primary/backup routes."""

    def __init__(
        self,
        routes: Mapping[Task, tuple[BoundBackend, BoundBackend | None]],
        categories: CategorySet,
        generation_labels: GenerationLabels | None = None,
    ) -> None:
        missing = [t.value for t in Task if t not in routes]
        if missing:
            raise ValueError(f"no backend configured for tasks: {', '.join(missing)}")
        self._routes = dict(routes)
        self._categories = categories
        self._labels = generation_labels

    @property
    def categories(self) -> CategorySet:
        return self._categories

    async def aclose(self) -> None:
        """Close any backend holding live resources (HTTP connection pools)."""
        for primary, backup in self._routes.values():
            for bound in (primary, backup):
                closer = getattr(bound.fn if bound else None, "aclose", None)
                if closer is not None:
                    await closer()

    async def _invoke(self, task: Task, request: BackendRequest, validate) -> BackendResponse:
        primary, backup = self._routes[task]
        return await invoke_with_fallback(primary, backup, request, validate)

    async def transcribe(self, current: Utterance) -> tuple[str, Provenance]:
        def validate(payload: Any) -> str:
            text = _text_payload(payload)
            if not text:
                raise BackendError("transcription produced empty text")
            return text

        resp = await self._invoke(Task.ASR, BackendRequest(Task.ASR, current), validate)
        return resp.payload, resp.provenance

    async def translate(self, current: Utterance) -> tuple[str, Provenance]:
        def validate(payload: Any) -> str:
            text = _text_payload(payload)
            if not text:
                raise BackendError("translation produced empty text")
            return text

        resp = await self._invoke(Task.MT, BackendRequest(Task.MT, current), validate)
        return resp.payload, resp.provenance

    async def classify_category(
        self, context: Sequence[Utterance], current: Utterance
    ) -> tuple[str, list[float], Provenance]:
        if current.translated_text is None:
            raise ValueError("category classification requires the translated text")
        k = len(self._categories)

        def validate(payload: Any) -> tuple[str, list[float]]:
            if not isinstance(payload, Mapping) or "label" not in payload:
                raise BackendError(f"category payload must carry a label: {payload!r}")
            label = str(payload["label"])
            if label not in self._categories:
                raise BackendError(f"unknown category label: {label!r}")
            probs = as_distribution(payload.get("probs"), self._categories.index(label), k)
            return label, probs

        request = BackendRequest(Task.CATEGORY_CLS, current, tuple(context))
        resp = await self._invoke(Task.CATEGORY_CLS, request, validate)
        label, probs = resp.payload
        return label, probs, resp.provenance

    async def detect_violation(
        self, context: Sequence[Utterance], current: Utterance, category: str
    ) -> tuple[bool, list[float], Provenance]:
        def validate(payload: Any) -> tuple[bool, list[float]]:
            violated = _violation_flag(payload)
            probs = as_distribution(
                payload.get("probs") if isinstance(payload, Mapping) else None,
                1 if violated else 0,
                2,
            )
            return violated, probs

        request = BackendRequest(Task.VIOLATION_CLS, current, tuple(context), category=category)
        resp = await self._invoke(Task.VIOLATION_CLS, request, validate)
        violated, probs = resp.payload
        return violated, probs, resp.provenance

    async def classify_impact(self, window: Sequence[Utterance]) -> tuple[Impact, Provenance]:
        if not window:
            raise ValueError("impact classification requires at least the current utterance")

        def validate(payload: Any) -> Impact:
            if not isinstance(payload, Mapping) or "label" not in payload:
                raise BackendError(f"impact payload must carry a label: {payload!r}")
            label = str(payload["label"]).lower()
            if label not in ("high", "low"):
                raise BackendError(f"impact label must be High or Low, got {payload['label']!r}")
            return Impact.HIGH if label == "high" else Impact.LOW

        request = BackendRequest(Task.IMPACT_CLS, window[-1], tuple(window[:-1]))
        resp = await self._invoke(Task.IMPACT_CLS, request, validate)
        return resp.payload, resp.provenance

    async def generate_remediation(
        self,
        context: Sequence[Utterance],
        current: Utterance,
        category: str | None = None,
    ) -> tuple[str, Provenance]:
        resp = await self._invoke(
            Task.REMEDIATION_GEN,
            BackendRequest(Task.REMEDIATION_GEN, current, tuple(context), category=category),
            self._generation_validator(want_justification=False),
        )
        return resp.payload, resp.provenance

    async def generate_justification(
        self,
        context: Sequence[Utterance],
        current: Utterance,
        remediation: str,
        category: str | None = None,
    ) -> tuple[str, Provenance]:
        resp = await self._invoke(
            Task.JUSTIFICATION_GEN,
            BackendRequest(
                Task.JUSTIFICATION_GEN,
                current,
                tuple(context),
                category=category,
                remediation=remediation,
            ),
            self._generation_validator(want_justification=True),
        )
        return resp.payload, resp.provenance

    def _generation_validator(self, want_justification: bool):
        def validate(payload: Any) -> str:
            text = _text_payload(payload)
            # Adapters that answer with one labeled blob carrying both parts
            # are split here; empty generations count as backend errors.
            if has_generation_labels(text, self._labels):
                remediation, justification = parse_generation(text, self._labels)
                text = justification if want_justification else remediation
            if not text.strip():
                raise BackendError("empty generation")
            return text.strip()

        return validate


def _text_payload(payload: Any) -> str:
    if isinstance(payload, str):
        return payload
    if isinstance(payload, Mapping) and isinstance(payload.get("text"), str):
        return payload["text"]
    raise BackendError(f"expected a text payload, got {payload!r}")


def _violation_flag(payload: Any) -> bool:
    if isinstance(payload, Mapping):
        if isinstance(payload.get("violated"), bool):
            return payload["violated"]
        label = payload.get("label")
        if isinstance(label, str) and label.lower() in ("violate", "violates", "adhere", "adheres"):
            return label.lower().startswith("violate")
    raise BackendError(f"violation payload must carry violated/label: {payload!r}")
