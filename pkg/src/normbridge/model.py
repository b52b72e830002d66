"""Shared domain types for the mediation pipeline.

Everything here is an immutable value object. Session mutation happens only
inside the per-session serial executor (see runtime.py), which swaps whole
SessionState values.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import TYPE_CHECKING, Any, Iterator, Mapping, Sequence

if TYPE_CHECKING:
    from .engine import EngineState


class Role(str, Enum):
    """The two interlocutor identities of a session."""

    SME = "SME"
    FLE = "FLE"


def other_role(role: Role) -> Role:
    return Role.FLE if role is Role.SME else Role.SME


class Impact(str, Enum):
    LOW = "Low"
    HIGH = "High"


class DeliveryKind(str, Enum):
    TRANSLATION = "Translation"
    REMEDIATION = "Remediation"


class SenderChoice(str, Enum):
    TRANSLATION = "Translation"
    REMEDIATION = "Remediation"
    TIMED_OUT = "TimedOut"


class Provenance(str, Enum):
    PRIMARY = "PrimaryBackend"
    BACKUP = "BackupBackend"


OTHER_CATEGORY = "Other"


class CategorySet:
    """Seven configured norm-category names plus the mandatory ``Other``.

    Category names are deployment configuration, not code; the only hard
    requirements are the cardinality (exactly 8 including ``Other``) and that
    ``Other`` is always the final entry.
    """

    __slots__ = ("_names",)

    def __init__(self, names: Sequence[str]) -> None:
        cleaned = [str(n).strip() for n in names]
        if any(not n for n in cleaned):
            raise ValueError("category names must be non-empty")
        if OTHER_CATEGORY in cleaned:
            raise ValueError(f"{OTHER_CATEGORY!r} is appended automatically; do not configure it")
        if len(cleaned) != 7:
            raise ValueError(f"expected exactly 7 category names, got {len(cleaned)}")
        if len(set(cleaned)) != 7:
            raise ValueError("category names must be distinct")
        self._names: tuple[str, ...] = tuple(cleaned) + (OTHER_CATEGORY,)

    @property
    def names(self) -> tuple[str, ...]:
        return self._names

    @property
    def other(self) -> str:
        return OTHER_CATEGORY

    def index(self, name: str) -> int:
        try:
            return self._names.index(name)
        except ValueError:
            raise KeyError(f"unknown norm category: {name!r}") from None

    def __getitem__(self, index: int) -> str:
        return self._names[index]

    def __contains__(self, name: object) -> bool:
        return name in self._names

    def __iter__(self) -> Iterator[str]:
        return iter(self._names)

    def __len__(self) -> int:
        return len(self._names)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, CategorySet) and self._names == other._names

    def __repr__(self) -> str:
        return f"CategorySet({list(self._names[:-1])!r})"


@dataclass(frozen=True)
class Utterance:
    """One recorded utterance with its identity token and translation."""

    id: str
    speaker: Role
    source_text: str
    source_lang: str
    target_lang: str
    received_at: float
    translated_text: str | None = None

    def text_for_analysis(self) -> str:
        """Translated text once available, source text before that."""
        return self.translated_text if self.translated_text is not None else self.source_text


@dataclass(frozen=True)
class NormAnalysis:
    """Norm category plus violation verdict for one utterance.

    ``impact`` is never set for non-violations. For violations it is filled
    in by the generation stage, so a violated analysis may transiently carry
    ``impact=None``; completed turns always have it set (checked by
    ``append_turn``).
    """

    category: str
    violated: bool
    impact: Impact | None = None

    def __post_init__(self) -> None:
        if not self.violated and self.impact is not None:
            raise ValueError("impact applies only to violated utterances")


@dataclass(frozen=True)
class CorrectionBundle:
    """Translation, remediation and justification texts for a violated turn."""

    translation: str
    remediation: str
    justification: str
    remediation_provenance: Provenance
    justification_provenance: Provenance

    def __post_init__(self) -> None:
        if not self.remediation:
            raise ValueError("remediation must be non-empty")
        if not self.justification:
            raise ValueError("justification must be non-empty")


@dataclass(frozen=True)
class DialogueTurn:
    """One utterance's trip through the pipeline, up to delivery."""

    utterance: Utterance
    analysis: NormAnalysis | None = None
    bundle: CorrectionBundle | None = None
    delivered_text: str | None = None
    delivery_kind: DeliveryKind | None = None
    sender_choice: SenderChoice | None = None
    delivering_at: float | None = None
    error_notice: str | None = None

    def __post_init__(self) -> None:
        if self.delivery_kind is DeliveryKind.REMEDIATION:
            if self.bundle is None or self.delivered_text != self.bundle.remediation:
                raise ValueError("remediation delivery must carry the bundle's remediation text")
        if self.sender_choice is not None:
            if self.analysis is None or self.analysis.impact is not Impact.HIGH:
                raise ValueError("sender_choice is set only for high-impact turns")

    @property
    def id(self) -> str:
        return self.utterance.id

    @property
    def completed(self) -> bool:
        return self.delivered_text is not None


class PendingTurnMismatch(ValueError):
    """The turn being appended is not the session's pending turn."""


@dataclass(frozen=True)
class SessionState:
    """FSM state plus ordered dialogue history for one two-party session."""

    session_id: str
    fsm_state: "EngineState"
    lang_by_role: Mapping[Role, str]
    history: tuple[DialogueTurn, ...] = ()
    pending: DialogueTurn | None = None
    meta: Mapping[str, Any] = field(default_factory=dict)


def append_turn(session: SessionState, turn: DialogueTurn) -> SessionState:
    """Append a completed turn to the history and clear the pending slot.

    History is append-only and its timestamps are non-decreasing; both are
    enforced here rather than trusted.
    """
    if turn.delivered_text is None:
        raise ValueError(f"turn {turn.id} has no delivered_text; cannot append")
    if (
        turn.analysis is not None
        and turn.analysis.violated
        and turn.analysis.impact is None
        and turn.error_notice is None  # faulted turns may miss the impact stage
    ):
        raise ValueError(f"turn {turn.id} is violated but carries no impact level")
    if session.pending is not None and session.pending.id != turn.id:
        raise PendingTurnMismatch(
            f"pending turn is {session.pending.id}, refusing to append {turn.id}"
        )
    if session.history and turn.utterance.received_at < session.history[-1].utterance.received_at:
        raise ValueError("history timestamps must be non-decreasing")
    return replace(session, history=session.history + (turn,), pending=None)


def context_window(session: SessionState, n: int) -> list[Utterance]:
    """Last ``min(n, len(history))`` utterances plus the pending one, oldest first."""
    if n < 0:
        raise ValueError("window size must be >= 0")
    window = [t.utterance for t in session.history[len(session.history) - n :]] if n else []
    if session.pending is not None:
        window.append(session.pending.utterance)
    return window
