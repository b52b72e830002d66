"""The main engine's finite-state machine and impact-routing policy.

``advance`` is a pure transition function: it maps (state, event, turn) to the
next state plus a list of actions for the runtime to execute (backend calls,
middleware sends, history appends). All I/O lives in runtime.py.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Union

from .model import (
    CorrectionBundle,
    DeliveryKind,
    DialogueTurn,
    Impact,
    NormAnalysis,
    Role,
    SenderChoice,
    other_role,
)


class EngineState(Enum):
    IDLE = "Idle"
    TRANSCRIBING = "Transcribing"
    TRANSLATING = "Translating"
    ANALYZING = "Analyzing"
    GENERATING = "Generating"
    AWAITING_CHOICE = "AwaitingChoice"
    DELIVERING = "Delivering"
    FAULTED = "Faulted"


class EventKind(Enum):
    SPEECH_RECEIVED = "SpeechReceived"
    TRANSCRIPT_READY = "TranscriptReady"
    TRANSLATION_READY = "TranslationReady"
    ANALYSIS_READY = "AnalysisReady"
    GENERATION_READY = "GenerationReady"
    CHOICE_RECEIVED = "ChoiceReceived"
    CHOICE_TIMEOUT = "ChoiceTimeout"
    BACKEND_ERROR = "BackendError"
    DELIVERY_ACKED = "DeliveryAcked"


@dataclass(frozen=True)
class EngineEvent:
    """One step of pipeline progress for a specific session and turn."""

    kind: EventKind
    session_id: str
    turn_id: str
    text: str | None = None
    analysis: NormAnalysis | None = None
    impact: Impact | None = None
    bundle: CorrectionBundle | None = None
    choice: SenderChoice | None = None
    error: str | None = None


class IllegalTransition(Exception):
    """Event not legal in the current state; the runtime logs and drops it."""

    def __init__(self, state: EngineState, kind: EventKind) -> None:
        super().__init__(f"event {kind.value} is not legal in state {state.value}")
        self.state = state
        self.kind = kind


# Actions emitted by `advance` for the runtime to execute.


@dataclass(frozen=True)
class InvokeAsr:
    turn: DialogueTurn


@dataclass(frozen=True)
class InvokeMt:
    turn: DialogueTurn


@dataclass(frozen=True)
class InvokeAnalysis:
    turn: DialogueTurn


@dataclass(frozen=True)
class InvokeGeneration:
    turn: DialogueTurn


@dataclass(frozen=True)
class SendTranscript:
    turn: DialogueTurn


@dataclass(frozen=True)
class SendTranslation:
    turn: DialogueTurn


@dataclass(frozen=True)
class SendDeliver:
    turn: DialogueTurn
    text: str
    kind: DeliveryKind


@dataclass(frozen=True)
class SendPrompt:
    turn: DialogueTurn


@dataclass(frozen=True)
class StartChoiceTimer:
    turn_id: str


@dataclass(frozen=True)
class CancelChoiceTimer:
    turn_id: str


@dataclass(frozen=True)
class AppendHistory:
    turn: DialogueTurn


@dataclass(frozen=True)
class DropTurn:
    turn: DialogueTurn


@dataclass(frozen=True)
class SendErrorNotice:
    turn: DialogueTurn
    message: str


Action = Union[
    InvokeAsr,
    InvokeMt,
    InvokeAnalysis,
    InvokeGeneration,
    SendTranscript,
    SendTranslation,
    SendDeliver,
    SendPrompt,
    StartChoiceTimer,
    CancelChoiceTimer,
    AppendHistory,
    DropTurn,
    SendErrorNotice,
]


class RouteAction(Enum):
    DELIVER_TRANSLATION = "DeliverTranslation"
    DELIVER_REMEDIATION = "DeliverRemediation"
    PROMPT_SENDER = "PromptSender"


@dataclass(frozen=True)
class RoutingDecision:
    action: RouteAction
    target: Role


class MissingBundle(Exception):
    """A violated turn reached routing without a correction bundle."""


class ChoiceAlreadyResolved(Exception):
    """A second choice arrived for an already-resolved turn; the first wins."""


def route_by_impact(
    analysis: NormAnalysis, bundle: CorrectionBundle | None, sender: Role
) -> RoutingDecision:
    """Low impact auto-delivers the remediation; high impact prompts the sender."""
    if not analysis.violated:
        raise ValueError("route_by_impact applies only to violated turns")
    if bundle is None:
        raise MissingBundle("violated turn has no correction bundle")
    if analysis.impact is Impact.LOW:
        return RoutingDecision(RouteAction.DELIVER_REMEDIATION, other_role(sender))
    return RoutingDecision(RouteAction.PROMPT_SENDER, sender)


def resolve_choice(turn: DialogueTurn, choice: SenderChoice) -> DialogueTurn:
    """Apply the sender's pick between translation and remediation."""
    if choice not in (SenderChoice.TRANSLATION, SenderChoice.REMEDIATION):
        raise ValueError(f"not a sender-selectable choice: {choice}")
    if turn.sender_choice is not None:
        raise ChoiceAlreadyResolved(turn.id)
    if turn.analysis is None or turn.analysis.impact is not Impact.HIGH or turn.bundle is None:
        raise ValueError(f"turn {turn.id} is not awaiting a sender choice")
    if choice is SenderChoice.REMEDIATION:
        return replace(
            turn,
            sender_choice=SenderChoice.REMEDIATION,
            delivery_kind=DeliveryKind.REMEDIATION,
            delivered_text=turn.bundle.remediation,
        )
    return replace(
        turn,
        sender_choice=SenderChoice.TRANSLATION,
        delivery_kind=DeliveryKind.TRANSLATION,
        delivered_text=turn.bundle.translation,
    )


@dataclass(frozen=True)
class TimeoutPolicy:
    """What to deliver when the sender never answers a high-impact prompt.

    The unmodified translation is the default: it is what the sender actually
    said, and substituting a rewrite without consent is the riskier call.
    """

    deliver: DeliveryKind = DeliveryKind.TRANSLATION
    timeout_s: float = 60.0


def timeout_choice(turn: DialogueTurn, policy: TimeoutPolicy) -> DialogueTurn:
    """Resolve an expired prompt per the configured timeout policy."""
    if turn.sender_choice is not None:
        raise ChoiceAlreadyResolved(turn.id)
    if turn.analysis is None or turn.analysis.impact is not Impact.HIGH or turn.bundle is None:
        raise ValueError(f"turn {turn.id} is not awaiting a sender choice")
    if policy.deliver is DeliveryKind.REMEDIATION:
        text = turn.bundle.remediation
    else:
        text = turn.bundle.translation
    return replace(
        turn,
        sender_choice=SenderChoice.TIMED_OUT,
        delivery_kind=policy.deliver,
        delivered_text=text,
    )


class LatencyPath(str, Enum):
    NO_REMEDIATION = "NoRemediation"
    LOW_IMPACT = "LowImpact"
    HIGH_IMPACT = "HighImpact"


@dataclass(frozen=True)
class LatencyRecord:
    turn_id: str
    path: LatencyPath
    elapsed_s: float


def record_latency(turn: DialogueTurn) -> LatencyRecord:
    """Elapsed time from speech arrival to delivery entry, keyed by pipeline path."""
    if turn.delivering_at is None:
        raise ValueError(f"turn {turn.id} never reached delivery")
    if turn.analysis is None or not turn.analysis.violated:
        path = LatencyPath.NO_REMEDIATION
    elif turn.analysis.impact is Impact.HIGH:
        path = LatencyPath.HIGH_IMPACT
    else:
        path = LatencyPath.LOW_IMPACT
    return LatencyRecord(turn.id, path, turn.delivering_at - turn.utterance.received_at)


def advance(
    state: EngineState, event: EngineEvent, turn: DialogueTurn
) -> tuple[EngineState, list[Action]]:
    """Deterministic FSM step.

    ``turn`` must already reflect the event's payload (the runtime merges
    transcript/translation/analysis/choice results into the pending turn
    before calling). Raises IllegalTransition for out-of-order events.
    """
    kind = event.kind

    if kind is EventKind.BACKEND_ERROR:
        # Legal from any state: deliver the raw translation with an error
        # notice when one exists, rather than dropping the turn.
        actions: list[Action] = [
            CancelChoiceTimer(turn.id),
            SendErrorNotice(turn, event.error or "backend failure"),
        ]
        if turn.delivered_text is None and turn.utterance.translated_text:
            actions.append(
                SendDeliver(turn, turn.utterance.translated_text, DeliveryKind.TRANSLATION)
            )
        return EngineState.FAULTED, actions

    if state is EngineState.IDLE and kind is EventKind.SPEECH_RECEIVED:
        return EngineState.TRANSCRIBING, [InvokeAsr(turn)]

    if state is EngineState.TRANSCRIBING and kind is EventKind.TRANSCRIPT_READY:
        return EngineState.TRANSLATING, [SendTranscript(turn), InvokeMt(turn)]

    if state is EngineState.TRANSLATING and kind is EventKind.TRANSLATION_READY:
        return EngineState.ANALYZING, [SendTranslation(turn), InvokeAnalysis(turn)]

    if state is EngineState.ANALYZING and kind is EventKind.ANALYSIS_READY:
        if turn.analysis is None:
            raise IllegalTransition(state, kind)
        if turn.analysis.violated:
            return EngineState.GENERATING, [InvokeGeneration(turn)]
        translated = turn.utterance.translated_text or ""
        return EngineState.DELIVERING, [SendDeliver(turn, translated, DeliveryKind.TRANSLATION)]

    if state is EngineState.GENERATING and kind is EventKind.GENERATION_READY:
        if turn.analysis is None:
            raise IllegalTransition(state, kind)
        decision = route_by_impact(turn.analysis, turn.bundle, turn.utterance.speaker)
        if decision.action is RouteAction.DELIVER_REMEDIATION:
            assert turn.bundle is not None
            return EngineState.DELIVERING, [
                SendDeliver(turn, turn.bundle.remediation, DeliveryKind.REMEDIATION)
            ]
        return EngineState.AWAITING_CHOICE, [SendPrompt(turn), StartChoiceTimer(turn.id)]

    if state is EngineState.AWAITING_CHOICE and kind in (
        EventKind.CHOICE_RECEIVED,
        EventKind.CHOICE_TIMEOUT,
    ):
        # resolve_choice / timeout_choice already populated delivery fields.
        if turn.delivered_text is None or turn.delivery_kind is None:
            raise IllegalTransition(state, kind)
        return EngineState.DELIVERING, [
            CancelChoiceTimer(turn.id),
            SendDeliver(turn, turn.delivered_text, turn.delivery_kind),
        ]

    if state is EngineState.DELIVERING and kind is EventKind.DELIVERY_ACKED:
        return EngineState.IDLE, [AppendHistory(turn)]

    if state is EngineState.FAULTED and kind is EventKind.DELIVERY_ACKED:
        if turn.completed:
            return EngineState.IDLE, [AppendHistory(turn)]
        return EngineState.IDLE, [DropTurn(turn)]

    raise IllegalTransition(state, kind)
