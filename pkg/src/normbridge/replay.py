"""Headless replay of scripted dialogues through the middleware loopback.

Scripts are line-oriented UTF-8 (JSON object per line, ``#`` comments allowed):
an optional first record ``{"metadata": {...}}``, then one step per line:

    {"speaker": "SME", "text": "...", "choice": "Remediation",
     "delays": {"ASR": 0.2}}

``choice`` is given only where the script expects a high-impact prompt
(``TimedOut`` means: let the engine's choice timer fire). ``delays`` override
per-stage stub latencies for that step. Replays are deterministic under stub
backends: the transcript contains no wall-clock fields, so identical runs are
byte-identical.
"""

from __future__ import annotations

import asyncio
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

from .backends import BackendSet, Task, build_backend_set
from .config import EngineConfig
from .engine import LatencyPath, LatencyRecord
from .metrics import ChoiceStats, choice_stats, latency_means
from .middleware import (
    ClientRegistry,
    MessageType,
    WireMessage,
    decode,
    encode,
    hello,
)
from .model import (
    DeliveryKind,
    DialogueTurn,
    Impact,
    NormAnalysis,
    Role,
    SenderChoice,
)
from .runtime import Engine

log = logging.getLogger("normbridge.replay")

TURN_TIMEOUT_S = 30.0


class ScriptError(ValueError):
    """The script file is malformed."""


class ReplayError(RuntimeError):
    """The script disagreed with what the pipeline actually did."""


@dataclass(frozen=True)
class ScriptStep:
    speaker: Role
    source_text: str
    choice: SenderChoice | None = None
    delays: Mapping[Task, float] = field(default_factory=dict)


@dataclass(frozen=True)
class ScriptedDialogue:
    metadata: Mapping[str, Any] = field(default_factory=dict)
    steps: tuple[ScriptStep, ...] = ()


def parse_script(lines: Iterable[str]) -> ScriptedDialogue:
    metadata: dict[str, Any] = {}
    steps: list[ScriptStep] = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ScriptError(f"line {lineno}: not valid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise ScriptError(f"line {lineno}: each record must be a JSON object")
        if "metadata" in obj:
            if steps or metadata:
                raise ScriptError(f"line {lineno}: metadata must be the first record")
            metadata = dict(obj["metadata"])
            continue
        try:
            speaker = Role(obj["speaker"])
        except (KeyError, ValueError) as exc:
            raise ScriptError(f"line {lineno}: speaker must be SME or FLE") from exc
        text = obj.get("text")
        if not isinstance(text, str) or not text.strip():
            raise ScriptError(f"line {lineno}: text must be a non-empty string")
        choice = None
        if obj.get("choice") is not None:
            try:
                choice = SenderChoice(obj["choice"])
            except ValueError as exc:
                raise ScriptError(f"line {lineno}: unknown choice {obj['choice']!r}") from exc
        delays: dict[Task, float] = {}
        for stage, value in (obj.get("delays") or {}).items():
            try:
                delays[Task(stage)] = float(value)
            except ValueError as exc:
                raise ScriptError(f"line {lineno}: unknown delay stage {stage!r}") from exc
        steps.append(ScriptStep(speaker, text, choice, delays))
    return ScriptedDialogue(metadata=metadata, steps=tuple(steps))


def load_script(path: str | Path) -> ScriptedDialogue:
    return parse_script(Path(path).read_text(encoding="utf-8").splitlines())


# -- transcript -------------------------------------------------------------

TRANSCRIPT_COLUMNS = (
    "turn_id",
    "speaker",
    "source_text",
    "translated_text",
    "category",
    "violated",
    "impact",
    "sender_choice",
    "delivery_kind",
    "delivered_text",
    "remediation_provenance",
    "justification_provenance",
    "error",
)

_ABSENT = "-"


def _cell(value: Any) -> str:
    if value is None or value == "":
        return _ABSENT
    text = value.value if hasattr(value, "value") else str(value)
    return text.replace("\t", " ").replace("\n", " ")


def transcript_row(turn: DialogueTurn) -> str:
    analysis = turn.analysis
    bundle = turn.bundle
    return "\t".join(
        (
            _cell(turn.id),
            _cell(turn.utterance.speaker),
            _cell(turn.utterance.source_text),
            _cell(turn.utterance.translated_text),
            _cell(analysis.category if analysis else None),
            _cell("1" if analysis and analysis.violated else "0"),
            _cell(analysis.impact if analysis else None),
            _cell(turn.sender_choice),
            _cell(turn.delivery_kind),
            _cell(turn.delivered_text),
            _cell(bundle.remediation_provenance if bundle else None),
            _cell(bundle.justification_provenance if bundle else None),
            _cell(turn.error_notice),
        )
    )


def format_transcript(turns: Iterable[DialogueTurn]) -> str:
    lines = ["#" + "\t".join(TRANSCRIPT_COLUMNS)]
    lines.extend(transcript_row(t) for t in turns)
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class TranscriptRow:
    """One parsed transcript line; duck-typed for metrics.choice_stats."""

    turn_id: str
    speaker: str
    source_text: str
    translated_text: str | None
    category: str | None
    violated: bool
    impact: Impact | None
    sender_choice: SenderChoice | None
    delivery_kind: DeliveryKind | None
    delivered_text: str | None
    error: str | None

    @property
    def analysis(self) -> NormAnalysis | None:
        if self.category is None:
            return None
        return NormAnalysis(category=self.category, violated=self.violated, impact=self.impact)


def parse_transcript(text: str) -> list[TranscriptRow]:
    rows: list[TranscriptRow] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != len(TRANSCRIPT_COLUMNS):
            raise ValueError(
                f"transcript line {lineno}: expected {len(TRANSCRIPT_COLUMNS)} columns, "
                f"got {len(parts)}"
            )

        def opt(value: str) -> str | None:
            return None if value == _ABSENT else value

        (turn_id, speaker, source, translated, category, violated, impact,
         choice, kind, delivered, _rprov, _jprov, error) = parts
        rows.append(
            TranscriptRow(
                turn_id=turn_id,
                speaker=speaker,
                source_text=source,
                translated_text=opt(translated),
                category=opt(category),
                violated=violated == "1",
                impact=Impact(impact) if impact != _ABSENT else None,
                sender_choice=SenderChoice(choice) if choice != _ABSENT else None,
                delivery_kind=DeliveryKind(kind) if kind != _ABSENT else None,
                delivered_text=opt(delivered),
                error=opt(error),
            )
        )
    return rows


# -- loopback plumbing --------------------------------------------------------


class LoopbackConnection:
    """In-memory stand-in for a websocket client connection."""

    def __init__(self, name: str) -> None:
        self.name = name
        self.frames: asyncio.Queue[WireMessage] = asyncio.Queue()
        self.raw: list[bytes] = []
        self.closed = False

    async def send(self, data: bytes | str) -> None:
        if self.closed:
            raise ConnectionError(f"loopback connection {self.name} is closed")
        payload = data.encode("utf-8") if isinstance(data, str) else bytes(data)
        self.raw.append(payload)
        self.frames.put_nowait(decode(payload))

    async def close(self, code: int = 1000, reason: str = "") -> None:
        self.closed = True


@dataclass
class ReplayResult:
    turns: list[DialogueTurn]
    transcript: str
    stats: ChoiceStats
    latency_records: list[LatencyRecord]
    transitions: list[str]

    @property
    def latency_means(self) -> dict[LatencyPath, float]:
        return latency_means(self.latency_records)


async def replay_script(
    script: ScriptedDialogue,
    config: EngineConfig,
    *,
    session_id: str = "replay",
    backends: BackendSet | None = None,
) -> ReplayResult:
    """Drive the script through registry, codec, engine, and stub backends."""
    current_delays: dict[Task, float] = {}
    base_delays = {
        task: float(primary.config.get("delay_s", 0.0))
        for task, (primary, _) in config.routes.items()
    }

    def delay_provider(task: Task) -> float:
        return current_delays.get(task, base_delays.get(task, 0.0))

    if backends is None:
        backends = build_backend_set(
            config.routes, config.categories, delay_provider=delay_provider
        )

    completed: list[DialogueTurn] = []
    records: list[LatencyRecord] = []
    transitions: list[str] = []

    def on_turn_complete(_sid: str, turn: DialogueTurn, record: LatencyRecord | None) -> None:
        completed.append(turn)
        if record is not None:
            records.append(record)

    registry = ClientRegistry()
    engine = Engine(
        config,
        backends,
        registry,
        transition_sink=transitions.append,
        on_turn_complete=on_turn_complete,
    )
    registry.set_session_ready_callback(engine.on_session_ready)

    connections = {Role.SME: LoopbackConnection("SME"), Role.FLE: LoopbackConnection("FLE")}
    for role, conn in connections.items():
        await registry.register(conn, hello(session_id, role))

    session = engine.session(session_id)
    client_seq = {Role.SME: 1, Role.FLE: 1}
    prompted: set[str] = set()
    mismatch: list[str] = []
    mismatch_seen = asyncio.Event()
    step_by_turn: dict[str, ScriptStep] = {}

    async def client_reader(role: Role) -> None:
        conn = connections[role]
        while True:
            frame = await conn.frames.get()
            if frame.type is not MessageType.CORRECTION_PROMPT:
                continue
            turn_id = frame.turn_id or ""
            prompted.add(turn_id)
            step = step_by_turn.get(turn_id)
            if step is None or step.choice is None:
                mismatch.append(
                    f"turn {turn_id}: high-impact prompt arose but the script has no choice"
                )
                mismatch_seen.set()
                continue
            if step.choice is SenderChoice.TIMED_OUT:
                continue  # let the engine's timer resolve it
            client_seq[role] += 1
            choice_frame = WireMessage(
                MessageType.CHOICE,
                session_id,
                seq=client_seq[role],
                turn_id=turn_id,
                identity=role,
                body={"choice": step.choice.value},
            )
            await engine.handle_message(decode(encode(choice_frame)))

    readers = [asyncio.create_task(client_reader(role)) for role in connections]
    try:
        for index, step in enumerate(script.steps):
            current_delays.clear()
            current_delays.update(step.delays)
            client_seq[step.speaker] += 1
            speech = WireMessage(
                MessageType.SPEECH,
                session_id,
                seq=client_seq[step.speaker],
                identity=step.speaker,
                body={"text": step.source_text},
            )
            before = len(completed)
            await engine.handle_message(decode(encode(speech)))
            pending = session.session.pending
            if pending is None:
                raise ReplayError(f"step {index + 1}: engine rejected the speech frame")
            turn_id = pending.id
            step_by_turn[turn_id] = step
            watcher = session.watch_turn(turn_id)
            abort = asyncio.create_task(mismatch_seen.wait())
            done, _ = await asyncio.wait(
                {watcher, abort}, timeout=TURN_TIMEOUT_S, return_when=asyncio.FIRST_COMPLETED
            )
            abort.cancel()
            if mismatch:
                raise ReplayError("; ".join(mismatch))
            if watcher not in done:
                raise ReplayError(
                    f"turn {turn_id}: pipeline did not finish within {TURN_TIMEOUT_S}s"
                )
            if step.choice is not None and turn_id not in prompted:
                raise ReplayError(
                    f"turn {turn_id}: script expected a high-impact prompt "
                    "but none arose"
                )
            if len(completed) == before:
                raise ReplayError(f"turn {turn_id}: no completion was recorded")
    finally:
        for reader in readers:
            reader.cancel()
        await engine.close()
        await backends.aclose()

    return ReplayResult(
        turns=completed,
        transcript=format_transcript(completed),
        stats=choice_stats(completed),
        latency_records=records,
        transitions=transitions,
    )


def run_replay(
    script: ScriptedDialogue, config: EngineConfig, *, session_id: str = "replay"
) -> ReplayResult:
    return asyncio.run(replay_script(script, config, session_id=session_id))
