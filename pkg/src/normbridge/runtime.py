"""Async driver for the main engine.

One serial executor per session: every event for a session is applied in
arrival order by a single task, so FSM steps never interleave. Backend calls
run as background tasks whose completions re-enter the session's event queue.
Distinct sessions progress independently.
"""

from __future__ import annotations

import asyncio
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable

from .backends import BackendSet
from .config import EngineConfig
from .engine import (
    Action,
    AppendHistory,
    CancelChoiceTimer,
    ChoiceAlreadyResolved,
    DropTurn,
    EngineEvent,
    EngineState,
    EventKind,
    IllegalTransition,
    InvokeAnalysis,
    InvokeAsr,
    InvokeGeneration,
    InvokeMt,
    LatencyRecord,
    SendDeliver,
    SendErrorNotice,
    SendPrompt,
    SendTranscript,
    SendTranslation,
    StartChoiceTimer,
    advance,
    record_latency,
    resolve_choice,
    timeout_choice,
)
from .middleware import MessageType, Transport, WireMessage
from .model import (
    CorrectionBundle,
    DialogueTurn,
    NormAnalysis,
    Role,
    SenderChoice,
    SessionState,
    Utterance,
    append_turn,
    context_window,
    other_role,
)

log = logging.getLogger("normbridge.engine")

TurnCallback = Callable[[str, DialogueTurn, LatencyRecord | None], None]
TransitionSink = Callable[[str], None]


@dataclass
class _Timer:
    handle: asyncio.TimerHandle

    def cancel(self) -> None:
        self.handle.cancel()


class SessionRuntime:
    """Serial executor and state holder for one two-party session."""

    def __init__(
        self,
        session_id: str,
        config: EngineConfig,
        backends: BackendSet,
        transport: Transport,
        *,
        clock: Callable[[], float] = time.monotonic,
        transition_sink: TransitionSink | None = None,
        on_turn_complete: TurnCallback | None = None,
    ) -> None:
        self.session_id = session_id
        self._config = config
        self._backends = backends
        self._transport = transport
        self._clock = clock
        self._transition_sink = transition_sink
        self._on_turn_complete = on_turn_complete

        self._session = SessionState(
            session_id=session_id,
            fsm_state=EngineState.IDLE,
            lang_by_role=dict(config.lang_by_role),
        )
        self._events: asyncio.Queue[EngineEvent | None] = asyncio.Queue()
        self._turn_counter = 0
        self._timers: dict[str, _Timer] = {}
        self._backend_tasks: set[asyncio.Task] = set()
        self._watchers: dict[str, asyncio.Future] = {}
        self.latencies: list[LatencyRecord] = []
        self.ready = False
        self._runner: asyncio.Task | None = None

    # -- public surface ----------------------------------------------------

    @property
    def state(self) -> EngineState:
        return self._session.fsm_state

    @property
    def session(self) -> SessionState:
        return self._session

    def start(self) -> None:
        if self._runner is None:
            self._runner = asyncio.get_running_loop().create_task(
                self._run(), name=f"session-{self.session_id}"
            )

    async def close(self) -> None:
        for timer in self._timers.values():
            timer.cancel()
        self._timers.clear()
        for task in list(self._backend_tasks):
            task.cancel()
        if self._runner is not None:
            self._events.put_nowait(None)
            try:
                await self._runner
            except asyncio.CancelledError:
                pass
            self._runner = None

    def watch_turn(self, turn_id: str) -> asyncio.Future:
        """Future resolving to the final DialogueTurn (appended or dropped)."""
        future = self._watchers.get(turn_id)
        if future is None:
            future = asyncio.get_running_loop().create_future()
            self._watchers[turn_id] = future
        return future

    async def accept_speech(self, identity: Role, text: str) -> str | None:
        """Open a turn for a press-to-talk utterance; returns its id."""
        self.start()
        if not text.strip():
            await self._send(identity, MessageType.ERROR, {"message": "empty speech payload"})
            return None
        if self.state is not EngineState.IDLE or self._session.pending is not None:
            log.warning(
                "session %s: speech from %s while turn in progress; rejected",
                self.session_id,
                identity.value,
            )
            await self._send(
                identity, MessageType.ERROR, {"message": "a turn is already in progress"}
            )
            return None
        self._turn_counter += 1
        turn_id = f"t{self._turn_counter}"
        utterance = Utterance(
            id=turn_id,
            speaker=identity,
            source_text=text,
            source_lang=self._config.lang_by_role[identity],
            target_lang=self._config.lang_by_role[other_role(identity)],
            received_at=self._clock(),
        )
        self._session = replace(self._session, pending=DialogueTurn(utterance=utterance))
        self._post(EngineEvent(EventKind.SPEECH_RECEIVED, self.session_id, turn_id))
        return turn_id

    def accept_choice(self, turn_id: str | None, choice_name: str | None) -> None:
        self.start()
        if not turn_id:
            log.warning("session %s: choice without a turn id; dropped", self.session_id)
            return
        try:
            choice = SenderChoice(choice_name)
        except ValueError:
            log.warning("session %s: unknown choice %r; dropped", self.session_id, choice_name)
            return
        self._post(
            EngineEvent(EventKind.CHOICE_RECEIVED, self.session_id, turn_id, choice=choice)
        )

    # -- serial executor ----------------------------------------------------

    def _post(self, event: EngineEvent) -> None:
        self._events.put_nowait(event)

    async def _run(self) -> None:
        while True:
            event = await self._events.get()
            if event is None:
                return
            try:
                await self._step(event)
            except Exception:
                log.exception("session %s: unhandled error processing %s",
                              self.session_id, event.kind.value)

    async def _step(self, event: EngineEvent) -> None:
        pending = self._session.pending
        if pending is None or (event.turn_id and pending.id != event.turn_id):
            log.warning(
                "session %s: %s for stale turn %r (pending %s); dropped",
                self.session_id,
                event.kind.value,
                event.turn_id,
                pending.id if pending else None,
            )
            return
        try:
            turn = self._merge(event, pending)
        except (ChoiceAlreadyResolved, ValueError) as exc:
            log.warning("session %s: %s rejected: %s", self.session_id, event.kind.value, exc)
            return

        from_state = self.state
        try:
            to_state, actions = advance(from_state, event, turn)
        except IllegalTransition as exc:
            log.warning("session %s: %s; event dropped", self.session_id, exc)
            return

        self._session = replace(self._session, fsm_state=to_state, pending=turn)
        self._emit_transition(from_state, event, to_state, turn)
        for action in actions:
            await self._execute(action)
        if (
            event.kind is EventKind.BACKEND_ERROR
            and to_state is EngineState.FAULTED
            and not any(isinstance(a, SendDeliver) for a in actions)
        ):
            # Nothing deliverable; ack the error notice itself to clear the fault.
            self._post(EngineEvent(EventKind.DELIVERY_ACKED, self.session_id, turn.id))

    def _merge(self, event: EngineEvent, turn: DialogueTurn) -> DialogueTurn:
        kind = event.kind
        if kind is EventKind.TRANSCRIPT_READY and event.text is not None:
            return replace(turn, utterance=replace(turn.utterance, source_text=event.text))
        if kind is EventKind.TRANSLATION_READY and event.text is not None:
            return replace(turn, utterance=replace(turn.utterance, translated_text=event.text))
        if kind is EventKind.ANALYSIS_READY and event.analysis is not None:
            return replace(turn, analysis=event.analysis)
        if kind is EventKind.GENERATION_READY and event.bundle is not None:
            if turn.analysis is None:
                raise ValueError("generation completed without an analysis")
            analysis = replace(turn.analysis, impact=event.impact)
            return replace(turn, analysis=analysis, bundle=event.bundle)
        if kind is EventKind.CHOICE_RECEIVED and self.state is EngineState.AWAITING_CHOICE:
            assert event.choice is not None
            return resolve_choice(turn, event.choice)
        if kind is EventKind.CHOICE_TIMEOUT and self.state is EngineState.AWAITING_CHOICE:
            return timeout_choice(turn, self._config.timeout_policy)
        return turn

    # -- action execution ---------------------------------------------------

    async def _execute(self, action: Action) -> None:
        turn = self._session.pending
        assert turn is not None
        sender = turn.utterance.speaker

        if isinstance(action, InvokeAsr):
            self._spawn(self._call_asr(turn))
        elif isinstance(action, InvokeMt):
            self._spawn(self._call_mt(turn))
        elif isinstance(action, InvokeAnalysis):
            self._spawn(self._call_analysis(turn))
        elif isinstance(action, InvokeGeneration):
            self._spawn(self._call_generation(turn))
        elif isinstance(action, SendTranscript):
            await self._send(
                sender, MessageType.TRANSCRIPT, {"text": turn.utterance.source_text}, turn.id
            )
        elif isinstance(action, SendTranslation):
            await self._send(
                sender, MessageType.TRANSLATION, {"text": turn.utterance.translated_text}, turn.id
            )
        elif isinstance(action, SendDeliver):
            updated = turn
            if updated.delivered_text is None:
                updated = replace(updated, delivered_text=action.text, delivery_kind=action.kind)
            updated = replace(updated, delivering_at=self._clock())
            self._session = replace(self._session, pending=updated)
            await self._send(
                other_role(sender),
                MessageType.DELIVER,
                {
                    "text": updated.delivered_text,
                    "kind": updated.delivery_kind.value,
                    "error": updated.error_notice,
                },
                turn.id,
            )
            self._post(EngineEvent(EventKind.DELIVERY_ACKED, self.session_id, turn.id))
        elif isinstance(action, SendPrompt):
            assert turn.bundle is not None
            await self._send(
                sender,
                MessageType.CORRECTION_PROMPT,
                {
                    "translation": turn.bundle.translation,
                    "remediation": turn.bundle.remediation,
                    "justification": turn.bundle.justification,
                },
                turn.id,
            )
        elif isinstance(action, StartChoiceTimer):
            self._start_timer(action.turn_id)
        elif isinstance(action, CancelChoiceTimer):
            timer = self._timers.pop(action.turn_id, None)
            if timer is not None:
                timer.cancel()
        elif isinstance(action, AppendHistory):
            await self._finish_turn(turn, dropped=False)
        elif isinstance(action, DropTurn):
            await self._finish_turn(turn, dropped=True)
        elif isinstance(action, SendErrorNotice):
            updated = replace(turn, error_notice=action.message)
            self._session = replace(self._session, pending=updated)
            await self._send(sender, MessageType.ERROR, {"message": action.message}, turn.id)
        else:  # pragma: no cover - exhaustive over Action
            raise AssertionError(f"unknown action {action!r}")

    async def _finish_turn(self, turn: DialogueTurn, dropped: bool) -> None:
        record: LatencyRecord | None = None
        if dropped:
            self._session = replace(self._session, pending=None)
            log.warning("session %s: turn %s dropped after fault", self.session_id, turn.id)
        else:
            self._session = append_turn(self._session, turn)
            if turn.error_notice is None:
                record = record_latency(turn)
                self.latencies.append(record)
            if turn.analysis is not None and turn.analysis.violated and turn.bundle is not None:
                # Justifications for auto-remediations are logged, not displayed.
                log.info(
                    "session %s turn %s justification: %s",
                    self.session_id,
                    turn.id,
                    turn.bundle.justification,
                )
            # Tell the sender how their turn resolved so a pending prompt can
            # dismiss itself (timeout echo included).
            await self._send(
                turn.utterance.speaker,
                MessageType.ACK,
                {
                    "resolved": True,
                    "delivery_kind": turn.delivery_kind.value if turn.delivery_kind else None,
                    "sender_choice": turn.sender_choice.value if turn.sender_choice else None,
                    "delivered_text": turn.delivered_text,
                },
                turn.id,
            )
        watcher = self._watchers.pop(turn.id, None)
        if watcher is not None and not watcher.done():
            watcher.set_result(turn)
        if self._on_turn_complete is not None:
            self._on_turn_complete(self.session_id, turn, record)

    # -- backend calls ------------------------------------------------------

    def _spawn(self, coro) -> None:
        task = asyncio.get_running_loop().create_task(coro)
        self._backend_tasks.add(task)
        task.add_done_callback(self._backend_tasks.discard)

    def _fail(self, turn_id: str, exc: Exception) -> None:
        self._post(
            EngineEvent(EventKind.BACKEND_ERROR, self.session_id, turn_id, error=str(exc))
        )

    async def _call_asr(self, turn: DialogueTurn) -> None:
        try:
            text, _ = await self._backends.transcribe(turn.utterance)
            self._post(
                EngineEvent(EventKind.TRANSCRIPT_READY, self.session_id, turn.id, text=text)
            )
        except asyncio.CancelledError:
            raise
        except Exception as exc:
            self._fail(turn.id, exc)

    async def _call_mt(self, turn: DialogueTurn) -> None:
        try:
            text, _ = await self._backends.translate(turn.utterance)
            self._post(
                EngineEvent(EventKind.TRANSLATION_READY, self.session_id, turn.id, text=text)
            )
        except asyncio.CancelledError:
            raise
        except Exception as exc:
            self._fail(turn.id, exc)

    def _window(self) -> list[Utterance]:
        return context_window(self._session, self._config.context_turns)

    async def _call_analysis(self, turn: DialogueTurn) -> None:
        try:
            window = self._window()
            context, current = window[:-1], window[-1]
            category, _, _ = await self._backends.classify_category(context, current)
            violated, _, _ = await self._backends.detect_violation(context, current, category)
            analysis = NormAnalysis(category=category, violated=violated)
            self._post(
                EngineEvent(
                    EventKind.ANALYSIS_READY, self.session_id, turn.id, analysis=analysis
                )
            )
        except asyncio.CancelledError:
            raise
        except Exception as exc:
            self._fail(turn.id, exc)

    async def _call_generation(self, turn: DialogueTurn) -> None:
        # Impact classification runs concurrently with remediation generation;
        # justification follows its remediation. Both joined before routing.
        try:
            window = self._window()
            context, current = window[:-1], window[-1]
            category = turn.analysis.category if turn.analysis else None

            async def _generate() -> tuple[str, object, str, object]:
                remediation, r_prov = await self._backends.generate_remediation(
                    context, current, category=category
                )
                justification, j_prov = await self._backends.generate_justification(
                    context, current, remediation, category=category
                )
                return remediation, r_prov, justification, j_prov

            impact_task = asyncio.create_task(self._backends.classify_impact(window))
            generate_task = asyncio.create_task(_generate())
            try:
                (impact, _), (remediation, r_prov, justification, j_prov) = await asyncio.gather(
                    impact_task, generate_task
                )
            except BaseException:
                impact_task.cancel()
                generate_task.cancel()
                raise
            bundle = CorrectionBundle(
                translation=current.translated_text or "",
                remediation=remediation,
                justification=justification,
                remediation_provenance=r_prov,
                justification_provenance=j_prov,
            )
            self._post(
                EngineEvent(
                    EventKind.GENERATION_READY,
                    self.session_id,
                    turn.id,
                    impact=impact,
                    bundle=bundle,
                )
            )
        except asyncio.CancelledError:
            raise
        except Exception as exc:
            self._fail(turn.id, exc)

    # -- plumbing -----------------------------------------------------------

    async def _send(
        self,
        target: Role,
        type: MessageType,
        body: dict,
        turn_id: str | None = None,
    ) -> None:
        await self._transport.send(self.session_id, target, type, body, turn_id)

    def _start_timer(self, turn_id: str) -> None:
        loop = asyncio.get_running_loop()
        handle = loop.call_later(
            self._config.choice_timeout_s,
            lambda: self._post(
                EngineEvent(EventKind.CHOICE_TIMEOUT, self.session_id, turn_id)
            ),
        )
        self._timers[turn_id] = _Timer(handle)

    def _emit_transition(
        self,
        from_state: EngineState,
        event: EngineEvent,
        to_state: EngineState,
        turn: DialogueTurn,
    ) -> None:
        elapsed_ms = (self._clock() - turn.utterance.received_at) * 1000.0
        line = "\t".join(
            (
                self.session_id,
                turn.id,
                from_state.value,
                event.kind.value,
                to_state.value,
                f"{elapsed_ms:.3f}",
            )
        )
        log.debug("transition %s", line)
        if self._transition_sink is not None:
            self._transition_sink(line)


class Engine:
    """Session multiplexer: routes middleware frames to per-session executors."""

    def __init__(
        self,
        config: EngineConfig,
        backends: BackendSet,
        transport: Transport,
        *,
        clock: Callable[[], float] = time.monotonic,
        transition_sink: TransitionSink | None = None,
        on_turn_complete: TurnCallback | None = None,
    ) -> None:
        self._config = config
        self._backends = backends
        self._transport = transport
        self._clock = clock
        self._transition_sink = transition_sink
        self._on_turn_complete = on_turn_complete
        self.sessions: dict[str, SessionRuntime] = {}
        self.ready_sessions: list[str] = []

    def session(self, session_id: str) -> SessionRuntime:
        runtime = self.sessions.get(session_id)
        if runtime is None:
            runtime = SessionRuntime(
                session_id,
                self._config,
                self._backends,
                self._transport,
                clock=self._clock,
                transition_sink=self._transition_sink,
                on_turn_complete=self._on_turn_complete,
            )
            self.sessions[session_id] = runtime
        return runtime

    def on_session_ready(self, session_id: str) -> None:
        self.ready_sessions.append(session_id)
        self.session(session_id).ready = True
        log.info("engine: session %s ready", session_id)

    async def sync_client(self, session_id: str, role: Role) -> None:
        """Send a transcript sync so a (re)connecting client can rebuild its
        view purely from the wire protocol."""
        runtime = self.sessions.get(session_id)
        history = runtime.session.history if runtime is not None else ()
        rows = [
            {
                "turn_id": turn.id,
                "speaker": turn.utterance.speaker.value,
                "source_text": turn.utterance.source_text,
                "translated_text": turn.utterance.translated_text,
                "delivered_text": turn.delivered_text,
                "delivery_kind": turn.delivery_kind.value if turn.delivery_kind else None,
            }
            for turn in history
        ]
        await self._transport.send(
            session_id, role, MessageType.ACK, {"sync": True, "history": rows}
        )

    async def handle_message(self, msg: WireMessage) -> None:
        if msg.type is MessageType.SPEECH:
            assert msg.identity is not None  # decode() guarantees it
            await self.session(msg.session_id).accept_speech(
                msg.identity, str(msg.body.get("text", ""))
            )
        elif msg.type is MessageType.CHOICE:
            self.session(msg.session_id).accept_choice(
                msg.turn_id, msg.body.get("choice")
            )
        elif msg.type is MessageType.ACK:
            log.debug("session %s: client ack for %s", msg.session_id, msg.turn_id)
        else:
            log.warning(
                "session %s: unexpected client frame %s; ignored",
                msg.session_id,
                msg.type.value,
            )

    async def close(self) -> None:
        for runtime in self.sessions.values():
            await runtime.close()
