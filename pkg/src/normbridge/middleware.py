"""Message middleware: the wire schema and the two-client session registry.

Frames are canonical UTF-8 JSON text with a fixed top-level field order
(type, session_id, turn_id, identity, seq, body) and recursively sorted body
keys, so encode(decode(encode(m))) is byte-identical. ``seq`` increases
strictly per connection and is stamped at transmission time.
"""

from __future__ import annotations

import asyncio
import json
import logging
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Awaitable, Callable, Mapping, Protocol

from .model import Role

log = logging.getLogger("normbridge.middleware")

PROTOCOL_VERSION = 1
DEFAULT_BUFFER_LIMIT = 64


class MessageType(str, Enum):
    HELLO = "hello"
    SPEECH = "speech"
    TRANSCRIPT = "transcript"
    TRANSLATION = "translation"
    CORRECTION_PROMPT = "correction_prompt"
    CHOICE = "choice"
    DELIVER = "deliver"
    ERROR = "error"
    ACK = "ack"


class ProtocolError(ValueError):
    """The frame is not a well-formed wire message."""


@dataclass(frozen=True)
class WireMessage:
    type: MessageType
    session_id: str
    seq: int | None = None
    turn_id: str | None = None
    identity: Role | None = None
    body: Mapping[str, Any] = field(default_factory=dict)


def _canonical(value: Any) -> Any:
    if isinstance(value, Mapping):
        return {k: _canonical(value[k]) for k in sorted(value)}
    if isinstance(value, (list, tuple)):
        return [_canonical(v) for v in value]
    return value


def encode(msg: WireMessage) -> bytes:
    """Canonical JSON text frame; None-valued optional fields are omitted."""
    if msg.seq is None:
        raise ProtocolError("cannot encode a frame without a seq number")
    obj: dict[str, Any] = {"type": msg.type.value, "session_id": msg.session_id}
    if msg.turn_id is not None:
        obj["turn_id"] = msg.turn_id
    if msg.identity is not None:
        obj["identity"] = msg.identity.value
    obj["seq"] = msg.seq
    obj["body"] = _canonical(dict(msg.body))
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":")).encode("utf-8")


_TOP_LEVEL_KEYS = {"type", "session_id", "turn_id", "identity", "seq", "body"}


def decode(data: bytes | str) -> WireMessage:
    """Parse a frame; any malformed input raises ProtocolError, never crashes."""
    try:
        text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
        obj = json.loads(text)
    except (UnicodeDecodeError, json.JSONDecodeError, TypeError) as exc:
        raise ProtocolError(f"not a JSON text frame: {exc}") from exc
    if not isinstance(obj, dict):
        raise ProtocolError("frame must be a JSON object")
    unknown = set(obj) - _TOP_LEVEL_KEYS
    if unknown:
        raise ProtocolError(f"unknown frame fields: {sorted(unknown)}")
    try:
        msg_type = MessageType(obj["type"])
    except (KeyError, ValueError) as exc:
        raise ProtocolError(f"missing or unknown frame type: {obj.get('type')!r}") from exc
    session_id = obj.get("session_id")
    if not isinstance(session_id, str) or not session_id:
        raise ProtocolError("session_id must be a non-empty string")
    seq = obj.get("seq")
    if not isinstance(seq, int) or isinstance(seq, bool) or seq < 1:
        raise ProtocolError(f"seq must be a positive integer, got {seq!r}")
    turn_id = obj.get("turn_id")
    if turn_id is not None and not isinstance(turn_id, str):
        raise ProtocolError("turn_id must be a string when present")
    identity = None
    if "identity" in obj:
        try:
            identity = Role(obj["identity"])
        except ValueError as exc:
            raise ProtocolError(f"unknown identity: {obj['identity']!r}") from exc
    body = obj.get("body", {})
    if not isinstance(body, dict):
        raise ProtocolError("body must be a JSON object")
    if msg_type is MessageType.SPEECH and identity is None:
        raise ProtocolError("speech frames must carry an identity token")
    if msg_type is MessageType.CORRECTION_PROMPT:
        for key in ("translation", "remediation", "justification"):
            if not isinstance(body.get(key), str) or not body[key]:
                raise ProtocolError(f"correction_prompt must carry a non-empty {key}")
    return WireMessage(
        type=msg_type,
        session_id=session_id,
        seq=seq,
        turn_id=turn_id,
        identity=identity,
        body=body,
    )


def hello(session_id: str, identity: Role, seq: int = 1) -> WireMessage:
    return WireMessage(
        MessageType.HELLO, session_id, seq=seq, identity=identity, body={"v": PROTOCOL_VERSION}
    )


class Connection(Protocol):
    """What the registry needs from a client connection."""

    async def send(self, data: bytes | str) -> None: ...

    async def close(self, code: int = 1000, reason: str = "") -> None: ...


@dataclass
class _Endpoint:
    conn: Connection | None = None
    next_seq: int = 1
    backlog: deque[WireMessage] = field(default_factory=deque)


SessionReadyCallback = Callable[[str], None]
ClientJoinedCallback = Callable[[str, Role], Awaitable[None]]


class ClientRegistry:
    """Maps sessions to their SME and FLE connections.

    A later hello for an occupied role takes the connection over: the old one
    is told why and closed. When both roles are present the session-ready
    callback fires. Frames sent to an offline role queue up to ``buffer_limit``
    and then drop oldest-first with a warning.
    """

    def __init__(
        self,
        buffer_limit: int = DEFAULT_BUFFER_LIMIT,
        on_session_ready: SessionReadyCallback | None = None,
        on_client_joined: ClientJoinedCallback | None = None,
    ) -> None:
        self._buffer_limit = buffer_limit
        self._on_session_ready = on_session_ready
        self._on_client_joined = on_client_joined
        self._sessions: dict[str, dict[Role, _Endpoint]] = {}
        self._lock = asyncio.Lock()

    def set_session_ready_callback(self, callback: SessionReadyCallback) -> None:
        self._on_session_ready = callback

    def set_client_joined_callback(self, callback: ClientJoinedCallback) -> None:
        self._on_client_joined = callback

    def _endpoint(self, session_id: str, role: Role) -> _Endpoint:
        session = self._sessions.setdefault(session_id, {})
        return session.setdefault(role, _Endpoint())

    def roles_connected(self, session_id: str) -> set[Role]:
        session = self._sessions.get(session_id, {})
        return {role for role, ep in session.items() if ep.conn is not None}

    async def register(self, conn: Connection, msg: WireMessage) -> tuple[str, Role]:
        """Attach a connection per its hello frame; unknown sessions auto-create."""
        if msg.type is not MessageType.HELLO:
            raise ProtocolError("the first frame on a connection must be hello")
        if msg.identity is None:
            raise ProtocolError("hello must carry an identity token")
        version = msg.body.get("v")
        if version != PROTOCOL_VERSION:
            raise ProtocolError(f"unsupported protocol version: {version!r}")

        async with self._lock:
            endpoint = self._endpoint(msg.session_id, msg.identity)
            old = endpoint.conn
            old_seq = endpoint.next_seq
            endpoint.conn = conn
            endpoint.next_seq = 1
        if old is not None:
            log.warning(
                "session %s role %s taken over by a new connection",
                msg.session_id,
                msg.identity.value,
            )
            notice = WireMessage(
                MessageType.ERROR,
                msg.session_id,
                seq=old_seq,
                body={"message": "connection replaced by a newer hello for this role"},
            )
            try:
                await old.send(encode(notice))
            except Exception:
                pass
            try:
                await old.close(code=4000, reason="role taken over")
            except Exception:
                pass
        await self._flush(msg.session_id, msg.identity)
        if self._on_client_joined is not None:
            await self._on_client_joined(msg.session_id, msg.identity)
        if self.roles_connected(msg.session_id) == {Role.SME, Role.FLE}:
            log.info("session %s ready: both roles connected", msg.session_id)
            if self._on_session_ready is not None:
                self._on_session_ready(msg.session_id)
        return msg.session_id, msg.identity

    async def unregister(self, conn: Connection) -> None:
        async with self._lock:
            for session_id, session in self._sessions.items():
                for role, endpoint in session.items():
                    if endpoint.conn is conn:
                        endpoint.conn = None
                        log.info("session %s role %s disconnected", session_id, role.value)

    async def _flush(self, session_id: str, role: Role) -> None:
        endpoint = self._endpoint(session_id, role)
        while endpoint.backlog and endpoint.conn is not None:
            queued = endpoint.backlog.popleft()
            await self._transmit(endpoint, queued, session_id, role)

    async def _transmit(
        self, endpoint: _Endpoint, msg: WireMessage, session_id: str, role: Role
    ) -> bool:
        assert endpoint.conn is not None
        stamped = replace(msg, seq=endpoint.next_seq)
        try:
            await endpoint.conn.send(encode(stamped))
        except Exception as exc:
            log.warning("send to %s/%s failed (%s); queueing", session_id, role.value, exc)
            endpoint.conn = None
            self._enqueue(endpoint, msg, session_id, role)
            return False
        endpoint.next_seq += 1
        return True

    def _enqueue(self, endpoint: _Endpoint, msg: WireMessage, session_id: str, role: Role) -> None:
        endpoint.backlog.append(msg)
        if len(endpoint.backlog) > self._buffer_limit:
            dropped = endpoint.backlog.popleft()
            log.warning(
                "session %s role %s backlog full; dropping oldest %s frame",
                session_id,
                role.value,
                dropped.type.value,
            )

    async def deliver(self, session_id: str, target: Role, msg: WireMessage) -> bool:
        """Send a frame to one role, FIFO per connection.

        Returns True when transmitted now, False when queued for later.
        """
        endpoint = self._endpoint(session_id, target)
        if endpoint.conn is None:
            self._enqueue(endpoint, msg, session_id, target)
            return False
        return await self._transmit(endpoint, msg, session_id, target)

    async def send(
        self,
        session_id: str,
        target: Role,
        type: MessageType,
        body: Mapping[str, Any] | None = None,
        turn_id: str | None = None,
    ) -> bool:
        """Convenience wrapper building the frame before delivery."""
        msg = WireMessage(type, session_id, turn_id=turn_id, body=dict(body or {}))
        return await self.deliver(session_id, target, msg)


class Transport(Protocol):
    """Engine-facing side of the middleware."""

    def send(
        self,
        session_id: str,
        target: Role,
        type: MessageType,
        body: Mapping[str, Any] | None = None,
        turn_id: str | None = None,
    ) -> Awaitable[bool]: ...
