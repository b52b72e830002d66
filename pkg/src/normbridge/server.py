"""WebSocket service: clients connect, say hello, and exchange wire frames
with the main engine. Static web-client assets are served under /app.
"""

from __future__ import annotations

import asyncio
import logging
import mimetypes
import signal
from http import HTTPStatus
from pathlib import Path

from websockets.asyncio.server import ServerConnection, serve
from websockets.exceptions import ConnectionClosed
from websockets.http11 import Response

from .backends import build_backend_set
from .config import EngineConfig
from .engine import LatencyRecord
from .middleware import ClientRegistry, MessageType, ProtocolError, decode, encode, WireMessage
from .model import DialogueTurn
from .replay import format_transcript
from .runtime import Engine

log = logging.getLogger("normbridge.server")


class _WsConnection:
    """Adapts a websockets ServerConnection to the registry's protocol."""

    def __init__(self, ws: ServerConnection) -> None:
        self._ws = ws

    async def send(self, data: bytes | str) -> None:
        text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
        await self._ws.send(text)

    async def close(self, code: int = 1000, reason: str = "") -> None:
        await self._ws.close(code, reason)


class Service:
    def __init__(self, config: EngineConfig) -> None:
        self.config = config
        self.registry = ClientRegistry()
        backends = build_backend_set(config.routes, config.categories)
        self._backends = backends
        self._completed: dict[str, list[DialogueTurn]] = {}
        self.engine = Engine(
            config,
            backends,
            self.registry,
            on_turn_complete=self._record_turn,
        )
        self.registry.set_session_ready_callback(self.engine.on_session_ready)
        self.registry.set_client_joined_callback(self.engine.sync_client)
        self._server = None

    def _record_turn(self, session_id: str, turn: DialogueTurn, _rec: LatencyRecord | None) -> None:
        self._completed.setdefault(session_id, []).append(turn)

    # -- static assets under /app --------------------------------------------

    def _static_response(self, connection: ServerConnection, path: str) -> Response:
        if self.config.static_dir is None:
            return connection.respond(HTTPStatus.NOT_FOUND, "no web client configured\n")
        root = self.config.static_dir.resolve()
        relative = path[len("/app") :].lstrip("/") or "index.html"
        target = (root / relative).resolve()
        if not str(target).startswith(str(root)) or not target.is_file():
            return connection.respond(HTTPStatus.NOT_FOUND, "not found\n")
        content_type = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
        body = target.read_bytes()
        response = connection.respond(HTTPStatus.OK, "")
        # Headers is a multidict: drop the respond() defaults before replacing.
        del response.headers["Content-Type"]
        del response.headers["Content-Length"]
        response.headers["Content-Type"] = content_type
        response.headers["Content-Length"] = str(len(body))
        return Response(response.status_code, response.reason_phrase, response.headers, body)

    def _process_request(self, connection: ServerConnection, request) -> Response | None:
        if request.path == "/app" or request.path.startswith("/app/"):
            return self._static_response(connection, request.path)
        if request.headers.get("Upgrade", "").lower() != "websocket":
            return connection.respond(
                HTTPStatus.OK, "normbridge engine; connect a websocket or GET /app/\n"
            )
        return None

    # -- websocket handling ----------------------------------------------------

    async def _handler(self, ws: ServerConnection) -> None:
        conn = _WsConnection(ws)
        registered = False
        try:
            async for raw in ws:
                try:
                    msg = decode(raw)
                except ProtocolError as exc:
                    log.warning("protocol error from %s: %s", ws.remote_address, exc)
                    await self._protocol_error(conn, str(exc))
                    continue
                if not registered:
                    try:
                        await self.registry.register(conn, msg)
                        registered = True
                    except ProtocolError as exc:
                        await self._protocol_error(conn, str(exc))
                        await conn.close(code=4002, reason="bad hello")
                        return
                    continue
                await self.engine.handle_message(msg)
        except ConnectionClosed:
            pass
        finally:
            if registered:
                await self.registry.unregister(conn)

    async def _protocol_error(self, conn: _WsConnection, message: str) -> None:
        frame = WireMessage(MessageType.ERROR, "-", seq=1, body={"message": message})
        try:
            await conn.send(encode(frame))
        except Exception:
            pass

    # -- lifecycle ---------------------------------------------------------------

    async def start(self) -> tuple[str, int]:
        self._server = await serve(
            self._handler,
            self.config.listen_host,
            self.config.listen_port,
            process_request=self._process_request,
            ping_interval=self.config.heartbeat_s,
            ping_timeout=2 * self.config.heartbeat_s,
        )
        sock = next(iter(self._server.sockets))
        host, port = sock.getsockname()[:2]
        log.info("ready: listening on %s:%d", host, port)
        print(f"normbridge ready on ws://{host}:{port} (web client at /app/)", flush=True)
        return host, port

    def flush_transcripts(self) -> list[Path]:
        """Write one transcript file per session; used on shutdown."""
        out_dir = self.config.transcript_dir
        if out_dir is None:
            return []
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        for session_id, turns in self._completed.items():
            path = out_dir / f"{session_id}.tsv"
            path.write_text(format_transcript(turns), encoding="utf-8")
            written.append(path)
        if written:
            log.info("flushed %d transcript file(s) to %s", len(written), out_dir)
        return written

    async def stop(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
            self._server = None
        await self.engine.close()
        await self._backends.aclose()
        self.flush_transcripts()


async def run_service(config: EngineConfig) -> None:
    """Run until SIGINT/SIGTERM; flush transcripts on the way out."""
    service = Service(config)
    stop = asyncio.Event()
    loop = asyncio.get_running_loop()
    # Trap signals before announcing readiness so a prompt SIGTERM still
    # shuts down cleanly.
    for sig in (signal.SIGINT, signal.SIGTERM):
        loop.add_signal_handler(sig, stop.set)
    await service.start()
    try:
        await stop.wait()
    finally:
        await service.stop()
