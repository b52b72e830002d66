"""HTTP adapter for remote inference services.

Vendor-neutral contract: POST a JSON body with the task, context, current
utterance, and task-specific extras; the reply is the task payload described
in base.py. Timeouts are enforced by the fallback layer, so the HTTP client
itself is given a slightly looser deadline.
"""

from __future__ import annotations

from typing import Any, Mapping

import httpx

from ..model import Utterance
from .base import BackendError, BackendRequest


def _utterance_json(u: Utterance) -> dict:
    return {
        "id": u.id,
        "speaker": u.speaker.value,
        "source_text": u.source_text,
        "source_lang": u.source_lang,
        "translated_text": u.translated_text,
        "target_lang": u.target_lang,
    }


class RemoteHttpBackend:
    def __init__(
        self,
        url: str,
        timeout_s: float,
        headers: Mapping[str, str] | None = None,
        client: httpx.AsyncClient | None = None,
    ) -> None:
        self._url = url
        self._client = client or httpx.AsyncClient(
            timeout=timeout_s + 1.0, headers=dict(headers or {})
        )

    async def __call__(self, request: BackendRequest) -> Any:
        body: dict = {
            "task": request.task.value,
            "context": [_utterance_json(u) for u in request.context],
            "current": _utterance_json(request.current),
        }
        if request.category is not None:
            body["category"] = request.category
        if request.remediation is not None:
            body["remediation"] = request.remediation
        try:
            response = await self._client.post(self._url, json=body)
            response.raise_for_status()
            return response.json()
        except httpx.HTTPError as exc:
            raise BackendError(f"remote backend {self._url}: {exc}") from exc

    async def aclose(self) -> None:
        await self._client.aclose()
