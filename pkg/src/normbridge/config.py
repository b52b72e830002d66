"""Service configuration: categories, languages, backend routes, policies.

Config files are JSON; relative lexicon paths resolve against the config
file's directory. Invalid configs raise ConfigError, which the CLI maps to
exit code 2.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

from .backends import BackendKind, BackendSpec, Task, default_timeout_s
from .engine import TimeoutPolicy
from .model import CategorySet, DeliveryKind, Role

ENV_LISTEN = "NB_LISTEN"
ENV_CONFIG = "NB_CONFIG"

DEFAULT_LISTEN = "127.0.0.1:8765"


class ConfigError(ValueError):
    """The configuration is missing or malformed."""


@dataclass(frozen=True)
class EngineConfig:
    categories: CategorySet
    lang_by_role: Mapping[Role, str]
    routes: Mapping[Task, tuple[BackendSpec, BackendSpec | None]]
    choice_timeout_s: float = 60.0
    timeout_delivery: DeliveryKind = DeliveryKind.TRANSLATION
    context_turns: int = 2
    listen_host: str = "127.0.0.1"
    listen_port: int = 8765
    static_dir: Path | None = None
    transcript_dir: Path | None = None
    heartbeat_s: float = 15.0
    meta: Mapping[str, Any] = field(default_factory=dict)

    @property
    def timeout_policy(self) -> TimeoutPolicy:
        return TimeoutPolicy(deliver=self.timeout_delivery, timeout_s=self.choice_timeout_s)


def parse_listen(value: str) -> tuple[str, int]:
    host, sep, port = value.rpartition(":")
    if not sep or not host:
        raise ConfigError(f"listen address must be host:port, got {value!r}")
    try:
        return host, int(port)
    except ValueError as exc:
        raise ConfigError(f"invalid listen port in {value!r}") from exc


def _parse_spec(task: Task, obj: Any) -> BackendSpec:
    if not isinstance(obj, Mapping):
        raise ConfigError(f"backend spec for {task.value} must be an object")
    kind_name = obj.get("kind", BackendKind.LOCAL_STUB.value)
    try:
        kind = BackendKind(kind_name)
    except ValueError as exc:
        raise ConfigError(f"{task.value}: unknown backend kind {kind_name!r}") from exc
    timeout_s = float(obj.get("timeout_s", default_timeout_s(task)))
    if timeout_s <= 0:
        raise ConfigError(f"{task.value}: timeout_s must be positive")
    config = obj.get("config", {})
    if not isinstance(config, Mapping):
        raise ConfigError(f"{task.value}: config must be an object")
    return BackendSpec(task=task, kind=kind, timeout_s=timeout_s, config=dict(config))


def parse_config(obj: Mapping[str, Any], base_dir: Path | None = None) -> EngineConfig:
    if not isinstance(obj, Mapping):
        raise ConfigError("config root must be a JSON object")

    try:
        categories = CategorySet(obj.get("categories", ()))
    except ValueError as exc:
        raise ConfigError(f"categories: {exc}") from exc

    languages = obj.get("languages", {"SME": "en", "FLE": "zh"})
    try:
        lang_by_role = {Role(role): str(lang) for role, lang in languages.items()}
    except ValueError as exc:
        raise ConfigError(f"languages: {exc}") from exc
    if set(lang_by_role) != {Role.SME, Role.FLE}:
        raise ConfigError("languages must map both SME and FLE")

    backends_obj = obj.get("backends", {})
    if not isinstance(backends_obj, Mapping):
        raise ConfigError("backends must be an object")
    routes: dict[Task, tuple[BackendSpec, BackendSpec | None]] = {}
    for task in Task:
        entry = backends_obj.get(task.value, {"primary": {}})
        if not isinstance(entry, Mapping) or "primary" not in entry:
            raise ConfigError(f"backends.{task.value} must configure a primary spec")
        primary = _parse_spec(task, entry["primary"])
        backup_obj = entry.get("backup")
        backup = _parse_spec(task, backup_obj) if backup_obj else None
        routes[task] = (primary, backup)

    listen = str(obj.get("listen", DEFAULT_LISTEN))
    host, port = parse_listen(listen)

    delivery_name = obj.get("timeout_delivery", DeliveryKind.TRANSLATION.value)
    try:
        timeout_delivery = DeliveryKind(delivery_name)
    except ValueError as exc:
        raise ConfigError(f"timeout_delivery must be Translation or Remediation") from exc

    def _resolve(key: str) -> Path | None:
        raw = obj.get(key)
        if raw is None:
            return None
        path = Path(str(raw))
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return path

    choice_timeout_s = float(obj.get("choice_timeout_s", 60.0))
    if choice_timeout_s <= 0:
        raise ConfigError("choice_timeout_s must be positive")
    context_turns = int(obj.get("context_turns", 2))
    if context_turns < 0:
        raise ConfigError("context_turns must be >= 0")

    return EngineConfig(
        categories=categories,
        lang_by_role=lang_by_role,
        routes=routes,
        choice_timeout_s=choice_timeout_s,
        timeout_delivery=timeout_delivery,
        context_turns=context_turns,
        listen_host=host,
        listen_port=port,
        static_dir=_resolve("static_dir"),
        transcript_dir=_resolve("transcript_dir"),
        heartbeat_s=float(obj.get("heartbeat_s", 15.0)),
        meta=dict(obj.get("meta", {})),
    )


def load_config(path: str | Path, listen_override: str | None = None) -> EngineConfig:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    config = parse_config(obj, base_dir=path.parent)
    listen = listen_override or os.environ.get(ENV_LISTEN)
    if listen:
        host, port = parse_listen(listen)
        config = replace(config, listen_host=host, listen_port=port)
    return config
