"""Deterministic local backends: rule lexicons, templates, identity ASR, and
dictionary MT. Same input, same output — replays are reproducible.

Lexicon files hold one rule per line, ``pattern<TAB>label`` (UTF-8, ``#``
comments allowed); patterns are case-insensitive regexes. Every stub accepts a
``delay_s`` and an optional delay provider so tests can shape per-stage
timings.
"""

from __future__ import annotations

import asyncio
import random
import re
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from ..model import CategorySet, Utterance
from .base import Backend, BackendError, BackendRequest, Task

DelayProvider = Callable[[Task], float]

LexiconRule = tuple[re.Pattern, str]


def parse_lexicon(lines: Iterable[str]) -> list[LexiconRule]:
    rules: list[LexiconRule] = []
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if "\t" not in line:
            raise ValueError(f"lexicon line {lineno}: expected pattern<TAB>label")
        pattern, label = line.split("\t", 1)
        if not pattern or not label.strip():
            raise ValueError(f"lexicon line {lineno}: pattern and label must be non-empty")
        try:
            rules.append((re.compile(pattern, re.IGNORECASE), label.strip()))
        except re.error as exc:
            raise ValueError(f"lexicon line {lineno}: bad pattern {pattern!r}: {exc}") from exc
    return rules


def load_lexicon(path: str | Path) -> list[LexiconRule]:
    return parse_lexicon(Path(path).read_text(encoding="utf-8").splitlines())


def _rules_from_config(config: Mapping, base_dir: Path | None) -> list[LexiconRule]:
    if "lexicon" in config:
        path = Path(config["lexicon"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return load_lexicon(path)
    rules = config.get("rules", [])
    return parse_lexicon(f"{pattern}\t{label}" for pattern, label in rules)


def _first_match(rules: Sequence[LexiconRule], text: str) -> str | None:
    for pattern, label in rules:
        if pattern.search(text):
            return label
    return None


class _DelayMixin:
    def __init__(self, task: Task, delay_s: float, delay_provider: DelayProvider | None) -> None:
        self._task = task
        self._delay_s = delay_s
        self._delay_provider = delay_provider

    async def _pause(self) -> None:
        delay = self._delay_provider(self._task) if self._delay_provider else self._delay_s
        if delay > 0:
            await asyncio.sleep(delay)


class IdentityAsrStub(_DelayMixin):
    """Desk-scale ASR: the speech payload is already text, pass it through."""

    def __init__(self, delay_s: float = 0.0, delay_provider: DelayProvider | None = None) -> None:
        super().__init__(Task.ASR, delay_s, delay_provider)

    async def __call__(self, request: BackendRequest) -> dict:
        await self._pause()
        return {"text": request.current.source_text}


class DictionaryMtStub(_DelayMixin):
    """Bidirectional dictionary lookup with pass-through for unknown tokens."""

    def __init__(
        self,
        dictionary: Mapping[str, str],
        delay_s: float = 0.0,
        delay_provider: DelayProvider | None = None,
    ) -> None:
        super().__init__(Task.MT, delay_s, delay_provider)
        self._forward = {k.lower(): v for k, v in dictionary.items()}
        self._reverse = {v.lower(): k for k, v in dictionary.items()}

    def _lookup(self, token: str) -> str:
        key = token.lower()
        return self._forward.get(key) or self._reverse.get(key) or token

    async def __call__(self, request: BackendRequest) -> dict:
        await self._pause()
        text = request.current.source_text
        whole = self._forward.get(text.lower()) or self._reverse.get(text.lower())
        if whole is not None:
            return {"text": whole}
        return {"text": " ".join(self._lookup(tok) for tok in text.split())}


class RuleCategoryStub(_DelayMixin):
    """First matching lexicon rule names the category; no match means Other.

    ``spread`` > 0 turns the degenerate one-hot output into a peaked
    distribution (1 - spread on the predicted class, the rest uniform).
    """

    def __init__(
        self,
        rules: Sequence[LexiconRule],
        categories: CategorySet,
        spread: float = 0.0,
        delay_s: float = 0.0,
        delay_provider: DelayProvider | None = None,
    ) -> None:
        super().__init__(Task.CATEGORY_CLS, delay_s, delay_provider)
        for _, label in rules:
            if label not in categories:
                raise ValueError(f"lexicon label {label!r} is not a configured category")
        if not 0.0 <= spread < 1.0:
            raise ValueError("spread must lie in [0, 1)")
        self._rules = list(rules)
        self._categories = categories
        self._spread = spread

    async def __call__(self, request: BackendRequest) -> dict:
        await self._pause()
        label = _first_match(self._rules, request.current.text_for_analysis())
        label = label if label is not None else self._categories.other
        payload: dict = {"label": label}
        if self._spread > 0.0:
            k = len(self._categories)
            idx = self._categories.index(label)
            off = self._spread / (k - 1)
            payload["probs"] = [1.0 - self._spread if i == idx else off for i in range(k)]
        return payload


class RuleViolationStub(_DelayMixin):
    """Any lexicon hit with a truthy label marks the utterance as a violation."""

    _TRUTHY = {"1", "true", "violate", "violates", "yes"}

    def __init__(
        self,
        rules: Sequence[LexiconRule],
        spread: float = 0.0,
        delay_s: float = 0.0,
        delay_provider: DelayProvider | None = None,
    ) -> None:
        super().__init__(Task.VIOLATION_CLS, delay_s, delay_provider)
        self._rules = list(rules)
        self._spread = spread

    async def __call__(self, request: BackendRequest) -> dict:
        await self._pause()
        label = _first_match(self._rules, request.current.text_for_analysis())
        violated = label is not None and label.lower() in self._TRUTHY
        payload: dict = {"violated": violated}
        if self._spread > 0.0:
            p_violate = 1.0 - self._spread if violated else self._spread
            payload["probs"] = [1.0 - p_violate, p_violate]
        return payload


class RuleImpactStub(_DelayMixin):
    """High when any high-labeled pattern appears anywhere in the context
    window (current utterance plus preceding ones), otherwise Low."""

    def __init__(
        self,
        rules: Sequence[LexiconRule],
        delay_s: float = 0.0,
        delay_provider: DelayProvider | None = None,
    ) -> None:
        super().__init__(Task.IMPACT_CLS, delay_s, delay_provider)
        self._rules = [(p, label) for p, label in rules if label.lower() == "high"]

    async def __call__(self, request: BackendRequest) -> dict:
        await self._pause()
        window = (*request.context, request.current)
        for utterance in window:
            if _first_match(self._rules, utterance.text_for_analysis()) is not None:
                return {"label": "High"}
        return {"label": "Low"}


class TemplateRemediationStub(_DelayMixin):
    """Rewrite the utterance as a softened request.

    Soften rules strip the offending fragments; what remains is wrapped in the
    template (default "Could you please ...").
    """

    def __init__(
        self,
        soften_rules: Sequence[LexiconRule] = (),
        template: str = "Could you please {text}",
        delay_s: float = 0.0,
        delay_provider: DelayProvider | None = None,
    ) -> None:
        super().__init__(Task.REMEDIATION_GEN, delay_s, delay_provider)
        self._soften = list(soften_rules)
        self._template = template

    async def __call__(self, request: BackendRequest) -> dict:
        await self._pause()
        text = request.current.text_for_analysis()
        softened = text
        for pattern, _ in self._soften:
            softened = pattern.sub("", softened)
        softened = re.sub(r"\s{2,}", " ", softened).strip(" ,;.!?") or text.strip()
        if softened:
            softened = softened[0].lower() + softened[1:]
        return {"text": self._template.format(text=softened)}


class TemplateJustificationStub(_DelayMixin):
    def __init__(
        self,
        template: str = (
            "The original wording risks breaching the {category} norm for the "
            "receiver's culture; the rewrite keeps the intent while matching "
            "their etiquette."
        ),
        delay_s: float = 0.0,
        delay_provider: DelayProvider | None = None,
    ) -> None:
        super().__init__(Task.JUSTIFICATION_GEN, delay_s, delay_provider)
        self._template = template

    async def __call__(self, request: BackendRequest) -> dict:
        await self._pause()
        category = request.category or "expected"
        return {"text": self._template.format(category=category)}


class ScriptedBackend:
    """Returns canned payloads in order; handy for driving exact FSM paths."""

    def __init__(self, payloads: Sequence) -> None:
        self._payloads = list(payloads)
        self._cursor = 0

    async def __call__(self, request: BackendRequest):
        if self._cursor >= len(self._payloads):
            raise BackendError("scripted backend exhausted")
        payload = self._payloads[self._cursor]
        self._cursor += 1
        if isinstance(payload, Exception):
            raise payload
        return payload


class FaultInjector:
    """Wraps a backend and fails a seeded fraction of calls.

    ``error`` mode raises immediately; ``timeout`` mode sleeps far past any
    reasonable deadline so the caller's timeout fires.
    """

    def __init__(
        self,
        inner: Backend,
        failure_rate: float,
        seed: int = 0,
        mode: str = "error",
        hang_s: float = 3600.0,
    ) -> None:
        if not 0.0 <= failure_rate <= 1.0:
            raise ValueError("failure_rate must lie in [0, 1]")
        if mode not in ("error", "timeout"):
            raise ValueError(f"unknown failure mode {mode!r}")
        self._inner = inner
        self._rate = failure_rate
        self._mode = mode
        self._hang_s = hang_s
        self._rng = random.Random(seed)
        self.calls = 0
        self.failures = 0

    async def __call__(self, request: BackendRequest):
        self.calls += 1
        if self._rate > 0.0 and self._rng.random() < self._rate:
            self.failures += 1
            if self._mode == "timeout":
                await asyncio.sleep(self._hang_s)
            raise BackendError("injected fault")
        return await self._inner(request)


def build_stub(
    task: Task,
    config: Mapping,
    categories: CategorySet,
    base_dir: Path | None = None,
    delay_provider: DelayProvider | None = None,
) -> Backend:
    """Construct the local stub for a task from its config mapping."""
    delay_s = float(config.get("delay_s", 0.0))
    backend: Backend
    if task is Task.ASR:
        backend = IdentityAsrStub(delay_s, delay_provider)
    elif task is Task.MT:
        backend = DictionaryMtStub(config.get("dictionary", {}), delay_s, delay_provider)
    elif task is Task.CATEGORY_CLS:
        backend = RuleCategoryStub(
            _rules_from_config(config, base_dir),
            categories,
            float(config.get("spread", 0.0)),
            delay_s,
            delay_provider,
        )
    elif task is Task.VIOLATION_CLS:
        backend = RuleViolationStub(
            _rules_from_config(config, base_dir),
            float(config.get("spread", 0.0)),
            delay_s,
            delay_provider,
        )
    elif task is Task.IMPACT_CLS:
        backend = RuleImpactStub(_rules_from_config(config, base_dir), delay_s, delay_provider)
    elif task is Task.REMEDIATION_GEN:
        backend = TemplateRemediationStub(
            _rules_from_config({"rules": config.get("soften_rules", [])}, base_dir),
            config.get("template", "Could you please {text}"),
            delay_s,
            delay_provider,
        )
    elif task is Task.JUSTIFICATION_GEN:
        kwargs = {"delay_s": delay_s, "delay_provider": delay_provider}
        if "template" in config:
            kwargs["template"] = config["template"]
        backend = TemplateJustificationStub(**kwargs)
    else:
        raise ValueError(f"no stub available for task {task}")

    failure_rate = float(config.get("failure_rate", 0.0))
    if failure_rate > 0.0:
        backend = FaultInjector(
            backend,
            failure_rate,
            seed=int(config.get("failure_seed", 0)),
            mode=str(config.get("failure_mode", "error")),
        )
    return backend
