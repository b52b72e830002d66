from __future__ import annotations

import asyncio
from typing import Callable

import numpy as np
import pytest

from normbridge.backends import BackendSpec, BackendKind, Task
from normbridge.config import EngineConfig, parse_config
from normbridge.model import CategorySet, Role, Utterance

CATEGORY_NAMES = [
    "greeting",
    "request",
    "apology",
    "criticism",
    "persuasion",
    "thanks",
    "farewell",
]

# Stub lexicon markers used across scripted tests. MT passes unknown tokens
# through, so markers written in the source text survive translation.
VIOLATION_MARKER = "norm-breach"
HIGH_MARKER = "severity-high"


def base_config_dict(**overrides) -> dict:
    cfg = {
        "listen": "127.0.0.1:0",
        "categories": CATEGORY_NAMES,
        "languages": {"SME": "en", "FLE": "zh"},
        "choice_timeout_s": 60.0,
        "context_turns": 2,
        "backends": {
            "ASR": {"primary": {"kind": "LocalStub", "config": {}}},
            "MT": {
                "primary": {
                    "kind": "LocalStub",
                    "config": {"dictionary": {"hello": "你好"}},
                }
            },
            "CategoryCls": {
                "primary": {
                    "kind": "RuleBased",
                    "config": {"rules": [["sorry", "apology"], ["please", "request"]]},
                }
            },
            "ViolationCls": {
                "primary": {
                    "kind": "RuleBased",
                    "config": {"rules": [[VIOLATION_MARKER, "1"]]},
                }
            },
            "ImpactCls": {
                "primary": {
                    "kind": "RuleBased",
                    "config": {"rules": [[HIGH_MARKER, "high"]]},
                }
            },
            "RemediationGen": {"primary": {"kind": "LocalStub", "config": {}}},
            "JustificationGen": {"primary": {"kind": "LocalStub", "config": {}}},
        },
    }
    cfg.update(overrides)
    return cfg


@pytest.fixture
def engine_config() -> EngineConfig:
    return parse_config(base_config_dict())


@pytest.fixture
def categories() -> CategorySet:
    return CategorySet(CATEGORY_NAMES)


def make_utterance(
    uid: str = "t1",
    speaker: Role = Role.SME,
    source_text: str = "hello there",
    translated_text: str | None = "translated text",
    received_at: float = 0.0,
) -> Utterance:
    return Utterance(
        id=uid,
        speaker=speaker,
        source_text=source_text,
        source_lang="en",
        target_lang="zh",
        received_at=received_at,
        translated_text=translated_text,
    )


def stub_spec(task: Task, config: dict | None = None, timeout_s: float = 3.0) -> BackendSpec:
    kind = BackendKind.RULE_BASED if "Cls" in task.value else BackendKind.LOCAL_STUB
    return BackendSpec(task=task, kind=kind, timeout_s=timeout_s, config=config or {})


def run(coro):
    return asyncio.run(coro)


def complementary_dataset(
    seed: int, n: int = 400
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Synthetic set where the two base models err on disjoint, feature-visible
    regions.

    Base A (one-hot block) is right only in group 0; base B (probability
    block) is right only in group 1, but with a confidence level that signals
    which group a sample is in. Returns (features, labels, a_preds, b_preds).
    """
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, size=n)
    group = rng.integers(0, 2, size=n)
    features = np.zeros((n, 4))
    a_preds = np.where(group == 0, y, 1 - y)
    b_probs = np.zeros((n, 2))
    for i in range(n):
        if group[i] == 1:
            b_probs[i, y[i]] = 0.9
            b_probs[i, 1 - y[i]] = 0.1
        else:
            b_probs[i, 1 - y[i]] = 0.55
            b_probs[i, y[i]] = 0.45
    features[np.arange(n), a_preds] = 1.0
    features[:, 2:] = b_probs
    b_preds = np.argmax(b_probs, axis=1)
    return features, y, a_preds, b_preds


def separating_rule(features: np.ndarray) -> np.ndarray:
    """Closed-form linear rule known to split the complementary dataset.

    Used as the independence check: the trained model is only required to find
    *a* separator, this proves one exists.
    """
    a0, a1, b0, b1 = features[:, 0], features[:, 1], features[:, 2], features[:, 3]
    score = 0.45 * (a1 - a0) + (b1 - b0)
    return (score > 0).astype(int)
