"""Evaluation metrics: micro P/R/F1, BLEU, ROUGE-L F1, Cohen's kappa, and
the user-study statistics (remediation-choice ratio, per-path latency means).

All functions are pure and emit values on a 0-1 scale; display-time percent
formatting belongs to the CLI.
"""

from __future__ import annotations

import math
import unicodedata
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .engine import LatencyPath, LatencyRecord
from .model import Impact, SenderChoice

Tokens = Sequence[str]


@dataclass(frozen=True)
class ClassCounts:
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    f1_micro: float
    per_class: Mapping[int, ClassCounts]

    def as_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1_micro": self.f1_micro,
            "per_class": {
                str(k): {"tp": c.tp, "fp": c.fp, "fn": c.fn} for k, c in self.per_class.items()
            },
        }


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def micro_prf(preds: Sequence[int], golds: Sequence[int], k: int) -> MetricsReport:
    """Micro-averaged precision/recall/F1 over pooled per-class counts.

    For single-label multiclass input all three collapse to accuracy.
    """
    if len(preds) != len(golds):
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(golds)} golds")
    if not preds:
        raise ValueError("empty input")
    for v in (*preds, *golds):
        if not 0 <= v < k:
            raise ValueError(f"label {v} out of range for k={k}")

    counts = {c: [0, 0, 0] for c in range(k)}  # tp, fp, fn
    for p, g in zip(preds, golds):
        if p == g:
            counts[p][0] += 1
        else:
            counts[p][1] += 1
            counts[g][2] += 1

    tp = sum(c[0] for c in counts.values())
    fp = sum(c[1] for c in counts.values())
    fn = sum(c[2] for c in counts.values())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    # Count form of 2PR/(P+R); bit-exact equal to accuracy for single-label
    # multiclass (tp+fp == tp+fn == n).
    f1 = 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 0.0
    return MetricsReport(
        precision=precision,
        recall=recall,
        f1_micro=f1,
        per_class={c: ClassCounts(*v) for c, v in counts.items()},
    )


def _ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(
    candidates: Sequence[Tokens],
    references: Sequence[Tokens],
    max_n: int = 4,
    smooth_add1: bool = False,
) -> float:
    """Corpus BLEU: geometric mean of clipped n-gram precisions times the
    brevity penalty exp(min(0, 1 - r/c)).

    Unsmoothed by default, so any empty precision order annihilates the score;
    ``smooth_add1`` adds one to clipped counts and totals for orders above 1.
    """
    if len(candidates) != len(references):
        raise ValueError("candidates and references must be aligned")
    if not candidates:
        raise ValueError("empty corpus")
    if max_n < 1:
        raise ValueError("max_n must be >= 1")

    matched = [0] * max_n
    total = [0] * max_n
    cand_len = 0
    ref_len = 0
    for cand, ref in zip(candidates, references):
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            cand_ngrams = _ngrams(cand, n)
            ref_ngrams = _ngrams(ref, n)
            matched[n - 1] += sum(min(c, ref_ngrams[g]) for g, c in cand_ngrams.items())
            total[n - 1] += sum(cand_ngrams.values())

    log_sum = 0.0
    for n in range(1, max_n + 1):
        num, den = matched[n - 1], total[n - 1]
        if smooth_add1 and n > 1:
            num, den = num + 1, den + 1
        if num == 0 or den == 0:
            return 0.0
        log_sum += math.log(num / den)
    if cand_len == 0:
        return 0.0
    bp = math.exp(min(0.0, 1.0 - ref_len / cand_len))
    return bp * math.exp(log_sum / max_n)


def _lcs_length(a: Tokens, b: Tokens) -> int:
    # Standard O(len(a) * len(b)) dynamic program, single rolling row.
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        row = [0]
        for j, y in enumerate(b, start=1):
            row.append(prev[j - 1] + 1 if x == y else max(prev[j], row[j - 1]))
        prev = row
    return prev[-1]


def rouge_l_f1(candidate: Tokens, reference: Tokens) -> float:
    """ROUGE-L F1 from the longest common subsequence of the token lists."""
    if not reference:
        raise ValueError("reference must be non-empty")
    lcs = _lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    precision = lcs / len(candidate)
    recall = lcs / len(reference)
    return _f1(precision, recall)


def cohens_kappa(rater_a: Sequence, rater_b: Sequence) -> float:
    """Cohen's kappa for two raters over the same items."""
    if len(rater_a) != len(rater_b):
        raise ValueError("rater label lists must have equal length")
    if not rater_a:
        raise ValueError("empty ratings")
    n = len(rater_a)
    p_o = sum(1 for x, y in zip(rater_a, rater_b) if x == y) / n
    count_a = Counter(rater_a)
    count_b = Counter(rater_b)
    p_e = sum(count_a[label] * count_b.get(label, 0) for label in count_a) / (n * n)
    if p_e == 1.0:
        return 1.0 if p_o == 1.0 else 0.0
    return (p_o - p_e) / (1.0 - p_e)


@dataclass(frozen=True)
class ChoiceStats:
    """Counts of violation outcomes over completed turns.

    ``ratio`` is remediations chosen over high-impact prompts, or None when no
    high-impact violation occurred.
    """

    low_impact_count: int
    high_impact_count: int
    remediation_chosen_count: int

    def __post_init__(self) -> None:
        if self.remediation_chosen_count > self.high_impact_count:
            raise ValueError("cannot choose remediation more often than prompted")

    @property
    def ratio(self) -> float | None:
        if self.high_impact_count == 0:
            return None
        return self.remediation_chosen_count / self.high_impact_count

    def as_dict(self) -> dict:
        return {
            "low_impact_count": self.low_impact_count,
            "high_impact_count": self.high_impact_count,
            "remediation_chosen_count": self.remediation_chosen_count,
            "ratio": self.ratio,
        }


def choice_stats(turns: Iterable) -> ChoiceStats:
    """Tally impact levels and sender choices.

    Accepts any objects exposing ``analysis`` (with ``violated``/``impact``)
    and ``sender_choice`` - completed DialogueTurns or parsed transcript rows.
    """
    low = high = chosen = 0
    for turn in turns:
        analysis = turn.analysis
        if analysis is None or not analysis.violated:
            continue
        if analysis.impact is Impact.HIGH:
            high += 1
            if turn.sender_choice is SenderChoice.REMEDIATION:
                chosen += 1
        elif analysis.impact is Impact.LOW:
            low += 1
        # violated turns without an impact level (faulted mid-generation)
        # count toward neither bucket
    return ChoiceStats(low, high, chosen)


def latency_means(records: Iterable[LatencyRecord]) -> dict[LatencyPath, float]:
    """Arithmetic mean elapsed time per pipeline path; empty paths are absent."""
    sums: dict[LatencyPath, float] = {}
    counts: dict[LatencyPath, int] = {}
    for rec in records:
        sums[rec.path] = sums.get(rec.path, 0.0) + rec.elapsed_s
        counts[rec.path] = counts.get(rec.path, 0) + 1
    return {path: sums[path] / counts[path] for path in sums}


_CJK_RANGES = (
    (0x3040, 0x30FF),  # hiragana, katakana
    (0x3400, 0x4DBF),
    (0x4E00, 0x9FFF),
    (0xF900, 0xFAFF),
    (0xAC00, 0xD7AF),  # hangul
    (0x20000, 0x2A6DF),
)


def _is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _CJK_RANGES)


def tokenize(text: str) -> list[str]:
    """NFC-normalized whitespace tokenization; CJK text without whitespace is
    split per code point (the usual convention for Chinese n-gram metrics)."""
    text = unicodedata.normalize("NFC", text).strip()
    if not text:
        return []
    parts = text.split()
    if len(parts) == 1 and any(_is_cjk(ch) for ch in parts[0]):
        return list(parts[0])
    return parts
