"""Regex extraction of remediation and justification from generated text.

Generators answer with labeled sections; labels are matched case-insensitively
at line starts, bodies may span lines, and the two sections may come in either
order. Label aliases are configurable since vendors word them differently.
"""

from __future__ import annotations

import re
from dataclasses import dataclass


class ParseError(ValueError):
    """The generation lacked an extractable remediation or justification."""


@dataclass(frozen=True)
class GenerationLabels:
    remediation: tuple[str, ...] = ("remediation",)
    justification: tuple[str, ...] = ("justification", "explanation")


DEFAULT_LABELS = GenerationLabels()


def _label_pattern(labels: GenerationLabels) -> re.Pattern:
    names = "|".join(re.escape(n) for n in labels.remediation + labels.justification)
    # Full-width colon included because generators often answer in Chinese.
    return re.compile(rf"^[ \t]*({names})[ \t]*[:：][ \t]*", re.IGNORECASE | re.MULTILINE)


def has_generation_labels(raw: str, labels: GenerationLabels | None = None) -> bool:
    labels = labels or DEFAULT_LABELS
    return len(_label_pattern(labels).findall(raw)) >= 2


def parse_generation(
    raw: str, labels: GenerationLabels | None = None
) -> tuple[str, str]:
    """Extract (remediation, justification) from a labeled blob.

    The first occurrence of each label wins. Raises ParseError when either
    section is missing or empty; callers treat that as a backend error.
    """
    if not raw:
        raise ParseError("empty generation output")
    labels = labels or DEFAULT_LABELS
    pattern = _label_pattern(labels)

    sections: dict[str, str] = {}
    matches = list(pattern.finditer(raw))
    for i, match in enumerate(matches):
        name = match.group(1).lower()
        end = matches[i + 1].start() if i + 1 < len(matches) else len(raw)
        body = raw[match.end() : end].strip()
        key = "remediation" if name in {n.lower() for n in labels.remediation} else "justification"
        sections.setdefault(key, body)

    remediation = sections.get("remediation", "")
    justification = sections.get("justification", "")
    if not remediation or not justification:
        missing = [k for k, v in (("remediation", remediation), ("justification", justification)) if not v]
        raise ParseError(f"generation output lacks labeled section(s): {', '.join(missing)}")
    return remediation, justification
