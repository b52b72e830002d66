"""normbridge: real-time mediation for bilingual two-party dialogue.

Detects social-norm violations in translated utterances, grades their impact,
auto-remediates low-impact ones, and lets the sender arbitrate high-impact
ones.
"""

__version__ = "0.1.0"

from .model import (
    CategorySet,
    CorrectionBundle,
    DeliveryKind,
    DialogueTurn,
    Impact,
    NormAnalysis,
    Provenance,
    Role,
    SenderChoice,
    SessionState,
    Utterance,
    append_turn,
    context_window,
)

__all__ = [
    "CategorySet",
    "CorrectionBundle",
    "DeliveryKind",
    "DialogueTurn",
    "Impact",
    "NormAnalysis",
    "Provenance",
    "Role",
    "SenderChoice",
    "SessionState",
    "Utterance",
    "append_turn",
    "context_window",
    "__version__",
]
