"""Tools for re-annotating a dialogue emotion corpus with voice-style captions.

The package covers the full pipeline: manifest ingestion and filtering,
prompt construction, model gateway (live or deterministic mock), response
parsing with retries, dataset analytics, signal-level caption verification,
and a blinded two-option preference study service.
"""

from .labels import ALIASES, LABELS, EmotionLabel, OutOfVocabularyLabel, parse_label

__version__ = "0.1.0"

__all__ = [
    "ALIASES",
    "LABELS",
    "EmotionLabel",
    "OutOfVocabularyLabel",
    "parse_label",
    "__version__",
]
