"""Closed 7-way emotion vocabulary shared by corpus labels and model outputs."""

from __future__ import annotations

from enum import Enum


class EmotionLabel(str, Enum):
    ANGER = "anger"
    DISGUST = "disgust"
    FEAR = "fear"
    JOY = "joy"
    NEUTRAL = "neutral"
    SADNESS = "sadness"
    SURPRISE = "surprise"

    def __str__(self) -> str:
        return self.value


# Alphabetical axis used everywhere a stable label order matters
# (distributions, transition matrices, serialized reports).
LABELS: tuple[EmotionLabel, ...] = tuple(EmotionLabel)

# The only tolerated synonyms. Anything else is out of vocabulary:
# silent aliasing would corrupt distribution comparisons.
ALIASES: dict[str, EmotionLabel] = {
    "happiness": EmotionLabel.JOY,
    "sad": EmotionLabel.SADNESS,
}


class OutOfVocabularyLabel(ValueError):
    """Raised for any label string outside the closed vocabulary."""

    def __init__(self, value: str) -> None:
        super().__init__(f"label {value!r} is not in the 7-emotion vocabulary")
        self.value = value


def parse_label(raw: str) -> EmotionLabel:
    """Parse a label string, case-insensitively, against the closed vocabulary.

    Args:
        raw: label text as found in a manifest or a model response.

    Returns:
        The matching EmotionLabel.

    Raises:
        OutOfVocabularyLabel: if the string is not one of the 7 labels
            or a tolerated alias.
    """
    key = raw.strip().casefold()
    try:
        return EmotionLabel(key)
    except ValueError:
        pass
    if key in ALIASES:
        return ALIASES[key]
    raise OutOfVocabularyLabel(raw)
