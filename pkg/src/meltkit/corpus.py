"""Corpus ingestion, filtering, and split summaries.

The source manifest is a CSV in the public MELD schema (columns Utterance,
Speaker, Emotion, Dialogue_ID, Utterance_ID, Season, Episode, StartTime,
EndTime). Utterances shorter than the minimum duration and utterances from
speakers outside the retained roster are dropped by the two filters; the
ingest step itself never silently drops rows, it routes bad rows to a
rejects report instead.
"""

from __future__ import annotations

import csv
import importlib.resources
import json
import logging
import re
import wave
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterator, Mapping, Optional

from .labels import EmotionLabel, OutOfVocabularyLabel, parse_label

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = (
    "Utterance",
    "Speaker",
    "Emotion",
    "Dialogue_ID",
    "Utterance_ID",
    "Season",
    "Episode",
    "StartTime",
    "EndTime",
)

SPLITS = ("train", "test")

# "HH:MM:SS,mmm" with tolerance for short hour/milli fields.
_TIMESTAMP_RE = re.compile(r"^\s*(\d+):(\d{1,2}):(\d{1,2}),(\d{1,3})\s*$")

# Audio-vs-timestamp durations farther apart than this flag the record.
DURATION_TOLERANCE_S = 0.25


class CorpusError(ValueError):
    pass


class DuplicateKey(CorpusError):
    pass


class MalformedHeader(CorpusError):
    pass


UtteranceKey = tuple[str, int, int]


@dataclass(frozen=True)
class Utterance:
    """One dialogue line with its human label and timing."""

    split: str
    dialogue_id: int
    utterance_id: int
    speaker: str
    text: str
    season: int
    episode: int
    duration_s: float
    source_label: EmotionLabel
    duration_flagged: bool = False

    @property
    def key(self) -> UtteranceKey:
        return (self.split, self.dialogue_id, self.utterance_id)

    @property
    def clip_name(self) -> str:
        return f"dia{self.dialogue_id}_utt{self.utterance_id}.wav"

    def to_record(self) -> dict:
        return {
            "split": self.split,
            "dialogue_id": self.dialogue_id,
            "utterance_id": self.utterance_id,
            "speaker": self.speaker,
            "text": self.text,
            "season": self.season,
            "episode": self.episode,
            "duration_s": self.duration_s,
            "source_label": self.source_label.value,
            "duration_flagged": self.duration_flagged,
        }

    @classmethod
    def from_record(cls, record: Mapping) -> "Utterance":
        return cls(
            split=str(record["split"]),
            dialogue_id=int(record["dialogue_id"]),
            utterance_id=int(record["utterance_id"]),
            speaker=str(record["speaker"]),
            text=str(record["text"]),
            season=int(record["season"]),
            episode=int(record["episode"]),
            duration_s=float(record["duration_s"]),
            source_label=parse_label(str(record["source_label"])),
            duration_flagged=bool(record.get("duration_flagged", False)),
        )


@dataclass(frozen=True)
class RejectedRow:
    split: str
    row_index: int
    reason: str
    detail: str
    raw: Mapping[str, str]

    def to_record(self) -> dict:
        return {
            "split": self.split,
            "row_index": self.row_index,
            "reason": self.reason,
            "detail": self.detail,
            "raw": dict(self.raw),
        }


@dataclass(frozen=True)
class SplitSummary:
    split: str
    n_utterances: int
    n_speakers: int
    avg_duration_s: float


@dataclass(frozen=True)
class Corpus:
    """Immutable set of utterances plus the rows ingest could not keep."""

    utterances: tuple[Utterance, ...]
    rejects: tuple[RejectedRow, ...] = ()

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self) -> Iterator[Utterance]:
        return iter(self.utterances)

    def split(self, name: str) -> tuple[Utterance, ...]:
        return tuple(u for u in self.utterances if u.split == name)

    def splits(self) -> tuple[str, ...]:
        seen = []
        for u in self.utterances:
            if u.split not in seen:
                seen.append(u.split)
        return tuple(seen)

    def by_key(self) -> dict[UtteranceKey, Utterance]:
        return {u.key: u for u in self.utterances}

    def labels_by_key(self) -> dict[UtteranceKey, EmotionLabel]:
        return {u.key: u.source_label for u in self.utterances}

    def merge(self, other: "Corpus") -> "Corpus":
        combined = self.utterances + other.utterances
        keys = [u.key for u in combined]
        if len(set(keys)) != len(keys):
            raise DuplicateKey("merging corpora would duplicate utterance keys")
        return Corpus(combined, self.rejects + other.rejects)


def normalize_speaker(raw: str) -> str:
    """Trim, collapse internal whitespace, and case-fold for matching."""
    return " ".join(raw.split()).casefold()


@dataclass(frozen=True)
class SpeakerRoster:
    """Set of retained speakers plus raw-string aliases."""

    retained: tuple[str, ...]
    alias_map: Mapping[str, str] = field(default_factory=dict)
    stop_list: frozenset[str] = frozenset()
    _index: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        stop = self.stop_list or load_stop_list()
        for name in self.retained:
            tokens = re.findall(r"[A-Za-z]+", name)
            if not any(t.casefold() not in stop for t in tokens):
                raise CorpusError(
                    f"roster name {name!r} has no token outside the generic-role stop-list"
                )
            self._index[normalize_speaker(name)] = name

    def match(self, raw_speaker: str) -> Optional[str]:
        """Canonical retained name for a raw speaker string, or None."""
        norm = normalize_speaker(raw_speaker)
        aliased = self.alias_map.get(norm)
        if aliased is not None:
            norm = normalize_speaker(aliased)
        return self._index.get(norm)


def load_stop_list() -> frozenset[str]:
    text = (
        importlib.resources.files("meltkit.assets")
        .joinpath("speaker_stoplist_v1.json")
        .read_text(encoding="utf-8")
    )
    return frozenset(w.casefold() for w in json.loads(text))


def load_roster(path: Optional[Path] = None) -> SpeakerRoster:
    """Load a roster file, defaulting to the bundled 42-name roster."""
    if path is None:
        text = (
            importlib.resources.files("meltkit.assets")
            .joinpath("speaker_roster_v1.json")
            .read_text(encoding="utf-8")
        )
    else:
        text = Path(path).read_text(encoding="utf-8")
    data = json.loads(text)
    alias_map = {normalize_speaker(k): v for k, v in data.get("aliases", {}).items()}
    return SpeakerRoster(retained=tuple(data["retained"]), alias_map=alias_map)


def roster_from_corpus(corpus: Corpus, stop_list: Optional[frozenset[str]] = None) -> SpeakerRoster:
    """Heuristic fallback roster: speakers with at least one non-generic token.

    Used only when no roster file is available; a reconstructed roster file
    is always preferred.
    """
    stop = stop_list or load_stop_list()
    seen: dict[str, str] = {}
    for u in corpus:
        norm = normalize_speaker(u.speaker)
        if norm in seen:
            continue
        tokens = re.findall(r"[A-Za-z]+", u.speaker)
        if any(t.casefold() not in stop for t in tokens):
            seen[norm] = " ".join(u.speaker.split())
    return SpeakerRoster(retained=tuple(seen.values()), stop_list=stop)


def parse_timestamp_s(raw: str) -> float:
    m = _TIMESTAMP_RE.match(raw)
    if m is None:
        raise ValueError(f"unparsable timestamp {raw!r}")
    hours, minutes, seconds, millis = m.groups()
    if int(minutes) > 59 or int(seconds) > 59:
        raise ValueError(f"timestamp field out of range in {raw!r}")
    return int(hours) * 3600 + int(minutes) * 60 + int(seconds) + int(millis.ljust(3, "0")) / 1000.0


def audio_duration_s(path: Path) -> float:
    with wave.open(str(path), "rb") as wav:
        frames = wav.getnframes()
        rate = wav.getframerate()
    if rate <= 0:
        raise ValueError(f"invalid sample rate in {path}")
    return frames / rate


def ingest(
    manifest_path: Path,
    split: str,
    audio_root: Optional[Path] = None,
) -> Corpus:
    """Read one split's manifest into a Corpus.

    Rows that cannot become valid utterances (empty speaker/text, label
    outside the vocabulary, unparsable or negative-duration timestamps)
    are collected as rejects, not dropped. Duplicate keys and a missing
    header are hard errors.

    Args:
        manifest_path: CSV manifest for a single split.
        split: split name, "train" or "test".
        audio_root: optional directory holding {split}/dia{d}_utt{u}.wav;
            when a clip exists, its decoded length wins over the
            timestamp difference, and a disagreement beyond 0.25 s flags
            the record.
    """
    if split not in SPLITS:
        raise CorpusError(f"unknown split {split!r}; expected one of {SPLITS}")
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise FileNotFoundError(f"manifest not found: {manifest_path}")

    utterances: list[Utterance] = []
    rejects: list[RejectedRow] = []
    seen_keys: set[UtteranceKey] = set()

    with manifest_path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise MalformedHeader(
                f"manifest {manifest_path} is missing columns: {', '.join(missing)}"
            )
        for index, row in enumerate(reader):
            def reject(reason: str, detail: str) -> None:
                rejects.append(
                    RejectedRow(
                        split=split,
                        row_index=index,
                        reason=reason,
                        detail=detail,
                        raw={c: (row.get(c) or "") for c in REQUIRED_COLUMNS},
                    )
                )

            speaker = (row.get("Speaker") or "").strip()
            text = (row.get("Utterance") or "").strip()
            if not speaker:
                reject("EmptySpeaker", "Speaker field is empty")
                continue
            if not text:
                reject("EmptyText", "Utterance field is empty")
                continue
            try:
                label = parse_label(row.get("Emotion") or "")
            except OutOfVocabularyLabel as exc:
                reject("OutOfVocabularyLabel", str(exc))
                continue
            try:
                dialogue_id = int(row["Dialogue_ID"])
                utterance_id = int(row["Utterance_ID"])
                season = int(row["Season"])
                episode = int(row["Episode"])
            except (KeyError, ValueError) as exc:
                reject("MalformedId", str(exc))
                continue
            if season < 1 or episode < 1:
                reject("MalformedId", f"season/episode must be >= 1, got s{season}e{episode}")
                continue

            key = (split, dialogue_id, utterance_id)
            if key in seen_keys:
                raise DuplicateKey(f"duplicate utterance key {key} in {manifest_path}")

            try:
                start = parse_timestamp_s(row.get("StartTime") or "")
                end = parse_timestamp_s(row.get("EndTime") or "")
            except ValueError as exc:
                reject("UnparsableTimestamp", str(exc))
                continue
            stamp_duration = round(end - start, 6)
            if stamp_duration < 0:
                reject("NegativeDuration", f"EndTime precedes StartTime ({stamp_duration:+.3f} s)")
                continue

            duration = stamp_duration
            flagged = False
            if audio_root is not None:
                clip = Path(audio_root) / split / f"dia{dialogue_id}_utt{utterance_id}.wav"
                if clip.exists():
                    decoded = audio_duration_s(clip)
                    flagged = abs(decoded - stamp_duration) > DURATION_TOLERANCE_S
                    duration = decoded

            seen_keys.add(key)
            utterances.append(
                Utterance(
                    split=split,
                    dialogue_id=dialogue_id,
                    utterance_id=utterance_id,
                    speaker=speaker,
                    text=text,
                    season=season,
                    episode=episode,
                    duration_s=duration,
                    source_label=label,
                    duration_flagged=flagged,
                )
            )

    logger.info(
        "ingested %s: %d utterances, %d rejects", manifest_path, len(utterances), len(rejects)
    )
    return Corpus(tuple(utterances), tuple(rejects))


def filter_short(corpus: Corpus, min_duration_s: float = 1.0) -> Corpus:
    """Keep utterances with duration_s >= min_duration_s (inclusive boundary)."""
    kept = tuple(u for u in corpus if u.duration_s >= min_duration_s)
    return Corpus(kept, corpus.rejects)


def filter_speakers(corpus: Corpus, roster: SpeakerRoster) -> Corpus:
    """Keep utterances whose canonicalized speaker is on the roster."""
    if not roster.retained:
        raise CorpusError("roster is empty")
    kept = tuple(u for u in corpus if roster.match(u.speaker) is not None)
    return Corpus(kept, corpus.rejects)


def _round2(value: float) -> float:
    return float(Decimal(repr(value)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def summarize(corpus: Corpus) -> dict[str, SplitSummary]:
    """Per-split utterance count, distinct speaker count, mean duration (2 dp)."""
    out: dict[str, SplitSummary] = {}
    for name in corpus.splits():
        rows = corpus.split(name)
        speakers = {normalize_speaker(u.speaker) for u in rows}
        avg = _round2(sum(u.duration_s for u in rows) / len(rows)) if rows else 0.0
        out[name] = SplitSummary(
            split=name,
            n_utterances=len(rows),
            n_speakers=len(speakers),
            avg_duration_s=avg,
        )
    return out


def save_corpus(corpus: Corpus, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for u in corpus:
            fh.write(json.dumps(u.to_record(), ensure_ascii=False) + "\n")


def save_rejects(corpus: Corpus, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for r in corpus.rejects:
            fh.write(json.dumps(r.to_record(), ensure_ascii=False) + "\n")


def load_corpus(path: Path) -> Corpus:
    path = Path(path)
    utterances = []
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                utterances.append(Utterance.from_record(json.loads(line)))
    keys = [u.key for u in utterances]
    if len(set(keys)) != len(keys):
        raise DuplicateKey(f"duplicate utterance keys in {path}")
    return Corpus(tuple(utterances))


def key_to_string(key: UtteranceKey) -> str:
    return f"{key[0]}:{key[1]}:{key[2]}"


def key_from_string(raw: str) -> UtteranceKey:
    split, dia, utt = raw.split(":")
    return (split, int(dia), int(utt))
