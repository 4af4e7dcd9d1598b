"""Parse, validate, and persist model responses as emotion annotations.

The response contract is the JSON skeleton requested by the prompt. A
response must name the speaking character; a mismatch against the manifest
speaker marks the record flagged, and parse failures trigger a bounded
re-request before the utterance lands in the failures file.
"""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional

from .corpus import Corpus, Utterance, UtteranceKey
from .gateway import CompletionRecord, Gateway, estimate_cost_usd, estimate_tokens
from .labels import EmotionLabel, OutOfVocabularyLabel, parse_label
from .prompt import build_prompt

logger = logging.getLogger(__name__)


class AnnotationError(ValueError):
    pass


class NoJsonFound(AnnotationError):
    pass


class MissingField(AnnotationError):
    def __init__(self, name: str) -> None:
        super().__init__(f"annotation field {name!r} is missing or empty")
        self.name = name


class OutOfVocabularyEmotion(AnnotationError):
    def __init__(self, value: str) -> None:
        super().__init__(f"emotion {value!r} is not in the 7-label vocabulary")
        self.value = value


@dataclass(frozen=True)
class VoiceAnnotation:
    character: str
    context: str
    emotion: EmotionLabel
    loudness: str
    pitch: str
    rhythm_speed: str
    emotional_impact: str

    def to_record(self) -> dict:
        # Mirrors the response skeleton: descriptor fields stay nested.
        return {
            "character": self.character,
            "context": self.context,
            "elements": {
                "emotion": self.emotion.value,
                "loudness": self.loudness,
                "pitch": self.pitch,
                "rhythm_speed": self.rhythm_speed,
                "emotional_impact": self.emotional_impact,
            },
        }


@dataclass(frozen=True)
class AnnotationRecord:
    utterance_key: UtteranceKey
    annotation: VoiceAnnotation
    model_id: str
    temperature: float
    prompt_digest: str
    timestamp: str
    attempt: int
    cross_check: str  # "pass" | "flagged"

    def to_record(self) -> dict:
        split, dialogue_id, utterance_id = self.utterance_key
        return {
            "utterance_key": {
                "split": split,
                "dialogue_id": dialogue_id,
                "utterance_id": utterance_id,
            },
            "annotation": self.annotation.to_record(),
            "provenance": {
                "model_id": self.model_id,
                "temperature": self.temperature,
                "prompt_digest": self.prompt_digest,
                "timestamp": self.timestamp,
                "attempt": self.attempt,
            },
            "cross_check": self.cross_check,
        }

    @classmethod
    def from_record(cls, record: Mapping) -> "AnnotationRecord":
        key = record["utterance_key"]
        ann = parse_annotation(json.dumps(record["annotation"]))
        prov = record["provenance"]
        return cls(
            utterance_key=(key["split"], int(key["dialogue_id"]), int(key["utterance_id"])),
            annotation=ann,
            model_id=prov["model_id"],
            temperature=float(prov["temperature"]),
            prompt_digest=prov["prompt_digest"],
            timestamp=prov["timestamp"],
            attempt=int(prov["attempt"]),
            cross_check=record["cross_check"],
        )


@dataclass(frozen=True)
class RetryPolicy:
    max: int = 2


@dataclass
class RunReport:
    n_corpus: int = 0
    n_records: int = 0
    n_failures: int = 0
    n_flagged: int = 0
    retries: int = 0
    estimated_prompt_tokens: int = 0
    estimated_cost_usd: float = 0.0

    def to_record(self) -> dict:
        return {
            "n_corpus": self.n_corpus,
            "n_records": self.n_records,
            "n_failures": self.n_failures,
            "n_flagged": self.n_flagged,
            "retries": self.retries,
            "estimated_prompt_tokens": self.estimated_prompt_tokens,
            "estimated_cost_usd": self.estimated_cost_usd,
        }


_FENCE_RE = re.compile(r"```[a-zA-Z]*\n?")

_DESCRIPTOR_FIELDS = ("loudness", "pitch", "rhythm_speed", "emotional_impact")


def _first_json_object(raw: str) -> dict:
    text = _FENCE_RE.sub("", raw)
    decoder = json.JSONDecoder()
    idx = text.find("{")
    while idx != -1:
        try:
            obj, _end = decoder.raw_decode(text, idx)
        except ValueError:
            idx = text.find("{", idx + 1)
            continue
        if isinstance(obj, dict):
            return obj
        idx = text.find("{", idx + 1)
    raise NoJsonFound("no JSON object found in response")


def _require(data: Mapping, name: str) -> str:
    value = data.get(name)
    if value is None or (isinstance(value, str) and not value.strip()):
        raise MissingField(name)
    return str(value).strip()


def parse_annotation(raw: str) -> VoiceAnnotation:
    """Extract a VoiceAnnotation from raw response text.

    Tolerates surrounding prose and fenced code blocks; accepts the
    descriptor fields either nested under "elements" (the requested
    shape) or flat at the top level.
    """
    obj = _first_json_object(raw)
    elements = obj.get("elements")
    flat = dict(obj)
    if isinstance(elements, Mapping):
        flat.update(elements)

    character = _require(flat, "character")
    context = _require(flat, "context")
    emotion_raw = _require(flat, "emotion")
    try:
        emotion = parse_label(emotion_raw)
    except OutOfVocabularyLabel as exc:
        raise OutOfVocabularyEmotion(exc.value) from exc
    descriptors = {name: _require(flat, name) for name in _DESCRIPTOR_FIELDS}
    return VoiceAnnotation(
        character=character,
        context=context,
        emotion=emotion,
        **descriptors,
    )


_WORD_RE = re.compile(r"[a-z]+")


def cross_validate(a: VoiceAnnotation, u: Utterance) -> str:
    """Return "pass" iff the returned character shares a name token with the speaker."""
    ann_tokens = set(_WORD_RE.findall(a.character.casefold()))
    spk_tokens = set(_WORD_RE.findall(u.speaker.casefold()))
    return "pass" if ann_tokens & spk_tokens else "flagged"


@dataclass(frozen=True)
class AnnotationFailure:
    utterance_key: UtteranceKey
    reason: str
    detail: str
    attempts: int

    def to_record(self) -> dict:
        split, dialogue_id, utterance_id = self.utterance_key
        return {
            "utterance_key": {
                "split": split,
                "dialogue_id": dialogue_id,
                "utterance_id": utterance_id,
            },
            "reason": self.reason,
            "detail": self.detail,
            "attempts": self.attempts,
        }


def _annotate_one(
    u: Utterance, gateway: Gateway, policy: RetryPolicy
) -> tuple[Optional[AnnotationRecord], Optional[AnnotationFailure], int]:
    """Annotate one utterance; returns (record, failure, attempts_used)."""
    p = build_prompt(u)
    best: Optional[tuple[VoiceAnnotation, CompletionRecord, str]] = None
    last_error: Optional[AnnotationError] = None
    attempts = 0
    for attempt in range(1, policy.max + 2):
        attempts = attempt
        completion = gateway.complete(p, attempt=attempt, force_refresh=attempt > 1)
        try:
            ann = parse_annotation(completion.raw_text)
        except AnnotationError as exc:
            last_error = exc
            continue
        check = cross_validate(ann, u)
        best = (ann, completion, check)
        if check == "pass":
            break
        # flagged: re-request with the same prompt while attempts remain

    if best is None:
        assert last_error is not None
        failure = AnnotationFailure(
            utterance_key=u.key,
            reason=type(last_error).__name__,
            detail=str(last_error),
            attempts=attempts,
        )
        return None, failure, attempts

    ann, completion, check = best
    record = AnnotationRecord(
        utterance_key=u.key,
        annotation=ann,
        model_id=completion.model_id,
        temperature=completion.temperature,
        prompt_digest=completion.prompt_digest,
        timestamp=completion.timestamp,
        attempt=completion.attempt,
        cross_check=check,
    )
    return record, None, attempts


def annotate_corpus(
    corpus: Corpus,
    gateway: Gateway,
    policy: RetryPolicy = RetryPolicy(),
    concurrency: int = 8,
) -> tuple[list[AnnotationRecord], list[AnnotationFailure], RunReport]:
    """Annotate every utterance; never aborts on a single failure.

    Results are sorted by utterance key, so output is independent of the
    completion order of the worker pool.
    """
    records: list[AnnotationRecord] = []
    failures: list[AnnotationFailure] = []
    report = RunReport(n_corpus=len(corpus))

    def work(u: Utterance) -> tuple[Optional[AnnotationRecord], Optional[AnnotationFailure], int]:
        return _annotate_one(u, gateway, policy)

    if concurrency > 1 and len(corpus) > 1:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            outcomes = list(pool.map(work, corpus))
    else:
        outcomes = [work(u) for u in corpus]

    prompt_tokens = 0
    for u, (record, failure, attempts) in zip(corpus, outcomes):
        report.retries += attempts - 1
        prompt_tokens += estimate_tokens(build_prompt(u).body) * attempts
        if record is not None:
            records.append(record)
            if record.cross_check == "flagged":
                report.n_flagged += 1
        else:
            assert failure is not None
            failures.append(failure)

    records.sort(key=lambda r: r.utterance_key)
    failures.sort(key=lambda f: f.utterance_key)
    report.n_records = len(records)
    report.n_failures = len(failures)
    report.estimated_prompt_tokens = prompt_tokens
    report.estimated_cost_usd = estimate_cost_usd(len(corpus), prompt_tokens)
    assert report.n_records + report.n_failures == report.n_corpus
    return records, failures, report


def save_records(records: Iterable[AnnotationRecord], path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_record(), ensure_ascii=False) + "\n")


def save_failures(failures: Iterable[AnnotationFailure], path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for f in failures:
            fh.write(json.dumps(f.to_record(), ensure_ascii=False) + "\n")


def load_records(path: Path) -> list[AnnotationRecord]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(AnnotationRecord.from_record(json.loads(line)))
    return out


def records_label_map(records: Iterable[AnnotationRecord]) -> dict[UtteranceKey, EmotionLabel]:
    return {r.utterance_key: r.annotation.emotion for r in records}
