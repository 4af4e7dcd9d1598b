"""Blinded A/B preference study: item construction, HTTP service, aggregation.

Participants hear a clip and pick one of two voice descriptions without
knowing which is the re-annotation and which is the original label. The
source mapping lives only in the server-side study file; judgments land in
an append-only JSON-lines log and every aggregate is a pure fold over it.
"""

from __future__ import annotations

import json
import logging
import random
import re
import secrets
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional

from fastapi import FastAPI, Header, HTTPException, Request
from fastapi.responses import FileResponse, JSONResponse

from .annotator import AnnotationRecord
from .corpus import Corpus, UtteranceKey, key_from_string, key_to_string
from .labels import LABELS, EmotionLabel

logger = logging.getLogger(__name__)

OPERATOR_KEY_ENV = "MELT_OPERATOR_KEY"
DEFAULT_SESSION_TTL_S = 24 * 3600

SOURCE_MELT = "melt"
SOURCE_MELD = "meld"

_CLIP_NAME_RE = re.compile(r"^[A-Za-z0-9._-]+$")


class StudyError(ValueError):
    pass


class MissingClip(StudyError):
    pass


class MissingAnnotation(StudyError):
    pass


@dataclass(frozen=True)
class StudySampling:
    seed: int = 0
    limit: Optional[int] = None


@dataclass(frozen=True)
class StudyItem:
    utterance_key: UtteranceKey
    clip_ref: str
    option_a: str
    option_b: str
    source_of_a: str  # never serialized to clients
    melt_label: EmotionLabel
    meld_label: EmotionLabel

    def resolved_source(self, chosen: str) -> str:
        if chosen == "a":
            return self.source_of_a
        return SOURCE_MELD if self.source_of_a == SOURCE_MELT else SOURCE_MELT

    def to_record(self) -> dict:
        return {
            "utterance_key": key_to_string(self.utterance_key),
            "clip_ref": self.clip_ref,
            "option_a": self.option_a,
            "option_b": self.option_b,
            "source_of_a": self.source_of_a,
            "melt_label": self.melt_label.value,
            "meld_label": self.meld_label.value,
        }

    @classmethod
    def from_record(cls, record: Mapping) -> "StudyItem":
        return cls(
            utterance_key=key_from_string(record["utterance_key"]),
            clip_ref=record["clip_ref"],
            option_a=record["option_a"],
            option_b=record["option_b"],
            source_of_a=record["source_of_a"],
            melt_label=EmotionLabel(record["melt_label"]),
            meld_label=EmotionLabel(record["meld_label"]),
        )

    def client_payload(self, done: int, total: int) -> dict:
        # Blinding contract: nothing here may identify the sources.
        return {
            "item_id": key_to_string(self.utterance_key),
            "clip_url": f"/media/{self.clip_ref}",
            "option_a": self.option_a,
            "option_b": self.option_b,
            "progress": {"done": done, "total": total},
        }


def describe_melt(record: AnnotationRecord) -> str:
    a = record.annotation
    return (
        f"{a.emotion.value.capitalize()}: {a.loudness} voice, {a.pitch} pitch, "
        f"{a.rhythm_speed} rhythm"
    )


def describe_meld(label: EmotionLabel) -> str:
    return label.value.capitalize()


def build_study(
    records_melt: Iterable[AnnotationRecord],
    corpus_meld: Corpus,
    clips_dir: Path,
    sampling: StudySampling = StudySampling(),
) -> list[StudyItem]:
    """Pair re-annotations with original labels into blinded study items.

    Which source lands on option A is drawn per item from a generator
    seeded by (sampling.seed, utterance key), so a study built twice is
    identical.

    Raises:
        MissingAnnotation: an utterance lacks one of the two sides.
        MissingClip: the referenced media file does not exist.
    """
    clips_dir = Path(clips_dir)
    melt_by_key = {r.utterance_key: r for r in records_melt}
    meld_by_key = corpus_meld.by_key()
    keys = sorted(melt_by_key.keys())
    if sampling.limit is not None:
        keys = keys[: sampling.limit]

    items: list[StudyItem] = []
    for key in keys:
        melt = melt_by_key[key]
        utt = meld_by_key.get(key)
        if utt is None:
            raise MissingAnnotation(f"no original record for {key_to_string(key)}")
        clip = utt.clip_name
        if not (clips_dir / clip).exists():
            raise MissingClip(f"clip {clip} not found under {clips_dir}")
        melt_text = describe_melt(melt)
        meld_text = describe_meld(utt.source_label)
        rng = random.Random(f"{sampling.seed}:{key_to_string(key)}")
        melt_is_a = rng.random() < 0.5
        items.append(
            StudyItem(
                utterance_key=key,
                clip_ref=clip,
                option_a=melt_text if melt_is_a else meld_text,
                option_b=meld_text if melt_is_a else melt_text,
                source_of_a=SOURCE_MELT if melt_is_a else SOURCE_MELD,
                melt_label=melt.annotation.emotion,
                meld_label=utt.source_label,
            )
        )
    return items


def save_study(items: Iterable[StudyItem], sampling: StudySampling, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "seed": sampling.seed,
        "items": [item.to_record() for item in items],
    }
    path.write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def load_study(path: Path) -> tuple[list[StudyItem], int]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return [StudyItem.from_record(r) for r in data["items"]], int(data["seed"])


@dataclass(frozen=True)
class PreferenceJudgment:
    participant_id: str
    utterance_key: UtteranceKey
    chosen: str
    resolved_source: str
    melt_label: EmotionLabel
    meld_label: EmotionLabel
    timestamp: float

    def to_record(self) -> dict:
        return {
            "participant_id": self.participant_id,
            "utterance_key": key_to_string(self.utterance_key),
            "chosen": self.chosen,
            "resolved_source": self.resolved_source,
            "emotion_context": {
                "melt": self.melt_label.value,
                "meld": self.meld_label.value,
            },
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_record(cls, record: Mapping) -> "PreferenceJudgment":
        return cls(
            participant_id=record["participant_id"],
            utterance_key=key_from_string(record["utterance_key"]),
            chosen=record["chosen"],
            resolved_source=record["resolved_source"],
            melt_label=EmotionLabel(record["emotion_context"]["melt"]),
            meld_label=EmotionLabel(record["emotion_context"]["meld"]),
            timestamp=float(record["timestamp"]),
        )


@dataclass(frozen=True)
class Participant:
    id: str
    gender: Optional[str]
    created_at: float


class StudyStore:
    """Append-only persistence for sessions and judgments."""

    def __init__(self, root: Path) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.judgments_path = self.root / "judgments.jsonl"
        self.sessions_path = self.root / "sessions.jsonl"
        self._lock = threading.Lock()

    def append_judgment(self, judgment: PreferenceJudgment) -> None:
        with self._lock, self.judgments_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(judgment.to_record(), ensure_ascii=False) + "\n")

    def append_session(self, participant: Participant) -> None:
        record = {
            "id": participant.id,
            "gender": participant.gender,
            "created_at": participant.created_at,
        }
        with self._lock, self.sessions_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")

    def load_judgments(self) -> list[PreferenceJudgment]:
        if not self.judgments_path.exists():
            return []
        out = []
        with self.judgments_path.open(encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    out.append(PreferenceJudgment.from_record(json.loads(line)))
        return out

    def load_sessions(self) -> list[Participant]:
        if not self.sessions_path.exists():
            return []
        out = []
        with self.sessions_path.open(encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    r = json.loads(line)
                    out.append(Participant(r["id"], r.get("gender"), float(r["created_at"])))
        return out


def aggregate(judgments: Iterable[PreferenceJudgment], axis: str = SOURCE_MELT) -> dict:
    """Per-emotion re-annotation preference rates.

    Judgments are bucketed by the utterance's label on the chosen axis
    ("melt" default, "meld" switchable); each bucket reports how often the
    re-annotated description won.
    """
    if axis not in (SOURCE_MELT, SOURCE_MELD):
        raise ValueError(f"unknown bucketing axis {axis!r}")
    judgments = list(judgments)
    per_emotion: dict[str, dict[str, int]] = {}
    per_participant: dict[str, dict[str, int]] = {}
    total = 0
    melt_wins = 0
    for j in judgments:
        bucket_label = j.melt_label if axis == SOURCE_MELT else j.meld_label
        bucket = per_emotion.setdefault(bucket_label.value, {"n": 0, "melt_chosen": 0})
        who = per_participant.setdefault(j.participant_id, {"n": 0, "melt_chosen": 0})
        won = j.resolved_source == SOURCE_MELT
        bucket["n"] += 1
        bucket["melt_chosen"] += won
        who["n"] += 1
        who["melt_chosen"] += won
        total += 1
        melt_wins += won

    def rate(entry: dict[str, int]) -> Optional[float]:
        return entry["melt_chosen"] / entry["n"] if entry["n"] else None

    return {
        "axis": axis,
        "overall": {
            "n": total,
            "melt_chosen": melt_wins,
            "melt_rate": melt_wins / total if total else None,
        },
        "per_emotion": {
            label.value: {
                **per_emotion.get(label.value, {"n": 0, "melt_chosen": 0}),
                "melt_rate": rate(per_emotion.get(label.value, {"n": 0, "melt_chosen": 0})),
            }
            for label in LABELS
        },
        "per_participant": {
            pid: {**entry, "melt_rate": rate(entry)}
            for pid, entry in sorted(per_participant.items())
        },
    }


@dataclass
class _Session:
    participant: Participant
    order: list[UtteranceKey]
    judged: set[UtteranceKey] = field(default_factory=set)


class StudyService:
    """In-process state for the HTTP app: items, sessions, judgment log."""

    def __init__(
        self,
        items: list[StudyItem],
        store: StudyStore,
        media_dir: Path,
        seed: int = 0,
        session_ttl_s: float = DEFAULT_SESSION_TTL_S,
        operator_key: Optional[str] = None,
    ) -> None:
        if not items:
            raise StudyError("study has no items")
        self.items = {item.utterance_key: item for item in items}
        self.base_order = [item.utterance_key for item in items]
        self.store = store
        self.media_dir = Path(media_dir)
        self.seed = seed
        self.session_ttl_s = session_ttl_s
        self.operator_key = operator_key
        self._sessions: dict[str, _Session] = {}
        self._lock = threading.Lock()
        self._restore()

    def _restore(self) -> None:
        for participant in self.store.load_sessions():
            self._sessions[participant.id] = _Session(
                participant=participant,
                order=self._participant_order(participant.id),
            )
        for judgment in self.store.load_judgments():
            session = self._sessions.get(judgment.participant_id)
            if session is not None:
                session.judged.add(judgment.utterance_key)

    def _participant_order(self, participant_id: str) -> list[UtteranceKey]:
        order = list(self.base_order)
        random.Random(f"{self.seed}:{participant_id}").shuffle(order)
        return order

    def create_session(self, gender: Optional[str] = None) -> Participant:
        participant = Participant(
            id=secrets.token_urlsafe(16), gender=gender, created_at=time.time()
        )
        with self._lock:
            self._sessions[participant.id] = _Session(
                participant=participant,
                order=self._participant_order(participant.id),
            )
            self.store.append_session(participant)
        return participant

    def get_session(self, participant_id: str) -> _Session:
        session = self._sessions.get(participant_id)
        if session is None:
            raise KeyError(participant_id)
        age = time.time() - session.participant.created_at
        if age > self.session_ttl_s:
            raise TimeoutError(participant_id)
        return session

    def next_item(self, participant_id: str) -> Optional[dict]:
        with self._lock:
            session = self.get_session(participant_id)
            total = len(session.order)
            done = len(session.judged)
            for key in session.order:
                if key not in session.judged:
                    return self.items[key].client_payload(done=done, total=total)
            return None

    def submit(self, participant_id: str, utterance_key: UtteranceKey, chosen: str) -> PreferenceJudgment:
        if chosen not in ("a", "b"):
            raise ValueError(f"chosen must be 'a' or 'b', got {chosen!r}")
        with self._lock:
            session = self.get_session(participant_id)
            item = self.items.get(utterance_key)
            if item is None or utterance_key not in session.order:
                raise LookupError(key_to_string(utterance_key))
            if utterance_key in session.judged:
                raise FileExistsError(key_to_string(utterance_key))
            judgment = PreferenceJudgment(
                participant_id=participant_id,
                utterance_key=utterance_key,
                chosen=chosen,
                resolved_source=item.resolved_source(chosen),
                melt_label=item.melt_label,
                meld_label=item.meld_label,
                timestamp=time.time(),
            )
            session.judged.add(utterance_key)
            self.store.append_judgment(judgment)
        return judgment

    def report(self, axis: str = SOURCE_MELT) -> dict:
        return aggregate(self.store.load_judgments(), axis=axis)


def create_app(service: StudyService) -> FastAPI:
    app = FastAPI(title="listening study", docs_url=None, redoc_url=None)

    def _session_or_401(participant_id: str) -> None:
        try:
            service.get_session(participant_id)
        except KeyError:
            raise HTTPException(status_code=401, detail="unknown session")
        except TimeoutError:
            raise HTTPException(status_code=401, detail="session expired")

    @app.post("/sessions", status_code=201)
    async def create_session(request: Request) -> dict:
        gender: Optional[str] = None
        body = await request.body()
        if body:
            try:
                payload = json.loads(body)
            except ValueError:
                raise HTTPException(status_code=400, detail="body must be JSON")
            gender = payload.get("gender")
            if gender is not None and gender not in ("male", "female", "other"):
                raise HTTPException(status_code=400, detail="unknown gender value")
        participant = service.create_session(gender=gender)
        return {
            "participant_id": participant.id,
            "n_items": len(service.items),
            "expires_in_s": service.session_ttl_s,
        }

    @app.get("/sessions/{participant_id}/next")
    async def next_item(participant_id: str) -> dict:
        _session_or_401(participant_id)
        payload = service.next_item(participant_id)
        if payload is None:
            return {"done": True}
        return {"done": False, "item": payload}

    @app.post("/sessions/{participant_id}/judgments", status_code=201)
    async def submit(participant_id: str, request: Request) -> dict:
        _session_or_401(participant_id)
        try:
            payload = json.loads(await request.body())
        except ValueError:
            raise HTTPException(status_code=400, detail="body must be JSON")
        item_id = payload.get("item_id")
        chosen = payload.get("chosen")
        if not item_id or chosen not in ("a", "b"):
            raise HTTPException(status_code=400, detail="need item_id and chosen in {a, b}")
        try:
            key = key_from_string(item_id)
        except (ValueError, AttributeError):
            raise HTTPException(status_code=400, detail="malformed item_id")
        try:
            service.submit(participant_id, key, chosen)
        except LookupError:
            raise HTTPException(status_code=404, detail="item not assigned to this session")
        except FileExistsError:
            raise HTTPException(status_code=409, detail="already judged")
        return {"recorded": True, "item_id": item_id}

    @app.get("/report")
    async def report(
        axis: str = SOURCE_MELT,
        x_operator_key: Optional[str] = Header(default=None),
    ) -> JSONResponse:
        if not service.operator_key or x_operator_key != service.operator_key:
            raise HTTPException(status_code=403, detail="operator key required")
        if axis not in (SOURCE_MELT, SOURCE_MELD):
            raise HTTPException(status_code=400, detail="axis must be melt or meld")
        return JSONResponse(service.report(axis=axis))

    @app.get("/media/{clip}")
    async def media(clip: str) -> FileResponse:
        if not _CLIP_NAME_RE.match(clip):
            raise HTTPException(status_code=400, detail="malformed clip name")
        path = (service.media_dir / clip).resolve()
        if service.media_dir.resolve() not in path.parents:
            raise HTTPException(status_code=400, detail="malformed clip name")
        if not path.exists():
            raise HTTPException(status_code=404, detail="no such clip")
        media_type = "audio/wav" if clip.endswith(".wav") else "application/octet-stream"
        return FileResponse(path, media_type=media_type)

    return app
