"""Deterministic synthetic fixtures shaped like the real corpus.

The real source corpus and its re-annotation are distributed externally
and cannot be bundled here. This generator produces a statistical replica:
manifests, annotation files, and acoustic feature tables whose split
sizes, speaker counts, mean durations, label distributions, change rates,
and agreement levels land exactly on the published reference statistics,
so the full pipeline and its acceptance checks run offline. Point the
pipeline at the real files instead whenever they are available; the
formats are identical.

Every artifact is a pure function of the seed. The generator asserts its
own targets before writing anything.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import random
import sys
import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import acoustics
from .annotator import AnnotationRecord, VoiceAnnotation
from .corpus import Utterance, load_roster
from .gateway import MOCK_TIMESTAMP
from .labels import LABELS, EmotionLabel
from .prompt import build_prompt

GENERATOR_MODEL_ID = "replica-v1"

L = EmotionLabel


@dataclass(frozen=True)
class SplitPlan:
    """Exact targets one split's replica must hit."""

    name: str
    total_rows: int
    total_speakers: int
    total_cs: int  # duration sum over all rows, in centiseconds
    retained_rows: int
    retained_cs: int
    meld_counts: Mapping[EmotionLabel, int]  # source labels of retained rows
    melt_counts: Mapping[EmotionLabel, int]  # re-annotation labels
    n_changed: int
    short_rows: int  # excluded by the duration filter

    @property
    def excluded_rows(self) -> int:
        return self.total_rows - self.retained_rows

    @property
    def speaker_rows(self) -> int:
        return self.excluded_rows - self.short_rows

    @property
    def generic_speakers(self) -> int:
        return self.total_speakers - 42

    @property
    def trace(self) -> int:
        return self.retained_rows - self.n_changed


PLANS = {
    "train": SplitPlan(
        name="train",
        total_rows=9989,
        total_speakers=260,
        total_cs=3_136_546,
        retained_rows=7024,
        retained_cs=2_584_832,
        meld_counts={
            L.ANGER: 852, L.DISGUST: 215, L.FEAR: 208, L.JOY: 1244,
            L.NEUTRAL: 3172, L.SADNESS: 570, L.SURPRISE: 763,
        },
        melt_counts={
            L.ANGER: 464, L.DISGUST: 473, L.FEAR: 418, L.JOY: 1578,
            L.NEUTRAL: 2519, L.SADNESS: 363, L.SURPRISE: 1209,
        },
        n_changed=3261,
        short_rows=1500,
    ),
    "test": SplitPlan(
        name="test",
        total_rows=2610,
        total_speakers=100,
        total_cs=858_690,
        retained_rows=1797,
        retained_cs=686_454,
        meld_counts={
            L.ANGER: 270, L.DISGUST: 59, L.FEAR: 42, L.JOY: 262,
            L.NEUTRAL: 827, L.SADNESS: 170, L.SURPRISE: 167,
        },
        melt_counts={
            L.ANGER: 127, L.DISGUST: 124, L.FEAR: 103, L.JOY: 389,
            L.NEUTRAL: 660, L.SADNESS: 90, L.SURPRISE: 304,
        },
        n_changed=854,
        short_rows=400,
    ),
}

# Captions the annotation side carries, keyed by intended bin. Each phrase
# must map back to its bin through the caption lexicon; the generator
# asserts that.
CAPTION_PHRASES = {
    "pitch": {
        acoustics.LevelBin.LOW: ("low", "deep", "low and flat", "gravelly"),
        acoustics.LevelBin.MID: ("medium", "mid-range", "natural", "even"),
        acoustics.LevelBin.HIGH: ("high", "shrill", "high and tense", "piercing"),
    },
    "loudness": {
        acoustics.LevelBin.LOW: ("soft", "quiet", "hushed", "faint"),
        acoustics.LevelBin.MID: ("moderate", "conversational", "steady", "balanced"),
        acoustics.LevelBin.HIGH: ("loud", "raised", "booming", "forceful"),
    },
}

# Probability that a caption names the measured bin. Pitch is kept above
# loudness, both comfortably above the 1/3 chance level.
CAPTION_AGREEMENT = {"pitch": 0.52, "loudness": 0.45}

RHYTHM_PHRASES = ("slow", "measured", "steady", "quick", "rapid-fire", "clipped")
IMPACT_PHRASES = ("soothing", "tense", "warm", "jarring", "urgent", "weary")

_TEXT_OPENERS = (
    "Well", "Oh my God", "Okay", "Look", "Honestly", "Come on", "Listen",
    "You know what", "Seriously", "Fine", "Alright", "Wait",
)
_TEXT_BODIES = (
    "I cannot believe this is happening again",
    "that was not what we agreed on",
    "this is the best day ever",
    "I have no idea what you mean",
    "we were supposed to meet an hour ago",
    "she already told everyone about it",
    "he took the last slice of pizza",
    "the audition went better than expected",
    "I'm not saying it was my fault",
    "you should have seen his face",
    "nothing about this makes sense",
    "it's just a sandwich, relax",
)
_TEXT_CLOSERS = ("", "!", "?", ", right?", ". Honestly.", "...")

_GENERIC_ROLES = (
    "Customer", "Waiter", "Waitress", "Man", "Woman", "Nurse", "Doctor",
    "Salesman", "Director", "Interviewer", "Cashier", "Announcer", "Clerk",
    "Passenger", "Patient", "Operator", "Photographer", "Journalist",
    "Producer", "Agent", "Guard", "Officer", "Teacher", "Student",
    "Actor", "Actress",
)


def _generic_names(count: int) -> list[str]:
    names = ["Receptionist", "1st Customer", "2nd Customer"]
    n = 1
    while len(names) < count:
        for role in _GENERIC_ROLES:
            names.append(f"{role} #{n}")
            if len(names) == count:
                break
        n += 1
    return names


def _utterance_text(rng: random.Random) -> str:
    return (
        f"{rng.choice(_TEXT_OPENERS)}, "
        f"{rng.choice(_TEXT_BODIES)}{rng.choice(_TEXT_CLOSERS)}"
    ).strip()


def build_transition_counts(
    old_counts: Mapping[EmotionLabel, int],
    new_counts: Mapping[EmotionLabel, int],
    trace: int,
) -> list[list[int]]:
    """A 7x7 count matrix with given row sums, column sums, and trace."""
    n = len(LABELS)
    r = [old_counts[label] for label in LABELS]
    c = [new_counts[label] for label in LABELS]
    total = sum(r)
    assert sum(c) == total
    mins = [min(a, b) for a, b in zip(r, c)]
    s_min = sum(mins)
    assert s_min >= trace, "trace target exceeds feasible diagonal mass"

    diag = [m * trace // s_min for m in mins]
    by_frac = sorted(range(n), key=lambda i: (-(mins[i] * trace % s_min), i))
    short = trace - sum(diag)
    for i in by_frac:
        if short == 0:
            break
        if diag[i] < mins[i]:
            diag[i] += 1
            short -= 1
    assert sum(diag) == trace

    rr = [r[i] - diag[i] for i in range(n)]
    cc = [c[i] - diag[i] for i in range(n)]
    remaining = total - trace
    for k in range(n):
        assert rr[k] + cc[k] <= remaining, "diagonal allocation leaves no feasible fill"

    counts = [[0] * n for _ in range(n)]
    for i in range(n):
        counts[i][i] = diag[i]

    # Largest-remainder transport fill for the off-diagonal mass. The step
    # bound keeps every label's remaining row+column mass routable.
    while remaining > 0:
        i = max(range(n), key=lambda a: (rr[a], -a))
        j = max((b for b in range(n) if b != i), key=lambda b: (cc[b], -b))
        assert rr[i] > 0 and cc[j] > 0, "transport fill deadlocked"
        others = [rr[k] + cc[k] for k in range(n) if k not in (i, j)]
        step = min(rr[i], cc[j], remaining - max(others, default=0))
        assert step >= 1, "transport fill deadlocked"
        counts[i][j] += step
        rr[i] -= step
        cc[j] -= step
        remaining -= step
        for k in range(n):
            assert rr[k] + cc[k] <= remaining

    for i in range(n):
        assert sum(counts[i]) == r[i]
    for j in range(n):
        assert sum(counts[i][j] for i in range(n)) == c[j]
    assert sum(counts[i][i] for i in range(n)) == trace
    return counts


def _format_timestamp(total_ms: int) -> str:
    seconds, ms = divmod(total_ms, 1000)
    minutes, sec = divmod(seconds, 60)
    hours, minute = divmod(minutes, 60)
    return f"{hours:02d}:{minute:02d}:{sec:02d},{ms:03d}"


@dataclass
class _Row:
    speaker: str
    emotion: EmotionLabel
    duration_cs: int
    retained: bool
    melt_label: Optional[EmotionLabel] = None


def _plan_rows(plan: SplitPlan, roster_names: Sequence[str], seed: int) -> list[_Row]:
    rng = random.Random(f"{seed}:{plan.name}:rows")

    matrix = build_transition_counts(plan.meld_counts, plan.melt_counts, plan.trace)
    pairs: list[tuple[EmotionLabel, EmotionLabel]] = []
    for i, old in enumerate(LABELS):
        for j, new in enumerate(LABELS):
            pairs.extend([(old, new)] * matrix[i][j])
    assert len(pairs) == plan.retained_rows
    rng.shuffle(pairs)

    # Retained durations: exact-mean base plus a zero-sum spread.
    base = plan.retained_cs // plan.retained_rows
    assert base * plan.retained_rows == plan.retained_cs
    durations = [base] * plan.retained_rows
    for k in range(plan.retained_rows // 2):
        delta = 10 + (k % 140)
        durations[2 * k] += delta
        durations[2 * k + 1] -= delta
    assert sum(durations) == plan.retained_cs
    assert min(durations) >= 100

    rows = [
        _Row(
            speaker=roster_names[idx % len(roster_names)],
            emotion=pair[0],
            duration_cs=durations[idx],
            retained=True,
            melt_label=pair[1],
        )
        for idx, pair in enumerate(pairs)
    ]

    # Rows excluded by the duration filter (speakers stay on the roster).
    short_cycle = (50, 62, 71, 83, 95)
    assert plan.short_rows % len(short_cycle) == 0
    short_sum = 0
    for idx in range(plan.short_rows):
        dur = short_cycle[idx % len(short_cycle)]
        short_sum += dur
        rows.append(
            _Row(
                speaker=roster_names[idx % len(roster_names)],
                emotion=LABELS[idx % len(LABELS)],
                duration_cs=dur,
                retained=False,
            )
        )

    # Rows excluded by the speaker filter (genuine durations, generic names).
    generic = _generic_names(plan.generic_speakers)
    spk_rows = plan.speaker_rows
    spk_sum = plan.total_cs - plan.retained_cs - short_sum
    spk_base, spk_rem = divmod(spk_sum, spk_rows)
    assert spk_base >= 100
    for idx in range(spk_rows):
        rows.append(
            _Row(
                speaker=generic[idx % len(generic)],
                emotion=LABELS[(idx + 3) % len(LABELS)],
                duration_cs=spk_base + (1 if idx < spk_rem else 0),
                retained=False,
            )
        )

    assert len(rows) == plan.total_rows
    assert sum(row.duration_cs for row in rows) == plan.total_cs
    assert len({row.speaker for row in rows}) == plan.total_speakers
    rng.shuffle(rows)
    return rows


def _rows_to_utterances(rows: list[_Row], split: str, seed: int) -> list[tuple[_Row, Utterance]]:
    rng = random.Random(f"{seed}:{split}:layout")
    out: list[tuple[_Row, Utterance]] = []
    dialogue_id = 0
    position = 0
    dialogue_len = rng.randint(5, 13)
    season = rng.randint(1, 10)
    episode = rng.randint(1, 24)
    for row in rows:
        if position == dialogue_len:
            dialogue_id += 1
            position = 0
            dialogue_len = rng.randint(5, 13)
            season = rng.randint(1, 10)
            episode = rng.randint(1, 24)
        utt = Utterance(
            split=split,
            dialogue_id=dialogue_id,
            utterance_id=position,
            speaker=row.speaker,
            text=_utterance_text(rng),
            season=season,
            episode=episode,
            duration_s=row.duration_cs / 100.0,
            source_label=row.emotion,
        )
        out.append((row, utt))
        position += 1
    return out


def _write_manifest(entries: list[tuple[_Row, Utterance]], path: Path, seed: int) -> None:
    rng = random.Random(f"{seed}:timestamps")
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["Utterance", "Speaker", "Emotion", "Dialogue_ID", "Utterance_ID",
             "Season", "Episode", "StartTime", "EndTime"]
        )
        clock_ms = 0
        last_dialogue = None
        for row, utt in entries:
            if utt.dialogue_id != last_dialogue:
                clock_ms = rng.randint(0, 60_000)
                last_dialogue = utt.dialogue_id
            start = clock_ms
            end = start + row.duration_cs * 10
            writer.writerow(
                [
                    utt.text,
                    utt.speaker,
                    utt.source_label.value,
                    utt.dialogue_id,
                    utt.utterance_id,
                    utt.season,
                    utt.episode,
                    _format_timestamp(start),
                    _format_timestamp(end),
                ]
            )
            clock_ms = end + rng.randint(200, 1500)


def _make_annotation(
    utt: Utterance,
    melt_label: EmotionLabel,
    pitch_phrase: str,
    loudness_phrase: str,
    rng: random.Random,
) -> AnnotationRecord:
    annotation = VoiceAnnotation(
        character=utt.speaker,
        context=f"A scene from s{utt.season}e{utt.episode}.",
        emotion=melt_label,
        loudness=loudness_phrase,
        pitch=pitch_phrase,
        rhythm_speed=rng.choice(RHYTHM_PHRASES),
        emotional_impact=rng.choice(IMPACT_PHRASES),
    )
    return AnnotationRecord(
        utterance_key=utt.key,
        annotation=annotation,
        model_id=GENERATOR_MODEL_ID,
        temperature=1.0,
        prompt_digest=build_prompt(utt).digest,
        timestamp=MOCK_TIMESTAMP,
        attempt=1,
        cross_check="pass",
    )


def _caption_bin(true_bin: acoustics.LevelBin, axis: str, rng: random.Random) -> acoustics.LevelBin:
    if rng.random() < CAPTION_AGREEMENT[axis]:
        return true_bin
    return rng.choice([b for b in acoustics.LevelBin if b != true_bin])


def generate_dataset(out_dir: Path, seed: int = 7) -> dict:
    """Write the replica manifests, annotations, and eGeMAPS tables.

    Layout under out_dir:
        manifests/{train,test}.csv
        annotations/melt_{train,test}.jsonl
        egemaps/{train,test}.csv
        meta.json
    """
    out_dir = Path(out_dir)
    roster = load_roster()
    assert len(roster.retained) == 42

    for axis, phrases in CAPTION_PHRASES.items():
        for level, bank in phrases.items():
            for phrase in bank:
                assert acoustics.map_caption(phrase, axis) == level, (axis, phrase)

    meta: dict = {"seed": seed, "generator": GENERATOR_MODEL_ID, "splits": {}}
    for name, plan in PLANS.items():
        rows = _plan_rows(plan, roster.retained, seed)
        entries = _rows_to_utterances(rows, name, seed)
        _write_manifest(entries, out_dir / "manifests" / f"{name}.csv", seed)

        retained = [(row, utt) for row, utt in entries if row.retained]
        assert len(retained) == plan.retained_rows

        # Acoustic feature values, then their split-level bins, then
        # captions that agree with the measured bin at the target rate.
        feat_rng = random.Random(f"{seed}:{name}:features")
        pitch_values = {}
        loudness_values = {}
        for _row, utt in retained:
            pitch_values[utt.key] = round(feat_rng.uniform(18.0, 42.0), 4)
            loudness_values[utt.key] = round(feat_rng.uniform(0.2, 2.5), 4)
        pitch_bins, _ = acoustics.bin_values(pitch_values)
        loudness_bins, _ = acoustics.bin_values(loudness_values)

        egemaps_path = out_dir / "egemaps" / f"{name}.csv"
        egemaps_path.parent.mkdir(parents=True, exist_ok=True)
        with egemaps_path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["name", acoustics.EGEMAPS_F0_COLUMN, acoustics.EGEMAPS_LOUDNESS_COLUMN]
            )
            for _row, utt in retained:
                writer.writerow(
                    [utt.clip_name, pitch_values[utt.key], loudness_values[utt.key]]
                )

        caption_rng = random.Random(f"{seed}:{name}:captions")
        ann_path = out_dir / "annotations" / f"melt_{name}.jsonl"
        ann_path.parent.mkdir(parents=True, exist_ok=True)
        with ann_path.open("w", encoding="utf-8") as fh:
            for row, utt in sorted(retained, key=lambda e: e[1].key):
                pitch_level = _caption_bin(pitch_bins[utt.key], "pitch", caption_rng)
                loud_level = _caption_bin(loudness_bins[utt.key], "loudness", caption_rng)
                record = _make_annotation(
                    utt,
                    row.melt_label,
                    pitch_phrase=caption_rng.choice(CAPTION_PHRASES["pitch"][pitch_level]),
                    loudness_phrase=caption_rng.choice(CAPTION_PHRASES["loudness"][loud_level]),
                    rng=caption_rng,
                )
                fh.write(json.dumps(record.to_record(), ensure_ascii=False) + "\n")

        melt_counts = {label: 0 for label in LABELS}
        for row, _utt in retained:
            melt_counts[row.melt_label] += 1
        assert melt_counts == dict(plan.melt_counts)
        meta["splits"][name] = {
            "rows": plan.total_rows,
            "retained": plan.retained_rows,
            "n_changed": plan.n_changed,
        }

    (out_dir / "meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return meta


def write_tone(path: Path, freq_hz: float, amplitude: float, duration_s: float = 1.0,
               sample_rate: int = 16_000) -> None:
    t = np.arange(int(duration_s * sample_rate)) / sample_rate
    samples = (amplitude * np.sin(2.0 * math.pi * freq_hz * t) * 32767.0).astype("<i2")
    path.parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(sample_rate)
        wav.writeframes(samples.tobytes())


TONE_FREQS = (120.0, 220.0, 400.0)
TONE_AMPS = (0.05, 0.2, 0.8)


def generate_tone_fixtures(out_dir: Path) -> list[dict]:
    """Nine tones spanning 3 pitch levels x 3 loudness levels.

    Captions name each tone's true bin, so built-in extraction followed by
    binning and caption mapping must agree perfectly.
    """
    out_dir = Path(out_dir)
    rng = random.Random("tones")
    roster = load_roster()
    manifest = []
    corpus_path = out_dir / "corpus.jsonl"
    ann_path = out_dir / "annotations.jsonl"
    corpus_path.parent.mkdir(parents=True, exist_ok=True)

    bins_by_freq = dict(zip(TONE_FREQS, acoustics.LevelBin))
    bins_by_amp = dict(zip(TONE_AMPS, acoustics.LevelBin))

    with corpus_path.open("w", encoding="utf-8") as corpus_fh, ann_path.open(
        "w", encoding="utf-8"
    ) as ann_fh:
        for k in range(9):
            freq = TONE_FREQS[k % 3]
            amp = TONE_AMPS[k // 3]
            utt = Utterance(
                split="test",
                dialogue_id=900 + k // 3,
                utterance_id=k % 3,
                speaker=roster.retained[k % len(roster.retained)],
                text=f"Tone reference {k}.",
                season=1,
                episode=1,
                duration_s=1.0,
                source_label=L.NEUTRAL,
            )
            write_tone(out_dir / "audio" / "test" / utt.clip_name, freq, amp)
            record = _make_annotation(
                utt,
                L.NEUTRAL,
                pitch_phrase=CAPTION_PHRASES["pitch"][bins_by_freq[freq]][0],
                loudness_phrase=CAPTION_PHRASES["loudness"][bins_by_amp[amp]][0],
                rng=rng,
            )
            corpus_fh.write(json.dumps(utt.to_record(), ensure_ascii=False) + "\n")
            ann_fh.write(json.dumps(record.to_record(), ensure_ascii=False) + "\n")
            manifest.append({"clip": utt.clip_name, "freq_hz": freq, "amplitude": amp})
    return manifest


# The study fixture pairs each clip's original label with a different
# re-annotation label so the two options are always distinguishable.
STUDY_ITEMS = (
    (L.NEUTRAL, L.ANGER),
    (L.NEUTRAL, L.ANGER),
    (L.SADNESS, L.JOY),
    (L.ANGER, L.JOY),
    (L.NEUTRAL, L.JOY),
    (L.JOY, L.NEUTRAL),
    (L.SURPRISE, L.NEUTRAL),
    (L.FEAR, L.SADNESS),
    (L.ANGER, L.SURPRISE),
    (L.DISGUST, L.SURPRISE),
)


def generate_study_fixture(out_dir: Path) -> list[dict]:
    """Ten clips with paired original/re-annotation labels plus media files."""
    out_dir = Path(out_dir)
    rng = random.Random("study")
    roster = load_roster()
    items = []
    corpus_path = out_dir / "corpus.jsonl"
    ann_path = out_dir / "melt.jsonl"
    corpus_path.parent.mkdir(parents=True, exist_ok=True)
    with corpus_path.open("w", encoding="utf-8") as corpus_fh, ann_path.open(
        "w", encoding="utf-8"
    ) as ann_fh:
        for i, (meld_label, melt_label) in enumerate(STUDY_ITEMS):
            utt = Utterance(
                split="test",
                dialogue_id=800 + i,
                utterance_id=0,
                speaker=roster.retained[i],
                text=f"Study line {i + 1}.",
                season=1,
                episode=i + 1,
                duration_s=0.5,
                source_label=meld_label,
            )
            write_tone(out_dir / "media" / utt.clip_name, 180.0 + 25.0 * i, 0.3,
                       duration_s=0.5)
            record = _make_annotation(
                utt,
                melt_label,
                pitch_phrase=rng.choice(CAPTION_PHRASES["pitch"][acoustics.LevelBin.MID]),
                loudness_phrase=rng.choice(CAPTION_PHRASES["loudness"][acoustics.LevelBin.MID]),
                rng=rng,
            )
            corpus_fh.write(json.dumps(utt.to_record(), ensure_ascii=False) + "\n")
            ann_fh.write(json.dumps(record.to_record(), ensure_ascii=False) + "\n")
            items.append(
                {
                    "key": utt.key,
                    "clip": utt.clip_name,
                    "meld": meld_label.value,
                    "melt": melt_label.value,
                }
            )
    return items


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="python -m meltkit.synthdata",
        description="Generate the deterministic replica fixtures.",
    )
    parser.add_argument("--out", required=True, type=Path, help="output directory")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument(
        "--which",
        choices=("dataset", "tones", "study", "all"),
        default="all",
    )
    args = parser.parse_args(argv)

    if args.which in ("dataset", "all"):
        meta = generate_dataset(args.out / "dataset", seed=args.seed)
        print(json.dumps({"dataset": meta["splits"]}))
    if args.which in ("tones", "all"):
        tones = generate_tone_fixtures(args.out / "tones")
        print(json.dumps({"tones": len(tones)}))
    if args.which in ("study", "all"):
        items = generate_study_fixture(args.out / "study")
        print(json.dumps({"study_items": len(items)}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
