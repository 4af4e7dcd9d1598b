"""Manifest ingestion, validation, filtering, and snapshot round-trips."""

from __future__ import annotations

import csv
import wave
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meltkit import corpus
from meltkit.labels import ALIASES, LABELS, EmotionLabel, OutOfVocabularyLabel, parse_label

HEADER = list(corpus.REQUIRED_COLUMNS)


def manifest_row(
    *,
    text="Hello there!",
    speaker="Ross",
    emotion="neutral",
    dialogue_id=0,
    utterance_id=0,
    season=1,
    episode=2,
    start="00:00:01,000",
    end="00:00:03,500",
) -> dict:
    return {
        "Utterance": text,
        "Speaker": speaker,
        "Emotion": emotion,
        "Dialogue_ID": dialogue_id,
        "Utterance_ID": utterance_id,
        "Season": season,
        "Episode": episode,
        "StartTime": start,
        "EndTime": end,
    }


def write_manifest(path: Path, rows: list[dict], header=None) -> Path:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=header or HEADER)
        writer.writeheader()
        writer.writerows(rows)
    return path


class TestLabels:
    def test_seven_labels_alphabetical(self):
        assert [l.value for l in LABELS] == [
            "anger", "disgust", "fear", "joy", "neutral", "sadness", "surprise",
        ]

    @pytest.mark.parametrize("label", LABELS)
    def test_parse_canonical(self, label):
        assert parse_label(label.value) is label
        assert parse_label(label.value.upper()) is label
        assert parse_label(f"  {label.value.title()} ") is label

    def test_aliases_are_exactly_two(self):
        assert ALIASES == {"happiness": EmotionLabel.JOY, "sad": EmotionLabel.SADNESS}
        assert parse_label("Happiness") is EmotionLabel.JOY
        assert parse_label("sad") is EmotionLabel.SADNESS

    @pytest.mark.parametrize("bad", ["excited", "happy", "joyful", "", "none", "calm"])
    def test_out_of_vocabulary_raises(self, bad):
        with pytest.raises(OutOfVocabularyLabel) as exc:
            parse_label(bad)
        assert exc.value.value == bad.strip().casefold()


class TestTimestamp:
    @pytest.mark.parametrize(
        "raw, expected",
        [
            ("00:00:00,000", 0.0),
            ("00:00:01,500", 1.5),
            ("0:02:03,25", 123.25),
            ("1:00:00,1", 3600.1),
            ("00:16:40,999", 1000.999),
        ],
    )
    def test_parse(self, raw, expected):
        assert corpus.parse_timestamp_s(raw) == pytest.approx(expected)

    @pytest.mark.parametrize("raw", ["", "1,000", "00:61:00,000", "00:00:61,000", "abc", "1:2:3"])
    def test_unparsable(self, raw):
        with pytest.raises(ValueError):
            corpus.parse_timestamp_s(raw)


class TestIngest:
    def test_happy_path(self, tmp_path):
        rows = [
            manifest_row(dialogue_id=0, utterance_id=0),
            manifest_row(dialogue_id=0, utterance_id=1, emotion="Joy", speaker=" Monica  Geller "),
        ]
        c = corpus.ingest(write_manifest(tmp_path / "m.csv", rows), "train")
        assert len(c) == 2 and not c.rejects
        first = c.utterances[0]
        assert first.key == ("train", 0, 0)
        assert first.clip_name == "dia0_utt0.wav"
        assert first.duration_s == pytest.approx(2.5)
        assert first.source_label is EmotionLabel.NEUTRAL
        assert c.utterances[1].speaker == " Monica  Geller ".strip()

    @pytest.mark.parametrize(
        "mutation, reason",
        [
            ({"speaker": "   "}, "EmptySpeaker"),
            ({"text": ""}, "EmptyText"),
            ({"emotion": "excited"}, "OutOfVocabularyLabel"),
            ({"dialogue_id": "x"}, "MalformedId"),
            ({"season": 0}, "MalformedId"),
            ({"start": "bogus"}, "UnparsableTimestamp"),
            ({"start": "00:00:05,000", "end": "00:00:01,000"}, "NegativeDuration"),
        ],
    )
    def test_reject_reasons(self, tmp_path, mutation, reason):
        rows = [manifest_row(), manifest_row(**{"dialogue_id": 1, **mutation})]
        c = corpus.ingest(write_manifest(tmp_path / "m.csv", rows), "train")
        assert len(c) == 1
        assert [r.reason for r in c.rejects] == [reason]
        assert c.rejects[0].row_index == 1

    def test_duplicate_key_is_fatal(self, tmp_path):
        rows = [manifest_row(), manifest_row(text="Again?")]
        with pytest.raises(corpus.DuplicateKey):
            corpus.ingest(write_manifest(tmp_path / "m.csv", rows), "train")

    def test_missing_column_is_fatal(self, tmp_path):
        header = [c for c in HEADER if c != "Season"]
        rows = [{k: v for k, v in manifest_row().items() if k != "Season"}]
        with pytest.raises(corpus.MalformedHeader):
            corpus.ingest(write_manifest(tmp_path / "m.csv", rows, header), "train")

    def test_unknown_split_rejected(self, tmp_path):
        path = write_manifest(tmp_path / "m.csv", [manifest_row()])
        with pytest.raises(corpus.CorpusError):
            corpus.ingest(path, "dev")

    def test_audio_length_overrides_and_flags(self, tmp_path):
        audio = tmp_path / "audio" / "train"
        audio.mkdir(parents=True)
        for utt, seconds in ((0, 4.0), (1, 2.6)):
            with wave.open(str(audio / f"dia0_utt{utt}.wav"), "wb") as fh:
                fh.setnchannels(1)
                fh.setsampwidth(2)
                fh.setframerate(16000)
                fh.writeframes(b"\x00\x00" * int(16000 * seconds))
        rows = [manifest_row(utterance_id=0), manifest_row(utterance_id=1)]
        c = corpus.ingest(
            write_manifest(tmp_path / "m.csv", rows), "train", audio_root=tmp_path / "audio"
        )
        by_key = c.by_key()
        stamped = by_key[("train", 0, 0)]
        assert stamped.duration_s == pytest.approx(4.0)
        assert stamped.duration_flagged, "1.5 s disagreement must flag"
        close = by_key[("train", 0, 1)]
        assert close.duration_s == pytest.approx(2.6)
        assert not close.duration_flagged, "0.1 s disagreement is within tolerance"


class TestFilters:
    def make(self, durations):
        utts = tuple(
            corpus.Utterance(
                split="train",
                dialogue_id=0,
                utterance_id=i,
                speaker="Ross",
                text="hi",
                season=1,
                episode=1,
                duration_s=d,
                source_label=EmotionLabel.NEUTRAL,
            )
            for i, d in enumerate(durations)
        )
        return corpus.Corpus(utts)

    def test_short_filter_boundary_inclusive(self):
        c = self.make([0.99, 1.0, 1.01])
        kept = corpus.filter_short(c)
        assert [u.duration_s for u in kept] == [1.0, 1.01]

    def test_speaker_filter_uses_normalization(self):
        roster = corpus.SpeakerRoster(retained=("Monica Geller",))
        utts = []
        for i, name in enumerate(["monica geller", "MONICA  GELLER", " Monica Geller ", "Waiter"]):
            utts.append(
                corpus.Utterance(
                    split="train", dialogue_id=0, utterance_id=i, speaker=name, text="x",
                    season=1, episode=1, duration_s=2.0, source_label=EmotionLabel.JOY,
                )
            )
        kept = corpus.filter_speakers(corpus.Corpus(tuple(utts)), roster)
        assert len(kept) == 3

    def test_roster_rejects_fully_generic_name(self):
        with pytest.raises(corpus.CorpusError):
            corpus.SpeakerRoster(retained=("The Waiter",))

    def test_roster_alias(self):
        roster = corpus.SpeakerRoster(retained=("Rachel Green",), alias_map={"rach": "Rachel Green"})
        assert roster.match("RACH") == "Rachel Green"
        assert roster.match("Rachel  green") == "Rachel Green"
        assert roster.match("Joey") is None

    def test_roster_from_corpus_drops_generic_speakers(self):
        utts = tuple(
            corpus.Utterance(
                split="train", dialogue_id=0, utterance_id=i, speaker=s, text="x",
                season=1, episode=1, duration_s=2.0, source_label=EmotionLabel.NEUTRAL,
            )
            for i, s in enumerate(["Ross", "2nd Customer", "Receptionist", "Dr. Green"])
        )
        roster = corpus.roster_from_corpus(corpus.Corpus(utts))
        assert set(roster.retained) == {"Ross", "Dr. Green"}

    @given(st.lists(st.floats(min_value=0.0, max_value=30.0, allow_nan=False), max_size=40))
    @settings(max_examples=60, deadline=None)
    def test_short_filter_idempotent(self, durations):
        c = self.make(durations)
        once = corpus.filter_short(c)
        twice = corpus.filter_short(once)
        assert once.utterances == twice.utterances

    @given(st.lists(st.floats(min_value=0.0, max_value=30.0, allow_nan=False), max_size=40))
    @settings(max_examples=60, deadline=None)
    def test_filters_commute(self, durations):
        c = self.make(durations)
        roster = corpus.SpeakerRoster(retained=("Ross",))
        a = corpus.filter_speakers(corpus.filter_short(c), roster)
        b = corpus.filter_short(corpus.filter_speakers(c, roster))
        assert a.utterances == b.utterances


class TestSnapshotRoundTrip:
    def test_save_load(self, tmp_path):
        rows = [manifest_row(), manifest_row(utterance_id=1, emotion="happiness")]
        c = corpus.ingest(write_manifest(tmp_path / "m.csv", rows), "test")
        out = tmp_path / "corpus.jsonl"
        corpus.save_corpus(c, out)
        loaded = corpus.load_corpus(out)
        assert loaded.utterances == c.utterances
        assert loaded.utterances[1].source_label is EmotionLabel.JOY

    def test_rejects_file(self, tmp_path):
        rows = [manifest_row(), manifest_row(dialogue_id=1, emotion="nope")]
        c = corpus.ingest(write_manifest(tmp_path / "m.csv", rows), "test")
        path = tmp_path / "rejects.jsonl"
        corpus.save_rejects(c, path)
        assert "OutOfVocabularyLabel" in path.read_text(encoding="utf-8")

    def test_key_string_round_trip(self):
        key = ("train", 125, 7)
        assert corpus.key_from_string(corpus.key_to_string(key)) == key

    def test_summarize_rounding(self):
        utts = tuple(
            corpus.Utterance(
                split="train", dialogue_id=0, utterance_id=i, speaker="Ross", text="x",
                season=1, episode=1, duration_s=d, source_label=EmotionLabel.NEUTRAL,
            )
            for i, d in enumerate([1.0, 2.005])
        )
        summary = corpus.summarize(corpus.Corpus(utts))["train"]
        # mean = 1.5025 -> round half up at 2 decimals
        assert summary.avg_duration_s == 1.5
        assert summary.n_speakers == 1

    def test_merge_disjoint_splits(self, tmp_path):
        a = corpus.ingest(write_manifest(tmp_path / "a.csv", [manifest_row()]), "train")
        b = corpus.ingest(write_manifest(tmp_path / "b.csv", [manifest_row()]), "test")
        merged = a.merge(b)
        assert merged.splits() == ("train", "test")
        assert len(merged) == 2
