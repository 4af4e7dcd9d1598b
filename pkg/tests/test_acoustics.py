"""Signal measurement, percentile binning, lexicon mapping, agreement."""

from __future__ import annotations

import math
import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meltkit import acoustics
from meltkit.acoustics import LevelBin


def tone(hz: float, seconds: float = 1.0, rate: int = 16000, amp: float = 0.3) -> np.ndarray:
    t = np.arange(int(rate * seconds)) / rate
    return amp * np.sin(2 * np.pi * hz * t)


class TestExtraction:
    @pytest.mark.parametrize("hz", [100.0, 200.0, 330.0, 440.0, 550.0])
    def test_pure_tone_within_two_percent(self, hz):
        f = acoustics.extract(tone(hz), 16000)
        assert f.f0_mean_hz is not None
        assert abs(f.f0_mean_hz - hz) / hz < 0.02

    def test_low_tone_within_five_percent(self):
        # a 25 ms window holds just two periods at 80 Hz, so the band
        # bottom trades accuracy for stability
        f = acoustics.extract(tone(80.0), 16000)
        assert abs(f.f0_mean_hz - 80.0) / 80.0 < 0.05

    def test_tone_at_other_sample_rates(self):
        for rate in (8000, 22050, 44100, 48000):
            f = acoustics.extract(tone(220.0, rate=rate), rate)
            assert abs(f.f0_mean_hz - 220.0) / 220.0 < 0.02, rate

    def test_silence_is_all_unvoiced_state_not_error(self):
        f = acoustics.extract(np.zeros(16000), 16000)
        assert f.all_unvoiced and f.f0_mean_hz is None
        assert f.loudness_db == acoustics.LOUDNESS_FLOOR_DB

    def test_white_noise_unvoiced(self):
        rng = np.random.default_rng(11)
        f = acoustics.extract(rng.normal(0.0, 0.1, 32000), 16000)
        assert f.all_unvoiced

    def test_loudness_tracks_amplitude(self):
        quiet = acoustics.extract(tone(220.0, amp=0.05), 16000)
        loud = acoustics.extract(tone(220.0, amp=0.5), 16000)
        assert loud.loudness_db > quiet.loudness_db
        # 10x amplitude is exactly +20 dB
        assert loud.loudness_db - quiet.loudness_db == pytest.approx(
            20 * math.log10(0.5 / 0.05), abs=0.5
        )

    def test_sine_loudness_matches_theory(self):
        # full-scale sine RMS is 1/sqrt(2) -> -3.01 dB
        f = acoustics.extract(tone(220.0, amp=1.0), 16000)
        assert f.loudness_db == pytest.approx(-3.01, abs=0.1)

    def test_head_crop_limits_analysis(self):
        # 220 Hz head, 440 Hz tail far beyond the 5 s window
        head = tone(220.0, seconds=5.0)
        tail = tone(440.0, seconds=3.0)
        f = acoustics.extract(np.concatenate([head, tail]), 16000)
        assert abs(f.f0_mean_hz - 220.0) / 220.0 < 0.02

    @pytest.mark.parametrize(
        "audio, rate",
        [
            (np.zeros(0), 16000),
            (np.zeros(100), 16000),  # under 0.1 s
            (np.zeros(16000), 4000),  # rate below the minimum
        ],
    )
    def test_empty_audio_raises(self, audio, rate):
        with pytest.raises(acoustics.EmptyAudio):
            acoustics.extract(audio, rate)

    def test_f0_clipped_into_band(self):
        f = acoustics.extract(tone(220.0), 16000)
        assert acoustics.F0_MIN_HZ <= f.f0_mean_hz <= acoustics.F0_MAX_HZ


class TestWavIO:
    def write(self, path, data: np.ndarray, rate=16000, width=2, channels=1):
        with wave.open(str(path), "wb") as fh:
            fh.setnchannels(channels)
            fh.setsampwidth(width)
            fh.setframerate(rate)
            if width == 2:
                fh.writeframes((data * 32767).astype("<i2").tobytes())
            elif width == 1:
                fh.writeframes(((data * 127) + 128).astype(np.uint8).tobytes())
            else:
                fh.writeframes((data * (2**31 - 1)).astype("<i4").tobytes())

    @pytest.mark.parametrize("width", [1, 2, 4])
    def test_widths_round_trip(self, tmp_path, width):
        path = tmp_path / f"w{width}.wav"
        self.write(path, tone(220.0), width=width)
        f = acoustics.extract_file(path)
        assert abs(f.f0_mean_hz - 220.0) / 220.0 < 0.02

    def test_stereo_channels_averaged(self, tmp_path):
        mono = tone(220.0)
        stereo = np.stack([mono, mono], axis=1).ravel()
        path = tmp_path / "st.wav"
        with wave.open(str(path), "wb") as fh:
            fh.setnchannels(2)
            fh.setsampwidth(2)
            fh.setframerate(16000)
            fh.writeframes((stereo * 32767).astype("<i2").tobytes())
        f = acoustics.extract_file(path)
        assert abs(f.f0_mean_hz - 220.0) / 220.0 < 0.02


class TestBinning:
    def test_thirty_forty_thirty_on_uniform(self):
        values = {i: float(i) for i in range(100)}
        bins, excluded = acoustics.bin_values(values)
        assert not excluded
        counts = {b: sum(1 for v in bins.values() if v == b) for b in LevelBin}
        assert counts[LevelBin.LOW] == 30
        assert counts[LevelBin.MID] == 40
        assert counts[LevelBin.HIGH] == 30

    def test_boundary_values_go_mid(self):
        # p30 of [0..10] is 3.0; strict < keeps the threshold value in MID
        values = {i: float(i) for i in range(11)}
        bins, _ = acoustics.bin_values(values)
        assert bins[3] is LevelBin.MID
        assert bins[2] is LevelBin.LOW
        assert bins[7] is LevelBin.MID
        assert bins[8] is LevelBin.HIGH

    def test_all_equal_is_all_mid(self):
        bins, _ = acoustics.bin_values({i: 5.0 for i in range(9)})
        assert set(bins.values()) == {LevelBin.MID}

    def test_singleton_is_mid(self):
        bins, _ = acoustics.bin_values({"only": 1.23})
        assert bins["only"] is LevelBin.MID

    def test_none_and_nan_excluded(self):
        values = {"a": 1.0, "b": None, "c": float("nan"), "d": 2.0, "e": 3.0}
        bins, excluded = acoustics.bin_values(values)
        assert sorted(excluded) == ["b", "c"]
        assert set(bins) == {"a", "d", "e"}

    def test_no_finite_values_raises(self):
        with pytest.raises(acoustics.NoFiniteValues):
            acoustics.bin_values({"a": None, "b": float("inf")})

    def test_custom_fractions_must_sum_to_one(self):
        with pytest.raises(ValueError):
            acoustics.BinningConfig(0.5, 0.4, 0.3)

    @given(st.lists(st.floats(min_value=-1e6, max_value=1e6, allow_nan=False), min_size=1, max_size=200, unique=True))
    @settings(max_examples=100, deadline=None)
    def test_occupancy_bounds(self, raw):
        values = dict(enumerate(raw))
        bins, _ = acoustics.bin_values(values)
        n = len(values)
        low = sum(1 for b in bins.values() if b is LevelBin.LOW)
        high = sum(1 for b in bins.values() if b is LevelBin.HIGH)
        # with interpolated percentiles, at most floor(0.3(n-1)) + 1 points
        # can sit strictly outside a threshold on each side
        bound = math.floor(0.3 * (n - 1)) + 1
        assert low <= bound
        assert high <= bound

    @given(
        st.lists(st.integers(min_value=-10_000, max_value=10_000), min_size=3, max_size=80, unique=True),
        st.sampled_from([0.25, 0.5, 2.0, 4.0, 8.0]),
        st.integers(min_value=-1_000_000, max_value=1_000_000),
    )
    @settings(max_examples=100, deadline=None)
    def test_positive_affine_invariance(self, raw, scale, shift):
        # integer values, power-of-two scales, and integer shifts keep all
        # arithmetic exact, so this tests the semantics rather than float noise
        values = {k: float(v) for k, v in enumerate(raw)}
        transformed = {k: v * scale + shift for k, v in values.items()}
        a, _ = acoustics.bin_values(values)
        b, _ = acoustics.bin_values(transformed)
        assert a == b, "bins depend only on order, so affine maps cannot move them"

    @given(st.lists(st.floats(min_value=-1e4, max_value=1e4, allow_nan=False), min_size=2, max_size=80))
    @settings(max_examples=100, deadline=None)
    def test_monotone_between_bins(self, raw):
        values = dict(enumerate(raw))
        bins, _ = acoustics.bin_values(values)
        lows = [values[k] for k, b in bins.items() if b is LevelBin.LOW]
        mids = [values[k] for k, b in bins.items() if b is LevelBin.MID]
        highs = [values[k] for k, b in bins.items() if b is LevelBin.HIGH]
        if lows and mids:
            assert max(lows) < min(mids) or math.isclose(max(lows), min(mids))
        if mids and highs:
            assert max(mids) < min(highs) or math.isclose(max(mids), min(highs))
        if lows and highs:
            assert max(lows) < min(highs)


class TestCaptionMapping:
    @pytest.mark.parametrize(
        "text, axis, expected",
        [
            ("a soft and hesitant voice", "loudness", LevelBin.LOW),
            ("LOUD and brash", "loudness", LevelBin.HIGH),
            ("speaks softly", "loudness", LevelBin.LOW),  # suffix form
            ("a moderate, conversational tone", "loudness", LevelBin.MID),
            ("booming delivery", "loudness", LevelBin.HIGH),
            ("a deep, gravelly register", "pitch", LevelBin.LOW),
            ("high and piercing", "pitch", LevelBin.HIGH),
            ("mid-range pitch", "pitch", LevelBin.MID),
            ("shrill, almost squeaky", "pitch", LevelBin.HIGH),
        ],
    )
    def test_lexicon_basics(self, text, axis, expected):
        assert acoustics.map_caption(text, axis) is expected

    def test_negation_neutralizes_to_mid(self):
        assert acoustics.map_caption("not loud at all", "loudness") is LevelBin.MID
        assert acoustics.map_caption("never shrill", "pitch") is LevelBin.MID
        assert acoustics.map_caption("hardly a quiet word", "loudness") is LevelBin.MID

    def test_negation_window_is_two_tokens(self):
        # negation three tokens back no longer guards the keyword
        assert (
            acoustics.map_caption("not at all times loud", "loudness") is LevelBin.HIGH
        )

    def test_longest_match_wins(self):
        # "high" (pitch HIGH) is a substring of the longer "high-pitched"
        # class of words; here "mid-range" must beat the shorter "range"-less
        # "mid" entry rather than a stray partial.
        assert acoustics.map_caption("a mid-range, even sound", "pitch") is LevelBin.MID

    def test_earliest_occurrence_breaks_ties(self):
        # "deep" (LOW) and "high" (HIGH) have equal length: first one wins
        assert acoustics.map_caption("deep then high", "pitch") is LevelBin.LOW
        assert acoustics.map_caption("high then deep", "pitch") is LevelBin.HIGH

    def test_word_boundaries_respected(self):
        with pytest.raises(acoustics.Unmappable):
            acoustics.map_caption("thighs and shoulders", "pitch")

    @pytest.mark.parametrize("bad", ["", "  ", "sounds nice", "emphatic delivery"])
    def test_unmappable_raises(self, bad):
        with pytest.raises(acoustics.Unmappable) as exc:
            acoustics.map_caption(bad, "pitch")
        assert exc.value.axis == "pitch"

    def test_unknown_axis_rejected(self):
        with pytest.raises(ValueError):
            acoustics.map_caption("loud", "rhythm")

    def test_map_captions_splits_unmappable(self):
        mapped, unmappable = acoustics.map_captions(
            {"a": "loud", "b": "indescribable", "c": "soft"}, "loudness"
        )
        assert mapped == {"a": LevelBin.HIGH, "c": LevelBin.LOW}
        assert unmappable == ["b"]


class TestAgreement:
    def test_perfect_and_empty(self):
        measured = {"x": LevelBin.LOW, "y": LevelBin.HIGH}
        out = acoustics.agreement(measured, dict(measured))
        assert out["metrics"]["acc"] == 1.0
        assert out["n_scored"] == 2
        with pytest.raises(acoustics.EmptyIntersection):
            acoustics.agreement(measured, {"z": LevelBin.MID})

    def test_intersection_only(self):
        measured = {"x": LevelBin.LOW, "y": LevelBin.HIGH, "only_measured": LevelBin.MID}
        captions = {"x": LevelBin.LOW, "y": LevelBin.MID, "only_caption": LevelBin.LOW}
        out = acoustics.agreement(measured, captions)
        assert out["n_scored"] == 2
        assert out["metrics"]["acc"] == 0.5

    def test_confusion_orientation(self):
        # measured LOW predicted HIGH must land in row "low", column "high"
        out = acoustics.agreement({"k": LevelBin.LOW}, {"k": LevelBin.HIGH})
        counts = out["confusion"]["counts"]
        assert counts[0][2] == 1


class TestEgemapsAdapter:
    def write_csv(self, path, delimiter=";", key_col="name", quote=True):
        f0c = acoustics.EGEMAPS_F0_COLUMN
        ldc = acoustics.EGEMAPS_LOUDNESS_COLUMN
        name = "'dia5_utt3.wav'" if quote else "dia5_utt3.wav"
        lines = [
            delimiter.join([key_col, "frameTime", f0c, ldc]),
            delimiter.join([name, "0.0", "27.5", "1.25"]),
        ]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    def test_semicolon_with_quotes(self, tmp_path):
        path = tmp_path / "e.csv"
        self.write_csv(path)
        table = acoustics.load_egemaps_csv(path)
        assert table["dia5_utt3.wav"] == {"pitch": 27.5, "loudness": 1.25}

    def test_comma_with_file_column(self, tmp_path):
        path = tmp_path / "e.csv"
        self.write_csv(path, delimiter=",", key_col="file", quote=False)
        table = acoustics.load_egemaps_csv(path)
        assert table["dia5_utt3.wav"]["loudness"] == 1.25

    def test_missing_column_rejected(self, tmp_path):
        path = tmp_path / "e.csv"
        path.write_text("name;frameTime\n'x.wav';0.0\n", encoding="utf-8")
        with pytest.raises(acoustics.AcousticsError):
            acoustics.load_egemaps_csv(path)
