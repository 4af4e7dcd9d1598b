"""Pitch/loudness extraction, percentile binning, caption mapping, agreement.

The built-in estimator approximates the eGeMAPS pitch and loudness
functionals: mean autocorrelation F0 over voiced frames and mean per-frame
RMS in dB. For fidelity runs an import adapter reads externally computed
eGeMAPS CSVs instead. Values are binned per split at the empirical 30th
and 70th percentiles, and the model's free-text descriptors are mapped
onto the same low/mid/high scale through a versioned keyword lexicon.
"""

from __future__ import annotations

import csv
import importlib.resources
import json
import re
import wave
from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache
from pathlib import Path
from typing import Mapping, Optional

import numpy as np
from scipy.signal import resample_poly

TARGET_SAMPLE_RATE = 16_000
MAX_ANALYSIS_S = 5.0
MIN_ANALYSIS_S = 0.1
FRAME_S = 0.025
HOP_S = 0.010
F0_MIN_HZ = 50.0
F0_MAX_HZ = 600.0
# Normalized (overlap-corrected) autocorrelation peak needed to call a
# frame voiced; frames quieter than the energy gate never qualify.
VOICING_THRESHOLD = 0.70
ENERGY_GATE_RMS = 1e-4
LOUDNESS_FLOOR_DB = -120.0

LEXICON_ASSET = "caption_lexicon_v1.json"
AXES = ("pitch", "loudness")

NEGATION_WORDS = frozenset({"not", "never", "no", "hardly", "barely", "without"})


class AcousticsError(ValueError):
    pass


class EmptyAudio(AcousticsError):
    pass


class NoFiniteValues(AcousticsError):
    pass


class Unmappable(AcousticsError):
    def __init__(self, descriptor: str, axis: str) -> None:
        super().__init__(f"descriptor {descriptor!r} has no {axis} keyword")
        self.descriptor = descriptor
        self.axis = axis


class EmptyIntersection(AcousticsError):
    pass


class LevelBin(IntEnum):
    LOW = 0
    MID = 1
    HIGH = 2

    @property
    def label(self) -> str:
        return self.name.lower()


BIN_LABELS = tuple(b.label for b in LevelBin)


@dataclass(frozen=True)
class BinningConfig:
    low_fraction: float = 0.30
    mid_fraction: float = 0.40
    high_fraction: float = 0.30

    def __post_init__(self) -> None:
        total = self.low_fraction + self.mid_fraction + self.high_fraction
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"bin fractions must sum to 1, got {total}")

    @property
    def low_percentile(self) -> float:
        return 100.0 * self.low_fraction

    @property
    def high_percentile(self) -> float:
        return 100.0 * (1.0 - self.high_fraction)


@dataclass(frozen=True)
class AcousticFeatures:
    """Measured pitch and loudness for one utterance.

    f0_mean_hz is None when no frame passed the voicing test; loudness is
    always defined (floored at -120 dB for digital silence).
    """

    f0_mean_hz: Optional[float]
    loudness_db: float

    @property
    def all_unvoiced(self) -> bool:
        return self.f0_mean_hz is None


def read_wav(path: Path) -> tuple[np.ndarray, int]:
    """Decode a PCM wave file to a float array in [-1, 1], averaging channels."""
    with wave.open(str(path), "rb") as wav:
        n_channels = wav.getnchannels()
        width = wav.getsampwidth()
        rate = wav.getframerate()
        frames = wav.readframes(wav.getnframes())
    if width == 2:
        data = np.frombuffer(frames, dtype="<i2").astype(np.float64) / 32768.0
    elif width == 1:
        data = (np.frombuffer(frames, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    elif width == 4:
        data = np.frombuffer(frames, dtype="<i4").astype(np.float64) / 2147483648.0
    else:
        raise AcousticsError(f"unsupported sample width {width} in {path}")
    if n_channels > 1:
        data = data.reshape(-1, n_channels).mean(axis=1)
    return data, rate


def resample_to_16k(audio: np.ndarray, sample_rate: int) -> np.ndarray:
    if sample_rate == TARGET_SAMPLE_RATE:
        return audio
    gcd = np.gcd(TARGET_SAMPLE_RATE, sample_rate)
    return resample_poly(audio, TARGET_SAMPLE_RATE // gcd, sample_rate // gcd)


def _frame_f0(frame: np.ndarray, sample_rate: int) -> Optional[float]:
    """Autocorrelation F0 for one frame, or None when unvoiced."""
    frame = frame - frame.mean()
    rms = float(np.sqrt(np.mean(frame**2)))
    if rms <= ENERGY_GATE_RMS:
        return None
    win = len(frame)
    lag_min = int(np.ceil(sample_rate / F0_MAX_HZ))
    lag_max = int(np.floor(sample_rate / F0_MIN_HZ))
    if lag_max >= win:
        lag_max = win - 1
    if lag_min >= lag_max:
        return None

    ac = np.correlate(frame, frame, mode="full")[win - 1 :]
    r0 = ac[0]
    if r0 <= 0:
        return None
    # Candidates are local maxima of the raw curve only: the ACF decays
    # from lag 0, so a bare argmax near the band's lower edge would ride
    # that decay and report a spurious high F0 for low-pitched frames.
    band = ac[lag_min : lag_max + 1]
    rising = band[1:-1] > band[:-2]
    falling = band[1:-1] >= band[2:]
    peak_offsets = np.nonzero(rising & falling)[0] + 1
    if peak_offsets.size == 0:
        return None
    # Raw ACF shrinks with lag because the overlap shrinks; taking the
    # highest raw peak prefers the fundamental over its subharmonics,
    # while the overlap-corrected value gives a lag-fair voicing score.
    best = int(peak_offsets[np.argmax(band[peak_offsets])]) + lag_min
    overlap = (win - best) / win
    score = ac[best] / (r0 * overlap)
    if score < VOICING_THRESHOLD:
        return None

    # Parabolic interpolation around the integer peak.
    lag = float(best)
    if lag_min < best < lag_max:
        left, mid, right = ac[best - 1], ac[best], ac[best + 1]
        denom = left - 2.0 * mid + right
        if denom != 0.0:
            delta = 0.5 * (left - right) / denom
            if abs(delta) <= 1.0:
                lag = best + delta
    f0 = sample_rate / lag
    return float(np.clip(f0, F0_MIN_HZ, F0_MAX_HZ))


def extract(audio: np.ndarray, sample_rate: int) -> AcousticFeatures:
    """Mean F0 over voiced frames and mean per-frame RMS loudness in dB.

    Audio is resampled to 16 kHz and anything beyond the first 5 s is
    ignored (deterministic head crop).

    Raises:
        EmptyAudio: empty input, duration under 0.1 s, or sample rate
            below 8 kHz.
    """
    audio = np.asarray(audio, dtype=np.float64).ravel()
    if audio.size == 0:
        raise EmptyAudio("audio is empty")
    if sample_rate < 8000:
        raise EmptyAudio(f"sample rate {sample_rate} below the 8 kHz minimum")
    if audio.size / sample_rate < MIN_ANALYSIS_S:
        raise EmptyAudio(f"audio shorter than {MIN_ANALYSIS_S} s")

    audio = resample_to_16k(audio, sample_rate)
    audio = audio[: int(MAX_ANALYSIS_S * TARGET_SAMPLE_RATE)]

    win = int(FRAME_S * TARGET_SAMPLE_RATE)
    hop = int(HOP_S * TARGET_SAMPLE_RATE)
    if audio.size < win:
        audio = np.pad(audio, (0, win - audio.size))

    f0s: list[float] = []
    level_db: list[float] = []
    for start in range(0, audio.size - win + 1, hop):
        frame = audio[start : start + win]
        rms = float(np.sqrt(np.mean(frame**2)))
        db = 20.0 * np.log10(rms) if rms > 0 else LOUDNESS_FLOOR_DB
        level_db.append(max(db, LOUDNESS_FLOOR_DB))
        f0 = _frame_f0(frame, TARGET_SAMPLE_RATE)
        if f0 is not None:
            f0s.append(f0)

    loudness = float(min(np.mean(level_db), 0.0))
    f0_mean = float(np.mean(f0s)) if f0s else None
    return AcousticFeatures(f0_mean_hz=f0_mean, loudness_db=loudness)


def extract_file(path: Path) -> AcousticFeatures:
    audio, rate = read_wav(path)
    return extract(audio, rate)


def bin_values(
    values: Mapping, cfg: BinningConfig = BinningConfig()
) -> tuple[dict, list]:
    """Bin keyed values at the empirical 30th/70th percentiles.

    Strict inequalities put threshold-equal values in MID, which also
    covers the degenerate all-equal and singleton cases.

    Returns:
        (bins keyed like the input, keys excluded for undefined values).

    Raises:
        NoFiniteValues: when nothing finite remains to set thresholds.
    """
    excluded = [k for k, v in values.items() if v is None or not np.isfinite(v)]
    finite = {k: float(v) for k, v in values.items() if k not in set(excluded)}
    if not finite:
        raise NoFiniteValues("no finite values to bin")
    data = np.fromiter(finite.values(), dtype=np.float64)
    p_low, p_high = np.percentile(data, [cfg.low_percentile, cfg.high_percentile])
    bins = {}
    for k, v in finite.items():
        if v < p_low:
            bins[k] = LevelBin.LOW
        elif v > p_high:
            bins[k] = LevelBin.HIGH
        else:
            bins[k] = LevelBin.MID
    return bins, excluded


@lru_cache(maxsize=1)
def _lexicon() -> dict:
    text = (
        importlib.resources.files("meltkit.assets")
        .joinpath(LEXICON_ASSET)
        .read_text(encoding="utf-8")
    )
    return json.loads(text)


@lru_cache(maxsize=4)
def _axis_patterns(axis: str) -> tuple[tuple[str, LevelBin, "re.Pattern[str]"], ...]:
    lex = _lexicon()
    if axis not in lex:
        raise ValueError(f"unknown caption axis {axis!r}")
    entries = []
    for bin_name, keywords in lex[axis].items():
        level = LevelBin[bin_name.upper()]
        for kw in keywords:
            pattern = re.compile(
                r"\b" + re.escape(kw.casefold()) + r"(?:s|ly|ed|er|est)?\b"
            )
            entries.append((kw.casefold(), level, pattern))
    # Longest keyword first so "high-pitched" beats "high".
    entries.sort(key=lambda e: (-len(e[0]), e[0]))
    return tuple(entries)


def map_caption(descriptor: str, axis: str) -> LevelBin:
    """Map a free-text descriptor to a bin via the keyword lexicon.

    The longest matching keyword wins (earliest occurrence on ties), and
    a negation word within the two preceding tokens neutralizes the match
    to MID ("not loud" describes an ordinary level, not a loud one).

    Raises:
        Unmappable: no axis keyword occurs in the descriptor.
    """
    if not descriptor.strip():
        raise Unmappable(descriptor, axis)
    text = descriptor.casefold()
    best: Optional[tuple[int, int, LevelBin]] = None  # (position, -len, bin)
    for kw, level, pattern in _axis_patterns(axis):
        m = pattern.search(text)
        if m is None:
            continue
        if best is None or (len(kw) > best[1]) or (len(kw) == best[1] and m.start() < best[0]):
            best = (m.start(), len(kw), level)
    if best is None:
        raise Unmappable(descriptor, axis)

    preceding = re.findall(r"[a-z']+", text[: best[0]])
    if any(w in NEGATION_WORDS for w in preceding[-2:]):
        return LevelBin.MID
    return best[2]


def map_captions(
    descriptors: Mapping, axis: str
) -> tuple[dict, list]:
    """map_caption over a keyed collection; unmappable keys are split out."""
    mapped: dict = {}
    unmappable: list = []
    for k, text in descriptors.items():
        try:
            mapped[k] = map_caption(text, axis)
        except Unmappable:
            unmappable.append(k)
    return mapped, unmappable


def agreement(measured: Mapping, captions: Mapping, average: str = "macro") -> dict:
    """Score caption bins against measured bins over the key intersection.

    The 3x3 confusion matrix uses the measured bin as reference and the
    caption bin as prediction.

    Raises:
        EmptyIntersection: the two maps share no keys.
    """
    from .metrics import ConfusionMatrix, evaluate

    keys = sorted(set(measured) & set(captions))
    if not keys:
        raise EmptyIntersection("measured bins and caption bins share no keys")
    pairs = [(measured[k].label, captions[k].label) for k in keys]
    cm = ConfusionMatrix.from_pairs(BIN_LABELS, pairs)
    report = evaluate(cm, average=average)
    return {
        "n_scored": len(keys),
        "confusion": cm.to_record(),
        "metrics": report.to_record(),
    }


EGEMAPS_F0_COLUMN = "F0semitoneFrom27.5Hz_sma3nz_amean"
EGEMAPS_LOUDNESS_COLUMN = "loudness_sma3_amean"


def load_egemaps_csv(path: Path) -> dict[str, dict[str, float]]:
    """Read externally computed eGeMAPS functionals keyed by clip name.

    Expects a "name" (or "file") column plus the F0 and loudness amean
    columns. Values arrive in eGeMAPS spaces (semitones, loudness units);
    percentile binning only needs their order, so no conversion happens.
    """
    path = Path(path)
    out: dict[str, dict[str, float]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        # openSMILE writes semicolon-separated CSV by default.
        delimiter = ";" if ";" in fh.readline() else ","
        fh.seek(0)
        reader = csv.DictReader(fh, delimiter=delimiter)
        fields = reader.fieldnames or []
        key_col = "name" if "name" in fields else "file" if "file" in fields else None
        if key_col is None:
            raise AcousticsError(f"{path} has no 'name' or 'file' key column")
        for col in (EGEMAPS_F0_COLUMN, EGEMAPS_LOUDNESS_COLUMN):
            if col not in fields:
                raise AcousticsError(f"{path} is missing column {col}")
        for row in reader:
            clip = row[key_col].strip().strip("'\"")
            out[clip] = {
                "pitch": float(row[EGEMAPS_F0_COLUMN]),
                "loudness": float(row[EGEMAPS_LOUDNESS_COLUMN]),
            }
    return out
