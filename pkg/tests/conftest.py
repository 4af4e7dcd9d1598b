"""Shared fixtures: one synthetic dataset, tone set, and study per session.

Set MELTKIT_DATA_DIR to point the dataset-level tests at a real corpus
layout (manifests/, egemaps/, annotations/) instead of the generated one.
"""

from __future__ import annotations

import os
from pathlib import Path

import pytest

from meltkit import corpus, synthdata

DATA_DIR_ENV = "MELTKIT_DATA_DIR"


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory: pytest.TempPathFactory) -> Path:
    override = os.environ.get(DATA_DIR_ENV)
    if override:
        return Path(override)
    out = tmp_path_factory.mktemp("dataset")
    synthdata.generate_dataset(out, seed=7)
    return out


@pytest.fixture(scope="session")
def tones_dir(tmp_path_factory: pytest.TempPathFactory) -> Path:
    out = tmp_path_factory.mktemp("tones")
    synthdata.generate_tone_fixtures(out)
    return out


@pytest.fixture(scope="session")
def study_dir(tmp_path_factory: pytest.TempPathFactory) -> Path:
    out = tmp_path_factory.mktemp("study")
    synthdata.generate_study_fixture(out)
    return out


@pytest.fixture(scope="session")
def raw_corpus(dataset_dir: Path) -> corpus.Corpus:
    merged = corpus.Corpus(())
    for split in ("train", "test"):
        manifest = dataset_dir / "manifests" / f"{split}.csv"
        merged = merged.merge(corpus.ingest(manifest, split))
    return merged


@pytest.fixture(scope="session")
def filtered_corpus(raw_corpus: corpus.Corpus) -> corpus.Corpus:
    return corpus.filter_speakers(corpus.filter_short(raw_corpus), corpus.load_roster())
