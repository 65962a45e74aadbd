"""Shared fixtures: a session-scoped synthetic corpus, its split manifest,
an in-memory roll loader, and auto-detection of the real metadata CSV."""

import os
import sys
from pathlib import Path

import pytest

TESTS_DIR = Path(__file__).resolve().parent
if str(TESTS_DIR) not in sys.path:  # keep fixture modules importable
    sys.path.insert(0, str(TESTS_DIR))

from composer_forge.dataset import filter_and_label, stratified_split
from composer_forge.synthetic import make_corpus

MAESTRO_ENV = "COMPOSER_FORGE_MAESTRO_CSV"
_MAESTRO_CANDIDATES = (
    "data/maestro-v2.0.0.csv",
    "data/maestro-v2.0.0/maestro-v2.0.0.csv",
)


def find_maestro_csv():
    """Path to the real metadata CSV, or None.  Checked via environment
    variable first, then the conventional data/ locations."""
    env = os.environ.get(MAESTRO_ENV)
    if env:
        path = Path(env)
        if path.exists():
            return path
    root = TESTS_DIR.parent
    for rel in _MAESTRO_CANDIDATES:
        path = root / rel
        if path.exists():
            return path
    return None


@pytest.fixture(scope="session")
def maestro_csv():
    path = find_maestro_csv()
    if path is None:
        pytest.skip(f"MAESTRO v2.0.0 CSV not available (set {MAESTRO_ENV})")
    return path


@pytest.fixture(scope="session")
def synthetic_corpus():
    return make_corpus(seed=7, pieces_per_style=10, duration=60.0)


@pytest.fixture(scope="session")
def synthetic_manifest(synthetic_corpus):
    grouped, vocab = filter_and_label(
        synthetic_corpus.records, synthetic_corpus.composer_meta,
        title_threshold=0, n_eval_segments=10)
    return stratified_split(grouped, vocab, seed=11,
                            composer_meta=synthetic_corpus.composer_meta)


@pytest.fixture(scope="session")
def synthetic_roll_loader(synthetic_corpus):
    return synthetic_corpus.roll
