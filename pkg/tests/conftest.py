from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from stseg.synth import SynthConfig, generate_corpus, synthetic_vocabulary  # noqa: E402

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def vocab():
    return synthetic_vocabulary()


@pytest.fixture(scope="session")
def sharp_corpus(vocab):
    return generate_corpus(SynthConfig(n_streams=3, sharpness=1.0, seed=11), vocab)


@pytest.fixture(scope="session")
def noisy_corpus(vocab):
    return generate_corpus(SynthConfig(n_streams=3, sharpness=0.8, seed=12), vocab)


@pytest.fixture(scope="session")
def tiny_corpus(vocab):
    return generate_corpus(SynthConfig(n_streams=2, min_sentences=2, max_sentences=3,
                                       max_sentence_ms=5000, sharpness=0.8, seed=5), vocab)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
