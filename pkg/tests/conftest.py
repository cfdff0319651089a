import numpy as np
import pytest

from fsqlab.codec import CodecConfig, train_fsq_codec, train_rvq_codec
from fsqlab.corpus import generate_audio


@pytest.fixture(scope="session")
def train_audio():
    return generate_audio(seed=11, count=8, duration_s=1.5)


@pytest.fixture(scope="session")
def test_audio():
    return generate_audio(seed=12, count=3, duration_s=1.5)


@pytest.fixture(scope="session")
def fsq_codec(train_audio):
    return train_fsq_codec(train_audio, CodecConfig(), seed=0)


@pytest.fixture(scope="session")
def rvq_codec(train_audio):
    return train_rvq_codec(train_audio, CodecConfig(), seed=0, max_iters=15)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, taken from the real outcomes."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", []))
            if rep.when == "call" and "criterion" in props:
                lines.append((props["criterion"], outcome, props.get("measured", "")))
    if not lines:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number, outcome, measured in sorted(lines):
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {number:>2}: {verdict}  {measured}")
