import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nppbridge.core import NormalSummary, StudySet

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def fig_a1() -> StudySet:
    return StudySet(NormalSummary(20, 2.0, 0.5), (NormalSummary(20, 1.5, 0.3),))


@pytest.fixture
def fig_a2() -> StudySet:
    return StudySet(
        NormalSummary(30, 1.5, 0.5),
        (NormalSummary(20, 1.0, 0.5), NormalSummary(30, 2.0, 1.0), NormalSummary(50, 3.0, 1.5)),
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion."""
    lines = request.config.stash[ACCEPTANCE]

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {title}: {detail}"
        lines[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for key in sorted(lines):
            terminalreporter.write_line(lines[key])
