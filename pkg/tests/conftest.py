from pathlib import Path

import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

DATA = Path(__file__).parent / "data"
BVH_FILES = sorted(DATA.glob("*.bvh"))


@pytest.fixture
def bvh_text():
    return {p.stem: p.read_text() for p in BVH_FILES}


@pytest.fixture(scope="session")
def overfit_run():
    """(model, history) after 2000 steps on the factor-2 synthetic fixture."""
    import toy
    return toy.fit(epochs=20)


@pytest.fixture(scope="session")
def linear_run():
    import toy
    seq = toy.linear_sequence()
    return seq, toy.fit_mixed_factors(seq)[0]


@pytest.fixture(scope="session")
def constant_run():
    import toy
    seq = toy.constant_sequence()
    return seq, toy.fit_mixed_factors(seq)[0]


ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """Record one pass/fail line for an acceptance criterion, then assert it."""
    def record(number, name, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2} {name}: {detail}"
        ACCEPTANCE[number] = line
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
