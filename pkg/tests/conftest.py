import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("netisac", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("netisac")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def crand(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


# acceptance verdicts, printed as one line each at the end of the session
VERDICTS = {}


def record(name, ok, detail=""):
    VERDICTS[name] = (bool(ok), detail)
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(VERDICTS, key=lambda n: int(n[1:])):
        ok, detail = VERDICTS[name]
        terminalreporter.write_line(f"{name}: {'PASS' if ok else 'FAIL'}  {detail}")
