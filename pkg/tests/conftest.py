import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

sys.path.insert(0, str(Path(__file__).parent))

from huntapprox.kernels import SubMarkovGenerator  # noqa: E402
from huntapprox.models import example_models  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def models():
    return example_models()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@st.composite
def generators(draw, min_n=1, max_n=6, conservative=None):
    """Random sub-Markov generators with rates in [0, 3]."""
    n = draw(st.integers(min_n, max_n))
    rates = draw(arrays(np.float64, (n, n), elements=st.floats(0.0, 3.0)))
    np.fill_diagonal(rates, 0.0)
    cons = draw(st.booleans()) if conservative is None else conservative
    kill = np.zeros(n) if cons else draw(arrays(np.float64, n, elements=st.floats(0.0, 2.0)))
    np.fill_diagonal(rates, -(rates.sum(axis=1) + kill))
    return SubMarkovGenerator(rates)


def functions(n, lo=-2.0, hi=2.0):
    return arrays(np.float64, n, elements=st.floats(lo, hi))


# --- acceptance summary -----------------------------------------------------------
# Every test marked ``acceptance(k, title)`` contributes to criterion ``k``; a
# criterion passes when all of its tests do. One line per criterion is printed
# at the end of the run.

_ACCEPTANCE: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    number, title = mark.args
    entry = _ACCEPTANCE.setdefault(number, {"title": title, "passed": True, "seen": False})
    entry["seen"] |= rep.when == "call"
    entry["passed"] &= rep.passed


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        e = _ACCEPTANCE[number]
        verdict = "PASS" if e["passed"] and e["seen"] else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d}: {verdict}  {e['title']}")
