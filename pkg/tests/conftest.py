import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def chain_spec(n=4, a=0, b=1, w=20.0, memory=1):
    """Only W^(1)[a, b] is nonzero."""
    from seq2cause.scmgen import ScmSpec

    W = np.zeros((memory, n, n))
    W[0, a, b] = w
    return ScmSpec(n, memory, W, np.zeros(n))


def cycle_spec(n=4, w=60.0):
    """Deterministic successor law: event i is followed by i+1 mod n."""
    from seq2cause.scmgen import ScmSpec

    W = np.zeros((1, n, n))
    for i in range(n):
        W[0, i, (i + 1) % n] = w
    b = np.zeros(n)
    b[0] = w / 2  # the first event after the start marker is 0
    return ScmSpec(n, 1, W, b)


@pytest.fixture
def small_spec():
    from seq2cause.scmgen import generate_scm

    return generate_scm(12, 2, 0.08, 3.0, seed=3)


ACCEPTANCE: dict[int, str] = {}


def record_acceptance(n: int, passed: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
