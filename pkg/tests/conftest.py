import numpy as np
import pytest

from changetitans import tensor as T


def projected(out, seed=123):
    """Scalar ``sum(out * R)`` with a fixed random ``R``; turns any op into a gradcheckable function."""
    r = np.random.default_rng(seed).normal(size=out.shape)
    return T.sum(out * r)


def leaf(rng, *shape, scale=1.0):
    return T.Tensor(rng.normal(0.0, scale, shape), requires_grad=True)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


ACCEPTANCE = []


def record(number, title, ok, detail=""):
    """Log one acceptance criterion result; printed in the terminal summary."""
    ACCEPTANCE.append((number, title, bool(ok), detail))
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}  {detail}")
