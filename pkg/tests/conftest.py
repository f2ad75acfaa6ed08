"""Shared fixtures and the acceptance-criteria summary hook."""

import numpy as np
import pytest

from fhsae.model import validate_dataset


@pytest.fixture
def hand_dataset():
    """Balanced m=4, p=1, d=1, y=(0,2,4,6): every closed form is hand-checkable."""
    return validate_dataset(
        np.array([0.0, 2.0, 4.0, 6.0]), np.ones((4, 1)), np.ones(4)
    )


def make_balanced(y, d=1.0):
    y = np.asarray(y, dtype=np.float64)
    return validate_dataset(y, np.ones((y.shape[0], 1)), np.full(y.shape[0], d))


def random_dataset(rng, m=None, p=None, d_lo=0.5, d_hi=40.0, scale=3.0):
    m = m if m is not None else int(rng.integers(6, 31))
    p = p if p is not None else int(rng.integers(1, 4))
    if m <= p + 2:
        m = p + 3
    cols = [np.ones(m)] + [rng.normal(size=m) for _ in range(p - 1)]
    X = np.column_stack(cols)
    d = rng.uniform(d_lo, d_hi, size=m)
    y = rng.normal(scale=scale, size=m)
    return validate_dataset(y, X, d)


# ---------------------------------------------------------------------------
# Acceptance summary: one PASS/FAIL line per criterion in test_acceptance.py.

_CRITERIA: dict[str, str] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        if "test_acceptance" in item.nodeid and item.name.startswith("test_criterion"):
            doc = (item.obj.__doc__ or "").strip().splitlines()
            _CRITERIA[item.name] = doc[0] if doc else ""


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    outcomes = {}
    for status, word in (("passed", "PASS"), ("failed", "FAIL"), ("error", "FAIL")):
        for rep in terminalreporter.stats.get(status, []):
            name = rep.nodeid.split("::")[-1]
            if name in _CRITERIA:
                # a failed setup/teardown overrides a passed call
                if word == "FAIL" or name not in outcomes:
                    outcomes[name] = word
    if not outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(outcomes):
        terminalreporter.write_line(f"{outcomes[name]}  {name}: {_CRITERIA[name]}")
