import warnings

import numpy as np
import pytest

from jacksontree.network import NormalizationWarning, TreeNetwork, load_config


def _quiet_load(name):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NormalizationWarning)
        return load_config(name)


@pytest.fixture(scope="session")
def ex1():
    return _quiet_load("ex1")


@pytest.fixture(scope="session")
def ex2():
    return _quiet_load("ex2_8node")


@pytest.fixture(scope="session")
def five():
    return _quiet_load("five_node")


@pytest.fixture(scope="session")
def mm1():
    return _quiet_load("mm1")


@pytest.fixture
def tandem():
    return TreeNetwork.from_rates(0.1, {(1, 2): 0.4, (2, 0): 0.5})


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance summary ---------------------------------------------------------

ACCEPTANCE: dict[int, list[tuple[str, bool, str]]] = {}


@pytest.fixture
def record():
    """Register one sub-check of an acceptance criterion: ``record(criterion, label, ok, detail)``."""
    def _record(criterion: int, label: str, ok: bool, detail: str = ""):
        ACCEPTANCE.setdefault(criterion, []).append((label, bool(ok), detail))
        print(f"criterion {criterion} / {label}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for c in sorted(ACCEPTANCE):
        checks = ACCEPTANCE[c]
        ok = all(flag for _, flag, _ in checks)
        failed = [label for label, flag, _ in checks if not flag]
        note = "" if ok else f"  (failed: {', '.join(failed)})"
        tr.write_line(f"criterion {c}: {'PASS' if ok else 'FAIL'}{note}")
        for label, flag, detail in checks:
            tr.write_line(f"    {'ok ' if flag else 'BAD'} {label}: {detail}")
