import os
import re

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("thorough", deadline=None, max_examples=300)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_ACCEPTANCE = {}
_CRITERION = re.compile(r"test_c(\d\d)_(\w+)")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _scratch(tmp_path, monkeypatch):
    monkeypatch.setenv("LSRPCA_SCRATCH", str(tmp_path / "scratch"))


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m or "test_acceptance.py" not in report.nodeid:
        return
    key = (int(m.group(1)), m.group(2).replace("_", " "))
    if report.when == "call":
        _ACCEPTANCE[key] = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
    elif report.failed:
        _ACCEPTANCE[key] = "FAIL"
    elif report.skipped:
        _ACCEPTANCE.setdefault(key, "SKIP")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for (num, title), status in sorted(_ACCEPTANCE.items()):
        terminalreporter.write_line(f"{status}  criterion {num:2d}: {title}")
    n_pass = sum(s == "PASS" for s in _ACCEPTANCE.values())
    terminalreporter.write_line(f"{n_pass}/{len(_ACCEPTANCE)} criteria pass")
