"""Shared, lazily computed runs and the acceptance report."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from conmech import affine_body as ab
from conmech import library, runner, scenario

ROOT = Path(__file__).resolve().parents[1]
SCENARIO_DIR = ROOT / "scenarios"
DATA_DIR = Path(__file__).resolve().parent / "data"

ACCEPTANCE_COUNT = 14
AFFINE_VARIANTS = ("free", "rigid", "isochoric", "conformal", "rotationfree")


class SharedRuns:
    """Memoized simulations reused by several tests in one session."""

    def __init__(self):
        self._cache = {}

    def _memo(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    def spec(self, name):
        return self._memo(("spec", name), lambda: scenario.load(SCENARIO_DIR / f"{name}.yaml"))

    def record(self, name, model=None):
        """Generic-solver trajectory of a shipped scenario file."""
        return self._memo(("record", name, model), lambda: runner.run_record(self.spec(name), model))

    def affine_case(self, variant):
        return self._memo(("case", variant), lambda: library.build(f"affine_{variant}"))

    def specialized(self, variant):
        """Specialized integration matching the shipped affine scenario (h=1e-3, T=10, stride 10)."""
        def go():
            model, var, state = self.affine_case(variant).affine
            return ab.integrate_variant(model, state, var, 10.0, 1e-3, stride=10)
        return self._memo(("specialized", variant), go)


@pytest.fixture(scope="session")
def runs():
    return SharedRuns()


# ---------------------------------------------------------------- acceptance report

_OUTCOMES_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_OUTCOMES_KEY] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    table = item.config.stash[_OUTCOMES_KEY]
    entry = table.setdefault(number, {"title": title, "passed": True, "ran": False, "tests": []})
    if rep.when == "call" or rep.failed:
        entry["ran"] = entry["ran"] or not rep.skipped
        entry["tests"].append(item.name)
        if rep.failed:
            entry["passed"] = False


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    table = config.stash.get(_OUTCOMES_KEY, {})
    if not table:
        return
    terminalreporter.section("acceptance criteria")
    for number in range(1, ACCEPTANCE_COUNT + 1):
        entry = table.get(number)
        if entry is None or not entry["ran"]:
            status, title = "NOT RUN", entry["title"] if entry else ""
        else:
            status, title = ("PASS" if entry["passed"] else "FAIL"), entry["title"]
        terminalreporter.write_line(f"criterion {number:2d}: {status:7s} {title}")


def max_abs(x) -> float:
    return float(np.max(np.abs(x)))
