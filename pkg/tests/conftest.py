import numpy as np
import pytest

from jamdetect.simulator import ScenarioSpec, generate_campaign, generate_scenario
from jamdetect.telemetry import FEATURES, KpiRecord


@pytest.fixture(scope="session")
def campaign():
    """Clean plus all 13 jam rows, 60 records each."""
    return generate_campaign(per_scenario_n=60, seed=3)


@pytest.fixture(scope="session")
def clean_596():
    return generate_scenario(ScenarioSpec.clean(11), n=596)


def make_record(ts=0, cell="LTE", **overrides):
    values = dict.fromkeys(FEATURES, 0.0)
    values.update(cqi=0, dl_mcs=0, ul_mcs=0)
    values.update(overrides)
    return KpiRecord(timestamp_ms=ts, cell=cell, **values)


def rng(seed=0):
    return np.random.default_rng(seed)


_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_line():
    """Record one PASS/FAIL line for the acceptance summary."""

    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        _ACCEPTANCE_LINES.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
