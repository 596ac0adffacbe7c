import numpy as np
import pytest

from stwobs import simkit
from stwobs.config import ScenarioConfig
from stwobs.pemfc import Schedule

# (criterion number, line) pairs collected by test_acceptance.py, echoed in the summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def _run(cfg, sc=None):
    if sc is not None:
        sc = simkit.Scenario(cfg, sc.constants, sc.system, sc.certificate, sc.x0,
                             sc.motor_current)
    return simkit.run_scenario(cfg, scenario=sc)


@pytest.fixture(scope="session")
def default_cfg():
    return ScenarioConfig()


@pytest.fixture(scope="session")
def default_scenario(default_cfg):
    return simkit.prepare(default_cfg)


@pytest.fixture(scope="session")
def default_trace(default_cfg, default_scenario):
    return _run(default_cfg, default_scenario)


@pytest.fixture(scope="session")
def constant_current_cfg(default_cfg):
    """100 A throughout, no fault, 30 s."""
    return default_cfg.with_changes(
        simulation={"duration": 30.0},
        profiles={"current": Schedule((0.0,), (100.0,)), "fault": Schedule((0.0,), (0.0,))},
    )


@pytest.fixture(scope="session")
def no_fault_trace(constant_current_cfg):
    return _run(constant_current_cfg)


@pytest.fixture(scope="session")
def constant_current_fault_trace(default_cfg):
    """100 A throughout with the default fault step at 50 s, 80 s."""
    cfg = default_cfg.with_changes(simulation={"duration": 80.0},
                                   profiles={"current": Schedule((0.0,), (100.0,))})
    return _run(cfg)


@pytest.fixture(scope="session")
def short_runs(default_cfg, default_scenario):
    """2 s of the default scenario at several steps, logged every 1 ms."""
    out = {}
    for dt in (1e-6, 1e-4, 2e-4):
        cfg = default_cfg.with_changes(
            simulation={"duration": 2.0, "dt": dt, "decimation": int(round(1e-3 / dt))})
        out[dt] = _run(cfg, default_scenario)
    return out


def rel_dev(a, ref):
    return float(np.max(np.abs(a - ref)) / np.max(np.abs(ref)))
