import os
import sys
import time

import pytest

ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
SRC = os.path.join(ROOT, "src")
if SRC not in sys.path:
    sys.path.insert(0, SRC)

from sps_ems.model.params import SystemParams  # noqa: E402
from sps_ems.pipeline.orchestrator import RunSpec, run  # noqa: E402

SCENARIOS = ("scenario-1", "scenario-2", "scenario-3")


@pytest.fixture(scope="session")
def params():
    return SystemParams()


@pytest.fixture(scope="session")
def dispatch_logs():
    """Default profile, all three scenarios, dispatch fidelity."""
    return {name: run(RunSpec(scenario=name, mode="dispatch")) for name in SCENARIOS}


@pytest.fixture(scope="session")
def device_runs():
    """Default profile, all three scenarios, full plant; with wall-clock seconds per run."""
    out = {}
    for name in SCENARIOS:
        started = time.perf_counter()
        log = run(RunSpec(scenario=name, mode="device"))
        out[name] = (log, time.perf_counter() - started)
    return out


@pytest.fixture(scope="session")
def device_logs(device_runs):
    return {name: log for name, (log, _) in device_runs.items()}
