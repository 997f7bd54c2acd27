import time

import pytest

from duckpac.grid import bundled_network_path, load_network
from duckpac.profiles import generate_profiles
from duckpac.scenarios import SolverConfig, run_baseline, run_distributed, run_local

SEED = 7


@pytest.fixture(scope="session")
def feeder34():
    net = load_network(bundled_network_path())
    return net, generate_profiles(SEED, net)


@pytest.fixture(scope="session")
def duck_runs(feeder34, tmp_path_factory):
    """Scenarios A, B and C on the bundled feeder at 1000 rounds."""
    net, prof = feeder34
    trace = tmp_path_factory.mktemp("duck") / "trace_C.csv"
    t0 = time.perf_counter()
    a = run_baseline(net, prof)
    b = run_local(net, prof)
    c = run_distributed(net, prof, SolverConfig(max_iter=1000), trace_path=trace)
    return {"A": a, "B": b, "C": c, "seconds": time.perf_counter() - t0, "trace": trace}


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES):
            terminalreporter.write_line(line)
