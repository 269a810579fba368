import numpy as np
import pytest

from fidvr import grid, reference
from fidvr.simulation import SimConfig, run_simulation


def two_bus(z_src=0.1j, emf=1.0, z_line=None):
    """Source bus alone, or source plus one line."""
    buses = [grid.Bus(1, is_source=True)]
    branches = []
    if z_line is not None:
        buses.append(grid.Bus(2))
        branches.append(grid.Branch(1, 2, z_line))
    return grid.FeederNetwork(buses, branches, grid.TheveninSource(emf, z_src))


@pytest.fixture(scope="session")
def ref_net():
    return reference.build_network()


@pytest.fixture(scope="session")
def ref_areas():
    return reference.build_areas()


@pytest.fixture(scope="session")
def ref_result(ref_net, ref_areas):
    """Reference 80 ms fault at 701, default configuration."""
    return run_simulation(ref_net, ref_areas, reference.reference_scenario(), SimConfig())


@pytest.fixture(scope="session")
def submodels():
    from fidvr.rdsm import load_submodels

    return load_submodels(reference.data_path("ieee37_submodels.json"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for the terminal summary, then assert."""

    def record(label, ok, detail):
        ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
        assert ok, f"{label}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
