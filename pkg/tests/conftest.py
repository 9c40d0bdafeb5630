import numpy as np
import pytest

from permfusion.domain import KernelParams, WellRecord, build_grid


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_grid():
    return build_grid((0.0, 300.0, 0.0, 300.0), 100.0)


@pytest.fixture
def params():
    return KernelParams(alpha=1.5, beta=1.2, gamma=0.5, delta=0.7, r_d=200.0, r_g=30.0, w_s=0.3)


def make_wells(positions, wl=None, wt=None):
    out = []
    for i, (x, y) in enumerate(positions):
        out.append(WellRecord(
            id=f"W{i}", x=float(x), y=float(y),
            k_wl=None if wl is None or wl[i] is None else float(wl[i]),
            k_wt_effective=None if wt is None or wt[i] is None else float(wt[i]),
        ))
    return out


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
