import math

import pytest

from bhsignal import channel as ch
from bhsignal.cid import ModeGridCache, ModeSumConfig, dp_tables
from bhsignal.geometry import BlackHole, connecting_ray, lapse
from bhsignal.hadamard import tail_coefficients

# reference pair: sender at 6M, receiver just outside the photon sphere, quarter-turn apart
R_A, R_B, GAMMA = 6.0, 3.01, math.pi / 4


@pytest.fixture(scope="session")
def bh():
    return BlackHole(1.0)


@pytest.fixture(scope="session")
def flat():
    return BlackHole(0.0)


@pytest.fixture(scope="session")
def tail6(bh):
    return tail_coefficients(bh, 6.0, 10)


@pytest.fixture(scope="session")
def ref_scenario(bh):
    return ch.static_scenario(bh, R_A, R_B, GAMMA, 1.0, 1.0, (0.0, 1.0))


@pytest.fixture(scope="session")
def mode_cache(tmp_path_factory):
    return ModeGridCache(tmp_path_factory.mktemp("modegrids"))


@pytest.fixture(scope="session")
def ref_dp_green(bh, ref_scenario, mode_cache):
    """DP provider for the reference pair, covering receiver windows up to B1 = 22M."""
    p = ref_scenario.pair
    dt_max = (p.nu * (22.0 + 1.0 / p.nu)) / p.N_A + p.dt_direct + 1.0
    (table,) = dp_tables(bh, R_B, R_A, [GAMMA], dt_max, ModeSumConfig(100), 0.01, None,
                         mode_cache)
    crossings = tuple(connecting_ray(bh, R_A, R_B, GAMMA, c).dt
                      for c in ("secondary", "tertiary"))
    return ch.DPGreen(table, p.dt_direct, 3.5, crossings)


def nu_ref(bh):
    return lapse(bh, R_A) / lapse(bh, R_B)


_ACCEPTANCE: list[str] = []


@pytest.fixture
def criterion():
    """Record and print one PASS/FAIL line, then assert."""

    def report(n: int, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
