import numpy as np
import pytest

from stivsa.case_model import bundled_case, parse_case, scale_generation_dispatch, scale_load
from stivsa.power_flow import PfOptions, solve_power_flow

LOAD_BUSES = (4, 5, 9, 10, 11, 12, 13, 14)
SCREENED = ("1-5", "2-3", "2-4", "2-5", "3-4", "4-5", "4-7", "4-9", "5-6", "6-11", "6-12", "6-13",
            "7-9", "9-10", "9-14", "10-11", "12-13", "13-14")


def case_text(buses, gens, branches, base_mva=100.0):
    """Build MATPOWER text from short row tuples.

    buses: (id, type, pd, qd[, gs, bs, vm]); gens: (bus, pg, qg, qmax, qmin, vg);
    branches: (f, t, r, x[, b, ratio, angle]).
    """
    lines = [f"mpc.baseMVA = {base_mva};", "mpc.bus = ["]
    for row in buses:
        bid, typ, pd, qd, *rest = row
        gs, bs, vm = (list(rest) + [0, 0, 1.0][len(rest):])[:3]
        lines.append(f"{bid} {typ} {pd} {qd} {gs} {bs} 1 {vm} 0 0 1 1.1 0.9;")
    lines += ["];", "mpc.gen = ["]
    for bus, pg, qg, qmax, qmin, vg in gens:
        lines.append(f"{bus} {pg} {qg} {qmax} {qmin} {vg} 100 1 999 0;")
    lines += ["];", "mpc.branch = ["]
    for row in branches:
        f, t_, r, x, *rest = row
        b, ratio, angle = (list(rest) + [0, 0, 0][len(rest):])[:3]
        lines.append(f"{f} {t_} {r} {x} {b} 0 0 0 {ratio} {angle} 1 -360 360;")
    lines.append("];")
    return "\n".join(lines) + "\n"


def two_bus(p_load=0.0, q_load=0.0, r=0.0, x=0.1, v_slack=1.0, b=0.0):
    return parse_case(case_text([(1, 3, 0, 0, 0, 0, v_slack), (2, 1, p_load, q_load)],
                                [(1, 0, 0, 999, -999, v_slack)], [(1, 2, r, x, b)]))


@pytest.fixture(scope="session")
def case14():
    return bundled_case("case14")


def peak(case):
    return scale_generation_dispatch(scale_load(case, 1.2), 1.2)


@pytest.fixture(scope="session")
def case14_peak(case14):
    return peak(case14)


@pytest.fixture(scope="session")
def base_point(case14):
    return solve_power_flow(case14, PfOptions(enforce_q_limits=True))


@pytest.fixture(scope="session")
def peak_point(case14_peak):
    return solve_power_flow(case14_peak, PfOptions(enforce_q_limits=True))


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)
