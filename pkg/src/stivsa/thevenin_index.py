"""Thevenin-index computations.

Two routes to the same quantity:

* the measurement route: two phasor snapshots at a load bus identify a
  Thevenin source and the local index |Z_th / Z_load|;
* the sensitivity route: one CPF predictor solve gives dV/dlambda and
  dtheta/dlambda, and the index follows in closed form (the small-step limit
  of the measurement route).

Sign convention: a :class:`StressDirection` holds derivatives of the
*scheduled* injection (generation minus load, per unit) with respect to the
loading parameter, so growing load enters with a minus sign.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .case_model import BusKind, NetworkCase, scale_generation_dispatch, scale_load
from .power_flow import OperatingPoint, PfOptions, build_admittance, injection_derivatives, partition, solve_power_flow


class DegenerateMeasurementError(ValueError):
    pass


class SingularSystemError(np.linalg.LinAlgError):
    """The bordered sensitivity system is singular (at or beyond collapse)."""

    def __init__(self, message: str, condition: float):
        super().__init__(f"{message} (condition estimate {condition:.3g})")
        self.condition = condition


@dataclass(frozen=True)
class PhasorMeasurement:
    v: complex
    i: complex  # current drawn by the load
    s_load: complex

    @classmethod
    def from_load(cls, v: complex, s_load: complex) -> "PhasorMeasurement":
        return cls(v=v, i=np.conj(s_load / v), s_load=s_load)


@dataclass(frozen=True)
class TheveninEstimate:
    e_th: complex
    z_th: complex
    z_load: complex


def estimate_thevenin_two_point(m1: PhasorMeasurement, m2: PhasorMeasurement) -> TheveninEstimate:
    di = m2.i - m1.i
    if di == 0:
        raise DegenerateMeasurementError("measurement pair has identical currents")
    z_th = -(m2.v - m1.v) / di
    return TheveninEstimate(e_th=m1.v + z_th * m1.i, z_th=z_th, z_load=m1.v / m1.i)


def lti_ratio(est: TheveninEstimate) -> float:
    if est.z_load == 0:
        raise ZeroDivisionError("load impedance is zero")
    return float(abs(est.z_th / est.z_load))


def lti_finite(dv_over_v: float, dtheta: float, dlambda: float) -> float:
    """Finite-step index from a relative magnitude change and an angle change.

    ``dv_over_v`` is dV/V and ``dtheta`` the angle change (rad), both for a
    load step of ``dlambda``.
    """
    if dlambda == 0:
        raise ZeroDivisionError("dlambda must be nonzero")
    a = dv_over_v / dlambda
    b = dtheta / dlambda
    return float(np.sqrt((a * a + b * b) / ((1.0 - a) ** 2 + b * b)))


def lti_exact(dv_over_v: float, dtheta: float, dlambda: float) -> float:
    """Two-snapshot index without any small-step approximation.

    Equals :func:`lti_ratio` of the two-point estimate for a constant-power
    load scaled by ``1 + dlambda``.
    """
    r = (1.0 + dv_over_v) * np.exp(-1j * dtheta)
    return float(abs((1.0 + dv_over_v) * ((1.0 + dv_over_v) - np.exp(-1j * dtheta))
                     / (1.0 + dlambda - r)))


@dataclass(frozen=True)
class StressDirection:
    f_lambda_p: np.ndarray  # d(scheduled P)/dlambda per bus, pu
    g_lambda_q: np.ndarray  # d(scheduled Q)/dlambda per bus, pu
    target_bus: int | None = None  # external id for single-bus directions

    @classmethod
    def system_load(cls, case: NetworkCase, scale_generation: bool = True) -> "StressDirection":
        """All loads grow as (1 + lambda) at constant power factor.

        With ``scale_generation`` every generator's active output grows by the
        same factor; the slack bus absorbs whatever is left.
        """
        p = -case.p_load_pu.copy()
        if scale_generation:
            p += case.p_gen_bus_pu
        return cls(p, -case.q_load_pu.copy())

    @classmethod
    def single_bus(cls, case: NetworkCase, bus_id: int) -> "StressDirection":
        """Only ``bus_id``'s load grows; the slack bus picks up the increment."""
        k = case.bus_index[bus_id]
        p = np.zeros(case.n_bus)
        q = np.zeros(case.n_bus)
        p[k] = -case.p_load_pu[k]
        q[k] = -case.q_load_pu[k]
        return cls(p, q, target_bus=bus_id)

    @classmethod
    def zero(cls, case: NetworkCase) -> "StressDirection":
        return cls(np.zeros(case.n_bus), np.zeros(case.n_bus))


def stressed_case(case: NetworkCase, lam: float, bus_id: int | None = None,
                  scale_generation: bool = True) -> NetworkCase:
    """Case moved ``lam`` along a load-growth direction (finite-step counterpart).

    Matches :meth:`StressDirection.system_load` when ``bus_id`` is None and
    :meth:`StressDirection.single_bus` otherwise.
    """
    if bus_id is None:
        out = scale_load(case, 1.0 + lam)
        return scale_generation_dispatch(out, 1.0 + lam) if scale_generation else out
    k = case.bus_index[bus_id]
    p = np.array([b.p_load for b in case.buses])
    q = np.array([b.q_load for b in case.buses])
    p[k] *= 1.0 + lam
    q[k] *= 1.0 + lam
    return case.with_bus_loads(p, q)


@dataclass(frozen=True)
class SensitivityResult:
    dtheta_dlambda: np.ndarray  # per bus, rad; zero at the slack
    dv_dlambda: np.ndarray  # per bus, pu; zero at fixed-magnitude buses
    transitions: tuple[int, ...]  # external ids treated as PV->PQ


def sensitivity_kinds(case: NetworkCase, point: OperatingPoint, transitions=()) -> tuple[BusKind, ...]:
    kinds = list(point.bus_kinds)
    for bus_id in transitions:
        k = case.bus_index[bus_id]
        if case.kinds[k] is not BusKind.PV:
            raise ValueError(f"bus {bus_id} is not a PV bus in the case")
        kinds[k] = BusKind.PQ
    return tuple(kinds)


def bordered_system(case: NetworkCase, point: OperatingPoint, direction: StressDirection,
                    transitions=(), Y: np.ndarray | None = None):
    """Assemble the CPF predictor system ``A [dtheta; dV; dlambda] = e_last``.

    Transitioned buses contribute one extra magnitude column and one extra
    reactive row each, appended after the regular PQ block.

    Returns ``(A, rhs, ang, mag)`` where ``mag`` lists the magnitude-variable
    buses in column order (regular PQ buses first, then transitions).
    """
    if Y is None:
        Y = build_admittance(case)
    kinds = sensitivity_kinds(case, point, transitions)
    ang, _ = partition(kinds)
    _, base_mag = partition(point.bus_kinds)
    extra = [k for k in range(case.n_bus) if kinds[k] is BusKind.PQ and k not in set(base_mag)]
    mag = np.r_[base_mag, np.array(extra, dtype=int)].astype(int)
    dS_dVa, dS_dVm = injection_derivatives(Y, point.voltage)
    J = np.block([
        [dS_dVa.real[np.ix_(ang, ang)], dS_dVm.real[np.ix_(ang, mag)]],
        [dS_dVa.imag[np.ix_(mag, ang)], dS_dVm.imag[np.ix_(mag, mag)]],
    ])
    # calculated injection must track the scheduled one: J dx - d(sched)/dlambda dlambda = 0
    col = -np.r_[direction.f_lambda_p[ang], direction.g_lambda_q[mag]]
    n = J.shape[0]
    A = np.zeros((n + 1, n + 1))
    A[:n, :n] = J
    A[:n, n] = col
    A[n, n] = 1.0
    rhs = np.zeros(n + 1)
    rhs[n] = 1.0
    return A, rhs, ang, mag


def solve_sensitivities(case: NetworkCase, point: OperatingPoint, direction: StressDirection,
                        transitions=(), Y: np.ndarray | None = None) -> SensitivityResult:
    A, rhs, ang, mag = bordered_system(case, point, direction, transitions, Y)
    try:
        sol = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        raise SingularSystemError("sensitivity system is singular", float(np.linalg.cond(A))) from None
    if not np.all(np.isfinite(sol)) or np.linalg.norm(sol) > 1e8:
        raise SingularSystemError("sensitivity solution blew up", float(np.linalg.cond(A)))
    dth = np.zeros(case.n_bus)
    dv = np.zeros(case.n_bus)
    dth[ang] = sol[:len(ang)]
    dv[mag] = sol[len(ang):-1]
    return SensitivityResult(dth, dv, tuple(int(t) for t in transitions))


def sti(sens: SensitivityResult, bus: int, v: float, case: NetworkCase | None = None) -> float:
    """Sensitivity-based Thevenin index at ``bus``.

    ``bus`` is an internal index unless ``case`` is given, in which case it is
    an external bus id.
    """
    k = case.bus_index[bus] if case is not None else bus
    a = sens.dv_dlambda[k] / v
    b = sens.dtheta_dlambda[k]
    return float(np.sqrt((a * a + b * b) / ((1.0 - a) ** 2 + b * b)))


def measurement_at(case: NetworkCase, point: OperatingPoint, bus_id: int) -> PhasorMeasurement:
    """Phasor snapshot of the load at ``bus_id`` (per unit)."""
    k = case.bus_index[bus_id]
    s = complex(case.p_load_pu[k], case.q_load_pu[k])
    return PhasorMeasurement.from_load(complex(point.voltage[k]), s)


def two_point_indices(case: NetworkCase, point: OperatingPoint, bus_ids, dlambda: float,
                      scale_generation: bool = True, tol: float = 1e-12) -> dict[int, tuple[float, float]]:
    """Finite-step indices from two power-flow snapshots ``dlambda`` apart.

    The second snapshot is the system-wide stressed case solved from ``point``
    with its bus kinds frozen. Returns ``{bus: (two_point_lti, lti_finite)}``:
    the exact two-measurement Thevenin ratio and the finite-ratio formula on
    the same pair of states.
    """
    stressed = stressed_case(case, dlambda, scale_generation=scale_generation)
    second = solve_power_flow(stressed, PfOptions(tol=tol), start=point)
    out = {}
    for b in bus_ids:
        k = case.bus_index[b]
        m1 = measurement_at(case, point, b)
        m2 = measurement_at(stressed, second, b)
        two = lti_ratio(estimate_thevenin_two_point(m1, m2))
        fin = lti_finite((second.v_mag[k] - point.v_mag[k]) / point.v_mag[k],
                         second.v_ang[k] - point.v_ang[k], dlambda)
        out[b] = (two, fin)
    return out
