"""Polar Newton-Raphson AC power flow with generator reactive-limit switching."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .case_model import BusKind, NetworkCase, branch_admittances, build_admittance, check_connectivity

log = logging.getLogger(__name__)


class PowerFlowError(RuntimeError):
    pass


class PowerFlowDiverged(PowerFlowError):
    """Newton iterations failed; ``trace`` holds the mismatch norm per iteration."""

    def __init__(self, message: str, trace: list[float]):
        super().__init__(message)
        self.trace = list(trace)


class IslandedNetworkError(PowerFlowError):
    pass


@dataclass(frozen=True)
class OperatingPoint:
    v_mag: np.ndarray
    v_ang: np.ndarray
    q_gen: np.ndarray  # MVAr per generator
    bus_kinds: tuple[BusKind, ...]
    iterations: int = field(default=0, compare=False)
    trace: tuple[float, ...] = field(default=(), compare=False)

    @property
    def voltage(self) -> np.ndarray:
        return self.v_mag * np.exp(1j * self.v_ang)

    def with_state(self, v_mag, v_ang, q_gen=None, bus_kinds=None) -> "OperatingPoint":
        return OperatingPoint(
            np.asarray(v_mag, dtype=float), np.asarray(v_ang, dtype=float),
            self.q_gen.copy() if q_gen is None else np.asarray(q_gen, dtype=float),
            self.bus_kinds if bus_kinds is None else tuple(bus_kinds),
        )

    def __eq__(self, other):
        if not isinstance(other, OperatingPoint):
            return NotImplemented
        return (self.bus_kinds == other.bus_kinds and np.array_equal(self.v_mag, other.v_mag)
                and np.array_equal(self.v_ang, other.v_ang) and np.array_equal(self.q_gen, other.q_gen))

    __hash__ = None


@dataclass(frozen=True)
class PfOptions:
    tol: float = 1e-8
    max_iter: int = 20
    enforce_q_limits: bool = False
    flat_start: bool = True
    q_release: bool = True
    max_outer: int = 10

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


def partition(kinds) -> tuple[np.ndarray, np.ndarray]:
    """Return (angle-variable buses, magnitude-variable buses) as index arrays."""
    ang = np.array([k for k, kind in enumerate(kinds) if kind is not BusKind.SLACK], dtype=int)
    mag = np.array([k for k, kind in enumerate(kinds) if kind is BusKind.PQ], dtype=int)
    return ang, mag


def _check_dims(case: NetworkCase, point: OperatingPoint) -> None:
    n = case.n_bus
    if (point.v_mag.shape != (n,) or point.v_ang.shape != (n,) or len(point.bus_kinds) != n
            or point.q_gen.shape != (len(case.generators),)):
        raise ValueError("operating point dimensions do not match the case")


def calculated_injection(case: NetworkCase, point: OperatingPoint, Y: np.ndarray | None = None) -> np.ndarray:
    """Complex bus injections V*conj(Y V) in per unit."""
    if Y is None:
        Y = build_admittance(case)
    V = point.voltage
    return V * np.conj(Y @ V)


def scheduled_injection(case: NetworkCase, point: OperatingPoint) -> np.ndarray:
    """Generation minus load in per unit. Reactive generation comes from ``point.q_gen``."""
    qg = np.zeros(case.n_bus)
    np.add.at(qg, case.gen_bus, point.q_gen)
    return case.p_gen_bus_pu - case.p_load_pu + 1j * (qg / case.base_mva - case.q_load_pu)


def compute_mismatch(case: NetworkCase, point: OperatingPoint, Y: np.ndarray | None = None) -> np.ndarray:
    """Scheduled minus calculated injection: P at non-slack buses, then Q at PQ buses."""
    _check_dims(case, point)
    ds = scheduled_injection(case, point) - calculated_injection(case, point, Y)
    ang, mag = partition(point.bus_kinds)
    return np.r_[ds.real[ang], ds.imag[mag]]


@dataclass(frozen=True)
class JacobianBlocks:
    f_theta: np.ndarray
    f_v: np.ndarray
    g_theta: np.ndarray
    g_v: np.ndarray
    ang: np.ndarray  # bus indices of angle columns / P rows
    mag: np.ndarray  # bus indices of magnitude columns / Q rows

    def full(self) -> np.ndarray:
        return np.block([[self.f_theta, self.f_v], [self.g_theta, self.g_v]])


def injection_derivatives(Y: np.ndarray, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Full n-by-n dS/dtheta and dS/d|V| of the complex injections (polar form)."""
    I = Y @ V
    Vn = V / np.abs(V)
    dS_dVa = 1j * np.diag(V) @ np.conj(np.diag(I) - Y * V[None, :])
    dS_dVm = np.diag(V) @ np.conj(Y * Vn[None, :]) + np.diag(np.conj(I) * Vn)
    return dS_dVa, dS_dVm


def build_jacobian(case: NetworkCase, point: OperatingPoint, Y: np.ndarray | None = None,
                   kinds=None) -> JacobianBlocks:
    """Partials of calculated P/Q injections w.r.t. angles and magnitudes.

    With ``x = (theta[ang], V[mag])`` the Newton step solves ``J dx = mismatch``.
    ``kinds`` overrides the bus-kind partition of ``point``.
    """
    _check_dims(case, point)
    if Y is None:
        Y = build_admittance(case)
    ang, mag = partition(point.bus_kinds if kinds is None else kinds)
    dS_dVa, dS_dVm = injection_derivatives(Y, point.voltage)
    return JacobianBlocks(
        f_theta=dS_dVa.real[np.ix_(ang, ang)], f_v=dS_dVm.real[np.ix_(ang, mag)],
        g_theta=dS_dVa.imag[np.ix_(mag, ang)], g_v=dS_dVm.imag[np.ix_(mag, mag)],
        ang=ang, mag=mag,
    )


def generator_q(case: NetworkCase, point: OperatingPoint, Y: np.ndarray | None = None) -> np.ndarray:
    """Reactive output (MVAr) per generator implied by the network equations.

    Generators at buses whose kind is PQ keep their pinned ``point.q_gen``;
    at slack/PV buses the bus total is shared out in proportion to each unit's
    reactive range (equally when all ranges are zero).
    """
    s = calculated_injection(case, point, Y)
    q_bus = (s.imag + case.q_load_pu) * case.base_mva
    q = point.q_gen.astype(float).copy()
    for b in np.unique(case.gen_bus):
        if point.bus_kinds[b] is BusKind.PQ:
            continue
        gens = case.gens_at(b)
        q[gens] = _share(case, gens, q_bus[b])
    return q


def _share(case: NetworkCase, gens: list[int], total: float) -> np.ndarray:
    rng = np.array([case.generators[g].q_max - case.generators[g].q_min for g in gens], dtype=float)
    w = rng / rng.sum() if rng.sum() > 0 else np.full(len(gens), 1.0 / len(gens))
    return total * w


def initial_point(case: NetworkCase, flat: bool = True) -> OperatingPoint:
    kinds = case.kinds
    v_mag = np.array([b.v_mag for b in case.buses], dtype=float)
    v_ang = np.array([b.v_ang for b in case.buses], dtype=float)
    if flat:
        v_mag = np.ones(case.n_bus)
        v_ang = np.zeros(case.n_bus)
        v_ang[case.slack] = case.buses[case.slack].v_ang
    for k, kind in enumerate(kinds):
        if kind is not BusKind.PQ:
            v_mag[k] = case.v_setpoint(k)
    q_gen = np.array([g.q_gen for g in case.generators], dtype=float)
    return OperatingPoint(v_mag, v_ang, q_gen, kinds)


def newton_raphson(case: NetworkCase, start: OperatingPoint, options: PfOptions,
                   Y: np.ndarray | None = None) -> OperatingPoint:
    """Inner NR loop for a fixed bus-kind partition."""
    if Y is None:
        Y = build_admittance(case)
    ang, mag = partition(start.bus_kinds)
    na = len(ang)
    v_mag = start.v_mag.astype(float).copy()
    v_ang = start.v_ang.astype(float).copy()
    point = start.with_state(v_mag, v_ang)
    F = compute_mismatch(case, point, Y)
    norm = float(np.max(np.abs(F), initial=0.0))
    trace = [norm]
    rising = 0
    it = 0
    while norm > options.tol:
        if it >= options.max_iter:
            raise PowerFlowDiverged(f"no convergence in {options.max_iter} iterations", trace)
        J = build_jacobian(case, point, Y).full()
        try:
            dx = np.linalg.solve(J, F)
        except np.linalg.LinAlgError:
            raise PowerFlowDiverged("singular Jacobian", trace) from None
        v_ang[ang] += dx[:na]
        v_mag[mag] += dx[na:]
        it += 1
        point = start.with_state(v_mag.copy(), v_ang.copy())
        F = compute_mismatch(case, point, Y)
        new_norm = float(np.max(np.abs(F), initial=0.0))
        trace.append(new_norm)
        if not np.isfinite(new_norm):
            raise PowerFlowDiverged("mismatch became non-finite", trace)
        rising = rising + 1 if new_norm > norm else 0
        norm = new_norm
        if rising >= 3:
            raise PowerFlowDiverged("mismatch grew for 3 consecutive iterations", trace)
    q = generator_q(case, point, Y)
    return replace(point.with_state(point.v_mag, point.v_ang, q), iterations=it, trace=tuple(trace))


def _limit_switch(case: NetworkCase, point: OperatingPoint,
                  release: bool = True) -> tuple[list[BusKind], np.ndarray, bool]:
    """One round of PV->PQ switching and PQ->PV release."""
    kinds = list(point.bus_kinds)
    q_gen = point.q_gen.copy()
    changed = False
    nominal = case.kinds
    for b in np.unique(case.gen_bus):
        gens = case.gens_at(b)
        qmin, qmax = case.bus_q_limits(b)
        if kinds[b] is BusKind.PV:
            q_tot = q_gen[gens].sum()
            if q_tot > qmax + 1e-8 or q_tot < qmin - 1e-8:
                limit = qmax if q_tot > qmax else qmin
                kinds[b] = BusKind.PQ
                q_gen[gens] = _pin(case, gens, limit == qmax)
                changed = True
        elif release and kinds[b] is BusKind.PQ and nominal[b] is BusKind.PV:
            # release once the voltage crosses its setpoint in the releasing direction
            at_max = np.isclose(q_gen[gens].sum(), qmax)
            vs = case.v_setpoint(b)
            if (at_max and point.v_mag[b] > vs) or (not at_max and point.v_mag[b] < vs):
                kinds[b] = BusKind.PV
                changed = True
    return kinds, q_gen, changed


def _pin(case: NetworkCase, gens: list[int], upper: bool) -> np.ndarray:
    return np.array([case.generators[g].q_max if upper else case.generators[g].q_min for g in gens])


def solve_power_flow(case: NetworkCase, options: PfOptions | None = None,
                     start: OperatingPoint | None = None) -> OperatingPoint:
    """Solve the AC power flow; raise :class:`PowerFlowDiverged` on failure."""
    options = options or PfOptions()
    report = check_connectivity(case)
    if not report.connected:
        raise IslandedNetworkError(f"network is islanded: {report.islands}")
    Y = build_admittance(case)
    point = start if start is not None else initial_point(case, options.flat_start)
    if start is not None:
        # PV and slack magnitudes are held at their setpoints
        v_mag = point.v_mag.copy()
        for k, kind in enumerate(point.bus_kinds):
            if kind is not BusKind.PQ:
                v_mag[k] = case.v_setpoint(k)
        point = point.with_state(v_mag, point.v_ang)
    total_it = 0
    trace: list[float] = []
    seen = []
    for _ in range(options.max_outer + 1):
        point = newton_raphson(case, point, options, Y)
        total_it += point.iterations
        trace.extend(point.trace)
        if not options.enforce_q_limits:
            break
        kinds, q_gen, changed = _limit_switch(case, point, options.q_release)
        if not changed:
            break
        seen.append(tuple(kinds))
        log.debug("Q-limit round: %s", [case.buses[k].id for k, v in enumerate(kinds) if v is not case.kinds[k]])
        v_mag = point.v_mag.copy()
        for k, kind in enumerate(kinds):
            if kind is not BusKind.PQ:
                v_mag[k] = case.v_setpoint(k)
        point = point.with_state(v_mag, point.v_ang, q_gen, kinds)
    else:
        raise PowerFlowDiverged(f"bus kinds oscillated for more than {options.max_outer} rounds", trace)
    return replace(point, iterations=total_it, trace=tuple(trace))


def branch_flow(case: NetworkCase, point: OperatingPoint, k: int) -> tuple[complex, complex]:
    """Complex power (MVA) entering branch ``k`` at its from-end and its to-end."""
    if not 0 <= k < len(case.branches):
        raise IndexError(f"branch index {k} out of range")
    br = case.branches[k]
    if not br.in_service:
        raise ValueError(f"branch {case.branch_labels[k]} is out of service")
    f, t = case.bus_index[br.from_bus], case.bus_index[br.to_bus]
    yff, yft, ytf, ytt = branch_admittances(br)
    V = point.voltage
    i_f = yff * V[f] + yft * V[t]
    i_t = ytf * V[f] + ytt * V[t]
    return complex(V[f] * np.conj(i_f)) * case.base_mva, complex(V[t] * np.conj(i_t)) * case.base_mva
