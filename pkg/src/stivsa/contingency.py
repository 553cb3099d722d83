"""Post-contingency state estimation without a full power-flow re-solve.

A branch outage is replaced by equivalent injections at its end buses: the
pre-contingency point is an exact solution of the network *without* the
branch when the end buses additionally inject minus the branch flows.
Removing those fictitious injections is then a pure injection change, which
is applied through the linearised network (one Jacobian solve per pass).
Generators that would cross a reactive limit are handled piecewise: only the
fraction K of the change that brings the first generator to its limit is
applied, that bus becomes PQ, and the rest is re-applied on the new partition.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .case_model import BusKind, NetworkCase, build_admittance, check_connectivity
from .power_flow import OperatingPoint, branch_flow, build_jacobian, generator_q, partition

K_GUARD = 1e-9


class EstimationError(RuntimeError):
    def __init__(self, message: str, pass_index: int | None = None):
        if pass_index is not None:
            message = f"pass {pass_index}: {message}"
        super().__init__(message)
        self.pass_index = pass_index


@dataclass(frozen=True)
class InjectionChange:
    delta_s: np.ndarray  # complex per-bus injection change, pu
    delta_f: np.ndarray  # [dP at angle rows, dQ at magnitude rows] for the point's partition
    outage: int

    def as_vector(self, kinds) -> np.ndarray:
        ang, mag = partition(kinds)
        return np.r_[self.delta_s.real[ang], self.delta_s.imag[mag]]


@dataclass(frozen=True)
class Transition:
    bus: int  # external id
    limit: str  # "q_min" or "q_max"
    k: float


@dataclass(frozen=True)
class EstimatedState:
    point: OperatingPoint
    transitions: tuple[Transition, ...] = ()
    applied_fraction_history: tuple[float, ...] = field(default=())

    @property
    def transition_buses(self) -> tuple[int, ...]:
        return tuple(t.bus for t in self.transitions)


def injection_change_vector(case: NetworkCase, point: OperatingPoint, outage: int) -> InjectionChange:
    """Injections of the post-outage network relative to its base-equivalent.

    The end buses see ``+S_ij`` and ``+S_ji`` (per unit): in the equivalent
    network they inject ``S_inj - S_ij``; after the outage they inject ``S_inj``.
    """
    s_ij, s_ji = branch_flow(case, point, outage)
    br = case.branches[outage]
    ds = np.zeros(case.n_bus, dtype=complex)
    ds[case.bus_index[br.from_bus]] += s_ij / case.base_mva
    ds[case.bus_index[br.to_bus]] += s_ji / case.base_mva
    ang, mag = partition(point.bus_kinds)
    return InjectionChange(ds, np.r_[ds.real[ang], ds.imag[mag]], outage)


def equivalent_case(case: NetworkCase, point: OperatingPoint, outage: int,
                    fraction: float = 1.0) -> NetworkCase:
    """Outaged network with ``fraction`` of the branch flows drawn as extra end-bus load.

    ``fraction=1`` gives the base-equivalent network; ``fraction=0`` the true
    post-contingency network.
    """
    s = injection_change_vector(case, point, outage).delta_s * case.base_mva * fraction
    p = np.array([b.p_load for b in case.buses]) + s.real
    q = np.array([b.q_load for b in case.buses]) + s.imag
    return case.with_outage(outage).with_bus_loads(p, q)


def k_factor(q_prev: float, q_next: float, q_min: float, q_max: float) -> float:
    """Fraction of a reactive-output step that fits inside [q_min, q_max]."""
    if not q_min - 1e-9 <= q_prev <= q_max + 1e-9:
        raise ValueError(f"previous reactive output {q_prev} outside [{q_min}, {q_max}]")
    if q_next > q_max:
        return (q_max - q_prev) / (q_next - q_prev)
    if q_next < q_min:
        return (q_prev - q_min) / (q_prev - q_next)
    return 1.0


def predicted_generator_q(case: NetworkCase, point: OperatingPoint, Y: np.ndarray | None = None) -> np.ndarray:
    """Generator reactive output (MVAr) implied by the network equations at ``point``."""
    return generator_q(case, point, Y)


def estimate_post_contingency(case: NetworkCase, point: OperatingPoint, outage: int,
                              q_limits: bool = True) -> EstimatedState:
    """Predict the operating point after outage of branch ``outage``.

    ``point`` must be a solved state of ``case``. Intermediate states are
    linear in the applied fraction, reactive outputs included. With
    ``q_limits=False`` every K is taken as 1 (a single linear update).
    """
    report = check_connectivity(case, outage)
    if not report.connected:
        raise ValueError(f"outage {case.branch_labels[outage]} islands buses {report.islands}")
    change = injection_change_vector(case, point, outage)
    post = case.with_outage(outage)
    Y = build_admittance(post)

    kinds = list(point.bus_kinds)
    v_mag = point.v_mag.copy()
    v_ang = point.v_ang.copy()
    q_cur = point.q_gen.copy()
    remaining = 1.0
    history: list[float] = []
    transitions: list[Transition] = []
    gen_buses = np.unique(case.gen_bus)

    for pass_index in range(len(gen_buses) + 1):
        cur = OperatingPoint(v_mag, v_ang, q_cur, tuple(kinds))
        jac = build_jacobian(post, cur, Y)
        rhs = remaining * change.as_vector(kinds)
        try:
            dx = np.linalg.solve(jac.full(), rhs)
        except np.linalg.LinAlgError:
            raise EstimationError("singular Jacobian", pass_index) from None
        if not np.all(np.isfinite(dx)):
            raise EstimationError("non-finite state update", pass_index)
        na = len(jac.ang)
        nxt_ang = v_ang.copy()
        nxt_mag = v_mag.copy()
        nxt_ang[jac.ang] += dx[:na]
        nxt_mag[jac.mag] += dx[na:]
        nxt = OperatingPoint(nxt_mag, nxt_ang, q_cur, tuple(kinds))
        q_next = predicted_generator_q(post, nxt, Y)

        k_min, k_bus, k_upper = 1.0, None, False
        for b in gen_buses if q_limits else ():
            if kinds[b] is not BusKind.PV:
                continue
            gens = post.gens_at(b)
            qmin, qmax = post.bus_q_limits(b)
            k = k_factor(q_cur[gens].sum(), q_next[gens].sum(), qmin, qmax)
            if k >= 1.0 - K_GUARD:
                continue
            # ties go to the lower external bus id
            if k < k_min or (k == k_min and k_bus is not None and case.buses[b].id < case.buses[k_bus].id):
                k_min, k_bus, k_upper = k, b, q_next[gens].sum() > qmax

        if k_bus is None:
            history.append(1.0)
            final = OperatingPoint(nxt_mag, nxt_ang, q_next, tuple(kinds))
            return EstimatedState(final, tuple(transitions), tuple(history))

        history.append(k_min)
        v_ang = v_ang + k_min * (nxt_ang - v_ang)
        v_mag = v_mag + k_min * (nxt_mag - v_mag)
        q_cur = q_cur + k_min * (q_next - q_cur)
        gens = post.gens_at(k_bus)
        q_cur[gens] = [post.generators[g].q_max if k_upper else post.generators[g].q_min for g in gens]
        kinds[k_bus] = BusKind.PQ
        transitions.append(Transition(int(case.buses[k_bus].id), "q_max" if k_upper else "q_min", k_min))
        remaining *= 1.0 - k_min

    raise EstimationError("PV set failed to shrink", len(gen_buses))
