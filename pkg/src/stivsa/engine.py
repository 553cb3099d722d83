"""N-1 screening: predicted and benchmark STI for every (outage, load bus)."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .case_model import (BusKind, NetworkCase, build_admittance, check_connectivity, scale_generation_dispatch,
                         scale_load)
from .contingency import EstimatedState, EstimationError, estimate_post_contingency
from .power_flow import OperatingPoint, PfOptions, PowerFlowError, solve_power_flow
from .thevenin_index import SingularSystemError, StressDirection, solve_sensitivities, sti


STATUSES = ("ok", "islanded", "pf_diverged", "estimation_failed", "singular", "excluded")


class BaseCaseError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScreeningConfig:
    load_scale: float = 1.0
    alarm_threshold: float = 0.45
    excluded_branches: tuple[str, ...] = ()
    monitored_buses: tuple[int, ...] | None = None
    # dispatch follows load both for the peak case and for the stress direction
    scale_generation: bool = True
    workers: int = 1

    def __post_init__(self):
        if not self.alarm_threshold > 0:
            raise ValueError("alarm_threshold must be positive")
        if not self.load_scale > 0:
            raise ValueError("load_scale must be positive")
        object.__setattr__(self, "excluded_branches", tuple(self.excluded_branches))
        if self.monitored_buses is not None:
            object.__setattr__(self, "monitored_buses", tuple(int(b) for b in self.monitored_buses))


@dataclass(frozen=True)
class StiRecord:
    outage: str
    bus: int | None
    sti_predicted: float | None
    sti_benchmark: float | None = None
    alarm: bool = False
    status: str = "ok"
    detail: str = ""


@dataclass(frozen=True)
class StiReport:
    config: ScreeningConfig
    monitored_buses: tuple[int, ...]
    records: tuple[StiRecord, ...]
    sigma_per_outage: dict[str, float] = field(default_factory=dict)
    sigma_excluded: int = 0
    base_sti: dict[int, float] = field(default_factory=dict)

    def for_outage(self, label: str) -> list[StiRecord]:
        return [r for r in self.records if r.outage == label]

    def for_bus(self, bus: int) -> list[StiRecord]:
        return [r for r in self.records if r.bus == bus]

    def alarms(self, bus: int | None = None) -> list[str]:
        return [r.outage for r in self.records
                if r.status == "ok" and r.alarm and (bus is None or r.bus == bus)]

    @property
    def screened_outages(self) -> list[str]:
        return list(dict.fromkeys(r.outage for r in self.records if r.status == "ok"))


def default_monitored_buses(case: NetworkCase) -> tuple[int, ...]:
    """Buses with nonzero load and no generator."""
    with_gen = set(case.gen_bus.tolist())
    return tuple(b.id for k, b in enumerate(case.buses)
                 if k not in with_gen and (b.p_load != 0 or b.q_load != 0))


def operating_case(case: NetworkCase, config: ScreeningConfig) -> NetworkCase:
    out = scale_load(case, config.load_scale)
    if config.scale_generation and config.load_scale != 1.0:
        out = scale_generation_dispatch(out, config.load_scale)
    return out


def stress_direction(case: NetworkCase, config: ScreeningConfig) -> StressDirection:
    return StressDirection.system_load(case, scale_generation=config.scale_generation)


def solve_base(case: NetworkCase) -> OperatingPoint:
    try:
        return solve_power_flow(case, PfOptions(enforce_q_limits=True))
    except PowerFlowError as exc:
        raise BaseCaseError(f"base-case power flow failed: {exc}") from exc


def sti_at_point(case: NetworkCase, point: OperatingPoint, buses, direction: StressDirection,
                 transitions=()) -> dict[int, float]:
    sens = solve_sensitivities(case, point, direction, transitions, build_admittance(case))
    return {b: sti(sens, b, float(point.v_mag[case.bus_index[b]]), case) for b in buses}


def base_case_sti(case: NetworkCase, config: ScreeningConfig | None = None) -> dict[int, float]:
    """STI at every monitored bus for the intact network."""
    config = config or ScreeningConfig()
    op_case = operating_case(case, config)
    buses = config.monitored_buses or default_monitored_buses(case)
    base = solve_base(op_case)
    return sti_at_point(op_case, base, buses, stress_direction(op_case, config))


def _status_row(label: str, status: str, detail: str = "") -> StiRecord:
    return StiRecord(outage=label, bus=None, sti_predicted=None, status=status, detail=detail)


@dataclass
class _OutageResult:
    records: list[StiRecord]
    estimate: EstimatedState | None = None


def _screen_outage(op_case: NetworkCase, base: OperatingPoint, k: int, buses, config: ScreeningConfig,
                   with_benchmark: bool) -> _OutageResult:
    label = op_case.branch_labels[k]
    if label in config.excluded_branches:
        return _OutageResult([_status_row(label, "excluded")])
    conn = check_connectivity(op_case, k)
    if not conn.connected:
        return _OutageResult([_status_row(label, "islanded", f"islands {list(map(list, conn.islands))}")])
    post = op_case.with_outage(k)
    direction = stress_direction(post, config)
    try:
        est = estimate_post_contingency(op_case, base, k)
        predicted = sti_at_point(post, est.point, buses, direction, est.transition_buses)
    except EstimationError as exc:
        return _OutageResult([_status_row(label, "estimation_failed", str(exc))])
    except SingularSystemError as exc:
        return _OutageResult([_status_row(label, "singular", str(exc))])

    bench: dict[int, float] = {}
    status, detail = "ok", ""
    if with_benchmark:
        try:
            exact = solve_power_flow(post, PfOptions(enforce_q_limits=True))
            bench = sti_at_point(post, exact, buses, direction)
        except PowerFlowError as exc:
            status, detail = "pf_diverged", str(exc)
        except SingularSystemError as exc:
            status, detail = "singular", str(exc)
    records = [
        StiRecord(outage=label, bus=b, sti_predicted=predicted[b], sti_benchmark=bench.get(b),
                  alarm=predicted[b] > config.alarm_threshold, status=status, detail=detail)
        for b in buses
    ]
    return _OutageResult(records, est)


def average_relative_error(predicted, benchmark) -> float:
    """Mean absolute relative error of ``predicted`` against ``benchmark``, in percent."""
    predicted = np.asarray(predicted, dtype=float)
    benchmark = np.asarray(benchmark, dtype=float)
    if predicted.shape != benchmark.shape or predicted.size == 0:
        raise ValueError("predicted and benchmark must be non-empty and equally long")
    if np.any(benchmark == 0):
        raise ZeroDivisionError("benchmark contains a zero entry")
    return float(100.0 * np.mean(np.abs(predicted - benchmark) / np.abs(benchmark)))


def _run(case: NetworkCase, config: ScreeningConfig, with_benchmark: bool) -> StiReport:
    for label in config.excluded_branches:
        case.branch_by_label(label)  # KeyError for unknown names
    op_case = operating_case(case, config)
    buses = config.monitored_buses or default_monitored_buses(case)
    unknown = [b for b in buses if b not in op_case.bus_index]
    if unknown:
        raise KeyError(f"unknown monitored bus(es) {unknown}")
    base = solve_base(op_case)
    base_sti = sti_at_point(op_case, base, buses, stress_direction(op_case, config))
    excluded = {case.branch_labels[case.branch_by_label(lb)] for lb in config.excluded_branches}
    config_n = ScreeningConfig(config.load_scale, config.alarm_threshold, tuple(sorted(excluded)),
                               config.monitored_buses, config.scale_generation, config.workers)
    todo = [k for k, br in enumerate(op_case.branches) if br.in_service]

    def work(k):
        return _screen_outage(op_case, base, k, buses, config_n, with_benchmark)

    workers = config.workers if config.workers > 0 else (os.cpu_count() or 1)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, todo))
    else:
        results = [work(k) for k in todo]

    records = [r for res in results for r in res.records]
    sigma: dict[str, float] = {}
    n_excl = 0
    if with_benchmark:
        for res in results:
            rows = [r for r in res.records if r.bus is not None]
            if not rows:
                continue
            good = [r for r in rows if r.status == "ok" and r.sti_benchmark]
            n_excl += len(rows) - len(good)
            if good:
                sigma[rows[0].outage] = average_relative_error(
                    [r.sti_predicted for r in good], [r.sti_benchmark for r in good])
    return StiReport(config=config, monitored_buses=tuple(buses), records=tuple(records),
                     sigma_per_outage=sigma, sigma_excluded=n_excl, base_sti=base_sti)


def screen(case: NetworkCase, config: ScreeningConfig | None = None) -> StiReport:
    """Predicted STI for every non-excluded N-1 branch outage."""
    return _run(case, config or ScreeningConfig(), with_benchmark=False)


def benchmark(case: NetworkCase, config: ScreeningConfig | None = None) -> StiReport:
    """As :func:`screen`, plus STI at the exact post-contingency power flow."""
    return _run(case, config or ScreeningConfig(), with_benchmark=True)


def estimate_all(case: NetworkCase, config: ScreeningConfig | None = None) -> dict[str, EstimatedState]:
    """Estimated post-contingency states keyed by outage label (connected outages only)."""
    config = config or ScreeningConfig()
    op_case = operating_case(case, config)
    base = solve_base(op_case)
    out = {}
    for k, label in enumerate(op_case.branch_labels):
        if label in config.excluded_branches or not check_connectivity(op_case, k).connected:
            continue
        out[label] = estimate_post_contingency(op_case, base, k)
    return out


def switched_buses(case: NetworkCase, point: OperatingPoint, reference: OperatingPoint) -> set[int]:
    """External ids PV in ``reference`` but PQ in ``point``."""
    return {case.buses[k].id for k in range(case.n_bus)
            if reference.bus_kinds[k] is BusKind.PV and point.bus_kinds[k] is BusKind.PQ}
