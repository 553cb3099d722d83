"""MATPOWER case ingestion, admittance construction and topology queries.

Supported format subset: ``mpc.baseMVA`` scalar plus the ``mpc.bus``,
``mpc.gen`` and ``mpc.branch`` matrices in standard MATPOWER column order.
Any other field (``gencost``, ``areas``...) is ignored.
"""
from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components


class CaseFormatError(ValueError):
    """Raised for malformed or inconsistent case text."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"line {line}, column {column}: {message}"
        super().__init__(message)


class BusKind(str, enum.Enum):
    SLACK = "slack"
    PV = "PV"
    PQ = "PQ"


_KIND_CODES = {1: BusKind.PQ, 2: BusKind.PV, 3: BusKind.SLACK}
_KIND_TO_CODE = {v: k for k, v in _KIND_CODES.items()}


@dataclass(frozen=True)
class Bus:
    id: int
    kind: BusKind
    p_load: float  # MW
    q_load: float  # MVAr
    v_mag: float  # pu
    v_ang: float  # rad
    shunt_g: float = 0.0  # pu
    shunt_b: float = 0.0  # pu


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charging: float = 0.0
    tap_ratio: float = 1.0
    phase_shift: float = 0.0  # rad
    in_service: bool = True


@dataclass(frozen=True)
class Generator:
    bus: int
    p_gen: float  # MW
    q_gen: float  # MVAr
    q_min: float
    q_max: float
    v_setpoint: float


@dataclass(frozen=True)
class NetworkCase:
    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    name: str = field(default="case", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "generators", tuple(self.generators))
        _validate(self)

    # -- indexing helpers -------------------------------------------------

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @cached_property
    def bus_index(self) -> dict[int, int]:
        """External bus number -> dense internal index (file order)."""
        return {b.id: k for k, b in enumerate(self.buses)}

    @cached_property
    def bus_ids(self) -> np.ndarray:
        return np.array([b.id for b in self.buses])

    @cached_property
    def slack(self) -> int:
        return next(k for k, b in enumerate(self.buses) if b.kind is BusKind.SLACK)

    @property
    def kinds(self) -> tuple[BusKind, ...]:
        return tuple(b.kind for b in self.buses)

    @cached_property
    def gen_bus(self) -> np.ndarray:
        """Internal bus index of every generator."""
        return np.array([self.bus_index[g.bus] for g in self.generators], dtype=int)

    def gens_at(self, bus_idx: int) -> list[int]:
        return [k for k, b in enumerate(self.gen_bus) if b == bus_idx]

    def bus_q_limits(self, bus_idx: int) -> tuple[float, float]:
        """Aggregated (q_min, q_max) in MVAr of all generators at a bus."""
        gens = [self.generators[k] for k in self.gens_at(bus_idx)]
        return sum(g.q_min for g in gens), sum(g.q_max for g in gens)

    def v_setpoint(self, bus_idx: int) -> float:
        gens = self.gens_at(bus_idx)
        if not gens:
            return self.buses[bus_idx].v_mag
        return self.generators[gens[0]].v_setpoint

    @cached_property
    def p_load_pu(self) -> np.ndarray:
        return np.array([b.p_load for b in self.buses]) / self.base_mva

    @cached_property
    def q_load_pu(self) -> np.ndarray:
        return np.array([b.q_load for b in self.buses]) / self.base_mva

    @cached_property
    def p_gen_bus_pu(self) -> np.ndarray:
        pg = np.zeros(self.n_bus)
        np.add.at(pg, self.gen_bus, [g.p_gen for g in self.generators])
        return pg / self.base_mva

    def total_load(self) -> tuple[float, float]:
        return (sum(b.p_load for b in self.buses), sum(b.q_load for b in self.buses))

    # -- branch naming ----------------------------------------------------

    @cached_property
    def branch_labels(self) -> tuple[str, ...]:
        """Labels ``"i-j"`` by external bus numbers; parallel branches get ``#n``."""
        seen: dict[tuple[int, int], int] = {}
        pairs = [(br.from_bus, br.to_bus) for br in self.branches]
        counts: dict[tuple[int, int], int] = {}
        for p in pairs:
            key = tuple(sorted(p))
            counts[key] = counts.get(key, 0) + 1
        labels = []
        for f, t in pairs:
            key = tuple(sorted((f, t)))
            base = f"{f}-{t}"
            if counts[key] > 1:
                seen[key] = seen.get(key, 0) + 1
                base = f"{base}#{seen[key]}"
            labels.append(base)
        return tuple(labels)

    def branch_by_label(self, label: str) -> int:
        """Resolve ``"i-j"`` (either orientation, optional ``#n``) to a branch index."""
        label = label.strip()
        if label in self.branch_labels:
            return self.branch_labels.index(label)
        m = re.fullmatch(r"(\d+)-(\d+)(?:#(\d+))?", label)
        if m:
            flipped = f"{m.group(2)}-{m.group(1)}" + (f"#{m.group(3)}" if m.group(3) else "")
            if flipped in self.branch_labels:
                return self.branch_labels.index(flipped)
        raise KeyError(f"no branch named {label!r}")

    # -- derived cases ----------------------------------------------------

    def with_outage(self, k: int) -> "NetworkCase":
        _check_branch_index(self, k)
        branches = list(self.branches)
        branches[k] = replace(branches[k], in_service=False)
        return replace(self, branches=tuple(branches))

    def with_bus_loads(self, p_load: np.ndarray, q_load: np.ndarray) -> "NetworkCase":
        """Copy with bus loads replaced (MW / MVAr arrays in bus order)."""
        buses = tuple(replace(b, p_load=float(p), q_load=float(q))
                      for b, p, q in zip(self.buses, p_load, q_load))
        return replace(self, buses=buses)


def _validate(case: NetworkCase) -> None:
    if not case.base_mva > 0:
        raise CaseFormatError(f"baseMVA must be positive, got {case.base_mva}")
    ids = [b.id for b in case.buses]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise CaseFormatError(f"duplicate bus id(s) {dup}")
    known = set(ids)
    n_slack = sum(b.kind is BusKind.SLACK for b in case.buses)
    if n_slack != 1:
        raise CaseFormatError(f"expected exactly one slack bus, found {n_slack}")
    for k, br in enumerate(case.branches):
        for end in (br.from_bus, br.to_bus):
            if end not in known:
                raise CaseFormatError(f"branch {k + 1} references unknown bus {end}")
        if br.r == 0 and br.x == 0:
            raise CaseFormatError(f"branch {k + 1} has zero impedance")
        if not br.tap_ratio > 0:
            raise CaseFormatError(f"branch {k + 1} has non-positive tap ratio")
    gen_buses: dict[int, float] = {}
    for k, g in enumerate(case.generators):
        if g.bus not in known:
            raise CaseFormatError(f"generator {k + 1} references unknown bus {g.bus}")
        if g.q_min > g.q_max:
            raise CaseFormatError(f"generator {k + 1} has q_min > q_max")
        if g.bus in gen_buses and abs(gen_buses[g.bus] - g.v_setpoint) > 1e-6:
            raise CaseFormatError(f"generators at bus {g.bus} disagree on voltage setpoint")
        gen_buses[g.bus] = g.v_setpoint
    for b in case.buses:
        if b.kind in (BusKind.PV, BusKind.SLACK) and b.id not in gen_buses:
            raise CaseFormatError(f"{b.kind.value} bus {b.id} has no generator")


def _check_branch_index(case: NetworkCase, k: int) -> None:
    if not 0 <= k < len(case.branches):
        raise IndexError(f"branch index {k} out of range (0..{len(case.branches) - 1})")


# ---------------------------------------------------------------------------
# parsing / serialization

_SCALAR_RE = re.compile(r"mpc\.baseMVA\s*=\s*([^;\n]+);")
_MATRIX_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;?", re.S)
_TABLE_WIDTH = {"bus": 13, "gen": 10, "branch": 11}


def _strip_comments(text: str) -> str:
    # keep offsets stable so error positions stay valid
    return re.sub(r"%[^\n]*", lambda m: " " * len(m.group()), text)


def _position(text: str, offset: int) -> tuple[int, int]:
    line = text.count("\n", 0, offset) + 1
    col = offset - (text.rfind("\n", 0, offset) + 1) + 1
    return line, col


def _parse_matrix(text: str, name: str, body: str, body_offset: int) -> list[list[float]]:
    rows: list[list[float]] = []
    for row_m in re.finditer(r"[^;\n]+", body):
        row: list[float] = []
        for tok in re.finditer(r"[^\s,]+", row_m.group()):
            try:
                row.append(float(tok.group()))
            except ValueError:
                line, col = _position(text, body_offset + row_m.start() + tok.start())
                raise CaseFormatError(f"bad number {tok.group()!r} in mpc.{name}", line, col) from None
        if row:
            need = _TABLE_WIDTH[name]
            if len(row) < need:
                line, col = _position(text, body_offset + row_m.start())
                raise CaseFormatError(
                    f"mpc.{name} row has {len(row)} columns, need at least {need}", line, col)
            rows.append(row)
    return rows


def parse_case(text: str, name: str = "case") -> NetworkCase:
    """Parse MATPOWER case text into a :class:`NetworkCase`."""
    clean = _strip_comments(text)
    m = _SCALAR_RE.search(clean)
    if m is None:
        raise CaseFormatError("missing mpc.baseMVA")
    try:
        base_mva = float(m.group(1))
    except ValueError:
        line, col = _position(clean, m.start(1))
        raise CaseFormatError(f"bad baseMVA value {m.group(1).strip()!r}", line, col) from None

    tables: dict[str, list[list[float]]] = {}
    for mm in _MATRIX_RE.finditer(clean):
        key = mm.group(1)
        if key in _TABLE_WIDTH:
            tables[key] = _parse_matrix(clean, key, mm.group(2), mm.start(2))
    for key in _TABLE_WIDTH:
        if key not in tables:
            # a table opened but never closed is a syntax error, not a missing table
            opened = re.search(rf"mpc\.{key}\s*=\s*\[", clean)
            if opened:
                line, col = _position(clean, opened.start())
                raise CaseFormatError(f"unterminated mpc.{key} matrix", line, col)
            raise CaseFormatError(f"missing mpc.{key} table")

    buses = []
    for row in tables["bus"]:
        code = int(row[1])
        if code not in _KIND_CODES:
            raise CaseFormatError(f"bus {int(row[0])} has unsupported type {code}")
        buses.append(Bus(
            id=int(row[0]), kind=_KIND_CODES[code], p_load=row[2], q_load=row[3],
            v_mag=row[7], v_ang=math.radians(row[8]),
            shunt_g=row[4] / base_mva, shunt_b=row[5] / base_mva,
        ))
    generators = [
        Generator(bus=int(row[0]), p_gen=row[1], q_gen=row[2], q_max=row[3], q_min=row[4],
                  v_setpoint=row[5])
        for row in tables["gen"] if row[7] > 0
    ]
    branches = [
        Branch(from_bus=int(row[0]), to_bus=int(row[1]), r=row[2], x=row[3], b_charging=row[4],
               tap_ratio=row[8] if row[8] != 0 else 1.0, phase_shift=math.radians(row[9]),
               in_service=row[10] > 0)
        for row in tables["branch"]
    ]
    return NetworkCase(base_mva, tuple(buses), tuple(branches), tuple(generators), name=name)


def load_case(path: str | Path) -> NetworkCase:
    path = Path(path)
    return parse_case(path.read_text(), name=path.stem)


def bundled_case(name: str = "case14") -> NetworkCase:
    """Load a case file shipped with the package (``case14``)."""
    return load_case(Path(__file__).parent / "data" / f"{name}.m")


def _fmt(v: float) -> str:
    s = f"{v:.6f}"
    return "0.000000" if s == "-0.000000" else s


def serialize_case(case: NetworkCase) -> str:
    """Write the case back in the supported MATPOWER subset (6-decimal fixed point)."""
    out = [f"function mpc = {case.name}", "mpc.version = '2';", f"mpc.baseMVA = {_fmt(case.base_mva)};", "",
           "mpc.bus = ["]
    for b in case.buses:
        vals = [b.id, _KIND_TO_CODE[b.kind], b.p_load, b.q_load, b.shunt_g * case.base_mva,
                b.shunt_b * case.base_mva, 1, b.v_mag, math.degrees(b.v_ang), 0, 1, 1.1, 0.9]
        out.append("\t" + "\t".join(_fmt(v) for v in vals) + ";")
    out += ["];", "", "mpc.gen = ["]
    for g in case.generators:
        vals = [g.bus, g.p_gen, g.q_gen, g.q_max, g.q_min, g.v_setpoint, case.base_mva, 1, 0, 0]
        out.append("\t" + "\t".join(_fmt(v) for v in vals) + ";")
    out += ["];", "", "mpc.branch = ["]
    for br in case.branches:
        vals = [br.from_bus, br.to_bus, br.r, br.x, br.b_charging, 0, 0, 0, br.tap_ratio,
                math.degrees(br.phase_shift), int(br.in_service)]
        out.append("\t" + "\t".join(_fmt(v) for v in vals) + ";")
    out += ["];", ""]
    return "\n".join(out)


# ---------------------------------------------------------------------------
# admittance and topology

def branch_admittances(br: Branch) -> tuple[complex, complex, complex, complex]:
    """Pi-model two-port entries (Yff, Yft, Ytf, Ytt) of one branch."""
    ys = 1.0 / complex(br.r, br.x)
    tap = br.tap_ratio * np.exp(1j * br.phase_shift)
    ytt = ys + 0.5j * br.b_charging
    yff = ytt / (tap * np.conj(tap))
    yft = -ys / np.conj(tap)
    ytf = -ys / tap
    return complex(yff), complex(yft), complex(ytf), complex(ytt)


def build_admittance(case: NetworkCase, outage: int | None = None) -> np.ndarray:
    """Dense complex bus admittance matrix in per unit.

    ``outage`` removes that branch entirely, series element and charging both.
    """
    if outage is not None:
        _check_branch_index(case, outage)
        if not case.branches[outage].in_service:
            raise ValueError(f"branch {case.branch_labels[outage]} is already out of service")
    n = case.n_bus
    Y = np.zeros((n, n), dtype=complex)
    idx = case.bus_index
    for k, br in enumerate(case.branches):
        if not br.in_service or k == outage:
            continue
        f, t = idx[br.from_bus], idx[br.to_bus]
        yff, yft, ytf, ytt = branch_admittances(br)
        Y[f, f] += yff
        Y[f, t] += yft
        Y[t, f] += ytf
        Y[t, t] += ytt
    Y[np.diag_indices(n)] += [complex(b.shunt_g, b.shunt_b) for b in case.buses]
    return Y


@dataclass(frozen=True)
class ConnectivityReport:
    connected: bool
    components: tuple[tuple[int, ...], ...]  # external ids, slack component first
    islands: tuple[tuple[int, ...], ...]  # components without the slack bus


def check_connectivity(case: NetworkCase, outage: int | None = None) -> ConnectivityReport:
    if outage is not None:
        _check_branch_index(case, outage)
    idx = case.bus_index
    live = [(idx[br.from_bus], idx[br.to_bus]) for k, br in enumerate(case.branches)
            if br.in_service and k != outage]
    n = case.n_bus
    rows = [f for f, _ in live]
    cols = [t for _, t in live]
    graph = coo_matrix((np.ones(len(live)), (rows, cols)), shape=(n, n))
    n_comp, labels = connected_components(graph, directed=False)
    slack_label = labels[case.slack]
    order = [slack_label] + [c for c in dict.fromkeys(labels) if c != slack_label]
    comps = tuple(tuple(int(case.bus_ids[i]) for i in range(n) if labels[i] == c) for c in order)
    return ConnectivityReport(connected=n_comp == 1, components=comps, islands=comps[1:])


def scale_load(case: NetworkCase, factor: float) -> NetworkCase:
    """Multiply every bus load (P and Q) by ``factor``; generation is untouched."""
    if not factor > 0:
        raise ValueError(f"load scale factor must be positive, got {factor}")
    p = np.array([b.p_load for b in case.buses]) * factor
    q = np.array([b.q_load for b in case.buses]) * factor
    return case.with_bus_loads(p, q)


def scale_generation_dispatch(case: NetworkCase, factor: float) -> NetworkCase:
    """Multiply every generator's scheduled active output by ``factor``."""
    if not factor > 0:
        raise ValueError(f"generation scale factor must be positive, got {factor}")
    gens = tuple(replace(g, p_gen=g.p_gen * factor) for g in case.generators)
    return replace(case, generators=gens)
