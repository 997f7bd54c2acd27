"""Multi-phase radial feeder model and its structural matrices."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import NetworkParseError, ValidationError

PHASES = ("a", "b", "c")
BUS_KINDS = ("residential", "commercial", "pcc")
DEFAULT_LOAD_PF = 0.95


def parse_phases(value, where="") -> tuple[str, ...]:
    """Normalise ``"ab"``, ``["a", "b"]`` etc. into an ordered phase tuple."""
    if isinstance(value, str):
        items = list(value.lower())
    else:
        items = [str(v).lower() for v in value]
    if not items:
        raise ValidationError(f"{where}: empty phase set")
    bad = [p for p in items if p not in PHASES]
    if bad:
        raise ValidationError(f"{where}: unknown phase(s) {bad}")
    if len(set(items)) != len(items):
        raise ValidationError(f"{where}: repeated phase in {value!r}")
    return tuple(p for p in PHASES if p in items)


@dataclass(frozen=True)
class PV:
    capacity_kw: dict  # phase -> kW nameplate
    pf_min: float = 0.8
    kind: str = field(default="pv", init=False)


@dataclass(frozen=True)
class FlexLoad:
    alpha_dr: np.ndarray | None = None  # fraction of forecast load that can be shed, per hour
    kind: str = field(default="flex", init=False)


@dataclass(frozen=True)
class Battery:
    p_sc_max: float
    p_sd_max: float
    b_max: float
    b_min: float
    b0: float
    eta_c: float = 0.95
    eta_d: float = 0.95
    eta_self: float = 0.0
    kind: str = field(default="battery", init=False)


@dataclass(frozen=True)
class Bus:
    id: int
    phases: tuple[str, ...]
    kind: str = "residential"
    load_ref: str | None = None
    devices: tuple = ()

    def device(self, kind):
        for d in self.devices:
            if d.kind == kind:
                return d
        return None

    @property
    def pv(self) -> PV | None:
        return self.device("pv")

    @property
    def flex(self) -> FlexLoad | None:
        return self.device("flex")

    @property
    def battery(self) -> Battery | None:
        return self.device("battery")


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    phases: tuple[str, ...]
    z_ohm: np.ndarray  # complex, |phases| x |phases|


@dataclass(frozen=True)
class LoadProfile:
    id: str
    p_kw: dict  # phase -> array of length T, consumption positive
    pf: float = DEFAULT_LOAD_PF
    q_kvar: dict | None = None

    def q(self, phase):
        if self.q_kvar is not None:
            return self.q_kvar[phase]
        return self.p_kw[phase] * np.tan(np.arccos(self.pf))


@dataclass(frozen=True)
class Network:
    """Validated radial feeder.

    Buses are kept sorted by id; lines keep file order. Per-unit conversion
    uses a per-phase power base ``s_base_kva`` and a line-to-neutral voltage
    base ``v_base_kv``.
    """

    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    profiles: dict = field(default_factory=dict)
    horizon: int = 24
    v_base_kv: float = 1.0
    s_base_kva: float = 1000.0
    v_pcc_pu: float = 1.0
    clusters: tuple = ()
    name: str = "network"

    # -- lookup helpers -------------------------------------------------
    def bus(self, bus_id) -> Bus:
        return self._bus_map[bus_id]

    @property
    def _bus_map(self):
        cached = self.__dict__.get("_bus_map_cache")
        if cached is None:
            cached = {b.id: b for b in self.buses}
            object.__setattr__(self, "_bus_map_cache", cached)
        return cached

    @property
    def pcc(self) -> Bus:
        return next(b for b in self.buses if b.kind == "pcc")

    @property
    def z_base(self) -> float:
        return (self.v_base_kv * 1e3) ** 2 / (self.s_base_kva * 1e3)

    def bus_phases(self) -> list[tuple[int, str]]:
        return [(b.id, p) for b in self.buses for p in b.phases]

    def line_phases(self) -> list[tuple[int, str]]:
        return [(k, p) for k, ln in enumerate(self.lines) for p in ln.phases]

    def neighbors(self, bus_id) -> list[int]:
        out = []
        for ln in self.lines:
            if ln.from_bus == bus_id:
                out.append(ln.to_bus)
            elif ln.to_bus == bus_id:
                out.append(ln.from_bus)
        return sorted(out)

    def degree(self, bus_id) -> int:
        return len(self.neighbors(bus_id))

    def tree(self):
        """BFS order from the PCC and the parent of every bus."""
        root = self.pcc.id
        parent = {root: None}
        order = [root]
        queue = deque([root])
        while queue:
            u = queue.popleft()
            for v in self.neighbors(u):
                if v not in parent:
                    parent[v] = u
                    order.append(v)
                    queue.append(v)
        return order, parent

    def downstream(self) -> dict[int, set[int]]:
        """Map each bus to the set of buses in its subtree (itself included)."""
        order, parent = self.tree()
        sub = {b: {b} for b in order}
        for b in reversed(order):
            p = parent[b]
            if p is not None:
                sub[p] |= sub[b]
        return sub

    def line_downstream_bus(self, k) -> int:
        """The endpoint of line ``k`` that lies away from the PCC."""
        _, parent = self.tree()
        ln = self.lines[k]
        return ln.to_bus if parent.get(ln.to_bus) == ln.from_bus else ln.from_bus

    def load_profile(self, bus: Bus) -> LoadProfile | None:
        if bus.load_ref is None:
            return None
        return self.profiles[bus.load_ref]

    def with_battery_b0(self, b0_by_bus: dict) -> "Network":
        """Copy with battery initial SOC overridden (kWh); validated."""
        buses = []
        for b in self.buses:
            bat = b.battery
            if bat is not None and b.id in b0_by_bus:
                new = Battery(bat.p_sc_max, bat.p_sd_max, bat.b_max, bat.b_min,
                              float(b0_by_bus[b.id]), bat.eta_c, bat.eta_d, bat.eta_self)
                _check_battery(new, f"bus {b.id} battery")
                devs = tuple(new if d is bat else d for d in b.devices)
                b = Bus(b.id, b.phases, b.kind, b.load_ref, devs)
            buses.append(b)
        return Network(tuple(buses), self.lines, self.profiles, self.horizon,
                       self.v_base_kv, self.s_base_kva, self.v_pcc_pu,
                       self.clusters, self.name)

    def summary(self) -> dict:
        n_dev = {"pv": 0, "flex": 0, "battery": 0}
        for b in self.buses:
            for d in b.devices:
                n_dev[d.kind] += 1
        return {
            "name": self.name,
            "buses": len(self.buses),
            "lines": len(self.lines),
            "bus_phases": len(self.bus_phases()),
            "line_phases": len(self.line_phases()),
            "horizon": self.horizon,
            "devices": n_dev,
            "clusters": len(self.clusters),
            "pcc": self.pcc.id,
        }


# ---------------------------------------------------------------------------
# validation

def _check_battery(bat: Battery, where: str):
    for name in ("p_sc_max", "p_sd_max", "b_max", "b_min", "b0"):
        if getattr(bat, name) < 0:
            raise ValidationError(f"{where}: {name} must be non-negative")
    if not bat.b_min <= bat.b0 <= bat.b_max:
        raise ValidationError(
            f"{where}: need b_min <= b0 <= b_max, got {bat.b_min}, {bat.b0}, {bat.b_max}")
    if not (0 < bat.eta_c <= 1 and 0 < bat.eta_d <= 1):
        raise ValidationError(f"{where}: efficiencies must lie in (0, 1]")
    if not 0 <= bat.eta_self < 1:
        raise ValidationError(f"{where}: eta_self must lie in [0, 1)")


def validate_network(net: Network) -> Network:
    ids = [b.id for b in net.buses]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise ValidationError(f"duplicate bus id(s) {dup}")
    pccs = [b.id for b in net.buses if b.kind == "pcc"]
    if len(pccs) != 1:
        raise ValidationError(f"exactly one pcc bus required, found {pccs}")
    if net.horizon < 1:
        raise ValidationError("horizon must be positive")
    for b in net.buses:
        if b.kind not in BUS_KINDS:
            raise ValidationError(f"bus {b.id}: unknown kind {b.kind!r}")
        if b.load_ref is not None and b.load_ref not in net.profiles:
            raise ValidationError(f"bus {b.id}: load_ref {b.load_ref!r} has no profile")
        kinds = [d.kind for d in b.devices]
        if len(set(kinds)) != len(kinds):
            raise ValidationError(f"bus {b.id}: at most one device of each kind")
        for d in b.devices:
            where = f"bus {b.id} {d.kind}"
            if d.kind == "pv":
                if not 0.8 <= d.pf_min <= 1.0:
                    raise ValidationError(f"{where}: pf_min must lie in [0.8, 1]")
                for ph, cap in d.capacity_kw.items():
                    if ph not in b.phases:
                        raise ValidationError(f"{where}: phase {ph} not present at bus")
                    if cap < 0:
                        raise ValidationError(f"{where}: negative capacity")
            elif d.kind == "flex":
                if d.alpha_dr is not None:
                    a = np.asarray(d.alpha_dr)
                    if a.shape != (net.horizon,):
                        raise ValidationError(f"{where}: alpha_dr needs {net.horizon} entries")
                    if np.any(a < 0) or np.any(a > 1):
                        raise ValidationError(f"{where}: alpha_dr outside [0, 1]")
            elif d.kind == "battery":
                _check_battery(d, where)
    bus_ph = {b.id: set(b.phases) for b in net.buses}
    for k, ln in enumerate(net.lines):
        where = f"line {k} ({ln.from_bus}->{ln.to_bus})"
        for end in (ln.from_bus, ln.to_bus):
            if end not in bus_ph:
                raise ValidationError(f"{where}: unknown bus {end}")
        if ln.from_bus == ln.to_bus:
            raise ValidationError(f"{where}: self loop")
        missing = [p for p in ln.phases
                   if p not in bus_ph[ln.from_bus] or p not in bus_ph[ln.to_bus]]
        if missing:
            raise ValidationError(f"{where}: phase mismatch, phase(s) {missing} "
                                  f"not present at both endpoints")
        z = ln.z_ohm
        if z.shape != (len(ln.phases), len(ln.phases)):
            raise ValidationError(f"{where}: impedance block must be "
                                  f"{len(ln.phases)}x{len(ln.phases)}")
        if not np.allclose(z, z.T):
            raise ValidationError(f"{where}: impedance block not symmetric")
        if np.any(np.real(np.diag(z)) <= 0):
            raise ValidationError(f"{where}: diagonal resistance must be positive")
    if len(net.lines) != len(net.buses) - 1:
        raise ValidationError(
            f"network not radial: {len(net.lines)} lines for {len(net.buses)} buses")
    order, parent = net.tree()
    if len(order) != len(net.buses):
        cut = sorted(set(ids) - set(order))
        raise ValidationError(f"network not connected: bus(es) {cut} unreachable from pcc")
    for k, ln in enumerate(net.lines):
        child = ln.to_bus if parent.get(ln.to_bus) == ln.from_bus else ln.from_bus
        dead = [p for p in net.bus(child).phases if p not in ln.phases]
        if dead:
            raise ValidationError(f"bus {child}: phase(s) {dead} not energized by its "
                                  f"supply line {k} ({ln.from_bus}->{ln.to_bus})")
    for pid, prof in net.profiles.items():
        for ph, arr in prof.p_kw.items():
            if len(arr) != net.horizon:
                raise ValidationError(
                    f"profile {pid!r} phase {ph}: {len(arr)} entries, expected {net.horizon}")
        if not 0 < prof.pf <= 1:
            raise ValidationError(f"profile {pid!r}: power factor must lie in (0, 1]")
    seen = set()
    for c, members in enumerate(net.clusters):
        for m in members:
            if m not in bus_ph:
                raise ValidationError(f"cluster {c}: unknown bus {m}")
            if m in seen:
                raise ValidationError(f"cluster {c}: bus {m} already in another cluster")
            seen.add(m)
    for b in net.buses:
        prof = net.load_profile(b)
        if prof is not None:
            extra = [p for p in prof.p_kw if p not in b.phases]
            if extra:
                raise ValidationError(f"bus {b.id}: profile has phase(s) {extra} not at bus")
    return net


# ---------------------------------------------------------------------------
# file format

def _complex(v, where):
    if isinstance(v, dict):
        try:
            return complex(float(v["re"]), float(v.get("im", 0.0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise NetworkParseError(f"{where}: bad complex value {v!r}") from exc
    if isinstance(v, (int, float)):
        return complex(v)
    raise NetworkParseError(f"{where}: bad complex value {v!r}")


def _parse_device(d, where):
    kind = d.get("type")
    if kind == "pv":
        cap = d.get("capacity_kw", {})
        if not isinstance(cap, dict):
            raise NetworkParseError(f"{where}: capacity_kw must map phase -> kW")
        return PV({str(k).lower(): float(v) for k, v in cap.items()},
                  float(d.get("pf_min", 0.8)))
    if kind == "flex":
        a = d.get("alpha_dr")
        return FlexLoad(None if a is None else np.asarray(a, dtype=float))
    if kind == "battery":
        try:
            return Battery(float(d["p_sc_max_kw"]), float(d["p_sd_max_kw"]),
                           float(d["b_max_kwh"]), float(d["b_min_kwh"]),
                           float(d["b0_kwh"]), float(d.get("eta_c", 0.95)),
                           float(d.get("eta_d", 0.95)), float(d.get("eta_self", 0.0)))
        except KeyError as exc:
            raise NetworkParseError(f"{where}: battery missing field {exc}") from exc
    raise NetworkParseError(f"{where}: unknown device type {kind!r}")


def network_from_dict(doc: dict) -> Network:
    """Build and validate a :class:`Network` from the parsed JSON document."""
    if not isinstance(doc, dict):
        raise NetworkParseError("top level must be an object")
    try:
        horizon = int(doc.get("horizon", 24))
        devices_by_bus: dict[int, list] = {}
        for i, d in enumerate(doc.get("devices", [])):
            where = f"devices[{i}]"
            if "bus" not in d:
                raise NetworkParseError(f"{where}: missing 'bus'")
            devices_by_bus.setdefault(int(d["bus"]), []).append(_parse_device(d, where))
        buses = []
        for i, b in enumerate(doc["buses"]):
            where = f"buses[{i}]"
            if "id" not in b:
                raise NetworkParseError(f"{where}: missing 'id'")
            bid = int(b["id"])
            buses.append(Bus(bid, parse_phases(b.get("phases", "abc"), f"bus {bid}"),
                             str(b.get("kind", "residential")), b.get("load_ref"),
                             tuple(devices_by_bus.pop(bid, []))))
        if devices_by_bus:
            raise ValidationError(f"devices reference unknown bus(es) {sorted(devices_by_bus)}")
        lines = []
        for i, ln in enumerate(doc["lines"]):
            where = f"lines[{i}]"
            phases = parse_phases(ln.get("phases", "abc"), where)
            z = ln.get("z_ohm")
            if z is None:
                raise NetworkParseError(f"{where}: missing 'z_ohm'")
            if not isinstance(z, list) or any(not isinstance(r, list) for r in z):
                z = [[z]]
            zm = np.array([[_complex(v, where) for v in row] for row in z], dtype=complex)
            lines.append(Line(int(ln["from"]), int(ln["to"]), phases, zm))
        profiles = {}
        for i, p in enumerate(doc.get("profiles", [])):
            where = f"profiles[{i}]"
            pid = str(p["id"])
            if pid in profiles:
                raise ValidationError(f"{where}: duplicate profile id {pid!r}")
            pkw = {str(k).lower(): np.asarray(v, dtype=float) for k, v in p["p_kw"].items()}
            qk = p.get("q_kvar")
            if qk is not None:
                qk = {str(k).lower(): np.asarray(v, dtype=float) for k, v in qk.items()}
            profiles[pid] = LoadProfile(pid, pkw, float(p.get("pf", DEFAULT_LOAD_PF)), qk)
        clusters = tuple(tuple(int(m) for m in c) for c in doc.get("clusters", []))
        base = doc.get("base", {})
        net = Network(
            buses=tuple(sorted(buses, key=lambda b: b.id)),
            lines=tuple(lines),
            profiles=profiles,
            horizon=horizon,
            v_base_kv=float(base.get("v_ln_kv", 1.0)),
            s_base_kva=float(base.get("s_kva_per_phase", 1000.0)),
            v_pcc_pu=float(base.get("v_pcc_pu", 1.0)),
            clusters=clusters,
            name=str(doc.get("name", "network")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise NetworkParseError(f"malformed network document: {exc!r}") from exc
    return validate_network(net)


def load_network(path) -> Network:
    """Read a network JSON file (see README for the schema) and validate it."""
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError as exc:
        raise NetworkParseError(f"{path}: no such file") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetworkParseError(f"{path}: {exc}") from exc
    return network_from_dict(doc)


def bundled_network_path(name="ieee34-like.json") -> Path:
    return Path(__file__).parent / "data" / name


# ---------------------------------------------------------------------------
# structural matrices

def incidence_matrix(net: Network) -> sp.csr_matrix:
    """Phase-expanded line-by-bus incidence matrix.

    One row per (line, phase) in :meth:`Network.line_phases` order, one column
    per (bus, phase) in :meth:`Network.bus_phases` order. Row ``(m, n, phi)``
    carries +1 at ``(m, phi)`` and -1 at ``(n, phi)``.
    """
    col = {bp: i for i, bp in enumerate(net.bus_phases())}
    rows, cols, vals = [], [], []
    r = 0
    for ln in net.lines:
        for ph in ln.phases:
            rows += [r, r]
            cols += [col[(ln.from_bus, ph)], col[(ln.to_bus, ph)]]
            vals += [1.0, -1.0]
            r += 1
    return sp.csr_matrix((vals, (rows, cols)), shape=(r, len(col)))


def impedance_blockmatrix(net: Network, per_unit=False) -> sp.csr_matrix:
    """Block-diagonal line impedance matrix aligned with incidence rows."""
    scale = 1.0 / net.z_base if per_unit else 1.0
    return sp.block_diag([ln.z_ohm * scale for ln in net.lines], format="csr",
                         dtype=complex)
