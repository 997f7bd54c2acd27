"""Hourly load, PV and demand-response time series for a feeder."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataIOError, NetworkParseError, ValidationError
from .grid import Network

HOURS = np.arange(24)


def _normalise(shape):
    shape = np.asarray(shape, dtype=float)
    return shape / shape.mean()


def residential_shape():
    """Mean-one residential day: overnight trough, morning bump, evening peak."""
    base = np.array([0.55, 0.50, 0.47, 0.46, 0.47, 0.55, 0.72, 0.85, 0.82, 0.74,
                     0.70, 0.69, 0.70, 0.72, 0.78, 0.90, 1.08, 1.30, 1.45, 1.48,
                     1.38, 1.18, 0.92, 0.70])
    return _normalise(base)


def commercial_shape():
    """Mean-one commercial day: business-hours plateau peaking mid afternoon."""
    base = np.array([0.45, 0.43, 0.42, 0.42, 0.44, 0.52, 0.70, 0.95, 1.15, 1.28,
                     1.35, 1.40, 1.42, 1.44, 1.45, 1.42, 1.35, 1.22, 1.05, 0.90,
                     0.75, 0.62, 0.52, 0.47])
    return _normalise(base)


def solar_shape(sunrise=6.0, sunset=19.5, peak=0.85):
    """Clear-sky per-unit PV output, bell shaped around solar noon."""
    t = HOURS + 0.5
    x = (t - sunrise) / (sunset - sunrise)
    out = np.where((x > 0) & (x < 1), np.sin(np.pi * np.clip(x, 0, 1)) ** 1.5, 0.0)
    return peak * out


def dr_shape():
    """Baseline fraction of load available for curtailment (residential cooling)."""
    return np.array([0.02, 0.02, 0.02, 0.02, 0.02, 0.02, 0.03, 0.04, 0.05, 0.06,
                     0.08, 0.10, 0.12, 0.14, 0.16, 0.18, 0.20, 0.22, 0.22, 0.20,
                     0.16, 0.10, 0.05, 0.03])


@dataclass
class ProfileParams:
    residential: np.ndarray = field(default_factory=residential_shape)
    commercial: np.ndarray = field(default_factory=commercial_shape)
    solar: np.ndarray = field(default_factory=solar_shape)
    dr: np.ndarray = field(default_factory=dr_shape)
    pv_penetration: float = 0.38
    time_shift_var: float = 0.075
    magnitude_var: float = 0.1
    load_pf: float = 0.95


@dataclass
class Profiles:
    """Hourly inputs for one simulated day.

    All dictionaries are keyed by ``(bus, phase)`` except ``alpha_dr`` which is
    keyed by bus. Loads are consumption-positive kW / kVAr.
    """

    horizon: int
    load_p: dict
    load_q: dict
    pv_capacity: dict = field(default_factory=dict)
    pv_avail: dict = field(default_factory=dict)
    alpha_dr: dict = field(default_factory=dict)

    def total_load(self) -> np.ndarray:
        out = np.zeros(self.horizon)
        for v in self.load_p.values():
            out += v
        return out

    def total_pv(self) -> np.ndarray:
        out = np.zeros(self.horizon)
        for v in self.pv_avail.values():
            out += v
        return out

    def penetration(self) -> float:
        return sum(self.pv_capacity.values()) / self.total_load().mean()

    def without_flexibility(self) -> "Profiles":
        return Profiles(self.horizon, self.load_p, self.load_q, self.pv_capacity,
                        self.pv_avail, {b: np.zeros(self.horizon) for b in self.alpha_dr})


def _shift(profile, hours):
    """Circularly delay ``profile`` by a fractional number of hours."""
    n = len(profile)
    t = np.arange(n)
    ext_t = np.concatenate([t - n, t, t + n])
    ext_v = np.tile(profile, 3)
    return np.interp(t - hours, ext_t, ext_v)


def profiles_from_network(net: Network, params: ProfileParams | None = None) -> Profiles:
    """Use the hourly load profiles stored in the network file verbatim.

    PV output is nameplate times the solar shape; demand-response fractions
    come from the flexible-load devices (or the baseline shape).
    """
    params = params or ProfileParams()
    T = net.horizon
    load_p, load_q, cap, avail, alpha = {}, {}, {}, {}, {}
    for b in net.buses:
        prof = net.load_profile(b)
        for ph in b.phases:
            if prof is not None and ph in prof.p_kw:
                load_p[(b.id, ph)] = np.asarray(prof.p_kw[ph], dtype=float)
                load_q[(b.id, ph)] = np.asarray(prof.q(ph), dtype=float)
            else:
                load_p[(b.id, ph)] = np.zeros(T)
                load_q[(b.id, ph)] = np.zeros(T)
        if b.pv is not None:
            for ph, c in b.pv.capacity_kw.items():
                cap[(b.id, ph)] = float(c)
                avail[(b.id, ph)] = float(c) * _fit(params.solar, T)
        if b.flex is not None:
            a = b.flex.alpha_dr if b.flex.alpha_dr is not None else _fit(params.dr, T)
            alpha[b.id] = np.asarray(a, dtype=float)
    return Profiles(T, load_p, load_q, cap, avail, alpha)


def _fit(shape, T):
    shape = np.asarray(shape, dtype=float)
    if len(shape) == T:
        return shape.copy()
    return np.interp(np.linspace(0, len(shape) - 1, T), np.arange(len(shape)), shape)


def generate_profiles(seed: int, net: Network, params: ProfileParams | None = None) -> Profiles:
    """Synthetic duck-curve day.

    Each bus's load is its profile's daily mean per phase times the residential
    or commercial shape. Demand-response fractions are the baseline shape
    delayed by a Gaussian number of hours (variance ``time_shift_var``) and
    scaled by ``1 + eps`` with ``eps`` Gaussian (variance ``magnitude_var``).
    PV nameplate is rescaled so that total nameplate over mean total load equals
    ``pv_penetration``.

    The output is a pure function of ``(seed, net, params)``.
    """
    params = params or ProfileParams()
    rng = np.random.default_rng(seed)
    T = net.horizon
    shapes = {"residential": _fit(params.residential, T),
              "commercial": _fit(params.commercial, T)}
    tan_phi = np.tan(np.arccos(params.load_pf))
    load_p, load_q = {}, {}
    for b in net.buses:
        prof = net.load_profile(b)
        shape = shapes.get(b.kind)
        for ph in b.phases:
            if prof is None or shape is None or ph not in prof.p_kw:
                load_p[(b.id, ph)] = np.zeros(T)
            else:
                load_p[(b.id, ph)] = float(np.mean(prof.p_kw[ph])) * shape
            load_q[(b.id, ph)] = load_p[(b.id, ph)] * tan_phi

    alpha = {}
    sd_t = np.sqrt(params.time_shift_var)
    sd_m = np.sqrt(params.magnitude_var)
    for b in net.buses:  # sorted by id, so draws are reproducible
        if b.flex is None:
            continue
        base = b.flex.alpha_dr if b.flex.alpha_dr is not None else _fit(params.dr, T)
        dt = rng.normal(0.0, sd_t) if sd_t > 0 else 0.0
        dm = rng.normal(0.0, sd_m) if sd_m > 0 else 0.0
        a = _shift(np.asarray(base, dtype=float), dt) if dt else np.asarray(base, float).copy()
        alpha[b.id] = np.clip(a * max(0.0, 1.0 + dm), 0.0, 1.0)

    raw_cap = {(b.id, ph): float(c) for b in net.buses if b.pv is not None
               for ph, c in b.pv.capacity_kw.items()}
    cap, avail = {}, {}
    if params.pv_penetration > 0:
        total = sum(raw_cap.values())
        if not raw_cap or total <= 0:
            raise ValidationError("PV penetration target requested but no PV capacity declared")
        mean_load = sum(v for v in load_p.values()).mean()
        scale = params.pv_penetration * mean_load / total
        sol = _fit(params.solar, T)
        for key, c in raw_cap.items():
            cap[key] = c * scale
            avail[key] = cap[key] * sol
    else:
        for key in raw_cap:
            cap[key] = 0.0
            avail[key] = np.zeros(T)
    return Profiles(T, load_p, load_q, cap, avail, alpha)


# ---------------------------------------------------------------------------
# CSV

def write_profiles_csv(profiles: Profiles, path):
    """Write load time series as ``bus,phase,hour,p_kw,q_kvar`` rows."""
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bus", "phase", "hour", "p_kw", "q_kvar"])
            for (bus, ph) in sorted(profiles.load_p):
                p, q = profiles.load_p[(bus, ph)], profiles.load_q[(bus, ph)]
                for t in range(profiles.horizon):
                    w.writerow([bus, ph, t, repr(float(p[t])), repr(float(q[t]))])
    except OSError as exc:
        raise DataIOError(f"{path}: {exc}") from exc


def read_profiles_csv(path, net: Network, params: ProfileParams | None = None) -> Profiles:
    """Load time series from CSV; PV and demand response come from ``net``."""
    path = Path(path)
    T = net.horizon
    base = profiles_from_network(net, params)
    load_p = {k: np.zeros(T) for k in base.load_p}
    load_q = {k: np.zeros(T) for k in base.load_q}
    try:
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            missing = {"bus", "phase", "hour", "p_kw", "q_kvar"} - set(reader.fieldnames or [])
            if missing:
                raise NetworkParseError(f"{path}: missing column(s) {sorted(missing)}")
            for i, row in enumerate(reader, start=2):
                try:
                    key = (int(row["bus"]), row["phase"].strip().lower())
                    t = int(row["hour"])
                    p, q = float(row["p_kw"]), float(row["q_kvar"])
                except (TypeError, ValueError) as exc:
                    raise NetworkParseError(f"{path}:{i}: {exc}") from exc
                if key not in load_p:
                    raise ValidationError(f"{path}:{i}: bus/phase {key} not in network")
                if not 0 <= t < T:
                    raise ValidationError(f"{path}:{i}: hour {t} outside horizon {T}")
                load_p[key][t] = p
                load_q[key][t] = q
    except OSError as exc:
        raise DataIOError(f"{path}: {exc}") from exc
    return Profiles(T, load_p, load_q, base.pv_capacity, base.pv_avail, base.alpha_dr)
