"""NST-PAC: proximal atomic coordination with Nesterov extrapolation.

Every round each atom solves a strongly convex QP in its local vector ``a_j``
(owned entries then copies), extrapolates the primal, takes an ascent step on
its equality duals ``mu_j``, exchanges ``a_hat`` with its neighbors, takes an
ascent step on the coordination duals ``nu`` it stores and exchanges
``nu_hat``. Coordination rows pair one owned entry with one copy; the dual of
a row lives at the atom holding the copy and is mirrored to the owner.
"""

from __future__ import annotations

import csv
import io
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import piqp
import scipy.sparse as sp

from .decomposition import CopyIncidence, copy_incidence
from .errors import DivergenceError, StaleMessageError, ValidationError

HAT_A = "primal-hat"
HAT_NU = "nu-hat"
DIVERGENCE_WINDOW = 100


# --------------------------------------------------------------------------- gains

DEFAULT_FLOOR = 0.05
DEFAULT_CAP = 0.5


def nesterov_schedule(tau, floor, cap=1.0):
    """Extrapolation coefficient ``max(floor, min(cap, tau / (tau + 3)))``."""
    return max(floor, min(cap, tau / (tau + 3.0)))


@dataclass
class GainSchedule:
    """Per-atom gains and extrapolation schedules.

    ``rho`` and ``gamma`` are arrays over atoms. ``alpha``, ``phi`` and
    ``theta`` are callables ``(j, tau) -> float`` (or ``None`` for the default
    Nesterov sequence ``tau / (tau + 3)`` capped at ``cap``); the returned value
    is clipped from below at the matching floor. ``plain=True`` switches all
    three coefficients to zero, which is the unaccelerated baseline and
    bypasses the floors.
    """

    rho: np.ndarray
    gamma: np.ndarray
    alpha_min: np.ndarray
    phi_min: np.ndarray
    theta_min: np.ndarray
    alpha: object = None
    phi: object = None
    theta: object = None
    plain: bool = False
    cap: float = DEFAULT_CAP

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float)
        self.gamma = np.asarray(self.gamma, dtype=float)
        k = len(self.rho)
        for name in ("alpha_min", "phi_min", "theta_min"):
            setattr(self, name, np.broadcast_to(
                np.asarray(getattr(self, name), dtype=float), (k,)).copy())
        if len(self.gamma) != k:
            raise ValidationError("rho and gamma must have one entry per atom")
        if np.any(~np.isfinite(self.rho)) or np.any(self.rho <= 0):
            raise ValidationError("rho must be positive")
        if np.any(~np.isfinite(self.gamma)) or np.any(self.gamma <= 0):
            raise ValidationError("gamma must be positive")
        if not 0 < self.cap <= 1:
            raise ValidationError("cap must lie in (0, 1]")
        if not self.plain:
            for name in ("alpha_min", "phi_min", "theta_min"):
                v = getattr(self, name)
                if np.any(~(v > 0)) or np.any(v >= 1):
                    raise ValidationError(f"{name} must lie in (0, 1)")

    @classmethod
    def default(cls, atoms, rho=1.0, gamma=None, floor=DEFAULT_FLOOR, plain=False,
                cap=DEFAULT_CAP):
        """``rho_j = rho`` and ``gamma_j = 1 / (1 + deg(j))`` unless given."""
        k = len(atoms)
        rho = np.broadcast_to(np.asarray(rho, dtype=float), (k,)).copy()
        if gamma is None:
            gamma = np.array([1.0 / (1 + len(a.neighbors)) for a in atoms])
        gamma = np.broadcast_to(np.asarray(gamma, dtype=float), (k,)).copy()
        return cls(rho, gamma, floor, floor, floor, plain=plain, cap=cap)

    def _coef(self, fn, floors, j, tau):
        if self.plain:
            return 0.0
        if fn is None:
            return nesterov_schedule(tau, floors[j], self.cap)
        return max(floors[j], float(fn(j, tau)))

    def alpha_at(self, j, tau):
        return self._coef(self.alpha, self.alpha_min, j, tau)

    def phi_at(self, j, tau):
        return self._coef(self.phi, self.phi_min, j, tau)

    def theta_at(self, j, tau):
        return self._coef(self.theta, self.theta_min, j, tau)


# --------------------------------------------------------------------------- state and messages

@dataclass
class AtomState:
    a: np.ndarray
    a_prev: np.ndarray
    a_hat: np.ndarray
    mu: np.ndarray
    mu_hat: np.ndarray
    nu: np.ndarray           # duals of the coordination rows whose copy this atom holds
    nu_hat: np.ndarray
    tau: int = 0


@dataclass(frozen=True)
class Message:
    sender: int
    receiver: int
    kind: str
    rows: np.ndarray          # coordination rows covered
    values: np.ndarray
    tau: int


class Transport:
    """In-process mailbox with neighbor-locality and round-tag checks."""

    def __init__(self, neighbors):
        self.neighbors = {j: frozenset(n) for j, n in neighbors.items()}
        self._box = {}
        self._lock = threading.Lock()

    def send(self, msg: Message):
        if msg.receiver not in self.neighbors[msg.sender]:
            raise ValidationError(f"atom {msg.sender} sent to non-neighbor {msg.receiver}")
        with self._lock:
            self._box[(msg.receiver, msg.sender, msg.kind)] = msg

    def receive(self, receiver, sender, kind, tau):
        if sender not in self.neighbors[receiver]:
            raise ValidationError(f"atom {receiver} read from non-neighbor {sender}")
        with self._lock:
            msg = self._box.get((receiver, sender, kind))
        if msg is None or msg.tau != tau:
            got = None if msg is None else msg.tau
            raise StaleMessageError(
                f"atom {receiver}: {kind} from {sender} tagged {got}, expected {tau}")
        return msg


# --------------------------------------------------------------------------- elementary steps

def extrapolate(current, previous, coefficient):
    """``current + coefficient * (current - previous)``."""
    current = np.asarray(current, dtype=float)
    previous = np.asarray(previous, dtype=float)
    if current.shape != previous.shape:
        raise ValidationError("extrapolate: shape mismatch")
    return current + coefficient * (current - previous)


def dual_step(hat, rho_gamma, residual):
    """Ascent step ``hat + rho_gamma * residual`` on a dual vector."""
    return np.asarray(hat, dtype=float) + rho_gamma * np.asarray(residual, dtype=float)


def atomic_lagrangian(atom, a_j, mu_j, nu, ci: CopyIncidence | None = None):
    """``f_j(a_j) + mu_j^T (G_j a_j - b_j) + nu^T B^j a_j``.

    ``nu`` is the full vector of coordination duals (one per row of ``B``);
    it may be empty when the atom has no coordination rows.
    """
    a_j = np.asarray(a_j, dtype=float)
    mu_j = np.asarray(mu_j, dtype=float)
    if a_j.shape != (atom.n,):
        raise ValidationError(f"a_j has shape {a_j.shape}, expected ({atom.n},)")
    if mu_j.shape != (len(atom.b),):
        raise ValidationError(f"mu_j has shape {mu_j.shape}, expected ({len(atom.b)},)")
    val = atom.objective(a_j) + float(mu_j @ (atom.G @ a_j - atom.b))
    nu = np.asarray(nu, dtype=float)
    if ci is not None and ci.n_rows:
        if nu.shape != (ci.n_rows,):
            raise ValidationError(f"nu has shape {nu.shape}, expected ({ci.n_rows},)")
        val += float(nu @ (ci.B_cols(atom.id) @ a_j))
    elif nu.size and np.any(nu != 0):
        raise ValidationError("nu given without a copy incidence")
    return val


class AtomQP:
    """Constant-Hessian subproblem of one atom.

    ``min 1/2 a^T P a + q^T a  s.t.  H a <= d, lb <= a_owned <= ub`` with
    ``P = rho*gamma*(G^T G + diag(coord count)) + I/rho``. Only ``q`` changes
    between rounds. Variables with ``lb == ub`` are eliminated; the rest goes to
    an interior-point QP solver (PIQP) set up once per atom.
    """

    def __init__(self, atom, rho, gamma, loc_rows, eps=1e-9, max_iter=250):
        self.atom = atom
        self.rho, self.gamma = float(rho), float(gamma)
        rg = self.rho * self.gamma
        n = atom.n
        count = np.bincount(loc_rows, minlength=n).astype(float) if len(loc_rows) else np.zeros(n)
        G = atom.G
        P = (rg * (G.T @ G) + sp.diags(rg * count + 1.0 / self.rho)).tocsc()
        lb = np.concatenate([atom.lb, np.full(len(atom.copies), -np.inf)])
        ub = np.concatenate([atom.ub, np.full(len(atom.copies), np.inf)])
        fixed = lb == ub
        self.free = np.flatnonzero(~fixed)
        self.fixed = np.flatnonzero(fixed)
        self.x_fixed = lb[fixed]
        self.lb, self.ub = lb, ub
        self.P = P
        Pff = P[self.free][:, self.free]
        self.P_coupling = P[self.free][:, self.fixed]
        H = atom.H.tocsc()
        self.H = H
        d_eff = atom.d - H[:, self.fixed] @ self.x_fixed
        Hf = H[:, self.free].tocsr()
        # rows that no longer involve a free variable hold trivially or not at all
        live = np.diff(Hf.indptr) > 0
        if np.any(d_eff[~live] < -1e-9):
            raise ValidationError(f"atom {atom.id}: fixed variables violate a local inequality")
        Hf = Hf[live].tocsc()
        self.eps = eps
        self.solver = piqp.SparseSolver()
        st = self.solver.settings
        st.verbose = False
        st.eps_abs = eps
        st.eps_rel = 0.0
        st.max_iter = max_iter
        nf = len(self.free)
        self.solver.setup(sp.triu(Pff, format="csc"), np.zeros(nf), None, None,
                          Hf if Hf.shape[0] else None,
                          np.full(Hf.shape[0], -np.inf) if Hf.shape[0] else None,
                          d_eff[live] if Hf.shape[0] else None,
                          lb[self.free], ub[self.free])
        self.last_status = None
        self.last_residual = 0.0

    def solve(self, q, warm=None):
        """Minimizer for linear term ``q``; ``warm`` is accepted for interface
        compatibility and ignored by the interior-point backend."""
        a = np.empty(self.atom.n)
        a[self.fixed] = self.x_fixed
        if len(self.free) == 0:
            self.last_status = "fixed"
            return a
        qf = q[self.free] + self.P_coupling @ self.x_fixed
        self.solver.update(c=qf)
        status = self.solver.solve()
        self.last_status = status
        info = self.solver.result.info
        x = np.array(self.solver.result.x)
        self.last_residual = max(float(info.primal_res), float(info.dual_res))
        if status != piqp.PIQP_SOLVED and not (
                np.all(np.isfinite(x)) and self.last_residual <= 1e3 * self.eps):
            raise DivergenceError(f"atom {self.atom.id}: subproblem not solved ({status})")
        a[self.free] = np.clip(x, self.lb[self.free], self.ub[self.free])
        return a


# --------------------------------------------------------------------------- the solver

@dataclass
class StopRule:
    max_iter: int = 5000
    eps_primal: float = 1e-4
    eps_coord: float = 1e-4
    min_iter: int = 1


@dataclass
class PACResult:
    x: np.ndarray
    objective: float
    rounds: int
    converged: bool
    eq_residual: float
    coord_residual: float
    trace: list
    atom_time: np.ndarray
    a: list = field(default_factory=list)
    reason: str = ""

    @property
    def mean_atom_time(self):
        return float(np.mean(self.atom_time)) if len(self.atom_time) else 0.0

    def trace_csv(self):
        buf = io.StringIO()
        write_trace(self.trace, buf)
        return buf.getvalue()


def write_trace(trace, f):
    w = csv.writer(f, lineterminator="\n")
    w.writerow(["round", "max_eq_residual", "max_coord_residual", "objective"])
    for r in trace:
        w.writerow([r[0], repr(float(r[1])), repr(float(r[2])), repr(float(r[3]))])


class NSTPAC:
    """NST-PAC over a decomposition.

    Parameters
    ----------
    atoms, profile
        Output of :func:`duckpac.decomposition.decompose`.
    gains
        :class:`GainSchedule`; defaults to :meth:`GainSchedule.default`.
    eps_inner
        Subproblem tolerance.
    workers
        Thread count; results do not depend on it.
    scaling
        :class:`duckpac.scaling.Equilibration` of the problem the atoms came
        from. Residuals are then reported in original units.
    """

    def __init__(self, atoms, profile, gains=None, eps_inner=1e-9, workers=1, x0=None,
                 scaling=None):
        self.atoms = atoms
        self.profile = profile
        self.ci = copy_incidence(profile)
        self.gains = gains or GainSchedule.default(atoms)
        if len(self.gains.rho) != len(atoms):
            raise ValidationError("gain schedule size does not match atom count")
        self.workers = max(1, int(workers))
        ci = self.ci
        self.in_rows = [ci.incoming(j) for j in range(len(atoms))]
        self.out_rows = [ci.outgoing(j) for j in range(len(atoms))]
        self.touch = [np.concatenate([self.out_rows[j], self.in_rows[j]]) for j in range(len(atoms))]
        # local index of each touching row and its sign in B^j
        self.touch_loc = [np.concatenate([ci.owner_local[self.out_rows[j]],
                                          ci.copy_local[self.in_rows[j]]]) for j in range(len(atoms))]
        self.touch_sign = [np.concatenate([-np.ones(len(self.out_rows[j])),
                                           np.ones(len(self.in_rows[j]))]) for j in range(len(atoms))]
        self.touch_other = [np.concatenate([ci.copy_atom[self.out_rows[j]],
                                            ci.owner_atom[self.in_rows[j]]]) for j in range(len(atoms))]
        self.touch_other_loc = [np.concatenate([ci.copy_local[self.out_rows[j]],
                                                ci.owner_local[self.in_rows[j]]]) for j in range(len(atoms))]
        self.transport = Transport({a.id: a.neighbors for a in atoms})
        self.qps = [AtomQP(a, self.gains.rho[a.id], self.gains.gamma[a.id], self.touch_loc[a.id],
                           eps=eps_inner) for a in atoms]
        n = len(profile.owner)
        self._lb = np.full(n, -np.inf)
        self._ub = np.full(n, np.inf)
        for a in atoms:
            self._lb[a.owned] = a.lb
            self._ub[a.owned] = a.ub
        if x0 is not None and scaling is not None:
            x0 = scaling.to_scaled(x0)
        self.states = [self._init_state(a, x0) for a in atoms]
        # latest values received from neighbors, per touching row
        self.other_hat = [self._initial_other(j) for j in range(len(atoms))]
        self.nu_mirror = [np.zeros(len(self.out_rows[j])) for j in range(len(atoms))]
        self.atom_time = np.zeros(len(atoms))
        self.scaling = scaling
        if scaling is not None:
            self._eq_scale = [scaling.eq_row[a.eq_rows] for a in atoms]
            owner_col = np.array([atoms[i].owned[l] for i, l in zip(ci.owner_atom, ci.owner_local)],
                                 dtype=int)
            self._coord_scale = scaling.col[owner_col] if len(owner_col) else np.zeros(0)

    # ---- initialization
    def _init_state(self, atom, x0):
        if x0 is not None:
            a = np.asarray(x0, dtype=float)[atom.columns].copy()
        else:
            a = _midpoint(self._lb[atom.columns], self._ub[atom.columns])
        mu = np.zeros(len(atom.b))
        nu = np.zeros(len(self.ci.incoming(atom.id)))
        return AtomState(a, a.copy(), a.copy(), mu, mu.copy(), nu, nu.copy(), 0)

    def _initial_other(self, j):
        vals = np.empty(len(self.touch[j]))
        for k, (i, loc) in enumerate(zip(self.touch_other[j], self.touch_other_loc[j])):
            vals[k] = self.states[i].a_hat[loc] if i < len(self.states) else 0.0
        return vals

    # ---- per-atom phases
    def _linear_term(self, j):
        atom, st = self.atoms[j], self.states[j]
        rho, gamma = self.gains.rho[j], self.gains.gamma[j]
        rg = rho * gamma
        q = atom.c + atom.G.T @ (st.mu_hat - rg * atom.b) - st.a / rho
        nu_touch = np.concatenate([self.nu_mirror[j], st.nu_hat])
        np.add.at(q, self.touch_loc[j], self.touch_sign[j] * nu_touch - rg * self.other_hat[j])
        return q

    def _phase_primal(self, j):
        t0 = time.perf_counter()
        st = self.states[j]
        tau = st.tau
        q = self._linear_term(j)
        a_new = self.qps[j].solve(q, warm=st.a)
        coef = self.gains.alpha_at(j, tau + 1)
        st.a_prev = st.a
        st.a = a_new
        st.a_hat = extrapolate(a_new, st.a_prev, coef)
        atom = self.atoms[j]
        rg = self.gains.rho[j] * self.gains.gamma[j]
        mu_new = dual_step(st.mu_hat, rg, atom.G @ st.a_hat - atom.b)
        st.mu_hat = extrapolate(mu_new, st.mu, self.gains.phi_at(j, tau + 1))
        st.mu = mu_new
        for nb in atom.neighbors:
            rows = self.touch[j]
            mask = self.touch_other[j] == nb
            self.transport.send(Message(j, nb, HAT_A, rows[mask],
                                        st.a_hat[self.touch_loc[j][mask]], tau + 1))
        self.atom_time[j] += time.perf_counter() - t0

    def _phase_coord(self, j):
        t0 = time.perf_counter()
        st = self.states[j]
        tau = st.tau
        atom = self.atoms[j]
        other = self.other_hat[j]
        for nb in atom.neighbors:
            msg = self.transport.receive(j, nb, HAT_A, tau + 1)
            mask = self.touch_other[j] == nb
            if not np.array_equal(np.sort(msg.rows), np.sort(self.touch[j][mask])):
                raise StaleMessageError(f"atom {j}: primal message from {nb} covers wrong rows")
            order = np.argsort(msg.rows)
            pos = np.searchsorted(msg.rows[order], self.touch[j][mask])
            other[mask] = msg.values[order][pos]
        n_out = len(self.out_rows[j])
        rg = self.gains.rho[j] * self.gains.gamma[j]
        if len(st.nu):
            own_val = st.a_hat[self.touch_loc[j][n_out:]]
            nu_new = dual_step(st.nu_hat, rg, own_val - other[n_out:])
            st.nu_hat = extrapolate(nu_new, st.nu, self.gains.theta_at(j, tau + 1))
            st.nu = nu_new
        for nb in atom.neighbors:
            mask = self.touch_other[j][n_out:] == nb
            self.transport.send(Message(j, nb, HAT_NU, self.in_rows[j][mask],
                                        st.nu_hat[mask], tau + 1))
        self.atom_time[j] += time.perf_counter() - t0

    def _phase_mirror(self, j):
        st = self.states[j]
        n_out = len(self.out_rows[j])
        for nb in self.atoms[j].neighbors:
            msg = self.transport.receive(j, nb, HAT_NU, st.tau + 1)
            mask = self.touch_other[j][:n_out] == nb
            if not np.array_equal(msg.rows, self.out_rows[j][mask]):
                raise StaleMessageError(f"atom {j}: dual message from {nb} covers wrong rows")
            self.nu_mirror[j][mask] = msg.values
        st.tau += 1

    # ---- monitoring
    def residuals(self):
        eq = 0.0
        for j, (atom, st) in enumerate(zip(self.atoms, self.states)):
            if len(atom.b):
                r = atom.G @ st.a - atom.b
                if self.scaling is not None:
                    r = r * self._eq_scale[j]
                eq = max(eq, float(np.max(np.abs(r))))
        a_stack = np.concatenate([st.a for st in self.states])
        r = self.ci.residual(a_stack)
        if self.scaling is not None and len(r):
            r = r * self._coord_scale
        coord = float(np.max(np.abs(r))) if len(r) else 0.0
        return eq, coord

    def objective(self):
        return float(sum(atom.objective(st.a) for atom, st in zip(self.atoms, self.states)))

    def assemble(self):
        """Global iterate, mapped back to original units when scaled."""
        x = self.profile.assemble(np.concatenate([st.a for st in self.states]))
        return x if self.scaling is None else self.scaling.to_original(x)

    def run(self, stop: StopRule | None = None, trace_every=1, callback=None):
        stop = stop or StopRule()
        k = len(self.atoms)
        trace = []
        history = []
        pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None

        def phase(fn):
            if pool is None:
                for j in range(k):
                    fn(j)
            else:
                # barrier: all atoms finish the phase before the next starts
                list(pool.map(fn, range(k)))

        converged = False
        reason = "max_iter"
        rounds = 0
        try:
            for it in range(1, stop.max_iter + 1):
                phase(self._phase_primal)
                phase(self._phase_coord)
                phase(self._phase_mirror)
                rounds = it
                eq, coord = self.residuals()
                obj = self.objective()
                if not (np.isfinite(eq) and np.isfinite(coord) and np.isfinite(obj)):
                    raise DivergenceError(f"non-finite iterate at round {it}")
                if it % trace_every == 0 or it == 1:
                    trace.append((it, eq, coord, obj))
                if callback is not None:
                    callback(it, eq, coord, obj)
                res = max(eq / stop.eps_primal, coord / stop.eps_coord)
                history.append(res)
                # growth beyond the start-up transient by >10x over 100 rounds
                if it > 2 * DIVERGENCE_WINDOW and res > 1.0 \
                        and res > 10.0 * history[it - 1 - DIVERGENCE_WINDOW] \
                        and res > max(history[:DIVERGENCE_WINDOW]):
                    raise DivergenceError(
                        f"residual grew more than 10x over 100 rounds (round {it})")
                if it >= stop.min_iter and eq <= stop.eps_primal and coord <= stop.eps_coord:
                    converged = True
                    reason = "converged"
                    break
        finally:
            if pool is not None:
                pool.shutdown()
        if not trace or trace[-1][0] != rounds:
            trace.append((rounds, eq, coord, obj))
        x = self.assemble()
        return PACResult(x, float(obj), rounds, converged, eq, coord, trace,
                         self.atom_time.copy(), [st.a.copy() for st in self.states], reason)


def _midpoint(lb, ub):
    lo = np.where(np.isfinite(lb), lb, np.nan)
    hi = np.where(np.isfinite(ub), ub, np.nan)
    mid = np.where(np.isfinite(lo) & np.isfinite(hi), 0.5 * (lb + ub),
                   np.where(np.isfinite(lo), lb, np.where(np.isfinite(hi), ub, 0.0)))
    return np.nan_to_num(mid)


def run(atoms, profile, gains=None, stop=None, workers=1, eps_inner=1e-9, x0=None,
        scaling=None):
    """Build an :class:`NSTPAC` and run it; see :meth:`NSTPAC.run`."""
    return NSTPAC(atoms, profile, gains, eps_inner, workers, x0, scaling).run(stop)


def solve_distributed(prob, strategy="per-bus", clusters=(), gains=None, stop=None,
                      workers=1, eps_inner=1e-9, scale=True, rho=1.0, cap=DEFAULT_CAP,
                      floor=DEFAULT_FLOOR, plain=False):
    """Equilibrate, decompose and run NST-PAC on a canonical problem.

    Returns the :class:`PACResult` with ``x`` in original units. ``gains``
    overrides ``rho``/``cap``/``floor``/``plain``.
    """
    from .decomposition import decompose
    from .scaling import equilibrate

    work, eqb = equilibrate(prob) if scale else (prob, None)
    atoms, profile = decompose(work, strategy, clusters)
    if gains is None:
        gains = GainSchedule.default(atoms, rho=rho, floor=floor, plain=plain, cap=cap)
    return NSTPAC(atoms, profile, gains, eps_inner, workers, scaling=eqb).run(stop)
