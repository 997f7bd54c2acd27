"""Split a canonical problem into atoms that own variables and constraints.

Atom ``j`` works on a local vector ``a_j`` holding its owned columns followed
by copies of columns owned elsewhere. Coordination rows force each copy to
equal its owner; stacked over all atoms they form the copy-incidence matrix
``B`` with -1 on the owned entry and +1 on the copy entry of every row.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ValidationError


@dataclass
class Atom:
    id: int
    buses: tuple
    owned: np.ndarray        # global columns owned, ascending
    copies: np.ndarray       # global columns copied, ascending
    eq_rows: np.ndarray      # global equality rows
    ineq_rows: np.ndarray    # global inequality rows
    G: sp.csr_matrix         # eq_rows x local columns
    b: np.ndarray
    H: sp.csr_matrix
    d: np.ndarray
    c: np.ndarray            # local objective (zero on copies)
    lb: np.ndarray           # owned bounds; copies are unbounded locally
    ub: np.ndarray
    copy_owner: np.ndarray   # owning atom of each copy
    neighbors: tuple = ()

    @property
    def columns(self):
        return np.concatenate([self.owned, self.copies])

    @property
    def n(self):
        return len(self.owned) + len(self.copies)

    @property
    def n_owned(self):
        return len(self.owned)

    def objective(self, a):
        return float(self.c @ a)


@dataclass
class DecompositionProfile:
    """Ownership (L), copy (O) and constraint (C) sets per atom."""

    atoms: list
    owner: np.ndarray                 # owning atom per global column
    atom_of_bus: dict
    strategy: str = "per-bus"
    offsets: np.ndarray = field(default=None)  # start of each atom in the stacked vector

    def __post_init__(self):
        if self.offsets is None:
            sizes = [a.n for a in self.atoms]
            self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)

    @property
    def L(self):
        return [a.owned for a in self.atoms]

    @property
    def O(self):
        return [a.copies for a in self.atoms]

    @property
    def C(self):
        return [(a.eq_rows, a.ineq_rows) for a in self.atoms]

    @property
    def size(self):
        return int(self.offsets[-1])

    def lift(self, x):
        """Stacked atomic vector with every copy equal to its owner."""
        return np.concatenate([x[a.columns] for a in self.atoms])

    def assemble(self, a_stack):
        """Global vector from the owners' entries of a stacked atomic vector."""
        x = np.empty(len(self.owner))
        for atom in self.atoms:
            o = self.offsets[atom.id]
            x[atom.owned] = a_stack[o:o + atom.n_owned]
        return x


def _groups(prob, strategy, clusters):
    buses = sorted(set(np.asarray(prob.index.owner_bus).tolist())
                   | set(prob.row_bus_eq.tolist()) | set(prob.row_bus_ineq.tolist()))
    if strategy == "per-bus":
        return [(b,) for b in buses]
    if strategy != "per-cluster":
        raise ValueError(f"unknown strategy {strategy!r}")
    groups, used = [], set()
    for cl in clusters:
        members = tuple(sorted(b for b in cl if b in buses))
        if members:
            groups.append(members)
            used |= set(members)
    groups += [(b,) for b in buses if b not in used]
    return sorted(groups, key=min)


def decompose(prob, strategy="per-bus", clusters=()):
    """Partition ``prob`` into atoms.

    ``per-bus`` gives one atom per bus; ``per-cluster`` merges the buses of each
    cluster into one atom. Columns belong to the atom of their owner bus (line
    currents to the from-end bus) and rows to the atom of their bus. Copies are
    exactly the foreign columns referenced by an atom's rows.

    Returns ``(atoms, profile)``.
    """
    groups = _groups(prob, strategy, clusters)
    atom_of_bus = {b: j for j, g in enumerate(groups) for b in g}
    col_bus = np.asarray(prob.index.owner_bus)
    try:
        owner = np.array([atom_of_bus[b] for b in col_bus], dtype=int)
        eq_atom = np.array([atom_of_bus[b] for b in prob.row_bus_eq], dtype=int)
        in_atom = np.array([atom_of_bus[b] for b in prob.row_bus_ineq], dtype=int)
    except KeyError as exc:
        raise ValidationError(f"row or column attached to unknown bus {exc}") from None
    G = sp.csr_matrix(prob.G)
    H = sp.csr_matrix(prob.H)
    atoms = []
    for j, g in enumerate(groups):
        owned = np.flatnonzero(owner == j)
        eq_rows = np.flatnonzero(eq_atom == j)
        ineq_rows = np.flatnonzero(in_atom == j)
        Gj = G[eq_rows]
        Hj = H[ineq_rows]
        ref = np.union1d(Gj.indices, Hj.indices).astype(int)
        copies = np.setdiff1d(ref, owned)
        cols = np.concatenate([owned, copies])
        Gl = Gj[:, cols].tocsr()
        Hl = Hj[:, cols].tocsr()
        # any nonzero outside the local columns means a row escaped copy resolution
        if Gl.nnz != Gj.nnz or Hl.nnz != Hj.nnz:
            raise ValidationError(f"atom {j}: constraint references unresolved variables")
        c = np.concatenate([prob.c[owned], np.zeros(len(copies))])
        atoms.append(Atom(
            id=j, buses=g, owned=owned, copies=copies, eq_rows=eq_rows, ineq_rows=ineq_rows,
            G=Gl, b=prob.b[eq_rows].copy(), H=Hl, d=prob.d[ineq_rows].copy(), c=c,
            lb=prob.lb[owned].copy(), ub=prob.ub[owned].copy(), copy_owner=owner[copies],
        ))
    nbrs = {j: set() for j in range(len(atoms))}
    for a in atoms:
        for i in np.unique(a.copy_owner):
            nbrs[a.id].add(int(i))
            nbrs[int(i)].add(a.id)
    for a in atoms:
        a.neighbors = tuple(sorted(nbrs[a.id]))
    profile = DecompositionProfile(atoms, owner, atom_of_bus, strategy)
    return atoms, profile


@dataclass
class CopyIncidence:
    """Coordination rows over the stacked atomic vector.

    Row ``r`` pairs ``(owner_atom[r], owner_local[r])`` with
    ``(copy_atom[r], copy_local[r])``; ``B @ a = 0`` iff every copy equals
    its owner.
    """

    B: sp.csr_matrix
    owner_atom: np.ndarray
    owner_local: np.ndarray
    copy_atom: np.ndarray
    copy_local: np.ndarray
    offsets: np.ndarray

    @property
    def n_rows(self):
        return self.B.shape[0]

    def rows_of(self, j):
        """Rows touching atom ``j`` (as owner or copy holder), ascending."""
        return np.flatnonzero((self.owner_atom == j) | (self.copy_atom == j))

    def incoming(self, j):
        """Rows whose copy lives in atom ``j``."""
        return np.flatnonzero(self.copy_atom == j)

    def outgoing(self, j):
        """Rows whose owned entry lives in atom ``j``."""
        return np.flatnonzero(self.owner_atom == j)

    def B_rows(self, j):
        """``B_j``: the rows touching atom ``j``, all columns."""
        return self.B[self.rows_of(j)]

    def B_cols(self, j):
        """``B^j``: every row restricted to atom ``j``'s columns."""
        return self.B[:, self.offsets[j]:self.offsets[j + 1]]

    def residual(self, a_stack):
        return self.B @ a_stack


def copy_incidence(profile: DecompositionProfile) -> CopyIncidence:
    """Build ``B`` (one row per owned/copy pair) and its per-atom views."""
    atoms = profile.atoms
    offsets = profile.offsets
    local_pos = {}
    for a in atoms:
        for i, col in enumerate(a.owned):
            local_pos[int(col)] = (a.id, i)
    oa, ol, ca, cl = [], [], [], []
    for a in atoms:
        for k, col in enumerate(a.copies):
            col = int(col)
            if col not in local_pos:
                raise ValidationError(f"atom {a.id}: orphan copy of column {col}")
            i, pos = local_pos[col]
            if i == a.id:
                raise ValidationError(f"atom {a.id}: copies its own column {col}")
            oa.append(i)
            ol.append(pos)
            ca.append(a.id)
            cl.append(a.n_owned + k)
    m = len(oa)
    oa, ol, ca, cl = (np.asarray(v, dtype=int) for v in (oa, ol, ca, cl))
    rows = np.repeat(np.arange(m), 2)
    cols = np.empty(2 * m, dtype=int)
    cols[0::2] = offsets[oa] + ol
    cols[1::2] = offsets[ca] + cl
    vals = np.tile([-1.0, 1.0], m)
    B = sp.csr_matrix((vals, (rows, cols)), shape=(m, int(offsets[-1])))
    return CopyIncidence(B, oa, ol, ca, cl, offsets)


@dataclass
class DecompositionReport:
    ok: bool
    errors: list
    n_atoms: int
    n_coordination_rows: int
    degree_min: int
    degree_max: int
    degree_mean: float

    def as_dict(self):
        return dict(self.__dict__)


def validate_decomposition(prob, atoms, profile: DecompositionProfile | None = None):
    """Check partition and coverage, rebuild the global matrices from the atoms
    and compare them entry by entry."""
    errors = []
    n = prob.n
    m_eq, m_in = prob.G.shape[0], prob.H.shape[0]
    own_count = np.zeros(n, dtype=int)
    eq_count = np.zeros(m_eq, dtype=int)
    in_count = np.zeros(m_in, dtype=int)
    owner = np.full(n, -1)
    for a in atoms:
        own_count[a.owned] += 1
        owner[a.owned] = a.id
        eq_count[a.eq_rows] += 1
        in_count[a.ineq_rows] += 1
    for col in np.flatnonzero(own_count != 1):
        errors.append(f"column {col} owned {own_count[col]} times")
    for r in np.flatnonzero(eq_count != 1):
        errors.append(f"equality row {r} covered {eq_count[r]} times")
    for r in np.flatnonzero(in_count != 1):
        errors.append(f"inequality row {r} covered {in_count[r]} times")
    for a in atoms:
        for k, col in enumerate(a.copies):
            if owner[col] == a.id or owner[col] < 0:
                errors.append(f"atom {a.id}: copy of column {col} has no other owner")
            elif a.copy_owner[k] != owner[col]:
                errors.append(f"atom {a.id}: copy of column {col} points at wrong owner")
        if len(np.intersect1d(a.owned, a.copies)):
            errors.append(f"atom {a.id}: column both owned and copied")

    def rebuild(blocks, shape):
        rows, cols, vals = [], [], []
        for grow, M, lcols in blocks:
            coo = M.tocoo()
            rows.append(grow[coo.row])
            cols.append(lcols[coo.col])
            vals.append(coo.data)
        if not rows:
            return sp.csr_matrix(shape)
        return sp.csr_matrix((np.concatenate(vals),
                              (np.concatenate(rows), np.concatenate(cols))), shape=shape)

    if not errors:
        G2 = rebuild([(a.eq_rows, a.G, a.columns) for a in atoms], (m_eq, n))
        H2 = rebuild([(a.ineq_rows, a.H, a.columns) for a in atoms], (m_in, n))
        for name, M, M2 in (("equality", prob.G, G2), ("inequality", prob.H, H2)):
            diff = (sp.csr_matrix(M) - M2).tocoo()
            bad = np.unique(diff.row[diff.data != 0])
            for r in bad[:20]:
                errors.append(f"{name} row {r} differs after reassembly")
        b2 = np.zeros(m_eq); d2 = np.zeros(m_in)
        c2 = np.zeros(n); lb2 = np.zeros(n); ub2 = np.zeros(n)
        for a in atoms:
            b2[a.eq_rows] = a.b
            d2[a.ineq_rows] = a.d
            c2[a.owned] = a.c[:a.n_owned]
            lb2[a.owned] = a.lb
            ub2[a.owned] = a.ub
            if np.any(a.c[a.n_owned:] != 0):
                errors.append(f"atom {a.id}: objective weight on a copy")
        for r in np.flatnonzero(b2 != prob.b)[:20]:
            errors.append(f"equality row {r}: right-hand side differs")
        for r in np.flatnonzero(d2 != prob.d)[:20]:
            errors.append(f"inequality row {r}: right-hand side differs")
        if not (np.array_equal(c2, prob.c) and np.array_equal(lb2, prob.lb)
                and np.array_equal(ub2, prob.ub)):
            errors.append("objective or bounds differ after reassembly")
    for a in atoms:
        for nb in a.neighbors:
            if a.id not in atoms[nb].neighbors:
                errors.append(f"atoms {a.id} and {nb}: asymmetric neighbor lists")
    deg = [len(a.neighbors) for a in atoms] or [0]
    n_rows = sum(len(a.copies) for a in atoms)
    return DecompositionReport(not errors, errors, len(atoms), n_rows,
                               int(min(deg)), int(max(deg)), float(np.mean(deg)))
