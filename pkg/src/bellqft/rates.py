"""Probability currents and minimal jump rates.

Conventions: J[q, q'] is the current into q from q' (destination first), and
rate tables are stored as sparse matrices R[q, q'] = sigma(q | q'), so the
forward generator acting on a distribution rho is R @ rho - totals * rho.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .hilbert import DEFAULT_TOL, DensityMatrix, HilbertError, PovmFamily, StateVector, as_operator


@dataclass(frozen=True, eq=False)
class CurrentMatrix:
    """Antisymmetric real current J[q, q'] over POVM cells."""

    entries: sp.csr_matrix
    labels: tuple = ()

    def dense(self):
        return self.entries.toarray()

    def antisymmetry_defect(self):
        d = self.entries + self.entries.T
        return float(abs(d).max()) if d.nnz else 0.0

    def row_sums(self):
        return np.asarray(self.entries.sum(axis=1)).ravel()


@dataclass(frozen=True, eq=False)
class JumpRateTable:
    """Sparse nonnegative rates R[q, q'] = sigma(q | q') with per-source totals.

    flagged marks sources whose probability fell below the floor and therefore
    carry no outgoing rate.  kernel_support is the boolean sparsity pattern of
    the cell-aggregated Hamiltonian that produced the rates (used to decide
    whether a sum of rate tables is still minimal).
    """

    rates: sp.csr_matrix
    totals: np.ndarray
    flagged: np.ndarray
    minimal: bool = False
    labels: tuple = ()
    kernel_support: sp.csr_matrix | None = None

    @property
    def ncells(self):
        return self.rates.shape[0]

    def dense(self):
        return self.rates.toarray()

    def generator(self) -> sp.csr_matrix:
        """Forward generator Q with d rho / dt = Q @ rho."""
        return (self.rates - sp.diags(self.totals)).tocsr()

    def apply(self, rho):
        return self.rates @ rho - self.totals * rho

    def triples(self):
        coo = self.rates.tocoo()
        order = np.lexsort((coo.row, coo.col))
        return [(int(coo.col[i]), int(coo.row[i]), float(coo.data[i])) for i in order]

    def scaled(self, c):
        return JumpRateTable(self.rates * c, self.totals * c, self.flagged, minimal=False,
                             labels=self.labels, kernel_support=self.kernel_support)

    def one_way_defect(self):
        """max sigma(q|q') * sigma(q'|q) over pairs (0 for a one-way street)."""
        prod = self.rates.multiply(self.rates.T)
        return float(abs(prod).max()) if prod.nnz else 0.0

    def to_csv(self, path, label_fn=str):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["source", "destination", "rate"])
            for src, dst, r in self.triples():
                w.writerow([_label(self.labels, src, label_fn), _label(self.labels, dst, label_fn), repr(r)])


def _label(labels, k, fn):
    return fn(labels[k]) if labels else str(k)


def _zero_diagonal(m):
    m = m.tolil()
    m.setdiag(0)
    m = m.tocsr()
    m.eliminate_zeros()
    return m


def _vector(psi):
    if isinstance(psi, StateVector):
        return psi.amplitudes
    return np.asarray(psi, dtype=complex).reshape(-1)


def cell_matrix(psi, H, P: PovmFamily):
    """M[q, q'] = <psi|P(q) H P(q')|psi> aggregated over cells (complex, sparse)."""
    psi = _vector(psi)
    H = as_operator(H)
    P._check_dim(psi.shape[0])
    if H.dim != psi.shape[0]:
        raise HilbertError("state and Hamiltonian dimensions differ")
    n = P.ncells
    if P.is_coordinate:
        coo = sp.coo_matrix(H.entries)
        vals = np.conj(psi[coo.row]) * coo.data * psi[coo.col]
        cell = P.cell_of_index
        m = sp.coo_matrix((vals, (cell[coo.row], cell[coo.col])), shape=(n, n)).tocsr()
        support = sp.coo_matrix((np.ones(coo.nnz), (cell[coo.row], cell[coo.col])), shape=(n, n)).tocsr()
        return m, support
    V = P.cell_vectors(psi)
    m = V.conj().T @ (H.entries @ V)
    ops = P.operator_stack()
    Hd = H.dense()
    support = np.array([[np.any(np.abs(ops[a] @ Hd @ ops[b]) > 1e-14) for b in range(n)] for a in range(n)])
    return sp.csr_matrix(m), sp.csr_matrix(support.astype(float))


def cell_matrix_density(W, H, P: PovmFamily):
    """M[q, q'] = tr(W P(q) H P(q')) aggregated over cells."""
    w = W.matrix if isinstance(W, DensityMatrix) else np.asarray(W, dtype=complex)
    H = as_operator(H)
    n = P.ncells
    if P.is_coordinate:
        coo = sp.coo_matrix(H.entries)
        vals = coo.data * w[coo.col, coo.row]
        cell = P.cell_of_index
        m = sp.coo_matrix((vals, (cell[coo.row], cell[coo.col])), shape=(n, n)).tocsr()
        support = sp.coo_matrix((np.ones(coo.nnz), (cell[coo.row], cell[coo.col])), shape=(n, n)).tocsr()
        return m, support
    ops = P.operator_stack()
    Hd = H.dense()
    m = np.zeros((n, n), dtype=complex)
    support = np.zeros((n, n))
    for b in range(n):
        HPb = Hd @ ops[b]
        WPa = [w @ ops[a] for a in range(n)]
        for a in range(n):
            m[a, b] = np.trace(WPa[a] @ HPb)
            support[a, b] = np.any(np.abs(ops[a] @ HPb) > 1e-14)
    return sp.csr_matrix(m), sp.csr_matrix(support)


def _current_from_cells(m, hbar):
    j = (2.0 / hbar) * m.imag if not sp.issparse(m) else (2.0 / hbar) * sp.csr_matrix(m.imag)
    j = _zero_diagonal(sp.csr_matrix(j))
    # enforce exact antisymmetry against roundoff in the aggregation
    return ((j - j.T) * 0.5).tocsr()


def current_matrix(psi, H, P: PovmFamily, hbar=1.0) -> CurrentMatrix:
    """J[q, q'] = (2/hbar) Im <psi|P(q) H P(q')|psi>."""
    m, _ = cell_matrix(psi, H, P)
    return CurrentMatrix(_current_from_cells(m, hbar), P.labels)


def current_matrix_density(W, H, P: PovmFamily, hbar=1.0) -> CurrentMatrix:
    m, _ = cell_matrix_density(W, H, P)
    return CurrentMatrix(_current_from_cells(m, hbar), P.labels)


def born_time_derivative(psi, H, P: PovmFamily, hbar=1.0):
    """d/dt <psi|P(q)|psi> = (2/hbar) Im <psi|P(q) H|psi>."""
    psi = _vector(psi)
    Hpsi = as_operator(H).entries @ psi
    if P.is_coordinate:
        return (2.0 / hbar) * np.bincount(P.cell_of_index, weights=np.imag(np.conj(psi) * Hpsi),
                                         minlength=P.ncells)
    return np.array([(2.0 / hbar) * np.imag(np.vdot(o @ psi, Hpsi)) for o in P.operators])


def rates_from_current(J, prob, support=None, labels=(), floor=DEFAULT_TOL.probability_floor,
                       drop_relative=1e-14) -> JumpRateTable:
    """sigma(q|q') = J+[q, q'] / prob(q'), zero and flagged where prob(q') <= floor."""
    j = J.entries if isinstance(J, CurrentMatrix) else sp.csr_matrix(J)
    prob = np.asarray(prob, dtype=float)
    n = prob.size
    flagged = prob <= floor
    jp = j.maximum(0).tocoo()
    keep = ~flagged[jp.col]
    vals = jp.data[keep] / prob[jp.col[keep]]
    rows, cols = jp.row[keep], jp.col[keep]
    totals = np.bincount(cols, weights=vals, minlength=n)
    # drop entries that are negligible relative to the source total
    keep = vals > drop_relative * totals[cols]
    rates = sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n))
    totals = np.asarray(rates.sum(axis=0)).ravel()
    return JumpRateTable(rates, totals, flagged, minimal=True, labels=labels, kernel_support=support)


def minimal_rates(psi, H, P: PovmFamily, hbar=1.0, floor=DEFAULT_TOL.probability_floor) -> JumpRateTable:
    """Minimal jump rates of a pure state."""
    m, support = cell_matrix(psi, H, P)
    j = _current_from_cells(m, hbar)
    prob = P.probabilities(_vector(psi))
    return rates_from_current(j, prob, support=support, labels=P.labels, floor=floor)


def minimal_rates_density(W, H, P: PovmFamily, hbar=1.0, floor=DEFAULT_TOL.probability_floor) -> JumpRateTable:
    """Minimal jump rates of a density matrix."""
    m, support = cell_matrix_density(W, H, P)
    j = _current_from_cells(m, hbar)
    prob = P.probabilities_density(W)
    return rates_from_current(j, prob, support=support, labels=P.labels, floor=floor)


def add_rates(s1: JumpRateTable, s2: JumpRateTable) -> JumpRateTable:
    """Entrywise sum; minimal only if both are minimal with disjoint kernel supports."""
    if s1.rates.shape != s2.rates.shape:
        raise HilbertError("rate tables live on different bases")
    rates = (s1.rates + s2.rates).tocsr()
    minimal = False
    support = None
    if s1.kernel_support is not None and s2.kernel_support is not None:
        a = _zero_diagonal(s1.kernel_support)
        b = _zero_diagonal(s2.kernel_support)
        overlap = a.multiply(b)
        minimal = s1.minimal and s2.minimal and overlap.nnz == 0
        support = ((s1.kernel_support + s2.kernel_support) != 0).astype(float)
    return JumpRateTable(rates, s1.totals + s2.totals, s1.flagged | s2.flagged, minimal=minimal,
                         labels=s1.labels or s2.labels, kernel_support=support)


def zero_rates(n, labels=()) -> JumpRateTable:
    return JumpRateTable(sp.csr_matrix((n, n)), np.zeros(n), np.zeros(n, bool), minimal=True,
                         labels=labels, kernel_support=sp.csr_matrix((n, n)))


def lift_rates(rates: JumpRateTable, mapping, n_full, labels=()) -> JumpRateTable:
    """Embed a rate table on cells 0..k-1 into a larger space via a cell index map."""
    mapping = np.asarray(mapping, dtype=np.int64)
    coo = rates.rates.tocoo()
    r = sp.csr_matrix((coo.data, (mapping[coo.row], mapping[coo.col])), shape=(n_full, n_full))
    totals = np.zeros(n_full)
    totals[mapping] = rates.totals
    flagged = np.zeros(n_full, bool)
    flagged[mapping] = rates.flagged
    return JumpRateTable(r, totals, flagged, minimal=rates.minimal, labels=labels)


# ---------------------------------------------------------------------------
# verification predicates


@dataclass
class StandardCurrentReport:
    standard_current_residual: float
    minimality_violation: float
    equality_residual: float
    equality_pairs: int
    strict_pairs: int
    tol: float

    @property
    def standard_current_ok(self):
        return self.standard_current_residual <= self.tol

    @property
    def minimality_ok(self):
        return self.minimality_violation <= self.tol

    @property
    def equality_ok(self):
        return self.equality_residual <= self.tol

    @property
    def passed(self):
        return self.standard_current_ok and self.minimality_ok

    def to_dict(self):
        return {
            "standard_current_residual": self.standard_current_residual,
            "standard_current_ok": self.standard_current_ok,
            "minimality_violation": self.minimality_violation,
            "minimality_inequality_ok": self.minimality_ok,
            "equality_residual": self.equality_residual,
            "minimality_equality_ok": self.equality_ok,
            "equality_pairs": self.equality_pairs,
            "strict_pairs": self.strict_pairs,
            "tol": self.tol,
        }


def check_standard_current(sigma: JumpRateTable, prob, J: CurrentMatrix, tol=1e-12) -> StandardCurrentReport:
    """Check sigma(q|q')P(q') - sigma(q'|q)P(q) = J and sigma P >= J+."""
    prob = np.asarray(prob, dtype=float)
    flow = sigma.rates.multiply(prob[None, :]).toarray()
    jd = J.dense()
    net = flow - flow.T
    np.fill_diagonal(net, 0.0)
    sc = float(np.max(np.abs(net - jd), initial=0.0))
    jp = np.maximum(jd, 0.0)
    off = ~np.eye(jd.shape[0], dtype=bool)
    excess = (flow - jp)[off]
    violation = float(max(0.0, -excess.min(initial=0.0)))
    eq_res = float(np.max(np.abs(excess), initial=0.0))
    return StandardCurrentReport(sc, violation, eq_res, int(np.sum(np.abs(excess) <= tol)),
                                 int(np.sum(excess > tol)), tol)


def augment_symmetric(sigma: JumpRateTable, prob, c=0.5, pairs=None) -> JumpRateTable:
    """Add S(q,q') = c P(q)P(q')/min(P(q),P(q')) to the flows and convert back to rates.

    S is symmetric, so the net current is unchanged while both directions of
    every affected pair gain flow.  Pairs default to the kernel support.
    """
    prob = np.asarray(prob, dtype=float)
    n = prob.size
    if pairs is None:
        base = sigma.kernel_support if sigma.kernel_support is not None else (sigma.rates + sigma.rates.T)
        pairs = _zero_diagonal(sp.csr_matrix((base + base.T) != 0).astype(float)).tocoo()
        pairs = list(zip(pairs.row, pairs.col))
    rows, cols, vals = [], [], []
    for q, qp in pairs:
        if q == qp or prob[q] <= 0 or prob[qp] <= 0:
            continue
        s = c * prob[q] * prob[qp] / min(prob[q], prob[qp])
        rows.append(q)
        cols.append(qp)
        vals.append(s / prob[qp])
    extra = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    rates = (sigma.rates + extra).tocsr()
    totals = np.asarray(rates.sum(axis=0)).ravel()
    return JumpRateTable(rates, totals, sigma.flagged, minimal=False, labels=sigma.labels,
                         kernel_support=sigma.kernel_support)


@dataclass
class ReversalReport:
    applicable: bool
    residual: float
    tol: float
    reason: str = ""

    @property
    def passed(self):
        return self.applicable and self.residual <= self.tol

    def to_dict(self):
        return {"applicable": self.applicable, "residual": self.residual, "tol": self.tol,
                "passed": self.passed, "reason": self.reason}


def reversed_rates_check(psi, H, P: PovmFamily, unitary=None, hbar=1.0, tol=1e-12) -> ReversalReport:
    """Check sigma^psi(q|q')P(q') = sigma^{T psi}(q'|q)P(q) with T = U o conjugation."""
    psi = _vector(psi)
    H = as_operator(H)
    Hd = H.dense()
    U = np.eye(H.dim) if unitary is None else np.asarray(unitary, dtype=complex)
    THT = U @ Hd.conj() @ U.conj().T
    dev = float(np.max(np.abs(THT - Hd)))
    if dev > 1e-12:
        return ReversalReport(False, float("nan"), tol, f"T H T^-1 != H (deviation {dev:.3e})")
    ops = P.operator_stack()
    pdev = max(float(np.max(np.abs(U @ o.conj() @ U.conj().T - o))) for o in ops)
    if pdev > 1e-12:
        return ReversalReport(False, float("nan"), tol, "time reversal does not preserve the POVM")
    prob = P.probabilities(psi)
    s1 = minimal_rates(psi, H, P, hbar).rates.multiply(prob[None, :]).toarray()
    tpsi = U @ psi.conj()
    s2 = minimal_rates(tpsi, H, P, hbar).rates.multiply(prob[None, :]).toarray()
    res = float(np.max(np.abs(s1 - s2.T), initial=0.0))
    return ReversalReport(True, res, tol)


@dataclass
class TwoTimeReport:
    dt: float
    residual: float
    residual_half: float
    skipped_diagonal: int

    @property
    def ratio(self):
        if self.residual_half == 0:
            return float("inf") if self.residual > 0 else float("nan")
        return self.residual / self.residual_half

    @property
    def passed(self):
        return 3.5 <= self.ratio <= 4.5

    def to_dict(self):
        return {"dt": self.dt, "residual": self.residual, "residual_half": self.residual_half,
                "ratio": self.ratio, "skipped_diagonal": self.skipped_diagonal, "passed": self.passed}


def two_time_joint(psi, H, P: PovmFamily, dt, hbar=1.0):
    """[<psi|{P_{t+dt}(q), P_t(q')}|psi>]+ for all cell pairs (q, q')."""
    if P.kind != "PVM":
        raise HilbertError("the two-time formula needs a PVM")
    psi = _vector(psi)
    U = sla.expm(-1j * (dt / hbar) * as_operator(H).dense())
    Upsi = U @ psi
    V = U @ P.cell_vectors(psi)  # columns U P(q') psi
    if P.is_coordinate:
        prod = np.conj(Upsi)[:, None] * V
        m = np.zeros((P.ncells, P.ncells), dtype=complex)
        np.add.at(m, P.cell_of_index, prod)
    else:
        m = np.stack([np.conj(Upsi) @ (o @ V) for o in P.operators])
    return np.maximum(2.0 * m.real, 0.0)


def two_time_residual(psi, H, P, dt, hbar=1.0):
    joint = two_time_joint(psi, H, P, dt, hbar)
    sigma = minimal_rates(psi, H, P, hbar)
    prob = P.probabilities(_vector(psi))
    pred = sigma.rates.multiply(prob[None, :]).toarray() * dt
    off = ~np.eye(P.ncells, dtype=bool)
    return float(np.max(np.abs(joint - pred)[off], initial=0.0))


def two_time_check(psi, H, P: PovmFamily, dt=1e-4, hbar=1.0) -> TwoTimeReport:
    """Compare the two-time formula with sigma P dt at dt and dt/2."""
    r1 = two_time_residual(psi, H, P, dt, hbar)
    r2 = two_time_residual(psi, H, P, dt / 2, hbar)
    return TwoTimeReport(dt, r1, r2, P.ncells)
