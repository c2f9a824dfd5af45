"""Finite-dimensional Hilbert-space substrate.

States, operators, propagators, density matrices and Born distributions
against a configuration-labelled PVM or POVM.  Everything here is
value-semantic: arrays handed to the constructors are copied and frozen.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp


class HilbertError(ValueError):
    """Raised for malformed or inconsistent linear-algebra inputs."""


class PropagationError(RuntimeError):
    """Raised when a propagation tolerance cannot be met."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (achieved residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class PhysicalConstants:
    """Natural-unit constants; masses are stored per species name."""

    hbar: float = 1.0
    c: float = 1.0
    masses: tuple = ()

    def mass(self, species: str) -> float:
        for name, m in self.masses:
            if name == species:
                return float(m)
        raise KeyError(f"no mass recorded for species {species!r}")

    def to_dict(self):
        return {"hbar": self.hbar, "c": self.c, "masses": dict(self.masses)}


@dataclass(frozen=True)
class Tolerances:
    """Default numerical tolerances; override by passing a new instance."""

    norm: float = 1e-10
    hermitian: float = 1e-12
    completeness: float = 1e-12
    positivity: float = 1e-10
    probability_floor: float = 1e-14
    krylov: float = 1e-10
    dense_max_dim: int = 512


DEFAULT_TOL = Tolerances()
NATURAL_UNITS = PhysicalConstants()


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# states and operators


@dataclass(frozen=True, eq=False)
class StateVector:
    """Normalized amplitude vector over the global basis at a given time."""

    amplitudes: np.ndarray
    time: float = 0.0
    tol: float = DEFAULT_TOL.norm

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        norm2 = float(np.vdot(amps, amps).real)
        if abs(norm2 - 1.0) > self.tol:
            raise HilbertError(f"state norm^2 = {norm2!r} deviates from 1")
        object.__setattr__(self, "amplitudes", _frozen(amps))

    @classmethod
    def normalized(cls, amplitudes, time=0.0):
        amps = np.asarray(amplitudes, dtype=complex).reshape(-1)
        n = np.linalg.norm(amps)
        if n == 0:
            raise HilbertError("cannot normalize the zero vector")
        return cls(amps / n, time)

    @property
    def dim(self):
        return self.amplitudes.shape[0]

    def to_dict(self):
        return {"time": self.time, "amplitudes": complex_list(self.amplitudes)}

    @classmethod
    def from_dict(cls, d):
        return cls(complex_array(d["amplitudes"]), float(d.get("time", 0.0)))


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """Sparse or dense complex matrix with an optional Hermiticity promise."""

    entries: object
    hermitian: bool = False
    tol: float = DEFAULT_TOL.hermitian

    def __post_init__(self):
        a = self.entries
        if isinstance(a, OperatorMatrix):
            a = a.entries
        if sp.issparse(a):
            a = sp.csr_matrix(a, dtype=complex)
            a.sum_duplicates()
            a.eliminate_zeros()
        else:
            a = _frozen(np.asarray(a, dtype=complex))
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise HilbertError(f"operator must be square, got shape {a.shape}")
        object.__setattr__(self, "entries", a)
        if self.hermitian:
            dev = self.hermiticity_defect()
            if dev > self.tol:
                raise HilbertError(f"operator flagged Hermitian but |A - A^dag| = {dev:.3e}")

    @property
    def dim(self):
        return self.entries.shape[0]

    @property
    def is_sparse(self):
        return sp.issparse(self.entries)

    def dense(self):
        return self.entries.toarray() if self.is_sparse else np.array(self.entries)

    def sparse(self):
        return sp.csr_matrix(self.entries)

    def hermiticity_defect(self):
        a = self.entries
        d = a - a.conj().T
        if sp.issparse(d):
            return float(abs(d).max()) if d.nnz else 0.0
        return float(np.max(np.abs(d))) if d.size else 0.0

    def matvec(self, v):
        return self.entries @ v

    def __add__(self, other):
        other = as_operator(other)
        a, b = self.entries, other.entries
        if sp.issparse(a) or sp.issparse(b):
            s = sp.csr_matrix(a) + sp.csr_matrix(b)
        else:
            s = a + b
        herm = self.hermitian and other.hermitian
        return OperatorMatrix(s, hermitian=herm, tol=max(self.tol, other.tol) * 2)

    def scaled(self, c):
        herm = self.hermitian and np.isreal(c)
        return OperatorMatrix(self.entries * c, hermitian=herm, tol=self.tol * max(1.0, abs(c)))

    def to_dict(self):
        coo = sp.coo_matrix(self.entries)
        quads = [[int(r), int(c), float(v.real), float(v.imag)]
                 for r, c, v in zip(coo.row, coo.col, coo.data)]
        return {"dim": self.dim, "hermitian": self.hermitian, "entries": quads}

    @classmethod
    def from_dict(cls, d):
        n = int(d["dim"])
        q = np.asarray(d["entries"], dtype=float).reshape(-1, 4)
        m = sp.coo_matrix((q[:, 2] + 1j * q[:, 3], (q[:, 0].astype(int), q[:, 1].astype(int))),
                          shape=(n, n))
        return cls(m.tocsr(), hermitian=bool(d.get("hermitian", False)))


def as_operator(a, hermitian=False) -> OperatorMatrix:
    if isinstance(a, OperatorMatrix):
        return a
    return OperatorMatrix(a, hermitian=hermitian)


def zero_operator(dim) -> OperatorMatrix:
    return OperatorMatrix(sp.csr_matrix((dim, dim), dtype=complex), hermitian=True)


def complex_list(a):
    a = np.asarray(a, dtype=complex).reshape(-1)
    return [[float(z.real), float(z.imag)] for z in a]


def complex_array(pairs):
    p = np.asarray(pairs, dtype=float).reshape(-1, 2)
    return p[:, 0] + 1j * p[:, 1]


# ---------------------------------------------------------------------------
# density matrices


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Hermitian, positive, unit-trace matrix."""

    matrix: np.ndarray
    tol: float = DEFAULT_TOL.completeness

    def __post_init__(self):
        w = np.asarray(self.matrix, dtype=complex)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise HilbertError("density matrix must be square")
        tr = np.trace(w).real
        if abs(tr - 1.0) > self.tol:
            raise HilbertError(f"density matrix trace {tr!r} deviates from 1")
        if np.max(np.abs(w - w.conj().T), initial=0.0) > DEFAULT_TOL.hermitian:
            raise HilbertError("density matrix is not Hermitian")
        lam = np.linalg.eigvalsh(0.5 * (w + w.conj().T))
        if lam.size and lam[0] < -DEFAULT_TOL.positivity:
            raise HilbertError(f"density matrix has negative eigenvalue {lam[0]:.3e}")
        object.__setattr__(self, "matrix", _frozen(w))

    @classmethod
    def from_state(cls, state):
        v = state.amplitudes if isinstance(state, StateVector) else np.asarray(state, dtype=complex)
        return cls(np.outer(v, v.conj()))

    @classmethod
    def normalized(cls, matrix):
        w = np.asarray(matrix, dtype=complex)
        w = 0.5 * (w + w.conj().T)
        return cls(w / np.trace(w).real)

    @property
    def dim(self):
        return self.matrix.shape[0]


# ---------------------------------------------------------------------------
# POVMs


@dataclass(frozen=True, eq=False)
class PovmFamily:
    """Configuration-labelled POVM.

    Two storage forms are supported.  A coordinate PVM stores, for each basis
    index, the cell it belongs to; its cells are diagonal projectors and all
    quantities reduce to index bookkeeping.  A general family stores one dense
    positive matrix per cell.
    """

    labels: tuple
    kind: str
    dim: int
    cell_of_index: np.ndarray | None = None
    operators: tuple | None = None

    @classmethod
    def coordinate(cls, cell_of_index, labels=None):
        cells = np.asarray(cell_of_index, dtype=np.int64).reshape(-1)
        ncell = int(cells.max()) + 1 if cells.size else 0
        if cells.size and (cells.min() < 0 or np.unique(cells).size != ncell):
            raise HilbertError("coordinate cells must cover 0..ncell-1")
        if labels is None:
            labels = tuple(range(ncell))
        if len(labels) != ncell:
            raise HilbertError("label count does not match cell count")
        return cls(tuple(labels), "PVM", cells.size, cell_of_index=_frozen(cells))

    @classmethod
    def from_operators(cls, ops, labels=None, kind=None, tol=DEFAULT_TOL):
        ops = [np.asarray(o, dtype=complex) for o in ops]
        if not ops:
            raise HilbertError("empty POVM")
        dim = ops[0].shape[0]
        total = np.zeros((dim, dim), dtype=complex)
        is_pvm = True
        for o in ops:
            if o.shape != (dim, dim):
                raise HilbertError("POVM cell dimension mismatch")
            if np.max(np.abs(o - o.conj().T)) > tol.hermitian:
                raise HilbertError("POVM cell is not Hermitian")
            if np.linalg.eigvalsh(o)[0] < -tol.positivity:
                raise HilbertError("POVM cell is not positive semidefinite")
            if np.max(np.abs(o @ o - o)) > 1e-10:
                is_pvm = False
            total += o
        if np.max(np.abs(total - np.eye(dim))) > tol.completeness:
            raise HilbertError("POVM cells do not sum to the identity")
        detected = "PVM" if is_pvm else "POVM"
        if kind is None:
            kind = detected
        elif kind == "PVM" and not is_pvm:
            raise HilbertError("cells declared PVM are not projectors")
        if labels is None:
            labels = tuple(range(len(ops)))
        return cls(tuple(labels), kind, dim, operators=tuple(_frozen(o) for o in ops))

    @property
    def ncells(self):
        return len(self.labels)

    @property
    def is_coordinate(self):
        return self.cell_of_index is not None

    def members(self, k):
        """Basis indices of a coordinate cell."""
        if not self.is_coordinate:
            raise HilbertError("members() needs a coordinate PVM")
        return np.flatnonzero(self.cell_of_index == k)

    def operator(self, k):
        if self.is_coordinate:
            return np.diag((self.cell_of_index == k).astype(complex))
        return np.array(self.operators[k])

    def operator_stack(self):
        return np.stack([self.operator(k) for k in range(self.ncells)])

    def probabilities(self, psi):
        psi = _vector(psi)
        self._check_dim(psi.shape[0])
        if self.is_coordinate:
            return np.bincount(self.cell_of_index, weights=np.abs(psi) ** 2, minlength=self.ncells)
        return np.array([np.vdot(psi, o @ psi).real for o in self.operators])

    def probabilities_density(self, w):
        w = w.matrix if isinstance(w, DensityMatrix) else np.asarray(w)
        self._check_dim(w.shape[0])
        if self.is_coordinate:
            return np.bincount(self.cell_of_index, weights=np.real(np.diag(w)), minlength=self.ncells)
        return np.array([np.trace(w @ o).real for o in self.operators])

    def cell_vectors(self, psi):
        """Matrix whose k-th column is P(k) psi."""
        psi = _vector(psi)
        if self.is_coordinate:
            v = np.zeros((self.dim, self.ncells), dtype=complex)
            v[np.arange(self.dim), self.cell_of_index] = psi
            return v
        return np.stack([o @ psi for o in self.operators], axis=1)

    def _check_dim(self, n):
        if n != self.dim:
            raise HilbertError(f"basis mismatch: POVM on dim {self.dim}, input dim {n}")


def compress_povm(P: PovmFamily, isometry) -> PovmFamily:
    """POVM V^dag P(q) V on the range of an isometry V (columns orthonormal)."""
    v = np.asarray(isometry, dtype=complex)
    ops = [v.conj().T @ P.operator(k) @ v for k in range(P.ncells)]
    return PovmFamily.from_operators(ops, labels=P.labels, kind="POVM")


def _vector(psi):
    if isinstance(psi, StateVector):
        return psi.amplitudes
    return np.asarray(psi, dtype=complex).reshape(-1)


# ---------------------------------------------------------------------------
# propagation


def _require_hermitian(H):
    H = as_operator(H)
    if not H.hermitian and H.hermiticity_defect() > DEFAULT_TOL.hermitian:
        raise HilbertError("propagation requires a Hermitian Hamiltonian")
    return H


def _lanczos_step(H, v, tau, m_max, tol):
    """One Krylov step of exp(-i tau H) v; returns (w, used tau, error estimate)."""
    n = v.shape[0]
    beta = np.linalg.norm(v)
    m_max = min(m_max, n)
    V = np.zeros((m_max + 1, n), dtype=complex)
    alpha = np.zeros(m_max)
    betas = np.zeros(m_max)
    V[0] = v / beta
    m = m_max
    breakdown = False
    for j in range(m_max):
        w = H @ V[j]
        alpha[j] = np.vdot(V[j], w).real
        w = w - alpha[j] * V[j] - (betas[j - 1] * V[j - 1] if j > 0 else 0)
        # full reorthogonalization keeps the small basis accurate
        w -= V[: j + 1].T @ (V[: j + 1].conj() @ w)
        betas[j] = np.linalg.norm(w)
        if betas[j] < 1e-13 * max(1.0, abs(alpha[j])):
            m = j + 1
            breakdown = True
            break
        V[j + 1] = w / betas[j]
    T = np.diag(alpha[:m]) + np.diag(betas[: m - 1], 1) + np.diag(betas[: m - 1], -1)
    while True:
        e = sla.expm(-1j * tau * T)[:, 0]
        err = 0.0 if breakdown else beta * betas[m - 1] * abs(e[m - 1])
        if err <= tol or abs(tau) < 1e-300:
            break
        tau = tau / 2
    return beta * (V[:m].T @ e), tau, err


def krylov_propagate(H, v, tau, tol=DEFAULT_TOL.krylov, m_max=40, max_substeps=100000):
    """exp(-i tau H) v by adaptive Lanczos substeps.

    The per-substep a-posteriori error is held below tol times the fraction of
    tau covered, so the accumulated error stays below tol.
    """
    H = H.entries if isinstance(H, OperatorMatrix) else H
    w = np.asarray(v, dtype=complex)
    done = 0.0
    total_err = 0.0
    for _ in range(max_substeps):
        remaining = tau - done
        if abs(remaining) <= 1e-15 * max(1.0, abs(tau)):
            return w, total_err
        budget = tol * abs(remaining) / abs(tau)
        w, used, err = _lanczos_step(H, w, remaining, m_max, budget)
        if err > budget:
            raise PropagationError("Krylov substep failed to converge", total_err + err)
        done += used
        total_err += err
    raise PropagationError("Krylov propagation exceeded substep limit", total_err)


def propagate_vector(v, H, dt, hbar=1.0, tol=DEFAULT_TOL):
    """Apply exp(-i H dt / hbar) to a raw vector."""
    H = _require_hermitian(H)
    tau = dt / hbar
    if H.dim <= tol.dense_max_dim:
        return sla.expm(-1j * tau * H.dense()) @ np.asarray(v, dtype=complex)
    w, _ = krylov_propagate(H, v, tau, tol=tol.krylov)
    return w


def evolve(state: StateVector, H, dt: float, hbar=1.0, tol=DEFAULT_TOL) -> StateVector:
    """Schroedinger evolution over dt (dense exponential or Krylov by dimension)."""
    if not np.isfinite(dt):
        raise HilbertError("dt must be finite")
    H = _require_hermitian(H)
    if H.dim != state.dim:
        raise HilbertError("state and Hamiltonian dimensions differ")
    w = propagate_vector(state.amplitudes, H, dt, hbar, tol)
    return StateVector(w, state.time + dt, tol=tol.norm)


class Propagator:
    """Fixed-step propagator for a time-independent H.

    Below the dense threshold the unitary is formed once; above it each call
    runs a Krylov propagation.
    """

    def __init__(self, H, dt, hbar=1.0, tol=DEFAULT_TOL):
        self.H = _require_hermitian(H)
        self.dt = dt
        self.hbar = hbar
        self.tol = tol
        self._U = None
        if self.H.dim <= tol.dense_max_dim:
            self._U = sla.expm(-1j * (dt / hbar) * self.H.dense())

    def __call__(self, v):
        if self._U is not None:
            return self._U @ v
        w, _ = krylov_propagate(self.H, v, self.dt / self.hbar, tol=self.tol.krylov)
        return w


# ---------------------------------------------------------------------------
# Born rule, partial trace, Heisenberg picture


def born_distribution(state, P: PovmFamily) -> np.ndarray:
    """Cell probabilities <psi|P(q)|psi> (or tr W P(q) for a density matrix)."""
    if isinstance(state, DensityMatrix):
        p = P.probabilities_density(state)
    else:
        p = P.probabilities(state)
    return np.clip(p, 0.0, None)


def partial_trace(W, keep, dims: Sequence[int]) -> DensityMatrix:
    """Reduced density matrix on the kept factor(s)."""
    w = W.matrix if isinstance(W, DensityMatrix) else np.asarray(W, dtype=complex)
    dims = [int(d) for d in dims]
    if int(np.prod(dims)) != w.shape[0]:
        raise HilbertError(f"factor dims {dims} inconsistent with dimension {w.shape[0]}")
    keep = [keep] if np.isscalar(keep) else list(keep)
    if any(k < 0 or k >= len(dims) for k in keep):
        raise HilbertError("kept factor index out of range")
    n = len(dims)
    t = w.reshape(dims + dims)
    letters = "abcdefghijklmnopqrstuvwxyz"
    row = list(letters[:n])
    col = list(letters[n:2 * n])
    for i in range(n):
        if i not in keep:
            col[i] = row[i]
    out = "".join(row[i] for i in keep) + "".join(col[i] for i in keep)
    red = np.einsum("".join(row) + "".join(col) + "->" + out, t)
    d = int(np.prod([dims[i] for i in keep]))
    return DensityMatrix(red.reshape(d, d))


def heisenberg_evolve(P: PovmFamily, H, t: float, hbar=1.0) -> PovmFamily:
    """Cells mapped to U_t^dag P(q) U_t."""
    H = _require_hermitian(H)
    U = sla.expm(-1j * (t / hbar) * H.dense())
    ops = [U.conj().T @ P.operator(k) @ U for k in range(P.ncells)]
    ops = [0.5 * (o + o.conj().T) for o in ops]
    return PovmFamily.from_operators(ops, labels=P.labels, kind=P.kind)


# ---------------------------------------------------------------------------
# random draws used by tests and verification suites


def random_state(dim, rng) -> StateVector:
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return StateVector.normalized(v)


def random_hermitian(dim, rng, scale=1.0) -> OperatorMatrix:
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return OperatorMatrix(scale * 0.5 * (a + a.conj().T), hermitian=True)


def random_unitary(dim, rng):
    q, r = np.linalg.qr(rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim)))
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_partition_pvm(dim, ncells, rng) -> PovmFamily:
    """Coordinate PVM grouping the basis into ncells nonempty random cells."""
    ncells = min(ncells, dim)
    cells = np.concatenate([np.arange(ncells), rng.integers(0, ncells, size=dim - ncells)])
    rng.shuffle(cells)
    return PovmFamily.coordinate(cells)


def rotated_pvm(P: PovmFamily, U) -> PovmFamily:
    """PVM U P(q) U^dag in general (dense) form."""
    ops = [U @ P.operator(k) @ U.conj().T for k in range(P.ncells)]
    ops = [0.5 * (o + o.conj().T) for o in ops]
    return PovmFamily.from_operators(ops, labels=P.labels, kind="PVM")
