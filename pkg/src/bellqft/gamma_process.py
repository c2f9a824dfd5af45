"""Second quantization of Markov processes.

Generators are represented as (rate table, velocity field) pairs over a
finite set of cells.  Families map a state vector or density matrix to a
generator.  The combinators build generators on direct sums (particle-number
sectors) and tensor products (distinguishable factors, with conditional
density matrices), and second_quantize_process chains both to lift a
one-particle family to Fock space.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from . import flow
from .fock import Configuration, FockSpace, LatticeSpec, Species, build_fock, gamma_povm, second_quantize_h
from .hilbert import (DEFAULT_TOL, DensityMatrix, HilbertError, PovmFamily, StateVector, as_operator,
                      random_state)
from .rates import (JumpRateTable, add_rates, born_time_derivative, minimal_rates, minimal_rates_density)


class ZeroConditionError(HilbertError):
    def __init__(self, env):
        super().__init__(f"environment configuration {env} has zero probability")
        self.env = env


@dataclass(frozen=True, eq=False)
class Generator:
    """Forward generator: jump part and/or deterministic velocity per cell."""

    ncells: int
    rates: JumpRateTable | None = None
    velocity: np.ndarray | None = None
    flagged: tuple = ()

    def apply(self, rho):
        """Jump part of L rho (deterministic parts need a grid divergence)."""
        if self.rates is None:
            return np.zeros(self.ncells)
        return self.rates.apply(np.asarray(rho, dtype=float))

    def column_sums(self):
        if self.rates is None:
            return np.zeros(self.ncells)
        return np.asarray(self.rates.generator().sum(axis=0)).ravel()


@dataclass(frozen=True, eq=False)
class GeneratorFamily:
    """Map from a state (vector or density matrix) to a generator."""

    evaluate: Callable
    input_kind: str
    dim: int
    ncells: int
    name: str = "family"

    def __call__(self, x):
        return self.evaluate(x)


@dataclass(frozen=True, eq=False)
class ConditionalDensity:
    matrix: DensityMatrix
    env: tuple
    weight: float


def _as_density(x):
    if isinstance(x, DensityMatrix):
        return x
    if isinstance(x, StateVector):
        return DensityMatrix.from_state(x)
    a = np.asarray(x, dtype=complex)
    if a.ndim == 1:
        return DensityMatrix.from_state(a / np.linalg.norm(a))
    return DensityMatrix(a)


def minimal_jump_family(H, P: PovmFamily, hbar=1.0, name="minimal") -> GeneratorFamily:
    """W -> minimal jump rates sigma^W for (H, P)."""
    H = as_operator(H)

    def ev(x):
        r = minimal_rates_density(_as_density(x), H, P, hbar)
        return Generator(P.ncells, rates=r, flagged=tuple(np.flatnonzero(r.flagged)))

    return GeneratorFamily(ev, "density", H.dim, P.ncells, name=name)


def bohm_density_family(n_points, spacing, mass=1.0, hbar=1.0, periodic=True, floor=1e-12) -> GeneratorFamily:
    """W -> density-matrix Bohm velocity at each grid point (deterministic, no jumps)."""

    def ev(x):
        num, den = flow.velocity_field_from_density(_as_density(x), spacing, "schrodinger", mass, hbar,
                                                    periodic=periodic)
        v = np.zeros(n_points)
        ok = den > floor * den.max()
        v[ok] = num[ok] / den[ok]
        return Generator(n_points, velocity=v[:, None], flagged=tuple(np.flatnonzero(~ok)))

    return GeneratorFamily(ev, "density", n_points, n_points, name="bohm")


def add_families(f1: GeneratorFamily, f2: GeneratorFamily) -> GeneratorFamily:
    """Process additivity: rates add, velocities add."""

    def ev(x):
        g1, g2 = f1(x), f2(x)
        rates = g1.rates if g2.rates is None else (g2.rates if g1.rates is None else add_rates(g1.rates, g2.rates))
        vel = g1.velocity if g2.velocity is None else (g2.velocity if g1.velocity is None else g1.velocity + g2.velocity)
        return Generator(g1.ncells, rates, vel, tuple(sorted(set(g1.flagged) | set(g2.flagged))))

    return GeneratorFamily(ev, f1.input_kind, f1.dim, f1.ncells, name=f"{f1.name}+{f2.name}")


# ---------------------------------------------------------------------------
# conditional density matrices


def conditional_density(state, dims: Sequence[int], povms: Sequence[PovmFamily], factor: int, env: Sequence[int],
                        floor=DEFAULT_TOL.probability_floor) -> ConditionalDensity:
    """W_cond = tr_env(W (1 x P_env(env))) / tr(...) for the given factor.

    env lists one cell index per factor other than `factor`, in factor order.
    """
    W = _as_density(state).matrix
    dims = [int(d) for d in dims]
    n = len(dims)
    if int(np.prod(dims)) != W.shape[0]:
        raise HilbertError("factorization inconsistent with the state dimension")
    others = [j for j in range(n) if j != factor]
    if len(env) != len(others):
        raise HilbertError("env must give one cell per complementary factor")
    t = W.reshape(dims + dims)
    letters = "abcdefghijklmnopqrstuvwxyz"
    row = list(letters[:n])
    col = list(letters[n:2 * n])
    # contract each environment factor with its cell operator: sum W[.e.;.e'.] P[e', e]
    for j, cell in zip(others, env):
        P = povms[j].operator(int(cell))
        r, c = letters[j], letters[n + j]
        sub_in = "".join(row) + "".join(col)
        sub_out = sub_in.replace(r, "").replace(c, "")
        t = np.einsum(f"{sub_in},{c}{r}->{sub_out}", t, P)
        row = [x for x in row if x != r]
        col = [x for x in col if x != c]
    m = t.reshape(dims[factor], dims[factor])
    tr = float(np.trace(m).real)
    if tr <= floor:
        raise ZeroConditionError(tuple(int(e) for e in env))
    m = 0.5 * (m + m.conj().T) / tr
    return ConditionalDensity(DensityMatrix(m), tuple(int(e) for e in env), tr)


# ---------------------------------------------------------------------------
# combinators


def _lift(gen: Generator, mapping, into):
    rows, cols, vals = into
    if gen.rates is not None:
        coo = gen.rates.rates.tocoo()
        rows.append(mapping[coo.row])
        cols.append(mapping[coo.col])
        vals.append(coo.data)


def direct_sum_generator(families: Sequence[GeneratorFamily], psi, sector_basis: Sequence[np.ndarray],
                         sector_cells: Sequence[np.ndarray], ncells: int,
                         floor=DEFAULT_TOL.probability_floor) -> Generator:
    """Generator on a direct sum: sector n evolves by family n at P_n psi / |P_n psi|.

    sector_basis[n] lists the global basis indices of sector n (in the order
    the family expects) and sector_cells[n] maps the family's cells to global
    cells.  Sectors with |P_n psi|^2 <= floor get the zero generator and are
    reported in `flagged`.
    """
    psi = psi.amplitudes if isinstance(psi, StateVector) else np.asarray(psi, dtype=complex)
    rows, cols, vals = [], [], []
    flagged = []
    for n, (fam, basis, cells) in enumerate(zip(families, sector_basis, sector_cells)):
        sub = psi[basis]
        w = float(np.vdot(sub, sub).real)
        if w <= floor:
            flagged.append(n)
            continue
        gen = fam(sub / np.sqrt(w)) if fam.input_kind == "state" else fam(DensityMatrix.from_state(sub / np.sqrt(w)))
        _lift(gen, np.asarray(cells), (rows, cols, vals))
    return _assemble(ncells, rows, cols, vals, flagged)


def _assemble(ncells, rows, cols, vals, flagged, velocity=None):
    if rows:
        r = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(ncells, ncells))
    else:
        r = sp.csr_matrix((ncells, ncells))
    totals = np.asarray(r.sum(axis=0)).ravel()
    table = JumpRateTable(r, totals, np.zeros(ncells, bool), minimal=False)
    return Generator(ncells, rates=table, velocity=velocity, flagged=tuple(flagged))


def tensor_product_generator(families: Sequence[GeneratorFamily], W, dims: Sequence[int],
                             povms: Sequence[PovmFamily], floor=DEFAULT_TOL.probability_floor) -> Generator:
    """L = sum_i L_i, factor i driven by its conditional density matrix.

    Product cells are indexed in C order over the factor cells (factor 0
    slowest).  Velocities, when the families supply them, are stacked with one
    column per factor.
    """
    dims = [int(d) for d in dims]
    n = len(dims)
    W = _as_density(W)
    ncell_f = [p.ncells for p in povms]
    total = int(np.prod(ncell_f))
    rows, cols, vals = [], [], []
    velocity = None
    flagged = set()
    for i in range(n):
        others = [j for j in range(n) if j != i]
        for env in itertools.product(*[range(ncell_f[j]) for j in others]):
            try:
                cd = conditional_density(W, dims, povms, i, env, floor)
            except ZeroConditionError:
                for qi in range(ncell_f[i]):
                    flagged.add(_ravel(i, qi, others, env, ncell_f))
                continue
            gen = families[i](cd.matrix)
            mapping = np.array([_ravel(i, qi, others, env, ncell_f) for qi in range(ncell_f[i])])
            if gen.rates is not None:
                coo = gen.rates.rates.tocoo()
                rows.append(mapping[coo.row])
                cols.append(mapping[coo.col])
                vals.append(coo.data)
            if gen.velocity is not None:
                if velocity is None:
                    velocity = np.zeros((total, n))
                velocity[mapping, i] = gen.velocity[:, 0]
    return _assemble(total, rows, cols, vals, sorted(flagged), velocity)


def _ravel(i, qi, others, env, ncell_f):
    idx = [0] * len(ncell_f)
    idx[i] = qi
    for j, e in zip(others, env):
        idx[j] = e
    return int(np.ravel_multi_index(idx, ncell_f))


# ---------------------------------------------------------------------------
# second quantization


def fock_to_tensor(space: FockSpace, psi_sector, sector: int):
    """Map an n-particle occupation-basis vector to the n-fold tensor product.

    Bosons: each distinct ordering of the occupied modes carries c/sqrt(#orderings).
    Fermions: ordering pi of the ascending mode tuple carries sign(pi) c/sqrt(n!).
    Returns (vector over modes^n, n).
    """
    if len(space.species) != 1:
        raise HilbertError("second quantization of a process needs a single-species space")
    s = space.species[0]
    nmodes = space.modes[0]
    counts = space.sectors[sector]
    n = counts[0]
    idx = space.sector_indices(sector)
    out = np.zeros(nmodes ** n, dtype=complex)
    for amp, i in zip(psi_sector, idx):
        modes = [m for m, k in enumerate(space.occ[i]) for _ in range(k)]
        if s.fermionic:
            for perm in itertools.permutations(range(n)):
                sign = _perm_sign(perm)
                tup = tuple(modes[p] for p in perm)
                out[np.ravel_multi_index(tup, (nmodes,) * n) if n else 0] += sign * amp / math.sqrt(math.factorial(n))
        else:
            orders = set(itertools.permutations(modes))
            for tup in orders:
                out[np.ravel_multi_index(tup, (nmodes,) * n) if n else 0] += amp / math.sqrt(len(orders))
    return out, n


def _perm_sign(perm):
    perm = list(perm)
    sign = 1
    for a in range(len(perm)):
        for b in range(a + 1, len(perm)):
            if perm[a] > perm[b]:
                sign = -sign
    return sign


def second_quantize_process(one_particle: GeneratorFamily, space: FockSpace, psi, P1: PovmFamily,
                            floor=DEFAULT_TOL.probability_floor) -> Generator:
    """Lift a one-particle family to the Fock space of `space`.

    Each sector n is handled by the tensor-product construction on the n-fold
    product of the one-particle space (with P1 per factor), and ordered
    configurations are then collected into unordered Fock cells: the rate from
    q' to q sums the ordered rates from one ordered representative of q' to all
    orderings of q.  Sectors combine by direct sum, so particle number is
    conserved.  P1 must be a coordinate PVM whose cells are lattice sites.
    """
    if not P1.is_coordinate:
        raise HilbertError("the one-particle POVM must be a coordinate PVM")
    psi = psi.amplitudes if isinstance(psi, StateVector) else np.asarray(psi, dtype=complex)
    nc = space.ncells
    G = space.lattice.sites
    rows, cols, vals = [], [], []
    flagged = []
    for k, counts in enumerate(space.sectors):
        idx = space.sector_indices(k)
        sub = psi[idx]
        w = float(np.vdot(sub, sub).real)
        n = counts[0]
        if w <= floor:
            flagged.append(k)
            continue
        if n == 0:
            continue
        vec, _ = fock_to_tensor(space, sub / np.sqrt(w), k)
        nm = space.modes[0]
        gen = tensor_product_generator([one_particle] * n, vec / np.linalg.norm(vec), [nm] * n, [P1] * n, floor)
        if gen.rates is None:
            continue
        # ordered site tuples -> Fock cells
        ordered = list(itertools.product(range(P1.ncells), repeat=n))
        to_cell = np.empty(len(ordered), dtype=np.int64)
        for o, tup in enumerate(ordered):
            occ = [0] * G
            for site in tup:
                occ[site] += 1
            # coincident fermions carry no amplitude and have no cell
            to_cell[o] = space._cell_index.get(_config(space, occ), -1)
        rep = {}
        for o in range(len(ordered)):
            if to_cell[o] >= 0:
                rep.setdefault(int(to_cell[o]), o)
        coo = gen.rates.rates.tocoo()
        is_rep = np.array([to_cell[c] >= 0 and to_cell[r] >= 0 and rep[int(to_cell[c])] == c
                           for r, c in zip(coo.row, coo.col)], dtype=bool) if coo.nnz else np.zeros(0, bool)
        rows.append(to_cell[coo.row[is_rep]])
        cols.append(to_cell[coo.col[is_rep]])
        vals.append(coo.data[is_rep])
    return _assemble(nc, rows, cols, vals, flagged)


def _config(space, occ):
    return Configuration((tuple(int(x) for x in occ),))


def site_pvm(lattice: LatticeSpec, components=1) -> PovmFamily:
    """One-particle coordinate PVM grouping spinor components by site."""
    return PovmFamily.coordinate(np.repeat(np.arange(lattice.sites), components),
                                 labels=tuple(range(lattice.sites)))


def generator_residual(gen: Generator, psi, H, P: PovmFamily, hbar=1.0):
    """max_q |(L P)(q) - dP/dt(q)| for the jump part of a generator."""
    psi = psi.amplitudes if isinstance(psi, StateVector) else np.asarray(psi, dtype=complex)
    prob = P.probabilities(psi)
    return float(np.max(np.abs(gen.apply(prob) - born_time_derivative(psi, H, P, hbar))))


@dataclass
class GammaEquivalenceReport:
    max_deviation: float
    max_relative_deviation: float
    support_equal: bool
    dim: int
    tol: float = 1e-12

    @property
    def passed(self):
        return self.support_equal and self.max_relative_deviation <= self.tol

    def to_dict(self):
        return {"max_deviation": self.max_deviation, "max_relative_deviation": self.max_relative_deviation,
                "support_equal": self.support_equal, "dim": self.dim, "tol": self.tol, "passed": self.passed}


def gamma_equivalence_check(h1, statistics, truncation, psi=None, rng=None, hbar=1.0, tol=1e-12):
    """Second-quantized one-particle process against minimal rates of dGamma(h1).

    Deviations are measured relative to max(1, |rate|) since rates scale
    like currents over small probabilities.
    """
    h1 = as_operator(h1).dense()
    lat = LatticeSpec(h1.shape[0], 1.0, "open")
    space = build_fock(lat, [Species("particle", statistics, truncation)])
    if psi is None:
        psi = random_state(space.dim, rng if rng is not None else np.random.default_rng(0))
    psi = psi.amplitudes if isinstance(psi, StateVector) else np.asarray(psi, dtype=complex)
    H = second_quantize_h(space, 0, h1)
    A = minimal_rates(psi, H, gamma_povm(space), hbar).rates.toarray()
    P1 = site_pvm(lat)
    B = second_quantize_process(minimal_jump_family(h1, P1, hbar), space, psi, P1).rates.rates.toarray()
    d = np.abs(A - B)
    return GammaEquivalenceReport(float(d.max()), float((d / np.maximum(1.0, np.abs(A))).max()),
                                  bool(np.array_equal(A > 0, B > 0)), space.dim, tol)
