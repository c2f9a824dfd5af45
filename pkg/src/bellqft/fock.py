"""Lattice configuration spaces and truncated Fock spaces.

The Fock basis is the occupation-number basis.  Modes are ordered species
first, then site, then internal component (mode = site * components + comp).
Fermionic signs follow the Jordan-Wigner convention: applying a ladder
operator to mode m picks up (-1)^(number of occupied fermionic modes before m
in the global mode order).  A basis vector is therefore

    |occ> = prod_{m ascending} (a_m^dag)^{n_m} / sqrt(n_m!) |0>

with the lowest mode's creation operator leftmost.

Basis order: sectors (particle-count tuples, one entry per species) in
ascending lexicographic order; within a sector, species 0 varies slowest and
each species' states follow the lexicographic order of their sorted
occupied-mode tuples (itertools.combinations order).
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .hilbert import HilbertError, OperatorMatrix, PovmFamily, as_operator

BOSE = "bose"
FERMI = "fermi"


class FockSpaceTooLarge(HilbertError):
    pass


@dataclass(frozen=True)
class LatticeSpec:
    """Regular 1D lattice of G sites with spacing a."""

    sites: int
    spacing: float = 1.0
    boundary: str = "periodic"

    def __post_init__(self):
        if self.sites < 2:
            raise HilbertError("a lattice needs at least 2 sites")
        if not self.spacing > 0:
            raise HilbertError("lattice spacing must be positive")
        if self.boundary not in ("periodic", "open"):
            raise HilbertError(f"unknown boundary {self.boundary!r}")

    @property
    def periodic(self):
        return self.boundary == "periodic"

    def positions(self):
        return self.spacing * np.arange(self.sites)

    @property
    def length(self):
        return self.spacing * self.sites

    def laplacian(self):
        """Lattice Laplacian (f(x+a) - 2 f(x) + f(x-a)) / a^2 as a sparse matrix."""
        G, a = self.sites, self.spacing
        off = np.ones(G - 1)
        lap = sp.diags([off, -2 * np.ones(G), off], [-1, 0, 1], format="lil")
        if self.periodic:
            lap[0, G - 1] += 1.0
            lap[G - 1, 0] += 1.0
        return sp.csr_matrix(lap) / a**2

    def central_difference(self):
        """Symmetric difference (f(x+a) - f(x-a)) / 2a."""
        G, a = self.sites, self.spacing
        d = sp.diags([-np.ones(G - 1), np.ones(G - 1)], [-1, 1], format="lil")
        if self.periodic:
            d[0, G - 1] -= 1.0
            d[G - 1, 0] += 1.0
        return sp.csr_matrix(d) / (2 * a)

    def to_dict(self):
        return {"sites": self.sites, "spacing": self.spacing, "boundary": self.boundary}


@dataclass(frozen=True)
class Species:
    """A particle species.  Particle counts are kept within [min_count, truncation]."""

    name: str
    statistics: str
    truncation: int
    min_count: int = 0
    components: int = 1

    def __post_init__(self):
        if self.statistics not in (BOSE, FERMI):
            raise HilbertError(f"unknown statistics {self.statistics!r}")
        if self.truncation < 0 or self.min_count < 0 or self.min_count > self.truncation:
            raise HilbertError("need 0 <= min_count <= truncation")
        if self.components < 1:
            raise HilbertError("components must be >= 1")

    @property
    def fermionic(self):
        return self.statistics == FERMI

    def to_dict(self):
        return {"name": self.name, "statistics": self.statistics, "truncation": self.truncation,
                "min_count": self.min_count, "components": self.components}


@dataclass(frozen=True)
class Configuration:
    """Site occupations, one tuple of per-site counts per species."""

    occupations: tuple

    def count(self, species=None):
        if species is None:
            return tuple(sum(o) for o in self.occupations)
        return sum(self.occupations[species])

    def sites(self, species):
        """Occupied sites of a species, repeated by multiplicity."""
        return [s for s, n in enumerate(self.occupations[species]) for _ in range(n)]

    def encode(self):
        return "|".join(",".join(str(n) for n in occ) for occ in self.occupations)

    @classmethod
    def decode(cls, text):
        return cls(tuple(tuple(int(n) for n in part.split(",")) for part in text.split("|")))

    def __str__(self):
        return self.encode()


@dataclass(frozen=True, eq=False)
class SmearingProfile:
    """Form factor phi sampled at signed integer displacements.

    values[center + d] holds phi(d).  On a periodic lattice the profile is
    periodized, phi_G(d) = sum_k phi(d + kG).
    """

    values: np.ndarray
    center: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise HilbertError("smearing profile must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def phi(self, d):
        i = self.center + d
        return float(self.values[i]) if 0 <= i < self.values.size else 0.0

    def kernel(self, lattice: LatticeSpec):
        """Matrix K[y, r] = phi(y - r) respecting the boundary condition."""
        G = lattice.sites
        y = np.arange(G)[:, None]
        r = np.arange(G)[None, :]
        d = y - r
        out = np.zeros((G, G))
        idx = np.arange(self.values.size) - self.center
        for dd, val in zip(idx, self.values):
            if val == 0.0:
                continue
            if lattice.periodic:
                out[(d - dd) % G == 0] += val
            else:
                out[d == dd] += val
        return out

    @property
    def is_zero(self):
        return not np.any(self.values)

    @classmethod
    def delta(cls):
        return cls(np.array([1.0]), 0)

    @classmethod
    def zero(cls):
        return cls(np.array([0.0]), 0)

    @classmethod
    def gaussian(cls, width, radius, amplitude=1.0):
        """exp(-d^2 / (2 width^2)) for |d| <= radius, zero beyond."""
        d = np.arange(-radius, radius + 1)
        return cls(amplitude * np.exp(-0.5 * (d / width) ** 2), radius)

    @classmethod
    def from_csv(cls, path):
        """Two-column CSV (displacement, value); a header line is allowed."""
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"profile file not found: {path}")
        rows = []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].strip().startswith("#"):
                    continue
                try:
                    rows.append((int(row[0]), float(row[1])))
                except ValueError:
                    continue
        if not rows:
            raise HilbertError(f"no profile values in {path}")
        dmin = min(d for d, _ in rows)
        dmax = max(d for d, _ in rows)
        vals = np.zeros(dmax - dmin + 1)
        for d, v in rows:
            vals[d - dmin] = v
        return cls(vals, -dmin)

    def to_dict(self):
        return {"center": self.center, "values": self.values.tolist()}


def _species_states(sp_: Species, modes: int, n: int):
    if sp_.fermionic:
        combos = itertools.combinations(range(modes), n)
    else:
        combos = itertools.combinations_with_replacement(range(modes), n)
    out = []
    for c in combos:
        occ = [0] * modes
        for m in c:
            occ[m] += 1
        out.append(tuple(occ))
    return out


def _species_count(sp_: Species, modes: int, n: int):
    return math.comb(modes, n) if sp_.fermionic else math.comb(modes + n - 1, n)


class FockSpace:
    """Truncated multi-species Fock space in the occupation-number basis.

    Immutable after construction apart from an internal cache of ladder
    matrices, which only memoizes pure functions of the basis.
    """

    def __init__(self, lattice: LatticeSpec, species, max_total=None, max_dim=250_000):
        self.lattice = lattice
        self.species = tuple(species)
        if not self.species:
            raise HilbertError("at least one species is required")
        self.max_total = max_total
        G = lattice.sites
        self.modes = tuple(G * s.components for s in self.species)
        self.mode_offsets = tuple(int(x) for x in np.cumsum((0,) + self.modes[:-1]))
        ranges = [range(s.min_count, s.truncation + 1) for s in self.species]
        sectors = sorted(itertools.product(*ranges))
        if max_total is not None:
            sectors = [c for c in sectors if sum(c) <= max_total]
        dims = [int(np.prod([_species_count(s, m, n) for s, m, n in zip(self.species, self.modes, c)]))
                for c in sectors]
        total = sum(dims)
        if total > max_dim:
            raise FockSpaceTooLarge(
                f"Fock space dimension {total} exceeds cap {max_dim}; sector sizes "
                + ", ".join(f"{c}:{d}" for c, d in zip(sectors, dims)))
        self.sectors = tuple(sectors)
        self.sector_dims = tuple(dims)
        basis = []
        sector_of = []
        for k, c in enumerate(sectors):
            per = [_species_states(s, m, n) for s, m, n in zip(self.species, self.modes, c)]
            for combo in itertools.product(*per):
                basis.append(combo)
                sector_of.append(k)
        self.basis = tuple(basis)
        self.dim = len(basis)
        self.sector_of_index = np.asarray(sector_of, dtype=np.int64)
        self.occ = np.array([sum(b, ()) for b in basis], dtype=np.int64).reshape(self.dim, sum(self.modes))
        self._index = {row.tobytes(): i for i, row in enumerate(self.occ)}
        self._fermi_mode = np.concatenate(
            [np.full(m, s.fermionic) for s, m in zip(self.species, self.modes)])
        self._cache = {}
        self._build_cells()

    # -- bookkeeping ------------------------------------------------------

    def _build_cells(self):
        G = self.lattice.sites
        site_occ = []
        for k, s in enumerate(self.species):
            block = self.occ[:, self.mode_offsets[k]:self.mode_offsets[k] + self.modes[k]]
            site_occ.append(block.reshape(self.dim, G, s.components).sum(axis=2))
        site_occ = np.concatenate(site_occ, axis=1)
        cells = {}
        cell_of = np.empty(self.dim, dtype=np.int64)
        labels = []
        for i, row in enumerate(site_occ):
            key = row.tobytes()
            if key not in cells:
                cells[key] = len(labels)
                parts = np.split(row, np.cumsum([G] * (len(self.species) - 1)))
                labels.append(Configuration(tuple(tuple(int(x) for x in p) for p in parts)))
            cell_of[i] = cells[key]
        self.site_occ = site_occ
        self.cell_of_index = cell_of
        self.cell_labels = tuple(labels)
        self._cell_index = {c: k for k, c in enumerate(labels)}

    @property
    def ncells(self):
        return len(self.cell_labels)

    def index_of(self, occupation):
        """Basis index of a flat mode-occupation vector (or None)."""
        key = np.asarray(occupation, dtype=np.int64).tobytes()
        return self._index.get(key)

    def cell_of(self, config: Configuration):
        return self._cell_index[config]

    def configuration(self, i):
        return self.cell_labels[self.cell_of_index[i]]

    def species_index(self, species):
        if isinstance(species, str):
            for k, s in enumerate(self.species):
                if s.name == species:
                    return k
            raise HilbertError(f"unknown species {species!r}")
        if not 0 <= species < len(self.species):
            raise HilbertError(f"species index {species} out of range")
        return int(species)

    def mode(self, species, site, component=0):
        k = self.species_index(species)
        s = self.species[k]
        if not 0 <= site < self.lattice.sites:
            raise HilbertError(f"site {site} out of range")
        if not 0 <= component < s.components:
            raise HilbertError(f"component {component} out of range")
        return self.mode_offsets[k] + site * s.components + component

    def species_counts(self):
        """Array (dim, n_species) of particle counts per basis state."""
        return np.stack([self.occ[:, o:o + m].sum(axis=1) for o, m in zip(self.mode_offsets, self.modes)],
                        axis=1)

    def sector_indices(self, k):
        return np.flatnonzero(self.sector_of_index == k)

    def describe(self):
        return {
            "lattice": self.lattice.to_dict(),
            "species": [s.to_dict() for s in self.species],
            "max_total": self.max_total,
            "dimension": self.dim,
            "cells": self.ncells,
            "sectors": [{"counts": list(c), "dimension": d} for c, d in zip(self.sectors, self.sector_dims)],
        }

    # -- operators --------------------------------------------------------

    def mode_ladder(self, mode: int, kind: str) -> sp.csr_matrix:
        """Sparse ladder matrix for a global mode index."""
        key = (mode, kind)
        if key in self._cache:
            return self._cache[key]
        if kind not in ("create", "annihilate"):
            raise HilbertError(f"unknown ladder kind {kind!r}")
        k = int(np.searchsorted(self.mode_offsets, mode, side="right") - 1)
        s = self.species[k]
        occ = self.occ
        n_here = occ[:, mode]
        if kind == "create":
            ok = (n_here < 1) if s.fermionic else np.ones(self.dim, bool)
            amp = np.sqrt(n_here + 1.0)
            delta = 1
        else:
            ok = n_here > 0
            amp = np.sqrt(n_here.astype(float))
            delta = -1
        if s.fermionic:
            before = occ[:, :mode][:, self._fermi_mode[:mode]].sum(axis=1)
            amp = amp * (1 - 2 * (before % 2))
        rows, cols, vals = [], [], []
        for i in np.flatnonzero(ok):
            new = occ[i].copy()
            new[mode] += delta
            j = self._index.get(new.tobytes())
            if j is None:  # outside the truncation: hard cutoff
                continue
            rows.append(j)
            cols.append(i)
            vals.append(amp[i])
        m = sp.csr_matrix((np.asarray(vals, dtype=complex), (rows, cols)), shape=(self.dim, self.dim))
        self._cache[key] = m
        return m

    def field(self, species, coefficients, kind):
        """Sum_m f_m a_m^dag (create) or sum_m conj(f_m) a_m (annihilate) over a species' modes."""
        k = self.species_index(species)
        f = np.asarray(coefficients, dtype=complex).reshape(-1)
        if f.size != self.modes[k]:
            raise HilbertError("mode-function length does not match the species' mode count")
        out = sp.csr_matrix((self.dim, self.dim), dtype=complex)
        for j in np.flatnonzero(f):
            c = f[j] if kind == "create" else np.conj(f[j])
            out = out + c * self.mode_ladder(self.mode_offsets[k] + j, kind)
        return out


def build_fock(lattice: LatticeSpec, species, max_total=None, max_dim=250_000) -> FockSpace:
    """Enumerate the truncated Fock basis (see module docstring for the order)."""
    return FockSpace(lattice, species, max_total=max_total, max_dim=max_dim)


def ladder(space: FockSpace, species, site: int, kind: str, component: int = 0) -> OperatorMatrix:
    """a^dag(s) or a(s) in the occupation basis."""
    return OperatorMatrix(space.mode_ladder(space.mode(species, site, component), kind))


def smeared_ladder(space: FockSpace, species, site: int, phi: SmearingProfile, kind: str) -> OperatorMatrix:
    """a_phi(r) = sum_y phi(y - r) a(y), or its adjoint for kind='create'."""
    k = space.species_index(species)
    if space.species[k].components != 1:
        raise HilbertError("smeared ladders are defined for one-component species")
    col = phi.kernel(space.lattice)[:, site]
    return OperatorMatrix(space.field(k, col, kind))


def second_quantize_h(space: FockSpace, species, h1) -> OperatorMatrix:
    """dGamma(h1) = sum_{m,n} h1[m, n] a_m^dag a_n for one species."""
    k = space.species_index(species)
    h1 = as_operator(h1)
    if h1.hermiticity_defect() > 1e-12:
        raise HilbertError("one-particle Hamiltonian must be Hermitian")
    if h1.dim != space.modes[k]:
        raise HilbertError("one-particle Hamiltonian has the wrong dimension")
    coo = sp.coo_matrix(h1.entries)
    off = space.mode_offsets[k]
    out = sp.csr_matrix((space.dim, space.dim), dtype=complex)
    for m, n, v in zip(coo.row, coo.col, coo.data):
        if v != 0:
            out = out + v * hop_operator(space, off + m, off + n)
    return OperatorMatrix(out, hermitian=True, tol=1e-11)


def hop_operator(space: FockSpace, mode_out: int, mode_in: int) -> sp.csr_matrix:
    """a^dag_out a_in from occupation arithmetic.

    Unlike a product of ladder matrices this never leaves the space, so it is
    exact when particle numbers are pinned by a lower count bound.
    """
    key = ("hop", mode_out, mode_in)
    if key in space._cache:
        return space._cache[key]
    occ = space.occ
    fermi = space._fermi_mode
    rows, cols, vals = [], [], []
    for i in np.flatnonzero(occ[:, mode_in] > 0):
        new = occ[i].copy()
        amp = np.sqrt(float(new[mode_in]))
        sign = (-1) ** int(new[:mode_in][fermi[:mode_in]].sum()) if fermi[mode_in] else 1
        new[mode_in] -= 1
        if fermi[mode_out] and new[mode_out] > 0:
            continue
        amp *= np.sqrt(new[mode_out] + 1.0)
        if fermi[mode_out]:
            sign *= (-1) ** int(new[:mode_out][fermi[:mode_out]].sum())
        new[mode_out] += 1
        j = space._index.get(new.tobytes())
        if j is None:
            continue
        rows.append(j)
        cols.append(i)
        vals.append(sign * amp)
    mat = sp.csr_matrix((np.asarray(vals, dtype=complex), (rows, cols)), shape=(space.dim, space.dim))
    space._cache[key] = mat
    return mat


def gamma_povm(space: FockSpace) -> PovmFamily:
    """Coordinate PVM whose cells are the site-occupation configurations."""
    return PovmFamily.coordinate(space.cell_of_index, labels=space.cell_labels)


def _region_mask(space, region):
    region = sorted(set(int(s) for s in region))
    if any(s < 0 or s >= space.lattice.sites for s in region):
        raise HilbertError("region contains sites outside the lattice")
    return region


def number_operator(space: FockSpace, species, region, construction="povm") -> OperatorMatrix:
    """N(R) as sum_q n_R(q) P(q) ('povm') or sum_{s in R} a^dag a ('fields')."""
    k = space.species_index(species)
    region = _region_mask(space, region)
    G = space.lattice.sites
    if construction == "povm":
        cols = [k * G + s for s in region]
        n_r = space.site_occ[:, cols].sum(axis=1) if cols else np.zeros(space.dim)
        return OperatorMatrix(sp.diags(n_r.astype(complex), format="csr"), hermitian=True)
    if construction == "fields":
        out = sp.csr_matrix((space.dim, space.dim), dtype=complex)
        for s in region:
            for c in range(space.species[k].components):
                m = space.mode(k, s, c)
                out = out + space.mode_ladder(m, "create") @ space.mode_ladder(m, "annihilate")
        return OperatorMatrix(out, hermitian=True)
    raise HilbertError(f"unknown construction {construction!r}")


def translation_operator(space: FockSpace, shift: int) -> sp.csr_matrix:
    """Unitary U with U a_(s,c)^dag U^-1 = a_(s+shift,c)^dag on a periodic lattice."""
    if not space.lattice.periodic:
        raise HilbertError("translations need a periodic lattice")
    G = space.lattice.sites
    nmodes = space.occ.shape[1]
    perm = np.empty(nmodes, dtype=np.int64)
    for k, s in enumerate(space.species):
        for site in range(G):
            for c in range(s.components):
                perm[space.mode(k, site, c)] = space.mode(k, (site + shift) % G, c)
    rows, vals = [], []
    for i, row in enumerate(space.occ):
        new = np.zeros_like(row)
        new[perm] = row
        j = space.index_of(new)
        if j is None:
            raise HilbertError("translation leaves the truncated space")
        occupied = perm[np.flatnonzero(row & space._fermi_mode.astype(np.int64))]
        inversions = sum(int(np.sum(occupied[a + 1:] < occupied[a])) for a in range(occupied.size))
        rows.append(j)
        vals.append(-1.0 if inversions % 2 else 1.0)
    return sp.csr_matrix((np.asarray(vals, dtype=complex), (rows, np.arange(space.dim))),
                         shape=(space.dim, space.dim))


def load_site_values(path, sites) -> np.ndarray:
    """Read a site-value CSV (site, value) into an array of length `sites`."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"site-value file not found: {path}")
    out = np.zeros(sites)
    seen = False
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            try:
                s, v = int(row[0]), float(row[1])
            except (ValueError, IndexError):
                continue
            if not 0 <= s < sites:
                raise HilbertError(f"{path}: site {s} outside lattice of {sites} sites")
            out[s] = v
            seen = True
    if not seen:
        raise HilbertError(f"no site values in {path}")
    return out
