"""Kernel diagrams: operators as parametrized transitions with amplitudes.

A diagram on a Fock space maps a source cell q' to a list of branches
(lam, destination cell, weight, amplitude block).  The amplitude block is a
dense matrix from the source cell's internal space (its basis states) to the
destination cell's internal space; for spinless species every cell holds a
single basis state and the block is 1x1.  Parameters lam are flat tuples:
elementary diagrams carry one slot (a site) or none, concatenation joins the
tuples, and integrate_parameter removes slots.

Diagrams are evaluated lazily, one source cell at a time; realize() builds
the full matrix and is meant for tests and small spaces.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .fock import Configuration, FockSpace, SmearingProfile
from .hilbert import DEFAULT_TOL, HilbertError, StateVector
from .rates import JumpRateTable


class DiagramError(HilbertError):
    pass


class InjectivityError(DiagramError):
    def __init__(self, source, dest):
        super().__init__(f"transition not injective at source {source}: several parameters reach {dest}")
        self.source = source


class CollapseError(DiagramError):
    def __init__(self, source):
        super().__init__(f"integrated slot does not collapse consistently at source {source}")
        self.source = source


@dataclass(frozen=True, eq=False)
class Branch:
    lam: tuple
    dest: int
    weight: float
    amp: np.ndarray


def _members(space: FockSpace):
    m = space._cache.get("members")
    if m is None:
        order = np.argsort(space.cell_of_index, kind="stable")
        bounds = np.searchsorted(space.cell_of_index[order], np.arange(space.ncells + 1))
        m = [order[bounds[k]:bounds[k + 1]] for k in range(space.ncells)]
        space._cache["members"] = m
    return m


def _block(mat, rows, cols):
    return mat[rows][:, cols].toarray()


def _nonzero(a, tol=0.0):
    return np.any(np.abs(a) > tol)


class KernelDiagram:
    """Lazy kernel diagram between two Fock spaces."""

    def __init__(self, domain: FockSpace, codomain: FockSpace, branch_fn: Callable, name="diagram"):
        self.domain = domain
        self.codomain = codomain
        self._branch_fn = branch_fn
        self.name = name

    def branches(self, source: int):
        return self._branch_fn(source)

    def __repr__(self):
        return f"KernelDiagram({self.name})"


def _add_site(config: Configuration, species, site, delta):
    occ = [list(o) for o in config.occupations]
    occ[species][site] += delta
    if occ[species][site] < 0:
        return None
    return Configuration(tuple(tuple(o) for o in occ))


def _mode_function(space: FockSpace, species: int, payload, site):
    if isinstance(payload, SmearingProfile):
        if site is None:
            raise DiagramError("a smearing profile payload needs a centre site")
        if space.species[species].components != 1:
            raise DiagramError("smearing profiles are scalar; use a mode function for spinor species")
        return payload.kernel(space.lattice)[:, site].astype(complex)
    f = np.asarray(payload, dtype=complex).reshape(-1)
    if f.size != space.modes[species]:
        raise DiagramError("mode function length does not match the species")
    return f


def elementary_diagram(space: FockSpace, species, kind: str, payload, site=None) -> KernelDiagram:
    """Field-operator and multiplication diagrams.

    create: lam = site where a particle is appended, amplitude sum_c f(lam,c) a^dag(lam,c)
    annihilate: lam = occupied site of the source, amplitude sum_c conj(f(lam,c)) a(lam,c)
    multiply: lam = (), identity transition, amplitude diag(V) on the cell
    """
    members = _members(space)
    if kind == "multiply":
        if callable(payload):
            vals = np.array([payload(space.configuration(i)) for i in range(space.dim)], dtype=complex)
        else:
            vals = np.asarray(payload, dtype=complex).reshape(-1)
            if vals.size == space.ncells:
                vals = vals[space.cell_of_index]
            if vals.size != space.dim:
                raise DiagramError("multiplication payload must give one value per basis state or cell")

        def fn(src):
            block = np.diag(vals[members[src]])
            return [Branch((), src, 1.0, block)] if _nonzero(block) else []

        return KernelDiagram(space, space, fn, name="multiply")

    if kind not in ("create", "annihilate"):
        raise DiagramError(f"unknown diagram kind {kind!r}")
    k = space.species_index(species)
    f = _mode_function(space, k, payload, site)
    ncomp = space.species[k].components
    G = space.lattice.sites
    ladders = [[space.mode_ladder(space.mode(k, s, c), kind) for c in range(ncomp)] for s in range(G)]
    coef = f.reshape(G, ncomp) if kind == "create" else np.conj(f.reshape(G, ncomp))
    delta = 1 if kind == "create" else -1

    def fn(src):
        config = space.cell_labels[src]
        sites = range(G) if kind == "create" else [s for s in range(G) if config.occupations[k][s] > 0]
        out = []
        for s in sites:
            if not np.any(coef[s]):
                continue
            dest_cfg = _add_site(config, k, s, delta)
            if dest_cfg is None or dest_cfg not in space._cell_index:
                continue  # truncation: hard cutoff
            dest = space.cell_of(dest_cfg)
            block = sum(coef[s, c] * _block(ladders[s][c], members[dest], members[src])
                        for c in range(ncomp) if coef[s, c] != 0)
            if _nonzero(block):
                out.append(Branch((s,), dest, 1.0, block))
        return out

    return KernelDiagram(space, space, fn, name=f"{kind}[{space.species[k].name}]")


def zero_diagram(space: FockSpace) -> KernelDiagram:
    return KernelDiagram(space, space, lambda src: [], name="zero")


def concat(d1: KernelDiagram, d2: KernelDiagram) -> KernelDiagram:
    """Apply d1 first, then d2 (realizes matrix(d2) @ matrix(d1))."""
    if d1.codomain is not d2.domain:
        raise DiagramError("concatenated diagrams must share the intermediate space")

    def fn(src):
        out = []
        for b1 in d1.branches(src):
            for b2 in d2.branches(b1.dest):
                amp = b2.amp @ b1.amp
                if _nonzero(amp):
                    out.append(Branch(b1.lam + b2.lam, b2.dest, b1.weight * b2.weight, amp))
        return out

    return KernelDiagram(d1.domain, d2.codomain, fn, name=f"({d1.name} ; {d2.name})")


def sum_diagrams(d1: KernelDiagram, d2: KernelDiagram) -> KernelDiagram:
    """Sum of two diagrams; branches with equal (lam, destination) add amplitudes."""
    if d1.domain is not d2.domain or d1.codomain is not d2.codomain:
        raise DiagramError("summed diagrams must act between the same spaces")

    def fn(src):
        merged = {}
        for b in list(d1.branches(src)) + list(d2.branches(src)):
            key = (b.lam, b.dest)
            if key in merged:
                prev = merged[key]
                merged[key] = Branch(b.lam, b.dest, 1.0, prev.weight * prev.amp + b.weight * b.amp)
            else:
                merged[key] = b
        return [b for b in merged.values() if _nonzero(b.weight * b.amp)]

    return KernelDiagram(d1.domain, d1.codomain, fn, name=f"({d1.name} + {d2.name})")


def indexed_family(make: Callable[[int], KernelDiagram], values, name="family") -> KernelDiagram:
    """Stack diagrams d_r over r in values into one diagram with a leading slot r."""
    diagrams = {r: make(r) for r in values}
    first = next(iter(diagrams.values()))

    def fn(src):
        return [Branch((r,) + b.lam, b.dest, b.weight, b.amp)
                for r, d in diagrams.items() for b in d.branches(src)]

    return KernelDiagram(first.domain, first.codomain, fn, name=name)


def integrate_parameter(d: KernelDiagram, over, weights=None) -> KernelDiagram:
    """Sum branches over one or more parameter slots with weights.

    weights maps a slot value (or tuple of values for several slots) to its
    measure; the default is the counting measure.  For every remaining
    parameter value the destination must not depend on the integrated slots.
    """
    slots = sorted([over] if np.isscalar(over) else list(over))

    def weight_of(vals):
        if weights is None:
            return 1.0
        key = vals[0] if len(vals) == 1 else vals
        return weights(key) if callable(weights) else weights[key]

    def fn(src):
        groups = {}
        for b in d.branches(src):
            vals = tuple(b.lam[s] for s in slots)
            rest = tuple(x for i, x in enumerate(b.lam) if i not in slots)
            w = weight_of(vals) * b.weight
            if w == 0:
                continue
            if rest in groups:
                dest, amp = groups[rest]
                if dest != b.dest:
                    raise CollapseError(d.domain.cell_labels[src])
                groups[rest] = (dest, amp + w * b.amp)
            else:
                groups[rest] = (b.dest, w * b.amp)
        return [Branch(rest, dest, 1.0, amp) for rest, (dest, amp) in groups.items() if _nonzero(amp)]

    return KernelDiagram(d.domain, d.codomain, fn, name=f"int[{slots}]{d.name}")


def scale_diagram(d: KernelDiagram, c) -> KernelDiagram:
    def fn(src):
        return [Branch(b.lam, b.dest, b.weight, c * b.amp) for b in d.branches(src)] if c != 0 else []

    return KernelDiagram(d.domain, d.codomain, fn, name=f"{c}*{d.name}")


def bilinear_diagram(space: FockSpace, out_op, in_op, chi, name="bilinear") -> KernelDiagram:
    """sum_{m,n} chi[m, n] O_out(m) O_in(n) with the in-operator applied first.

    out_op and in_op are (species, kind) pairs; chi is indexed by the species'
    mode indices.  Parameters are (in-site, out-site).  Branches returning to
    the source configuration (a particle leaving and re-entering one site) are
    merged into a single parameter (-1, -1): they describe no motion.
    """
    ks_out, kind_out = space.species_index(out_op[0]), out_op[1]
    ks_in, kind_in = space.species_index(in_op[0]), in_op[1]
    chi = np.asarray(chi, dtype=complex)
    if chi.shape != (space.modes[ks_out], space.modes[ks_in]):
        raise DiagramError("chi has the wrong shape")
    members = _members(space)
    G = space.lattice.sites
    c_out, c_in = space.species[ks_out].components, space.species[ks_in].components
    lad_out = [[space.mode_ladder(space.mode(ks_out, s, c), kind_out) for c in range(c_out)] for s in range(G)]
    lad_in = [[space.mode_ladder(space.mode(ks_in, s, c), kind_in) for c in range(c_in)] for s in range(G)]
    chi4 = chi.reshape(G, c_out, G, c_in)
    d_out = 1 if kind_out == "create" else -1
    d_in = 1 if kind_in == "create" else -1

    def fn(src):
        cfg = space.cell_labels[src]
        in_sites = range(G) if kind_in == "create" else [s for s in range(G) if cfg.occupations[ks_in][s] > 0]
        out = {}
        stay = None
        for s_in in in_sites:
            mid_cfg = _add_site(cfg, ks_in, s_in, d_in)
            if mid_cfg is None or mid_cfg not in space._cell_index:
                continue
            mid = space.cell_of(mid_cfg)
            in_blocks = [_block(lad_in[s_in][k], members[mid], members[src]) for k in range(c_in)]
            out_sites = range(G) if kind_out == "create" else \
                [s for s in range(G) if mid_cfg.occupations[ks_out][s] > 0]
            for s_out in out_sites:
                coeff = chi4[s_out, :, s_in, :]
                if not np.any(coeff):
                    continue
                dest_cfg = _add_site(mid_cfg, ks_out, s_out, d_out)
                if dest_cfg is None or dest_cfg not in space._cell_index:
                    continue
                dest = space.cell_of(dest_cfg)
                block = 0
                for l in range(c_out):
                    ob = _block(lad_out[s_out][l], members[dest], members[mid])
                    for k in range(c_in):
                        if coeff[l, k] != 0:
                            block = block + coeff[l, k] * (ob @ in_blocks[k])
                if not isinstance(block, np.ndarray) or not _nonzero(block):
                    continue
                if dest == src:
                    stay = block if stay is None else stay + block
                else:
                    out[(s_in, s_out)] = Branch((s_in, s_out), dest, 1.0, block)
        branches = list(out.values())
        if stay is not None and _nonzero(stay):
            branches.append(Branch((-1, -1), src, 1.0, stay))
        return branches

    return KernelDiagram(space, space, fn, name=name)


# ---------------------------------------------------------------------------
# realization and rates


def realize(d: KernelDiagram) -> sp.csr_matrix:
    """Full matrix <q|O|q'> of a diagram."""
    mem_in, mem_out = _members(d.domain), _members(d.codomain)
    rows, cols, vals = [], [], []
    for src in range(d.domain.ncells):
        for b in d.branches(src):
            blk = b.weight * b.amp
            r = mem_out[b.dest]
            c = mem_in[src]
            rr, cc = np.meshgrid(r, c, indexing="ij")
            rows.append(rr.ravel())
            cols.append(cc.ravel())
            vals.append(blk.ravel())
    if not rows:
        return sp.csr_matrix((d.codomain.dim, d.domain.dim), dtype=complex)
    m = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(d.codomain.dim, d.domain.dim)).tocsr()
    m.eliminate_zeros()
    return m


def rates_from_diagram(d: KernelDiagram, psi, hbar=1.0, floor=DEFAULT_TOL.probability_floor) -> JumpRateTable:
    """Jump rates read off the branches of a diagram.

    sigma(F(q',lam) | q') = [(2/hbar) Im psi(F)^dag w K psi(q')]+ / |psi(q')|^2.
    """
    if d.domain is not d.codomain:
        raise DiagramError("rates need a diagram from a space to itself")
    space = d.domain
    psi = psi.amplitudes if isinstance(psi, StateVector) else np.asarray(psi, dtype=complex)
    members = _members(space)
    n = space.ncells
    rows, cols, vals = [], [], []
    srows, scols = [], []
    flagged = np.zeros(n, bool)
    for src in range(n):
        vs = psi[members[src]]
        p = float(np.vdot(vs, vs).real)
        branches = d.branches(src)
        dests = [b.dest for b in branches]
        if len(set(dests)) != len(dests):
            dup = next(x for x in dests if dests.count(x) > 1)
            raise InjectivityError(space.cell_labels[src], space.cell_labels[dup])
        if p <= floor:
            flagged[src] = True
            continue
        for b in branches:
            if b.dest == src:
                continue
            srows.append(b.dest)
            scols.append(src)
            val = (2.0 / hbar) * np.imag(np.vdot(psi[members[b.dest]], b.weight * (b.amp @ vs)))
            if val > 0:
                rows.append(b.dest)
                cols.append(src)
                vals.append(val / p)
    rates = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    totals = np.asarray(rates.sum(axis=0)).ravel()
    support = sp.csr_matrix((np.ones(len(srows)), (srows, scols)), shape=(n, n))
    return JumpRateTable(rates, totals, flagged, minimal=True, labels=space.cell_labels, kernel_support=support)


def dump_diagram(d: KernelDiagram, sources=None, max_branches=50) -> str:
    """Human-readable listing of transitions per source configuration."""
    space = d.domain
    lines = [f"diagram {d.name}"]
    for src in (range(space.ncells) if sources is None else sources):
        branches = d.branches(src)
        lines.append(f"source {space.cell_labels[src]}: {len(branches)} branches")
        for b in branches[:max_branches]:
            amp = b.weight * b.amp
            desc = f"{complex(amp[0, 0]):.6g}" if amp.size == 1 else f"block {amp.shape} |K|={np.linalg.norm(amp):.6g}"
            lines.append(f"  lam={b.lam} -> {d.codomain.cell_labels[b.dest]} : {desc}")
        if len(branches) > max_branches:
            lines.append(f"  ... {len(branches) - max_branches} more")
    return "\n".join(lines)


def restrict(d: KernelDiagram, space: FockSpace) -> KernelDiagram:
    """Restrict a diagram built on a larger space to a subspace with the same mode layout.

    Cells are matched by configuration; branches leaving the subspace are
    dropped.  Within a cell the basis order of both spaces agrees because
    sectors are enumerated identically.
    """
    big = d.domain
    to_big = np.array([big.cell_of(c) for c in space.cell_labels])
    from_big = {int(b): k for k, b in enumerate(to_big)}

    def fn(src):
        out = []
        for b in d.branches(int(to_big[src])):
            k = from_big.get(b.dest)
            if k is not None:
                out.append(Branch(b.lam, k, b.weight, b.amp))
        return out

    return KernelDiagram(space, space, fn, name=f"restrict({d.name})")
