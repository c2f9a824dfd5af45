"""Assembled Bell-type lattice models.

* bell-lattice: one particle hopping on a lattice (everything jumps).
* crea1: fermions that emit and absorb bosons through a smeared coupling.
* dirac-pair: lattice Dirac electrons and positrons in an external field,
  with pair creation and annihilation.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import diagrams as dg
from .fock import (BOSE, FERMI, Configuration, FockSpace, LatticeSpec, SmearingProfile, Species, build_fock,
                   gamma_povm, second_quantize_h)
from .hilbert import (HilbertError, OperatorMatrix, PhysicalConstants, PovmFamily, StateVector, zero_operator)


class ModelError(HilbertError):
    pass


@dataclass(frozen=True, eq=False)
class BellModel:
    """(H, configuration space, POVM) triple plus parameters.

    Hint is either None, a fixed operator, or piecewise constant in time:
    hint_pieces[k] holds from hint_times[k] until the next breakpoint.
    """

    name: str
    space: FockSpace
    H0: OperatorMatrix
    P: PovmFamily
    Hint: OperatorMatrix | None = None
    hint_times: tuple = ()
    hint_pieces: tuple = ()
    free_kind: str = "jump"
    constants: PhysicalConstants = PhysicalConstants()
    params: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.space.dim

    @property
    def time_dependent(self):
        return len(self.hint_pieces) > 1

    def piece_index(self, t):
        if not self.hint_pieces:
            return 0
        return max(0, int(np.searchsorted(self.hint_times, t, side="right")) - 1)

    def interaction(self, t=0.0):
        if self.hint_pieces:
            return self.hint_pieces[self.piece_index(t)]
        return self.Hint

    def hamiltonian(self, t=0.0) -> OperatorMatrix:
        hi = self.interaction(t)
        return self.H0 if hi is None else self.H0 + hi

    def manifest(self):
        H = self.hamiltonian(0.0)
        out = {
            "model": self.name,
            "parameters": _jsonable(self.params),
            "constants": self.constants.to_dict(),
            "space": self.space.describe(),
            "free_kind": self.free_kind,
            "time_dependent": self.time_dependent,
            "hermiticity_defect": max(self.hamiltonian(t).hermiticity_defect() for t in (self.hint_times or (0.0,))),
        }
        if H.dim <= 2048:
            ev = np.linalg.eigvalsh(H.dense())
            out["spectrum"] = {"min": float(ev[0]), "max": float(ev[-1]), "gap_at_zero": float(np.min(np.abs(ev)))}
        out["hash"] = self.model_hash()
        return out

    def model_hash(self):
        h = hashlib.sha256()
        h.update(json.dumps({"name": self.name, "params": _jsonable(self.params)}, sort_keys=True).encode())
        for t in (self.hint_times or (0.0,)):
            m = sp.csr_matrix(self.hamiltonian(t).entries)
            m.sort_indices()
            h.update(np.round(m.data, 12).tobytes())
            h.update(m.indices.tobytes())
            h.update(m.indptr.tobytes())
        return h.hexdigest()[:16]


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if hasattr(x, "to_dict"):
        return x.to_dict()
    return x


# ---------------------------------------------------------------------------
# Bell's lattice model


def lattice_kinetic(lattice: LatticeSpec, mass, hbar=1.0):
    """-(hbar^2 / 2m) Delta_a; zero for infinite mass."""
    if np.isinf(mass):
        return sp.csr_matrix((lattice.sites, lattice.sites), dtype=complex)
    return (-(hbar ** 2) / (2 * mass)) * lattice.laplacian().astype(complex)


def build_bell_lattice(lattice: LatticeSpec, mass=1.0, potential=None, hbar=1.0) -> BellModel:
    """One particle on a lattice with H = -(hbar^2/2m) Delta_a + V and the site PVM."""
    space = build_fock(lattice, [Species("particle", BOSE, 1, min_count=1)])
    V = np.zeros(lattice.sites) if potential is None else np.asarray(potential, dtype=float)
    if V.shape != (lattice.sites,):
        raise ModelError("potential must give one value per site")
    H = lattice_kinetic(lattice, mass, hbar) + sp.diags(V.astype(complex))
    H0 = OperatorMatrix(H.tocsr(), hermitian=True)
    return BellModel("bell-lattice", space, H0, gamma_povm(space), Hint=None, free_kind="jump",
                     constants=PhysicalConstants(hbar=hbar, masses=(("particle", mass),)),
                     params={"lattice": lattice.to_dict(), "mass": mass, "potential": V.tolist()})


def build_matrix_model(H, hbar=1.0, name="matrix") -> BellModel:
    """Arbitrary Hermitian H on sites 0..d-1 of an open chain, one particle, site PVM."""
    H = OperatorMatrix(sp.csr_matrix(np.asarray(H, dtype=complex)) if not sp.issparse(H) else H, hermitian=True)
    lattice = LatticeSpec(H.dim, 1.0, "open")
    space = build_fock(lattice, [Species("particle", BOSE, 1, min_count=1)])
    return BellModel(name, space, H, gamma_povm(space), free_kind="jump", constants=PhysicalConstants(hbar=hbar),
                     params={"H": [[[z.real, z.imag] for z in row] for row in H.dense()]})


def build_two_level(omega=1.0, hbar=1.0) -> BellModel:
    """H = hbar omega sigma_x on two cells."""
    return build_matrix_model(hbar * omega * np.array([[0, 1], [1, 0]]), hbar, name="two-level")


# ---------------------------------------------------------------------------
# crea1: emission and absorption of bosons


def crea1_diagram(space: FockSpace, ext: FockSpace, phi: SmearingProfile, g=1.0):
    """Diagram of g * sum_r psi^dag(r) (a_phi^dag(r) + a_phi(r)) psi(r) on `space`.

    Built on `ext` (which admits one fermion fewer, for the intermediate
    configurations) and restricted to `space`.
    """
    G = ext.lattice.sites

    def term(kind):
        def at(r):
            e = np.zeros(G)
            e[r] = 1.0
            d = dg.concat(dg.elementary_diagram(ext, 0, "annihilate", e),
                          dg.elementary_diagram(ext, 1, kind, phi, site=r))
            return dg.concat(d, dg.elementary_diagram(ext, 0, "create", e))
        fam = dg.indexed_family(at, range(G), name=f"psi^dag a{'^dag' if kind == 'create' else ''}_phi psi")
        # lam = (r, x', y, x''): integrate the centre r and both fermion slots
        return dg.integrate_parameter(fam, [0, 1, 3])

    d = dg.sum_diagrams(term("create"), term("annihilate"))
    d = dg.scale_diagram(d, g) if g != 1.0 else d
    return dg.restrict(d, space)


def direct_crea1_kernel(space: FockSpace, phi: SmearingProfile, g=1.0) -> sp.csr_matrix:
    """Interaction kernel from configuration arithmetic in the occupation basis.

    Creation at y from (x', y'): g sum_{x in x'} phi(y - x) sqrt(n'_y + 1);
    annihilation at y': g sum_{x in x'} phi(y' - x) sqrt(n'_y').
    """
    G = space.lattice.sites
    K = phi.kernel(space.lattice)
    M = space.species[1].truncation
    rows, cols, vals = [], [], []
    for i, b in enumerate(space.basis):
        ferm, bos = np.array(b[0]), np.array(b[1])
        smear = K @ ferm  # sum_{x in x'} phi(y - x) for every y
        m = bos.sum()
        for y in range(G):
            if smear[y] == 0:
                continue
            if m < M:
                new = bos.copy()
                new[y] += 1
                j = space.index_of(np.concatenate([ferm, new]))
                rows.append(j)
                cols.append(i)
                vals.append(g * smear[y] * np.sqrt(bos[y] + 1.0))
            if bos[y] > 0:
                new = bos.copy()
                new[y] -= 1
                j = space.index_of(np.concatenate([ferm, new]))
                rows.append(j)
                cols.append(i)
                vals.append(g * smear[y] * np.sqrt(float(bos[y])))
    return sp.csr_matrix((np.asarray(vals, dtype=complex), (rows, cols)), shape=(space.dim, space.dim))


def build_crea1(lattice: LatticeSpec, n=1, M=2, phi: SmearingProfile | None = None, masses=(1.0, 1.0),
                g=1.0, hbar=1.0, check_tol=1e-13) -> BellModel:
    """Fermions (count n) coupled to bosons (at most M) by g psi^dag (a_phi^dag + a_phi) psi."""
    if n < 1:
        raise ModelError("crea1 needs at least one fermion")
    phi = SmearingProfile.gaussian(1.0, 2) if phi is None else phi
    if M < 1:
        raise ModelError("boson truncation M = 0 leaves no interaction to represent")
    species = [Species("fermion", FERMI, n, min_count=n), Species("boson", BOSE, M)]
    space = build_fock(lattice, species)
    mf, mb = masses
    H0 = second_quantize_h(space, 0, lattice_kinetic(lattice, mf, hbar)) + \
        second_quantize_h(space, 1, lattice_kinetic(lattice, mb, hbar))
    H0 = OperatorMatrix(H0.entries, hermitian=True)
    if phi.is_zero or g == 0:
        Hint = zero_operator(space.dim)
        diagram = dg.zero_diagram(space)
    else:
        ext = build_fock(lattice, [Species("fermion", FERMI, n, min_count=n - 1), species[1]])
        diagram = crea1_diagram(space, ext, phi, g)
        Hint_m = dg.realize(diagram)
        direct = direct_crea1_kernel(space, phi, g)
        dev = abs(Hint_m - direct).max() if (Hint_m - direct).nnz else 0.0
        if dev > check_tol:
            raise ModelError(f"diagram and direct crea1 kernels differ by {dev:.3e}")
        Hint = OperatorMatrix(Hint_m, hermitian=True)
    return BellModel("crea1", space, H0, gamma_povm(space), Hint=Hint, free_kind="jump",
                     constants=PhysicalConstants(hbar=hbar, masses=(("fermion", mf), ("boson", mb))),
                     params={"lattice": lattice.to_dict(), "n": n, "M": M, "phi": phi.to_dict(),
                             "masses": list(masses), "g": g},
                     extras={"diagram": diagram, "phi": phi})


def numbered_amplitudes(space: FockSpace, psi):
    """Amplitudes of the numbered (first-quantized) wave function per occupation state.

    psi_hat(q) = c(q) sqrt(prod_s n_s! / (N! M!)), the value taken at any one
    ordering of the particles (fermion signs cancel in the rate formulas).
    """
    psi = psi.amplitudes if isinstance(psi, StateVector) else np.asarray(psi, dtype=complex)
    out = np.empty(space.dim, dtype=complex)
    for i, b in enumerate(space.basis):
        N, M = sum(b[0]), sum(b[1])
        mult = float(np.prod([_fact(k) for k in b[1]]))
        out[i] = psi[i] * np.sqrt(mult / (_fact(N) * _fact(M)))
    return out


def _fact(k):
    return math.factorial(int(k))


def closed_form_crea1_rates(model: BellModel, psi, source: Configuration):
    """Creation and annihilation rates from one source via the numbered-wave-function formulas.

    creation at y:     (2 g sqrt(m'+1)/hbar) [Im psi_hat*(q) sum_x phi(y-x) psi_hat(q')]+ / |psi_hat(q')|^2
    annihilation at y': (2 g n'_y' /(hbar sqrt(m'))) [Im psi_hat*(q) sum_x phi(y'-x) psi_hat(q')]+ / |psi_hat(q')|^2

    The factor n'_y' counts the numbered bosons sitting at y'; on the lattice
    several numbered bosons can share a site.  Returns a list of
    (destination Configuration, rate, kind).
    """
    if model.name != "crea1":
        raise ModelError("closed-form rates exist only for crea1")
    space = model.space
    hbar = model.constants.hbar
    g = model.params["g"]
    phi = model.extras["phi"]
    M = model.params["M"]
    K = phi.kernel(space.lattice)
    amp = numbered_amplitudes(space, psi)
    ferm = np.array(source.occupations[0])
    bos = np.array(source.occupations[1])
    src = space.index_of(np.concatenate([ferm, bos]))
    a_src = amp[src]
    p_src = abs(a_src) ** 2
    out = []
    if p_src <= 1e-14 * _fact(ferm.sum()):
        return out
    smear = K @ ferm
    m = bos.sum()
    for y in range(space.lattice.sites):
        if smear[y] == 0:
            continue
        if m < M:
            new = bos.copy()
            new[y] += 1
            d = space.index_of(np.concatenate([ferm, new]))
            val = (2 * g * np.sqrt(m + 1.0) / hbar) * np.imag(np.conj(amp[d]) * smear[y] * a_src) / p_src
            out.append((Configuration((tuple(ferm), tuple(new))), max(val, 0.0), "creation"))
        if bos[y] > 0:
            new = bos.copy()
            new[y] -= 1
            d = space.index_of(np.concatenate([ferm, new]))
            val = (2 * g * bos[y] / (hbar * np.sqrt(float(m)))) * np.imag(np.conj(amp[d]) * smear[y] * a_src) / p_src
            out.append((Configuration((tuple(ferm), tuple(new))), max(val, 0.0), "annihilation"))
    return out


# ---------------------------------------------------------------------------
# Dirac pair creation


@dataclass(frozen=True, eq=False)
class ExternalFieldSchedule:
    """Piecewise-constant external field A(site, t), a Hermitian 2x2 matrix per site.

    pieces[k] (shape (G, 2, 2)) holds from times[k] until times[k+1].
    """

    times: tuple
    pieces: tuple

    def __post_init__(self):
        if len(self.times) != len(self.pieces) or not self.pieces:
            raise ModelError("one field array per breakpoint is required")
        if list(self.times) != sorted(self.times) or self.times[0] != 0.0:
            raise ModelError("breakpoints must be sorted and start at 0")
        for a in self.pieces:
            a = np.asarray(a)
            if a.ndim != 3 or a.shape[1:] != (2, 2):
                raise ModelError("field arrays must have shape (G, 2, 2)")
            if np.max(np.abs(a - np.conj(np.transpose(a, (0, 2, 1))))) > 1e-12:
                raise ModelError("external field must be Hermitian at every site")
        object.__setattr__(self, "pieces", tuple(np.asarray(a, dtype=complex) for a in self.pieces))

    @classmethod
    def static(cls, field_array):
        return cls((0.0,), (np.asarray(field_array, dtype=complex),))

    @classmethod
    def from_potentials(cls, a0, a1, times=None):
        """A = a0(x) 1 + a1(x) sigma_1 (scalar and vector potential, charge absorbed)."""
        a0 = np.atleast_2d(a0)
        a1 = np.atleast_2d(a1)
        times = (0.0,) if times is None else tuple(times)
        s1 = np.array([[0, 1], [1, 0]], dtype=complex)
        pieces = [x0[:, None, None] * np.eye(2) + x1[:, None, None] * s1 for x0, x1 in zip(a0, a1)]
        return cls(times, tuple(pieces))

    def __call__(self, site, t):
        k = max(0, int(np.searchsorted(self.times, t, side="right")) - 1)
        return self.pieces[k][site]

    @property
    def is_zero(self):
        return all(not np.any(a) for a in self.pieces)

    def to_dict(self):
        return {"times": list(self.times),
                "pieces": [np.stack([a.real, a.imag], axis=-1).tolist() for a in self.pieces]}


SIGMA1 = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA3 = np.array([[1, 0], [0, -1]], dtype=complex)


def dirac_one_particle(lattice: LatticeSpec, mass, c=1.0, hbar=1.0):
    """h0 = -i c hbar sigma_1 D + sigma_3 m c^2 on (site, component) with mode = 2*site + comp."""
    D = lattice.central_difference().toarray()
    G = lattice.sites
    return -1j * c * hbar * np.kron(D, SIGMA1) + mass * c ** 2 * np.kron(np.eye(G), SIGMA3)


def dirac_chi(Pp, Pm, Cmat, A_big):
    """The four two-mode amplitudes of the normal-ordered interaction.

    H_int = sum chi_el[m,n] b^dag_m b_n + chi_ann[m,n] d_m b_n
          + chi_crea[m,n] b^dag_m d^dag_n + chi_pos[m,n] d^dag_m d_n
    with electron mode functions u = P+ e and positron ones w = C P- e.
    """
    U = Pp
    Wm = Cmat @ np.conj(Pm)
    chi_el = U @ A_big @ U.conj().T
    chi_ann = np.conj(Wm) @ A_big @ U.conj().T
    chi_crea = U @ A_big @ Wm.T
    chi_pos = -(Wm @ A_big.T @ Wm.conj().T)
    return chi_el, chi_ann, chi_crea, chi_pos


def _bilinear_operator(space, out_sp, out_kind, in_sp, in_kind, chi):
    out = sp.csr_matrix((space.dim, space.dim), dtype=complex)
    oo, oi = space.mode_offsets[out_sp], space.mode_offsets[in_sp]
    for m, n in zip(*np.nonzero(np.abs(chi) > 1e-15)):
        out = out + chi[m, n] * (space.mode_ladder(oo + m, out_kind) @ space.mode_ladder(oi + n, in_kind))
    return out


def dirac_interaction(space, chis):
    chi_el, chi_ann, chi_crea, chi_pos = chis
    H = (_bilinear_operator(space, 0, "create", 0, "annihilate", chi_el)
         + _bilinear_operator(space, 1, "annihilate", 0, "annihilate", chi_ann)
         + _bilinear_operator(space, 0, "create", 1, "create", chi_crea)
         + _bilinear_operator(space, 1, "create", 1, "annihilate", chi_pos))
    H.eliminate_zeros()
    return H


def dirac_interaction_diagram(space, chis):
    chi_el, chi_ann, chi_crea, chi_pos = chis
    terms = [dg.bilinear_diagram(space, (0, "create"), (0, "annihilate"), chi_el, "electron move"),
             dg.bilinear_diagram(space, (1, "annihilate"), (0, "annihilate"), chi_ann, "pair annihilation"),
             dg.bilinear_diagram(space, (0, "create"), (1, "create"), chi_crea, "pair creation"),
             dg.bilinear_diagram(space, (1, "create"), (1, "annihilate"), chi_pos, "positron move")]
    d = terms[0]
    for t in terms[1:]:
        d = dg.sum_diagrams(d, t)
    return d


def direct_dirac_interaction(space, Pp, Pm, Cmat, A):
    """sum_x sum_ij A^ij(x) [b*_i b_j + d_i b_j + b*_i d*_j - d*_j d_i] from field operators."""
    G = space.lattice.sites
    H = sp.csr_matrix((space.dim, space.dim), dtype=complex)
    Wm = Cmat @ np.conj(Pm)
    for x in range(G):
        if not np.any(A[x]):
            continue
        b = [space.field(0, Pp[:, 2 * x + i], "annihilate") for i in range(2)]
        bd = [space.field(0, Pp[:, 2 * x + i], "create") for i in range(2)]
        d = [space.field(1, Wm[:, 2 * x + i], "annihilate") for i in range(2)]
        dd = [space.field(1, Wm[:, 2 * x + i], "create") for i in range(2)]
        for i in range(2):
            for j in range(2):
                a = A[x][i, j]
                if a == 0:
                    continue
                H = H + a * (bd[i] @ b[j] + d[i] @ b[j] + bd[i] @ dd[j] - dd[j] @ d[i])
    return H


def build_dirac_pair(lattice: LatticeSpec, mass=1.0, A: ExternalFieldSchedule | None = None, cap=2, c=1.0,
                     hbar=1.0) -> BellModel:
    """Lattice Dirac electrons and positrons in an external field.

    The configuration space is the extended Fock space of electron and
    positron modes (site, spinor component) with N + N~ <= cap; a
    configuration records how many electrons and positrons sit at each site.
    Physical states lie in the subspace generated by positive-energy mode
    functions (see dirac_physical_basis).
    """
    if not lattice.periodic:
        raise ModelError("the Dirac model needs a periodic lattice")
    G = lattice.sites
    if A is None:
        A = ExternalFieldSchedule.static(np.zeros((G, 2, 2)))
    if A.pieces[0].shape[0] != G:
        raise ModelError("external field has the wrong number of sites")
    h0 = dirac_one_particle(lattice, mass, c, hbar)
    evals, evecs = np.linalg.eigh(h0)
    if np.min(np.abs(evals)) < 1e-10:
        raise ModelError("free lattice Dirac operator has a zero mode")
    pos = evals > 0
    Pp = evecs[:, pos] @ evecs[:, pos].conj().T
    Pm = np.eye(2 * G) - Pp
    Cmat = np.kron(np.eye(G), SIGMA1)
    cdev = np.max(np.abs(Cmat @ np.conj(h0) @ Cmat - (-h0)))
    if cdev > 1e-12:
        raise ModelError(f"charge conjugation check failed (deviation {cdev:.3e})")
    space = build_fock(lattice, [Species("electron", FERMI, cap, components=2),
                                 Species("positron", FERMI, cap, components=2)], max_total=cap)
    hp = Pp @ h0 @ Pp
    hp = 0.5 * (hp + hp.conj().T)
    H0 = OperatorMatrix(second_quantize_h(space, 0, hp).entries + second_quantize_h(space, 1, hp).entries,
                        hermitian=True, tol=1e-11)
    pieces = []
    chis = []
    for a in A.pieces:
        A_big = sla.block_diag(*a)
        ch = dirac_chi(Pp, Pm, Cmat, A_big)
        chis.append(ch)
        Hi = dirac_interaction(space, ch)
        pieces.append(OperatorMatrix(Hi, hermitian=True, tol=1e-11))
    return BellModel("dirac-pair", space, H0, gamma_povm(space), Hint=pieces[0], hint_times=tuple(A.times),
                     hint_pieces=tuple(pieces), free_kind="jump",
                     constants=PhysicalConstants(hbar=hbar, c=c, masses=(("electron", mass), ("positron", mass))),
                     params={"lattice": lattice.to_dict(), "mass": mass, "cap": cap, "field": A.to_dict()},
                     extras={"h0": h0, "P_plus": Pp, "P_minus": Pm, "C": Cmat, "chi": chis, "field": A,
                             "positive_modes": evecs[:, pos]})


def dirac_physical_basis(model: BellModel):
    """Orthonormal basis (columns) of the physical subspace inside the extended space.

    Spanned by b^dag(u_a1)...d^dag(v_b1)...|0> with u_a the positive-energy
    eigenvectors of h0 and v_b = C u_b-bar built from negative-energy ones.
    """
    space = model.space
    h0 = model.extras["h0"]
    evals, evecs = np.linalg.eigh(h0)
    u = evecs[:, evals > 0]
    v = model.extras["C"] @ np.conj(evecs[:, evals < 0])
    vac = np.zeros(space.dim, dtype=complex)
    vac[space.index_of(np.zeros(space.occ.shape[1], dtype=np.int64))] = 1.0
    cols = []
    cap = model.params["cap"]
    bd = [space.field(0, u[:, a], "create") for a in range(u.shape[1])]
    dd = [space.field(1, v[:, b], "create") for b in range(v.shape[1])]
    for N in range(cap + 1):
        for Nt in range(cap + 1 - N):
            for el in itertools.combinations(range(len(bd)), N):
                for po in itertools.combinations(range(len(dd)), Nt):
                    vec = vac
                    for b in reversed(po):
                        vec = dd[b] @ vec
                    for a in reversed(el):
                        vec = bd[a] @ vec
                    cols.append(vec)
    B = np.stack(cols, axis=1)
    return B


def classify_jump(model: BellModel, src: Configuration, dst: Configuration):
    """Name the transition class of a jump between two configurations."""
    diffs = [np.array(b) - np.array(a) for a, b in zip(src.occupations, dst.occupations)]
    sig = []
    for d in diffs:
        sig.append((int(d[d > 0].sum()), int(-d[d < 0].sum())))
    if model.name == "dirac-pair":
        (ea, er), (pa, pr) = sig
        table = {((1, 1), (0, 0)): "electron move", ((0, 0), (1, 1)): "positron move",
                 ((1, 0), (1, 0)): "pair creation", ((0, 1), (0, 1)): "pair annihilation"}
        return table.get(((ea, er), (pa, pr)), "other")
    if model.name == "crea1":
        (fa, fr), (ba, br) = sig
        table = {((0, 0), (1, 0)): "creation", ((0, 0), (0, 1)): "annihilation",
                 ((1, 1), (0, 0)): "fermion hop", ((0, 0), (1, 1)): "boson hop"}
        return table.get(((fa, fr), (ba, br)), "other")
    if model.name == "bell-lattice":
        return "hop" if sig[0] == (1, 1) else "other"
    return "jump" if sig[0] == (1, 1) else "other"


# ---------------------------------------------------------------------------
# presets


def gaussian_packet(lattice: LatticeSpec, center, width, k=0.0):
    x = lattice.positions()
    d = x - center
    if lattice.periodic:
        L = lattice.length
        d = (d + L / 2) % L - L / 2
    return np.exp(-d ** 2 / (4 * width ** 2) + 1j * k * x)


MODEL_NAMES = ("bell-lattice", "crea1", "dirac-pair", "two-level")


def preset_model(name, **kw) -> BellModel:
    if name == "two-level":
        return build_two_level(kw.get("omega", 1.0))
    if name == "bell-lattice":
        lat = LatticeSpec(kw.get("sites", 32), kw.get("spacing", 1.0), kw.get("boundary", "periodic"))
        return build_bell_lattice(lat, kw.get("mass", 1.0), kw.get("potential"))
    if name == "crea1":
        lat = LatticeSpec(kw.get("sites", 6), kw.get("spacing", 1.0), kw.get("boundary", "periodic"))
        phi = kw.get("phi") or SmearingProfile.gaussian(kw.get("phi_width", 0.7), kw.get("phi_radius", 1))
        return build_crea1(lat, kw.get("n", 1), kw.get("M", 2), phi, tuple(kw.get("masses", (10.0, 4.0))),
                           g=kw.get("g", 0.3))
    if name == "dirac-pair":
        G = kw.get("sites", 8)
        lat = LatticeSpec(G, kw.get("spacing", 1.0), "periodic")
        x = np.arange(G)
        a0 = kw.get("a0", 0.8 * np.cos(2 * np.pi * x / G))
        a1 = kw.get("a1", 0.5 * np.sin(2 * np.pi * x / G))
        A = ExternalFieldSchedule.from_potentials(a0, a1)
        return build_dirac_pair(lat, kw.get("mass", 1.0), A, cap=kw.get("cap", 2))
    raise ModelError(f"unknown model {name!r}")


def preset_state(model: BellModel, name="default", **kw) -> StateVector:
    """Named initial states for the built-in models."""
    space = model.space
    if model.name == "bell-lattice":
        lat = space.lattice
        center = kw.get("center", lat.length / 2)
        width = kw.get("width", 3.0 * lat.spacing)
        k = kw.get("k", 0.5)
        if name == "plane-wave":
            return StateVector.normalized(np.exp(1j * k * lat.positions()))
        return StateVector.normalized(gaussian_packet(lat, center, width, k))
    if model.name == "crea1":
        # fermion packet near one site, boson vacuum
        lat = space.lattice
        f = gaussian_packet(lat, kw.get("center", 0.0), kw.get("width", 0.6), kw.get("k", 0.8))
        psi = np.zeros(space.dim, dtype=complex)
        for s in range(lat.sites):
            occ = np.zeros(space.occ.shape[1], dtype=np.int64)
            occ[s] = 1
            psi[space.index_of(occ)] = f[s]
        if name == "random":
            rng = np.random.default_rng(kw.get("seed", 0))
            psi = rng.normal(size=space.dim) + 1j * rng.normal(size=space.dim)
        return StateVector.normalized(psi)
    if model.name == "dirac-pair":
        G = space.lattice.sites
        Pp = model.extras["P_plus"]
        Wm = model.extras["C"] @ np.conj(model.extras["P_minus"])
        vac = np.zeros(space.dim, dtype=complex)
        vac[space.index_of(np.zeros(space.occ.shape[1], dtype=np.int64))] = 1.0
        u = Pp[:, 2 * (G // 2)]
        u = u / np.linalg.norm(u)
        w = Wm[:, 2 * (G // 4) + 1]
        w = w / np.linalg.norm(w)
        one = space.field(0, u, "create") @ vac
        pair = space.field(0, u, "create") @ (space.field(1, w, "create") @ vac)
        psi = 0.6 * vac + 0.6 * np.exp(0.7j) * one + 0.5 * np.exp(-0.4j) * pair
        return StateVector.normalized(psi)
    if model.name == "two-level":
        return StateVector.normalized(np.array([1.0, 1j]))
    raise ModelError(f"no preset state for {model.name}")
