import numpy as np
import pytest

from bellqft import diagrams as dg
from bellqft.fock import BOSE, FERMI, LatticeSpec, SmearingProfile, Species, build_fock
from bellqft.hilbert import StateVector, random_state
from bellqft.models import (closed_form_crea1_rates, dirac_interaction_diagram, direct_crea1_kernel,
                            preset_model)
from bellqft.rates import minimal_rates


def small_space(G=3):
    return build_fock(LatticeSpec(G), [Species("f", FERMI, 2), Species("b", BOSE, 2)])


def dense(d):
    return dg.realize(d).toarray()


def crea1_term(model, kind):
    space = model.space
    lat = space.lattice
    n = model.params["n"]
    ext = build_fock(lat, [Species("fermion", FERMI, n, min_count=n - 1), space.species[1]])
    phi = model.extras["phi"]
    G = lat.sites

    def at(r):
        e = np.zeros(G)
        e[r] = 1.0
        d = dg.concat(dg.elementary_diagram(ext, 0, "annihilate", e),
                      dg.elementary_diagram(ext, 1, kind, phi, site=r))
        return dg.concat(d, dg.elementary_diagram(ext, 0, "create", e))

    fam = dg.indexed_family(at, range(G))
    return dg.restrict(dg.scale_diagram(dg.integrate_parameter(fam, [0, 1, 3]), model.params["g"]), space)


def test_multiply_diagram():
    s = small_space()
    V = np.arange(s.dim, dtype=float)
    d = dg.elementary_diagram(s, 0, "multiply", V)
    for src in range(s.ncells):
        bs = d.branches(src)
        assert all(b.dest == src and b.lam == () for b in bs)
    assert np.allclose(dense(d), np.diag(V))


def test_annihilate_on_vacuum_empty():
    s = small_space()
    d = dg.elementary_diagram(s, 1, "annihilate", SmearingProfile.gaussian(1.0, 1), site=1)
    vac = s.cell_of(s.cell_labels[0])
    assert sum(s.cell_labels[0].occupations[0]) == 0 and d.branches(vac) == []


@pytest.mark.parametrize("kind", ["create", "annihilate"])
def test_delta_smearing_matches_ladder(kind):
    s = small_space()
    d = dg.elementary_diagram(s, 1, kind, SmearingProfile.delta(), site=2)
    assert np.max(np.abs(dense(d) - s.mode_ladder(s.mode(1, 2, 0), kind).toarray())) < 1e-15


def test_invalid_species_rejected():
    s = small_space()
    with pytest.raises(Exception):
        dg.elementary_diagram(s, 5, "create", np.ones(3))
    with pytest.raises(dg.DiagramError):
        dg.elementary_diagram(s, 0, "teleport", np.ones(3))


def _random_elementary(s, rng):
    kind = rng.choice(["create", "annihilate", "multiply"])
    if kind == "multiply":
        return dg.elementary_diagram(s, 0, "multiply", rng.normal(size=s.dim))
    k = int(rng.integers(0, 2))
    f = rng.normal(size=s.lattice.sites) + 1j * rng.normal(size=s.lattice.sites)
    return dg.elementary_diagram(s, k, str(kind), f)


def test_concat_realizes_matrix_product():
    rng = np.random.default_rng(0)
    for G in (2, 3, 4):
        s = small_space(G)
        for _ in range(6):
            d1, d2 = _random_elementary(s, rng), _random_elementary(s, rng)
            got = dense(dg.concat(d1, d2))
            assert np.max(np.abs(got - dense(d2) @ dense(d1))) < 1e-13
            got = dense(dg.sum_diagrams(d1, d2))
            assert np.max(np.abs(got - dense(d1) - dense(d2))) < 1e-13


def test_concat_identity_and_space_mismatch():
    s = small_space()
    d = dg.elementary_diagram(s, 1, "create", SmearingProfile.gaussian(0.8, 1), site=0)
    one = dg.elementary_diagram(s, 0, "multiply", np.ones(s.dim))
    assert np.array_equal(dense(dg.concat(d, one)), dense(d))
    other = small_space()
    with pytest.raises(dg.DiagramError):
        dg.concat(d, dg.zero_diagram(other))


def test_sum_zero_and_double():
    s = small_space()
    d = dg.elementary_diagram(s, 1, "annihilate", SmearingProfile.gaussian(0.8, 1), site=1)
    assert np.array_equal(dense(dg.sum_diagrams(d, dg.zero_diagram(s))), dense(d))
    assert np.allclose(dense(dg.sum_diagrams(d, d)), 2 * dense(d))


def test_crea1_chain_matches_direct_assembly_g4():
    m = preset_model("crea1", sites=4)
    ref = direct_crea1_kernel(m.space, m.extras["phi"], m.params["g"]).toarray()
    assert np.max(np.abs(dense(m.extras["diagram"]) - ref)) < 1e-13
    both = dg.sum_diagrams(crea1_term(m, "create"), crea1_term(m, "annihilate"))
    assert np.max(np.abs(dense(both) - ref)) < 1e-13


def test_integrated_creation_term_structure():
    m = preset_model("crea1", sites=4)
    d = crea1_term(m, "create")
    for src in range(m.space.ncells):
        bs = d.branches(src)
        lams = [b.lam for b in bs]
        assert len(set(lams)) == len(lams) and all(len(l) == 1 for l in lams)
        src_b = m.space.cell_labels[src].occupations[1]
        for b in bs:
            dst_b = np.array(m.space.cell_labels[b.dest].occupations[1])
            diff = dst_b - np.array(src_b)
            assert diff.sum() == 1 and diff[b.lam[0]] == 1


def test_integrate_singleton_zero_and_collapse():
    s = small_space()
    d = dg.elementary_diagram(s, 1, "create", SmearingProfile.gaussian(0.8, 1), site=0)
    single = dg.indexed_family(lambda r: d, [0])
    assert np.array_equal(dense(dg.integrate_parameter(single, 0)), dense(d))
    assert not dense(dg.integrate_parameter(d, 0, weights=lambda v: 0.0)).any()
    with pytest.raises(dg.CollapseError):
        src = next(i for i in range(s.ncells) if len(d.branches(i)) > 1)
        dg.integrate_parameter(d, 0).branches(src)


def test_rates_real_and_multiply():
    m = preset_model("crea1", sites=4)
    rng = np.random.default_rng(1)
    real = StateVector.normalized(rng.normal(size=m.space.dim))
    assert dg.rates_from_diagram(m.extras["diagram"], real).rates.nnz == 0
    mult = dg.elementary_diagram(m.space, 0, "multiply", rng.normal(size=m.space.dim))
    assert dg.rates_from_diagram(mult, random_state(m.space.dim, rng)).rates.nnz == 0


def test_injectivity_violation_named():
    s = small_space()
    d = dg.elementary_diagram(s, 1, "create", SmearingProfile.gaussian(0.8, 1), site=0)
    dup = dg.indexed_family(lambda r: d, [0, 1])
    with pytest.raises(dg.InjectivityError):
        dg.rates_from_diagram(dup, random_state(s.dim, np.random.default_rng(2)))


def test_creation_rates_match_closed_form():
    m = preset_model("crea1")
    rng = np.random.default_rng(3)
    d = crea1_term(m, "create")
    for _ in range(5):
        psi = random_state(m.space.dim, rng)
        R = dg.rates_from_diagram(d, psi).rates.toarray()
        for src in range(m.space.ncells):
            for cfg, rate, kind in closed_form_crea1_rates(m, psi, m.space.cell_labels[src]):
                if kind == "creation":
                    assert abs(R[m.space.cell_of(cfg), src] - rate) <= 1e-12 * max(1, rate)


def test_disjoint_decomposition():
    m = preset_model("crea1")
    psi = random_state(m.space.dim, np.random.default_rng(4))
    a = dg.rates_from_diagram(crea1_term(m, "create"), psi).rates
    b = dg.rates_from_diagram(crea1_term(m, "annihilate"), psi).rates
    full = dg.rates_from_diagram(m.extras["diagram"], psi).rates
    assert a.multiply(b).nnz == 0
    assert np.max(np.abs((a + b - full).toarray())) < 1e-12


def test_rate_agreement_crea1_20_states():
    m = preset_model("crea1")
    rng = np.random.default_rng(5)
    for _ in range(20):
        psi = random_state(m.space.dim, rng)
        a = dg.rates_from_diagram(m.extras["diagram"], psi).rates.toarray()
        b = minimal_rates(psi, m.Hint, m.P).rates.toarray()
        assert np.max(np.abs(a - b)) <= 1e-12 * max(1, np.abs(b).max())


def test_rate_agreement_dirac():
    m = preset_model("dirac-pair", sites=4)
    d = dirac_interaction_diagram(m.space, m.extras["chi"][0])
    rng = np.random.default_rng(6)
    Hint = m.interaction(0.0)
    for _ in range(20):
        psi = random_state(m.space.dim, rng)
        a = dg.rates_from_diagram(d, psi).rates.toarray()
        b = minimal_rates(psi, Hint, m.P).rates.toarray()
        assert np.max(np.abs(a - b)) <= 1e-12 * max(1, np.abs(b).max())


def test_dump_lists_transitions():
    s = small_space(2)
    d = dg.elementary_diagram(s, 1, "create", SmearingProfile.delta(), site=0)
    text = dg.dump_diagram(d, sources=[0])
    assert "source" in text and "lam=(0,)" in text
