import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bellqft import flow
from bellqft.fock import LatticeSpec
from bellqft.hilbert import (DensityMatrix, OperatorMatrix, PovmFamily, partial_trace, random_hermitian,
                             random_partition_pvm, random_state)
from bellqft.models import build_bell_lattice, preset_model, preset_state

HBAR = 1.0


def packet(n, L, x0, s, k):
    x = L / n * np.arange(n)
    return x, np.exp(-(x - x0) ** 2 / (4 * s ** 2) + 1j * k * x)


def test_real_psi_zero_velocity():
    x, v = packet(64, 20.0, 10.0, 2.0, 0.0)
    psi = flow.GridWaveFunction(v, x[1])
    f = flow.bohm_velocity_field(psi, [1.0])
    assert np.nanmax(np.abs(f)) == 0


def test_plane_wave_velocity():
    n, L, m = 64, 10.0, 1.7
    k = 2 * np.pi * 5 / L
    x = L / n * np.arange(n)
    psi = flow.GridWaveFunction(np.exp(1j * k * x), L / n)
    f = flow.bohm_velocity_field(psi, [m])
    assert np.max(np.abs(f - HBAR * k / m)) < 1e-10
    for p in (0.0, 1.37, 9.9):
        assert abs(flow.bohm_velocity(psi, [m], [p])[0] - k / m) < 1e-10


def test_gaussian_packet_velocity():
    k, m = 1.3, 0.8
    x, v = packet(256, 40.0, 20.0, 2.0, k)
    psi = flow.GridWaveFunction(v, x[1])
    for p in np.linspace(14, 26, 13) + 0.05:
        assert abs(flow.bohm_velocity(psi, [m], [p])[0] - k / m) < 1e-8


def test_density_floor_flagged():
    x = np.arange(32) * 0.5
    psi = flow.GridWaveFunction(np.sin(2 * np.pi * x / 16.0), 0.5)
    with pytest.raises(flow.DensityFloorError):
        flow.bohm_velocity(psi, [1.0], [0.0])
    assert np.isnan(flow.bohm_velocity_field(psi, [1.0])[0, 0])


def test_two_particle_product_velocity():
    _, a = packet(32, 16.0, 8.0, 1.5, 0.7)
    _, b = packet(32, 16.0, 8.0, 1.5, -0.4)
    psi = flow.GridWaveFunction(np.outer(a, b), 0.5)
    v = flow.bohm_velocity(psi, [1.0, 2.0], [8.0, 8.0])
    assert np.allclose(v, [0.7, -0.2], atol=1e-8)


def test_dirac_extremal_and_zero():
    n = 16
    up = np.ones((n, 2)) / np.sqrt(2)
    psi = flow.GridWaveFunction(up, 0.5, spinor=True)
    assert abs(flow.bohm_dirac_velocity(psi, [1.3], c=2.0)[0] - 2.0) < 1e-12
    zero = np.tile([1, 1j], (n, 1)) / np.sqrt(2)
    psi = flow.GridWaveFunction(zero, 0.5, spinor=True)
    assert np.max(np.abs(flow.bohm_dirac_velocity_field(psi, c=2.0))) < 1e-15


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.1, 10))
def test_dirac_speed_bound(seed, c):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(24, 2)) + 1j * rng.normal(size=(24, 2))
    psi = flow.GridWaveFunction(v, 0.3, spinor=True)
    assert np.all(np.abs(flow.bohm_dirac_velocity_field(psi, c)) <= c)


def test_dirac_speed_bound_off_grid():
    x = np.arange(64) * 0.25
    s = np.stack([np.exp(-(x - 8) ** 2 / 4 + 0.9j * x), 0.6 * np.exp(-(x - 8.5) ** 2 / 6)], axis=1)
    psi = flow.GridWaveFunction(s, 0.25, spinor=True)
    for p in np.linspace(4, 12, 41):
        assert abs(flow.bohm_dirac_velocity(psi, [p], c=3.0)[0]) <= 3.0


def test_density_law_pure_reduction():
    x, v = packet(64, 20.0, 10.0, 2.0, 0.9)
    v = v / np.linalg.norm(v)
    psi = flow.GridWaveFunction(v, x[1])
    W = DensityMatrix.from_state(v)
    for p in (8.0, 10.3, 12.1):
        a = flow.velocity_from_density(W, x[1], [p], mass=1.4)[0]
        b = flow.bohm_velocity(psi, [1.4], [p])[0]
        assert abs(a - b) < 1e-10
    rng = np.random.default_rng(0)
    s = rng.normal(size=(16, 2)) + 1j * rng.normal(size=(16, 2))
    s /= np.linalg.norm(s)
    Wd = DensityMatrix.from_state(s.reshape(-1))
    num, den = flow.velocity_field_from_density(Wd, 0.5, kind="dirac", c=1.5)
    ref = flow.bohm_dirac_velocity_field(flow.GridWaveFunction(s, 0.5, spinor=True), c=1.5)[:, 0]
    assert np.max(np.abs(num / den - ref)) < 1e-10


def test_density_law_real_mixture_zero():
    _, a = packet(32, 16.0, 8.0, 1.5, 0.0)
    _, b = packet(32, 16.0, 6.0, 2.0, 0.0)
    a, b = a / np.linalg.norm(a), b / np.linalg.norm(b)
    W = 0.3 * np.outer(a, a.conj()) + 0.7 * np.outer(b, b.conj())
    num, _ = flow.velocity_field_from_density(DensityMatrix(W), 0.5)
    assert np.max(np.abs(num)) < 1e-14


def test_conditional_density_of_product_state():
    _, a = packet(32, 16.0, 8.0, 1.5, 0.6)
    _, b = packet(32, 16.0, 8.0, 2.0, -1.1)
    a, b = a / np.linalg.norm(a), b / np.linalg.norm(b)
    W1 = partial_trace(DensityMatrix.from_state(np.kron(a, b)), 0, [32, 32])
    for p in (6.5, 8.0, 9.2):
        got = flow.velocity_from_density(W1, 0.5, [p], mass=1.0)[0]
        ref = flow.bohm_velocity(flow.GridWaveFunction(a, 0.5), [1.0], [p])[0]
        assert abs(got - ref) < 1e-10


def test_generator_constant_and_diagonal():
    rng = np.random.default_rng(1)
    for _ in range(50):
        dim = int(rng.integers(2, 20))
        P = random_partition_pvm(dim, int(rng.integers(1, dim + 1)), rng)
        H = random_hermitian(dim, rng)
        psi = random_state(dim, rng)
        out = flow.minimal_free_generator_apply(np.full(P.ncells, 2.5), psi, H, P)
        assert np.isrealobj(out) and np.max(np.abs(out)) < 1e-12
    D = OperatorMatrix(np.diag(rng.normal(size=6)), hermitian=True)
    P = PovmFamily.coordinate(np.arange(6))
    out = flow.minimal_free_generator_apply(rng.normal(size=6), random_state(6, rng), D, P)
    assert np.max(np.abs(out)) < 1e-15
    assert flow.leibniz_residual(random_state(6, rng), D, P, rng.normal(size=6), rng.normal(size=6)) < 1e-14


def _lattice_case(G, L=20.0, k=0.8, s=2.0, m=1.0):
    lat = LatticeSpec(G, L / G)
    model = build_bell_lattice(lat, m)
    x = lat.positions()
    v = np.exp(-(x - L / 2) ** 2 / (4 * s ** 2) + 1j * k * x)
    return lat, model, v / np.linalg.norm(v), x


def test_generator_position_converges_to_bohm_second_order():
    errs = []
    for G in (40, 80, 160, 320):
        lat, model, v, x = _lattice_case(G)
        Lx = flow.minimal_free_generator_apply(x, v, model.H0, model.P)
        errs.append(abs(Lx[G // 2] - 0.8))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.8)


def test_leibniz_refinement_laplacian():
    res = []
    for G in (40, 80, 160, 320):
        lat, model, v, x = _lattice_case(G)
        mask = np.abs(x - 10.0) < 5.0
        f, g = np.sin(2 * np.pi * x / 20.0), np.cos(2 * np.pi * x / 20.0)
        res.append(flow.leibniz_residual(v, model.H0, model.P, f, g, mask=mask))
    orders = np.log2(np.array(res[:-1]) / np.array(res[1:]))
    assert np.all(orders > 1.8)


def test_leibniz_crea1_bounded_away():
    res = []
    for G, a in ((4, 1.5), (6, 1.0), (8, 0.75)):
        m = preset_model("crea1", sites=G, spacing=a)
        psi = preset_state(m, "random", seed=1)
        f = m.space.occ[:, G:].sum(axis=1).astype(float)
        res.append(flow.leibniz_residual(psi, m.Hint, m.P, f, f))
    assert min(res) > 1e-2


def test_nelson_drift():
    x, v = packet(128, 40.0, 20.0, 2.0, 0.0)
    psi = flow.GridWaveFunction(v, x[1])
    assert np.array_equal(flow.nelson_drift(psi, 0.0, [1.0], [19.0]), flow.bohm_velocity(psi, [1.0], [19.0]))
    s2 = 2 * 2.0 ** 2
    for p in x[40:88:5]:
        got = flow.nelson_drift(psi, HBAR, [1.0], [p])[0]
        assert abs(got - 0.5 * HBAR * (-2 * (p - 20.0) / s2)) < 1e-8
    k = 2 * np.pi * 3 / 40.0
    pw = flow.GridWaveFunction(np.exp(1j * k * x), x[1])
    assert abs(flow.nelson_drift(pw, 0.7, [1.0], [3.3])[0] - k) < 1e-10
    with pytest.raises(flow.HilbertError):
        flow.nelson_drift(psi, -1.0, [1.0], [19.0])


def test_integrators_on_plane_wave():
    k = 2 * np.pi * 2 / 10.0
    x = np.arange(32) * 10.0 / 32
    pw = flow.GridWaveFunction(np.exp(1j * k * x), x[1])
    path = flow.rk4_bohm_path(lambda t: pw, [1.0], [1.0], 1.0, 0.1)
    assert abs(path[-1, 0] - (1.0 + k)) < 1e-9
    em = flow.euler_maruyama_nelson(lambda t: pw, 1.0, 0.0, 1.0, 1.0, 0.1, np.random.default_rng(0))
    assert abs(em[-1] - (1.0 + k)) < 1e-9


def test_continuity_residual_converges():
    res = []
    for G in (64, 128, 256, 512):
        lat, model, v, x = _lattice_case(G, L=40.0, k=0.5)
        psi = flow.GridWaveFunction(v / np.sqrt(lat.spacing), lat.spacing)
        res.append(flow.continuity_residual(psi, model.H0))
    orders = np.log2(np.array(res[:-1]) / np.array(res[1:]))
    assert np.all(orders > 1.8)


def test_velocity_csv(tmp_path):
    psi = flow.GridWaveFunction(np.exp(1j * np.arange(8) * 0.5), 0.5)
    p = tmp_path / "v.csv"
    flow.write_velocity_csv(p, psi, flow.bohm_velocity_field(psi, [1.0]))
    rows = p.read_text().splitlines()
    assert rows[0] == "x0,v0" and len(rows) == 9
