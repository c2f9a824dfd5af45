import json

import numpy as np
import pytest

from bellqft import engine
from bellqft.hilbert import StateVector
from bellqft.models import preset_model, preset_state
from bellqft.rates import minimal_rates


@pytest.fixture(scope="module")
def bell16():
    m = preset_model("bell-lattice", sites=16)
    return m, preset_state(m, width=2.0, k=0.6, center=8.0)


def test_zero_rates_constant_trajectory():
    m = preset_model("bell-lattice", sites=8)
    _, V = np.linalg.eigh(m.H0.dense())
    tr = engine.simulate_trajectory(m, StateVector(V[:, 0]), 3, 1.0, 0.01, seed=1)
    assert tr.events == [(0.0, 3, "init")] and not tr.flagged


def test_two_level_initial_hazard():
    omega = 0.9
    m = preset_model("two-level", omega=omega)
    sched = engine.build_schedule(m, preset_state(m), 0.1, 0.01)
    assert abs(sched.totals[0, 1] - 2 * omega) < 1e-14
    assert sched.totals[0, 0] == 0


def test_events_ordered_and_in_support(bell16):
    m, psi = bell16
    sched = engine.build_schedule(m, psi, 2.0, 0.01)
    trajs = engine.sample_trajectories(sched, m.space.cell_labels, 50, base_seed=3, workers=1)
    for tr in trajs:
        times = [e[0] for e in tr.events]
        assert all(b > a for a, b in zip(times, times[1:]))
        for (t0, c0, _), (t1, c1, _) in zip(tr.events, tr.events[1:]):
            js = min(int(t1 / sched.dt), sched.steps - 1)
            supp = sched.rates[js][:, c0].toarray().ravel() + sched.rates[js + 1][:, c0].toarray().ravel()
            assert supp[c1] > 0


def test_single_trajectory_wrapper(bell16):
    m, psi = bell16
    sched = engine.build_schedule(m, psi, 1.0, 0.01)
    a = engine.sample_trajectories(sched, m.space.cell_labels, 1, base_seed=7, q0=8, workers=1)[0]
    b = engine.simulate_trajectory(m, psi, 8, 1.0, 0.01, seed=7, schedule=sched)
    assert a.events == b.events


def test_preconditions():
    m = preset_model("two-level")
    with pytest.raises(engine.EngineError):
        engine.build_schedule(m, preset_state(m), 1.0, 0.3)
    with pytest.raises(engine.EngineError):
        engine.run_ensemble(m, preset_state(m), 1.0, 0.1, 0)
    with pytest.raises(engine.EngineError):
        engine.simulate_trajectory(m, preset_state(m), 5, 1.0, 0.1, 0)


def test_stationary_ensemble():
    m = preset_model("bell-lattice", sites=8)
    _, V = np.linalg.eigh(m.H0.dense())
    rep = engine.run_ensemble(m, StateVector(V[:, 1]), 1.0, 0.05, 2000, base_seed=2, workers=1)
    assert rep.passed and rep.jump_mean == 0


def test_bell_lattice_equivariance_and_negative_control():
    m = preset_model("bell-lattice")
    psi = preset_state(m)
    rep = engine.equivariance_report(m, psi, 4.0, 0.01, 10 ** 4, seed=0, workers=4)
    assert rep.passed and rep.flagged_fraction == 0
    bad = engine.equivariance_report(m, psi, 4.0, 0.01, 10 ** 4, seed=0, workers=4, rate_scale=0.5)
    assert not bad.passed
    d = bad.drift()
    assert d["direction"] in ("excess", "deficit") and abs(d["z"]) > 3


def test_tv_scaling(bell16):
    m, psi = bell16
    small = engine.run_ensemble(m, psi, 2.0, 0.02, 500, base_seed=100, workers=1)
    large = engine.run_ensemble(m, psi, 2.0, 0.02, 8000, base_seed=5000, workers=4)
    ratio = small.tv[1:].mean() / large.tv[1:].mean()
    assert 2.0 < ratio < 8.0


def test_master_equation_equivariance(bell16):
    m, psi = bell16
    born0 = m.P.probabilities(psi.amplitudes)
    res = engine.evolve_master(born0, m, psi, 2.0, 1e-3, record_every=50)
    assert res.residual <= 1e-8 and res.stable


def test_master_zero_generator_and_point_mass():
    m = preset_model("bell-lattice", sites=8)
    _, V = np.linalg.eigh(m.H0.dense())
    rho0 = np.full(8, 1 / 8)
    res = engine.evolve_master(rho0, m, StateVector(V[:, 0]), 0.5, 0.01)
    assert np.allclose(res.rho, rho0, atol=1e-15)
    m2 = preset_model("bell-lattice", sites=8)
    psi = preset_state(m2, width=1.5, center=4.0)
    point = np.eye(8)[4]
    res = engine.evolve_master(point, m2, psi, 1.0, 0.01)
    assert res.mass_drift < 1e-10 and res.rho.min() > -1e-12


def test_translation_symmetry():
    m = preset_model("bell-lattice", sites=12)
    psi = preset_state(m, center=4.0, width=2.0)
    assert engine.translation_symmetry_check(m, 0, psi).passed
    assert engine.translation_symmetry_check(m, 1, psi).passed
    c = preset_model("crea1", sites=4)
    assert engine.translation_symmetry_check(c, 1, preset_state(c, "random", seed=2)).passed
    v = preset_model("bell-lattice", sites=12, potential=np.linspace(0, 1, 12))
    rep = engine.translation_symmetry_check(v, 1, psi)
    assert not rep.applicable and not rep.passed


def test_reversal_ensemble(bell16):
    m, psi = bell16
    rep = engine.reversal_ensemble(m, psi, 1.0, 0.01, 4000, seed=11, workers=4)
    assert rep.passed, rep.to_dict()


def test_frozen_kernel():
    m = preset_model("bell-lattice", sites=8)
    psi = preset_state(m, center=4.0, width=1.2, k=1.1)
    rep = engine.frozen_kernel_check(m, psi, 4, n=10 ** 4, seed=3)
    assert rep.passed, rep.to_dict()
    tab = minimal_rates(psi, m.H0, m.P)
    assert abs(rep.mean_wait * tab.totals[4] - 1) < 0.05


def test_parallel_bit_identical(tmp_path, bell16):
    m, psi = bell16
    sched = engine.build_schedule(m, psi, 1.0, 0.01)
    hashes = []
    for w in (1, 3):
        trajs = engine.sample_trajectories(sched, m.space.cell_labels, 200, base_seed=9, workers=w)
        p = tmp_path / f"t{w}.jsonl"
        engine.write_trajectories(p, trajs, m.space.cell_labels)
        hashes.append(engine.file_hash(p))
    assert hashes[0] == hashes[1]


def test_event_cap_truncates(bell16):
    m, psi = bell16
    sched = engine.build_schedule(m, psi, 4.0, 0.01)
    tr = engine.sample_path(sched, 8, engine.make_rng(0), event_cap=2)
    assert tr.truncated and tr.flagged and len(tr.events) == 2


def test_sector_moves_labelled():
    m = preset_model("crea1")
    psi = preset_state(m)
    rep, trajs, _ = engine.run_ensemble(m, psi, 1.0, 0.01, 200, base_seed=1, workers=1, return_trajectories=True)
    kinds = {e[2] for tr in trajs for e in tr.events}
    assert "sector-move" in kinds


def test_jsonl_and_manifest(tmp_path):
    m = preset_model("two-level")
    tr = engine.simulate_trajectory(m, preset_state(m), 1, 1.0, 0.01, seed=4)
    lines = tr.to_jsonl(m.space.cell_labels, 0)
    rec = json.loads(lines[0])
    assert set(rec) == {"trajectory", "seed", "time", "kind", "configuration"} and rec["kind"] == "init"
    out = engine.write_manifest(tmp_path / "m.json", m, {"seed": 4})
    assert json.loads((tmp_path / "m.json").read_text())["run"]["seed"] == 4 and "model" in out


def test_workers_env(monkeypatch):
    monkeypatch.setenv(engine.WORKERS_ENV, "3")
    assert engine.default_workers() == 3
    monkeypatch.setenv(engine.WORKERS_ENV, "x")
    assert engine.default_workers() == 1
