"""Trajectory sampling, master-equation evolution and ensemble reports.

Randomness: every trajectory owns a Philox counter-based generator keyed by
base_seed + index, so results do not depend on how trajectories are spread
over worker processes.  Workers inherit the precomputed rate schedule by
fork; nothing mutable is shared while sampling.
"""
from __future__ import annotations

import csv
import hashlib
import json
import multiprocessing as mp
import os
import time as _time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy import stats

from .fock import Configuration, translation_operator
from .hilbert import HilbertError, Propagator, StateVector
from .models import BellModel
from .rates import minimal_rates

WORKERS_ENV = "BELLQFT_WORKERS"
DEFAULT_EVENT_CAP = 10 ** 6

INIT, JUMP, SECTOR_MOVE, ESCAPE = "init", "jump", "sector-move", "escape"


class EngineError(HilbertError):
    pass


def make_rng(seed) -> np.random.Generator:
    """Counter-based stream for one trajectory."""
    return np.random.Generator(np.random.Philox(key=int(seed) % (1 << 64)))


def default_workers():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# rate schedule


def _grid(T, dt):
    if dt <= 0 or T < 0:
        raise EngineError("need dt > 0 and T >= 0")
    K = int(round(T / dt))
    if abs(K * dt - T) > 1e-9 * max(1.0, T):
        raise EngineError("T must be a whole number of steps dt")
    return K


def state_schedule(model: BellModel, psi0, T, dt, half_steps=False):
    """Psi on the grid t_k = k dt (and at midpoints when half_steps)."""
    K = _grid(T, dt)
    hbar = model.constants.hbar
    psi = np.asarray(psi0.amplitudes if isinstance(psi0, StateVector) else psi0, dtype=complex)
    props = {}
    full, half = [psi], []
    for k in range(K):
        piece = model.piece_index(k * dt)
        if piece not in props:
            H = model.hamiltonian(k * dt)
            props[piece] = (Propagator(H, dt, hbar), Propagator(H, dt / 2, hbar) if half_steps else None)
        P, Ph = props[piece]
        if half_steps:
            half.append(Ph(full[-1]))
        full.append(P(full[-1]))
    return np.array(full), (np.array(half) if half_steps else None)


@dataclass(eq=False)
class RateSchedule:
    """Minimal rates on the time grid with cumulative hazards per source cell."""

    times: np.ndarray
    rates: list            # csc matrices R[dest, src] per grid time
    totals: np.ndarray     # (K+1, ncells)
    born: np.ndarray       # (K+1, ncells)
    flagged: np.ndarray    # (K+1, ncells) bool
    hazard: np.ndarray     # (K+1, ncells) cumulative, Fortran order
    dt: float

    @property
    def steps(self):
        return len(self.times) - 1

    @property
    def ncells(self):
        return self.totals.shape[1]


def build_schedule(model: BellModel, psi0, T, dt, frozen=False, rate_scale=1.0) -> RateSchedule:
    """Rates from Psi_t on every grid point; frozen keeps the t = 0 table throughout."""
    K = _grid(T, dt)
    hbar = model.constants.hbar
    if frozen:
        psis = np.repeat(np.asarray(psi0.amplitudes if isinstance(psi0, StateVector) else psi0)[None], K + 1, 0)
    else:
        psis, _ = state_schedule(model, psi0, T, dt)
    rates, totals, born, flagged = [], [], [], []
    cache = None
    for k in range(K + 1):
        if frozen and cache is not None:
            tab = cache
        else:
            tab = minimal_rates(psis[k], model.hamiltonian(k * dt), model.P, hbar)
            if rate_scale != 1.0:
                tab = tab.scaled(rate_scale)
            cache = tab
        rates.append(sp.csc_matrix(tab.rates))
        totals.append(np.asarray(tab.totals, dtype=float))
        born.append(model.P.probabilities(psis[k]))
        flagged.append(np.asarray(tab.flagged, dtype=bool))
    totals = np.array(totals)
    hazard = np.zeros_like(totals)
    if K:
        hazard[1:] = np.cumsum(0.5 * dt * (totals[1:] + totals[:-1]), axis=0)
    return RateSchedule(np.arange(K + 1) * dt, rates, totals, np.array(born), np.array(flagged),
                        np.asfortranarray(hazard), dt)


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    """Ordered events (time, cell index, kind); positions only for grid runs."""

    events: list
    seed: int
    truncated: bool = False
    escaped: bool = False
    positions: list = field(default_factory=list)

    @property
    def jumps(self):
        return sum(1 for e in self.events if e[2] in (JUMP, SECTOR_MOVE))

    @property
    def flagged(self):
        return self.truncated or self.escaped

    def cell_at(self, t):
        """Configuration cell occupied at time t (right-continuous)."""
        cell = self.events[0][1]
        for et, c, kind in self.events:
            if et > t:
                break
            if kind != ESCAPE:
                cell = c
        return cell

    def cells_at(self, times):
        ev_t = np.array([e[0] for e in self.events if e[2] != ESCAPE])
        ev_c = np.array([e[1] for e in self.events if e[2] != ESCAPE])
        idx = np.searchsorted(ev_t, np.asarray(times), side="right") - 1
        return ev_c[np.clip(idx, 0, None)]

    def to_jsonl(self, labels, index=None):
        lines = []
        for t, c, kind in self.events:
            rec = {"trajectory": index, "seed": self.seed, "time": float(repr_round(t)), "kind": kind,
                   "configuration": labels[c].encode() if hasattr(labels[c], "encode") else str(labels[c])}
            lines.append(json.dumps(rec, sort_keys=True))
        return lines


def repr_round(t):
    return float(f"{t:.15g}")


def _sector_of(labels, c):
    lab = labels[c]
    if isinstance(lab, Configuration):
        return lab.count()
    return None


def _solve_step(a, b, need, dt):
    """Smallest tau in [0, dt] with a tau + b tau^2 / 2 = need (linear hazard)."""
    if need <= 0:
        return 0.0
    if abs(b) * dt < 1e-12 * max(a, 1e-300):
        return min(need / a, dt) if a > 0 else dt
    disc = a * a + 2 * b * need
    disc = max(disc, 0.0)
    tau = 2 * need / (a + np.sqrt(disc)) if a + np.sqrt(disc) > 0 else dt
    return min(max(tau, 0.0), dt)


def _pick(col_mat, q, u):
    lo, hi = col_mat.indptr[q], col_mat.indptr[q + 1]
    if hi == lo:
        return None
    w = col_mat.data[lo:hi].real
    c = np.cumsum(w)
    k = int(np.searchsorted(c, u * c[-1], side="right"))
    return int(col_mat.indices[lo + min(k, hi - lo - 1)])


def sample_path(sched: RateSchedule, q0, rng, labels=None, event_cap=DEFAULT_EVENT_CAP, seed=0):
    """One jump path on the schedule grid starting in cell q0 at t = 0."""
    dt = sched.dt
    K = sched.steps
    C = sched.hazard
    S = sched.totals
    events = [(0.0, int(q0), INIT)]
    q = int(q0)
    j = 0
    level = 0.0  # hazard of the current cell from the start of step j to now
    escaped = truncated = False
    while True:
        if len(events) >= event_cap:
            truncated = True
            break
        col = C[:, q]
        target = col[j] + level + rng.exponential()
        k = int(np.searchsorted(col, target, side="left"))
        if k > K:
            break
        js = max(k - 1, j)
        a = S[js, q]
        b = (S[js + 1, q] - a) / dt
        tau = _solve_step(a, b, target - col[js], dt)
        t_new = js * dt + tau
        dest = _pick(sched.rates[js], q, rng.random())
        if dest is None:
            dest = _pick(sched.rates[js + 1], q, rng.random())
        if dest is not None:
            kind = JUMP
            if labels is not None and _sector_of(labels, dest) != _sector_of(labels, q):
                kind = SECTOR_MOVE
            if t_new <= events[-1][0]:
                t_new = float(np.nextafter(events[-1][0], np.inf))
            events.append((float(t_new), dest, kind))
            q = dest
        j = js
        a = S[js, q]
        b = (S[js + 1, q] - a) / dt
        level = a * tau + 0.5 * b * tau * tau
        if dest is not None and sched.flagged[js, q] and sched.flagged[js + 1, q]:
            events.append((float(np.nextafter(events[-1][0], np.inf)), q, ESCAPE))
            escaped = True
            break
    return Trajectory(events, seed, truncated=truncated, escaped=escaped)


def simulate_trajectory(model: BellModel, psi0, q0, T, dt, seed, event_cap=DEFAULT_EVENT_CAP, schedule=None):
    """Jump trajectory from configuration q0 (Configuration or cell index)."""
    if dt <= 0:
        raise EngineError("dt must be positive")
    q = model.space.cell_of(q0) if isinstance(q0, Configuration) else int(q0)
    if q is None or not 0 <= q < model.space.ncells:
        raise EngineError("q0 is not a configuration of the model")
    sched = schedule or build_schedule(model, psi0, T, dt)
    return sample_path(sched, q, make_rng(seed), model.space.cell_labels, event_cap=event_cap, seed=int(seed))


def simulate_bohm_trajectory(psi_at, x0, masses, T, dt, seed=0):
    """Deterministic-grid run: Bohmian RK4 flow with positions at every step."""
    from .flow import rk4_bohm_path
    path = rk4_bohm_path(psi_at, x0, masses, T, dt)
    traj = Trajectory([(0.0, 0, INIT)], int(seed))
    K = len(path) - 1
    traj.positions = [(k * dt, np.asarray(path[k]).tolist()) for k in range(K + 1)]
    return traj


# ---------------------------------------------------------------------------
# ensembles

_SCHED: RateSchedule | None = None
_LABELS = None


def _worker_chunk(args):
    start, stop, base_seed, q0, born_init, event_cap = args
    out = []
    for i in range(start, stop):
        rng = make_rng(base_seed + i)
        if born_init:
            p = np.clip(_SCHED.born[0], 0, None)
            c = np.cumsum(p)
            q = int(min(np.searchsorted(c, rng.random() * c[-1], side="right"), len(p) - 1))
        else:
            q = q0
        out.append(sample_path(_SCHED, q, rng, _LABELS, event_cap=event_cap, seed=base_seed + i))
    return out


def sample_trajectories(sched: RateSchedule, labels, n_traj, base_seed=0, q0=None, workers=None,
                        event_cap=DEFAULT_EVENT_CAP):
    """n_traj independent paths; q0 None draws the start from the Born distribution."""
    global _SCHED, _LABELS
    if n_traj < 1:
        raise EngineError("n_traj must be at least 1")
    workers = workers or default_workers()
    _SCHED, _LABELS = sched, labels
    born_init = q0 is None
    chunk = max(1, -(-n_traj // (workers * 4)))
    tasks = [(s, min(s + chunk, n_traj), base_seed, q0, born_init, event_cap) for s in range(0, n_traj, chunk)]
    if workers == 1 or len(tasks) == 1:
        parts = [_worker_chunk(t) for t in tasks]
    else:
        ctx = mp.get_context("fork")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as ex:
            parts = list(ex.map(_worker_chunk, tasks))
    return [tr for part in parts for tr in part]


def tv_distance(p, q):
    return 0.5 * float(np.sum(np.abs(np.asarray(p) - np.asarray(q))))


def multinomial_tv_bound(p, n, rng_seed=12345, draws=400, sigmas=3.0):
    """Mean + sigmas * sd of the TV distance between n multinomial samples and p."""
    p = np.clip(np.asarray(p, dtype=float), 0, None)
    p = p / p.sum()
    rng = np.random.Generator(np.random.Philox(key=rng_seed))
    tv = np.array([tv_distance(rng.multinomial(n, p) / n, p) for _ in range(draws)])
    return float(tv.mean() + sigmas * tv.std()), float(tv.mean())


@dataclass
class EnsembleReport:
    n_traj: int
    sample_times: np.ndarray
    empirical: np.ndarray          # (n_times, ncells)
    born: np.ndarray               # (n_times, ncells)
    tv: np.ndarray
    tv_bound: np.ndarray
    tv_expected: np.ndarray
    z_scores: np.ndarray           # standardized residuals per cell
    jump_mean: float
    jump_max: int
    escaped_fraction: float
    truncated_fraction: float
    wall_time: float
    seed: int
    labels: tuple = ()

    @property
    def max_tv(self):
        return float(np.max(self.tv)) if self.tv.size else 0.0

    @property
    def within_bound(self):
        return bool(np.all(self.tv <= self.tv_bound))

    @property
    def flagged_fraction(self):
        return self.escaped_fraction + self.truncated_fraction

    @property
    def passed(self):
        return self.within_bound

    def drift(self):
        """Worst cell (largest |z|) with the sign of the deviation."""
        if not self.z_scores.size:
            return {}
        k, c = np.unravel_index(np.argmax(np.abs(self.z_scores)), self.z_scores.shape)
        lab = self.labels[c] if self.labels else c
        return {"time": float(self.sample_times[k]), "cell": lab.encode() if hasattr(lab, "encode") else str(lab),
                "z": float(self.z_scores[k, c]),
                "direction": "excess" if self.z_scores[k, c] > 0 else "deficit",
                "empirical": float(self.empirical[k, c]), "born": float(self.born[k, c])}

    def summary(self):
        return {"n_traj": self.n_traj, "max_tv": self.max_tv, "within_3sigma": self.within_bound,
                "passed": self.passed, "jump_mean": self.jump_mean, "jump_max": self.jump_max,
                "escaped_fraction": self.escaped_fraction, "truncated_fraction": self.truncated_fraction,
                "wall_time": self.wall_time, "seed": self.seed, "worst": self.drift()}

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "tv", "tv_bound", "tv_expected", "max_abs_z"])
            for k, t in enumerate(self.sample_times):
                w.writerow([f"{t:.10g}", f"{self.tv[k]:.10g}", f"{self.tv_bound[k]:.10g}",
                            f"{self.tv_expected[k]:.10g}", f"{np.max(np.abs(self.z_scores[k])):.10g}"])

    def write_distributions_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "configuration", "empirical", "born", "z"])
            for k, t in enumerate(self.sample_times):
                for c in range(self.born.shape[1]):
                    lab = self.labels[c] if self.labels else c
                    w.writerow([f"{t:.10g}", lab.encode() if hasattr(lab, "encode") else lab,
                                f"{self.empirical[k, c]:.10g}", f"{self.born[k, c]:.10g}",
                                f"{self.z_scores[k, c]:.6g}"])


def _grid_indices(sched: RateSchedule, sample_times):
    idx = np.rint(np.asarray(sample_times, dtype=float) / sched.dt).astype(int)
    if np.any(idx < 0) or np.any(idx > sched.steps):
        raise EngineError("sample times must lie in [0, T]")
    return idx


def ensemble_report(trajs, sched: RateSchedule, sample_times, labels=(), seed=0, wall=0.0) -> EnsembleReport:
    idx = _grid_indices(sched, sample_times)
    times = sched.times[idx]
    good = [t for t in trajs if not t.flagged]
    n = len(good)
    ncells = sched.ncells
    emp = np.zeros((len(times), ncells))
    for tr in good:
        cells = tr.cells_at(times)
        emp[np.arange(len(times)), cells] += 1
    emp /= max(n, 1)
    born = sched.born[idx]
    born = born / born.sum(axis=1, keepdims=True)
    tv = np.array([tv_distance(e, b) for e, b in zip(emp, born)])
    bounds = [multinomial_tv_bound(b, max(n, 1), rng_seed=1000 + k) for k, b in enumerate(born)]
    sd = np.sqrt(np.clip(born * (1 - born), 1e-300, None) / max(n, 1))
    z = np.where(born * (1 - born) > 0, (emp - born) / sd, 0.0)
    jumps = np.array([t.jumps for t in trajs]) if trajs else np.zeros(1)
    return EnsembleReport(len(trajs), times, emp, born, tv, np.array([b[0] for b in bounds]),
                          np.array([b[1] for b in bounds]), z, float(jumps.mean()), int(jumps.max()),
                          sum(t.escaped for t in trajs) / max(len(trajs), 1),
                          sum(t.truncated for t in trajs) / max(len(trajs), 1), wall, seed, tuple(labels))


def run_ensemble(model: BellModel, psi0, T, dt, n_traj, base_seed=0, q0=None, sample_times=None, workers=None,
                 rate_scale=1.0, frozen=False, event_cap=DEFAULT_EVENT_CAP, return_trajectories=False):
    """Sample n_traj trajectories (Born start when q0 is None) and compare with Born at sample times."""
    t_start = _time.perf_counter()
    sched = build_schedule(model, psi0, T, dt, frozen=frozen, rate_scale=rate_scale)
    labels = model.space.cell_labels
    if isinstance(q0, Configuration):
        q0 = model.space.cell_of(q0)
    trajs = sample_trajectories(sched, labels, n_traj, base_seed, q0, workers, event_cap)
    if sample_times is None:
        sample_times = np.linspace(0, T, 5)
    rep = ensemble_report(trajs, sched, sample_times, labels, base_seed, _time.perf_counter() - t_start)
    return (rep, trajs, sched) if return_trajectories else rep


def equivariance_report(model: BellModel, psi0, T, dt, n_traj, sample_times=None, seed=0, workers=None,
                        rate_scale=1.0, **kw) -> EnsembleReport:
    """Born-started ensemble against the Born distribution with a 3 sigma multinomial bound."""
    return run_ensemble(model, psi0, T, dt, n_traj, seed, None, sample_times, workers, rate_scale, **kw)


# ---------------------------------------------------------------------------
# master equation


@dataclass
class MasterResult:
    times: np.ndarray
    rho: np.ndarray
    born: np.ndarray
    mass_drift: float
    wall_time: float
    mass_tol: float = 1e-10

    @property
    def residual(self):
        return float(np.max(np.abs(self.rho - self.born)))

    @property
    def stable(self):
        return self.mass_drift <= self.mass_tol

    def summary(self):
        return {"max_residual": self.residual, "mass_drift": self.mass_drift, "stable": self.stable,
                "wall_time": self.wall_time, "recorded": len(self.times)}


def _apply_generator(tab, rho):
    return tab.rates @ rho - tab.totals * rho


def evolve_master(rho0, model: BellModel, psi0, T, dt, rate_scale=1.0, record_every=1) -> MasterResult:
    """RK4 for d rho/dt = L_t rho with rates from Psi_t at every substep."""
    t0 = _time.perf_counter()
    hbar = model.constants.hbar
    full, half = state_schedule(model, psi0, T, dt, half_steps=True)
    K = len(full) - 1
    rho = np.asarray(rho0, dtype=float).copy()
    m0 = rho.sum()

    def gen(psi, t):
        tab = minimal_rates(psi, model.hamiltonian(t), model.P, hbar)
        return tab.scaled(rate_scale) if rate_scale != 1.0 else tab

    rhos, borns, times = [rho.copy()], [model.P.probabilities(full[0])], [0.0]
    drift = 0.0
    g_next = gen(full[0], 0.0)
    for k in range(K):
        t = k * dt
        g0 = g_next
        gh = gen(half[k], t)  # H(t) holds over the whole step
        g_next = gen(full[k + 1], t + dt)
        g1 = g_next if model.piece_index(t + dt) == model.piece_index(t) else gen(full[k + 1], t)
        k1 = _apply_generator(g0, rho)
        k2 = _apply_generator(gh, rho + 0.5 * dt * k1)
        k3 = _apply_generator(gh, rho + 0.5 * dt * k2)
        k4 = _apply_generator(g1, rho + dt * k3)
        rho = rho + (dt / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        drift = max(drift, abs(rho.sum() - m0))
        if (k + 1) % record_every == 0 or k + 1 == K:
            rhos.append(rho.copy())
            borns.append(model.P.probabilities(full[k + 1]))
            times.append(t + dt)
    return MasterResult(np.array(times), np.array(rhos), np.array(borns), float(drift), _time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# symmetry and reversal


@dataclass
class SymmetryReport:
    applicable: bool
    shift: int
    commutator_defect: float
    max_deviation: float
    tol: float = 1e-12
    reason: str = ""

    @property
    def passed(self):
        return self.applicable and self.max_deviation <= self.tol

    def to_dict(self):
        return {"applicable": self.applicable, "shift": self.shift, "commutator_defect": self.commutator_defect,
                "max_deviation": self.max_deviation, "tol": self.tol, "passed": self.passed, "reason": self.reason}


def shift_configuration(cfg: Configuration, shift):
    return Configuration(tuple(tuple(np.roll(np.array(o), shift).tolist()) for o in cfg.occupations))


def translation_symmetry_check(model: BellModel, shift, psi, t=0.0, tol=1e-12) -> SymmetryReport:
    """sigma^{U psi}(phi(q) | phi(q')) against sigma^psi(q | q') for the lattice shift phi."""
    space = model.space
    if not space.lattice.periodic:
        return SymmetryReport(False, shift, float("nan"), float("nan"), tol, "lattice is not periodic")
    U = translation_operator(space, shift)
    H = model.hamiltonian(t).sparse()
    defect = abs(U @ H - H @ U).max() if (U @ H - H @ U).nnz else 0.0
    if defect > tol:
        return SymmetryReport(False, shift, float(defect), float("nan"), tol, "H does not commute with the shift")
    psi = np.asarray(psi.amplitudes if isinstance(psi, StateVector) else psi, dtype=complex)
    hbar = model.constants.hbar
    s1 = minimal_rates(psi, model.hamiltonian(t), model.P, hbar).rates.toarray()
    s2 = minimal_rates(U @ psi, model.hamiltonian(t), model.P, hbar).rates.toarray()
    perm = np.array([space.cell_of(shift_configuration(c, shift)) for c in space.cell_labels])
    dev = float(np.max(np.abs(s2[np.ix_(perm, perm)] - s1))) if s1.size else 0.0
    return SymmetryReport(True, shift, float(defect), dev, tol)


@dataclass
class ReversalEnsembleReport:
    ks_statistic: float
    ks_pvalue: float
    endpoint_tv: float
    endpoint_bound: float
    n: int

    @property
    def passed(self):
        return self.ks_pvalue > 0.01 and self.endpoint_tv <= self.endpoint_bound

    def to_dict(self):
        return {"ks_statistic": self.ks_statistic, "ks_pvalue": self.ks_pvalue, "endpoint_tv": self.endpoint_tv,
                "endpoint_bound": self.endpoint_bound, "n": self.n, "passed": self.passed}


def reversal_ensemble(model: BellModel, psi0, T, dt, n_traj, seed=0, unitary=None, workers=None):
    """Compare forward paths under Psi with time-reversed ones under T Psi_T.

    Statistic: time from the last forward jump to T versus the first reversed
    jump time (T when no jump), plus the forward start against the reversed end.
    """
    psi = np.asarray(psi0.amplitudes if isinstance(psi0, StateVector) else psi0, dtype=complex)
    full, _ = state_schedule(model, psi, T, dt)
    tpsi = np.conj(full[-1]) if unitary is None else np.asarray(unitary) @ np.conj(full[-1])
    labels = model.space.cell_labels
    s_f = build_schedule(model, psi, T, dt)
    s_r = build_schedule(model, tpsi, T, dt)
    fw = sample_trajectories(s_f, labels, n_traj, seed, None, workers)
    rv = sample_trajectories(s_r, labels, n_traj, seed + n_traj, None, workers)
    last = np.array([T - ([e[0] for e in tr.events if e[2] != INIT] or [0.0])[-1]
                     if tr.jumps else T for tr in fw])
    first = np.array([([e[0] for e in tr.events if e[2] != INIT] or [T])[0] for tr in rv])
    ks = stats.ks_2samp(last, first)
    ncell = model.space.ncells
    a = np.bincount([tr.events[0][1] for tr in fw], minlength=ncell) / n_traj
    b = np.bincount([tr.cell_at(T) for tr in rv], minlength=ncell) / n_traj
    # two independent samples: bound TV(a, b) by twice the one-sample bound
    bound, _ = multinomial_tv_bound(s_f.born[0], n_traj)
    return ReversalEnsembleReport(float(ks.statistic), float(ks.pvalue), tv_distance(a, b), 2 * bound, n_traj)


# ---------------------------------------------------------------------------
# frozen-rate kernel checks


@dataclass
class KernelReport:
    source: int
    total_rate: float
    ks_pvalue: float
    mean_wait: float
    dest_z_max: float
    n: int

    @property
    def passed(self):
        return self.ks_pvalue > 0.01 and self.dest_z_max <= 3.0

    def to_dict(self):
        return {"source": self.source, "total_rate": self.total_rate, "ks_pvalue": self.ks_pvalue,
                "mean_wait": self.mean_wait, "dest_z_max": self.dest_z_max, "n": self.n, "passed": self.passed}


def frozen_kernel_check(model: BellModel, psi, source, n=10 ** 4, seed=0, dt=None) -> KernelReport:
    """Waiting times and destinations of the first jump with rates frozen at psi."""
    tab = minimal_rates(psi, model.hamiltonian(0.0), model.P, model.constants.hbar)
    q = model.space.cell_of(source) if isinstance(source, Configuration) else int(source)
    lam = float(tab.totals[q])
    if lam <= 0:
        raise EngineError("source has no outgoing rate")
    dt = dt or 0.05 / lam
    T = dt * int(np.ceil(20.0 / lam / dt))
    sched = build_schedule(model, psi, T, dt, frozen=True)
    waits, dests = [], []
    for i in range(n):
        tr = sample_path(sched, q, make_rng(seed + i), event_cap=2)
        if len(tr.events) > 1:
            waits.append(tr.events[1][0])
            dests.append(tr.events[1][1])
    waits = np.array(waits)
    # right-censoring at T has probability e^-20
    ks = stats.kstest(waits, "expon", args=(0, 1 / lam))
    col = tab.rates.toarray()[:, q]
    p = col / col.sum()
    cnt = np.bincount(dests, minlength=p.size)
    m = len(dests)
    mask = p > 0
    z = (cnt[mask] - m * p[mask]) / np.sqrt(m * p[mask] * (1 - p[mask]) + 1e-300)
    extra = cnt[~mask].sum()
    zmax = float(np.max(np.abs(z))) if z.size else 0.0
    if extra:
        zmax = float("inf")
    return KernelReport(q, lam, float(ks.pvalue), float(waits.mean()), zmax, m)


# ---------------------------------------------------------------------------
# output


def write_trajectories(path, trajs, labels):
    with open(path, "w") as fh:
        for i, tr in enumerate(trajs):
            for line in tr.to_jsonl(labels, i):
                fh.write(line + "\n")


def file_hash(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path, model: BellModel, params: dict, extra=None):
    out = {"model": model.manifest(), "run": params}
    if extra:
        out.update(extra)
    Path(path).write_text(json.dumps(out, indent=2, sort_keys=True, default=_json_default) + "\n")
    return out


def _json_default(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if hasattr(x, "to_dict"):
        return x.to_dict()
    return str(x)
