"""Deterministic velocity laws on grid wave functions.

Bohm and Bohm-Dirac velocities, the density-matrix versions, the minimal
free generator in commutator form, and the Nelson drift.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .hilbert import DensityMatrix, HilbertError, PovmFamily, as_operator


class DensityFloorError(HilbertError):
    """Evaluation point below the density floor (trajectory escapes)."""


@dataclass(frozen=True, eq=False)
class GridWaveFunction:
    """Wave function on a product of identical regular 1D grids.

    values has shape (n,)*n_particles + (2,)*spinor_axes; spinor axes, if
    any, come last, one per particle.  Grid point i sits at origin + i*spacing.
    """

    values: np.ndarray
    spacing: float
    origin: float = 0.0
    periodic: bool = True
    spinor: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if not self.spacing > 0:
            raise HilbertError("grid spacing must be positive")
        if not np.all(np.isfinite(v)):
            raise HilbertError("wave function must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n_particles(self):
        return self.values.ndim // 2 if self.spinor else self.values.ndim

    @property
    def n_points(self):
        return self.values.shape[0]

    def grid(self):
        return self.origin + self.spacing * np.arange(self.n_points)

    def density(self):
        d = np.abs(self.values) ** 2
        if self.spinor:
            d = d.sum(axis=tuple(range(self.n_particles, d.ndim)))
        return d

    def norm2(self):
        return float(self.density().sum() * self.spacing ** self.n_particles)

    def normalized(self):
        return GridWaveFunction(self.values / np.sqrt(self.norm2()), self.spacing, self.origin,
                                self.periodic, self.spinor)


def derivative(values, spacing, axis, periodic=True):
    """d/dx along an axis: spectral on periodic grids, 4th-order central otherwise."""
    v = np.asarray(values, dtype=complex)
    real = not np.any(v.imag)
    n = v.shape[axis]
    if periodic:
        k = 2 * np.pi * np.fft.fftfreq(n, d=spacing)
        shape = [1] * v.ndim
        shape[axis] = n
        ik = 1j * k.reshape(shape)
        if n % 2 == 0:
            # the Nyquist mode has no well-defined derivative; drop it
            ik = ik.copy()
            idx = [slice(None)] * v.ndim
            idx[axis] = n // 2
            ik[tuple(idx)] = 0.0
        out = np.fft.ifft(ik * np.fft.fft(v, axis=axis), axis=axis)
        # keep real input real instead of carrying FFT roundoff
        return out.real + 0j if real else out
    out = np.empty_like(v)
    f = np.moveaxis(v, axis, 0)
    g = np.moveaxis(out, axis, 0)
    g[2:-2] = (-f[4:] + 8 * f[3:-1] - 8 * f[1:-3] + f[:-4]) / (12 * spacing)
    g[1] = (f[2] - f[0]) / (2 * spacing)
    g[-2] = (f[-1] - f[-3]) / (2 * spacing)
    g[0] = (-3 * f[0] + 4 * f[1] - f[2]) / (2 * spacing)
    g[-1] = (3 * f[-1] - 4 * f[-2] + f[-3]) / (2 * spacing)
    return out


def _interp(field, psi: GridWaveFunction, point):
    """Cubic-spline value of a real grid field at a continuous point."""
    point = np.atleast_1d(np.asarray(point, dtype=float))
    if point.size != field.ndim:
        raise HilbertError(f"point has {point.size} coordinates, field has {field.ndim}")
    idx = (point - psi.origin) / psi.spacing
    mode = "grid-wrap" if psi.periodic else "nearest"
    return float(ndimage.map_coordinates(field, idx.reshape(-1, 1), order=3, mode=mode)[0])


def _floor_check(den, floor_value, point):
    if not den > floor_value:
        raise DensityFloorError(f"density {den:.3e} below floor {floor_value:.3e} at {point}")


def bohm_current(psi: GridWaveFunction, hbar=1.0):
    """Numerators hbar Im(psi* d_k psi) per particle coordinate (masses excluded)."""
    v = psi.values
    out = []
    for k in range(psi.n_particles):
        dv = derivative(v, psi.spacing, k, psi.periodic)
        num = np.imag(np.conj(v) * dv)
        if psi.spinor:
            num = num.sum(axis=tuple(range(psi.n_particles, v.ndim)))
        out.append(hbar * num)
    return out


def bohm_velocity(psi: GridWaveFunction, masses, point, hbar=1.0, floor=1e-12):
    """v_k = (hbar/m_k) Im(psi* d_k psi)/|psi|^2 at a continuous point."""
    masses = np.broadcast_to(np.asarray(masses, dtype=float), (psi.n_particles,))
    den_field = psi.density()
    den = _interp(den_field, psi, point)
    _floor_check(den, floor * den_field.max(), point)
    nums = bohm_current(psi, hbar)
    return np.array([_interp(n, psi, point) / (m * den) for n, m in zip(nums, masses)])


def bohm_velocity_field(psi: GridWaveFunction, masses, hbar=1.0, floor=1e-12):
    """Velocity at every grid point; NaN below the density floor."""
    masses = np.broadcast_to(np.asarray(masses, dtype=float), (psi.n_particles,))
    den = psi.density()
    ok = den > floor * den.max()
    nums = bohm_current(psi, hbar)
    out = np.full(den.shape + (psi.n_particles,), np.nan)
    for k, (n, m) in enumerate(zip(nums, masses)):
        out[..., k][ok] = n[ok] / (m * den[ok])
    return out


def _alpha_expectation(psi: GridWaveFunction, k):
    """Psi* alpha^(k) Psi with alpha = sigma_1 on the k-th spinor axis."""
    v = psi.values
    ax = psi.n_particles + k
    flipped = np.flip(v, axis=ax)
    num = np.real(np.conj(v) * flipped)
    return num.sum(axis=tuple(range(psi.n_particles, v.ndim)))


def bohm_dirac_velocity(psi: GridWaveFunction, point, c=1.0, floor=1e-12):
    """v_k = c Psi* alpha^(k) Psi / Psi* Psi (alpha = sigma_1)."""
    if not psi.spinor:
        raise HilbertError("Bohm-Dirac velocities need spinor components")
    den_field = psi.density()
    den = _interp(den_field, psi, point)
    _floor_check(den, floor * den_field.max(), point)
    v = np.array([c * _interp(_alpha_expectation(psi, k), psi, point) / den
                  for k in range(psi.n_particles)])
    # cubic interpolation can overshoot the pointwise bound by roundoff-size amounts
    return np.clip(v, -c, c)


def bohm_dirac_velocity_field(psi: GridWaveFunction, c=1.0):
    den = psi.density()
    return np.stack([c * _alpha_expectation(psi, k) / den for k in range(psi.n_particles)], axis=-1)


def _diff_matrix(n, spacing, periodic):
    eye = np.eye(n, dtype=complex)
    return derivative(eye, spacing, 0, periodic)


def velocity_field_from_density(W, spacing, kind="schrodinger", mass=1.0, hbar=1.0, c=1.0, periodic=True):
    """Numerator and denominator fields of the density-matrix velocity on the grid.

    schrodinger: num = (hbar/m) Im d_q W(q, q')|_{q'=q}, den = W(q, q)
    dirac: num = c tr_spin(W(q, q) alpha), den = tr_spin W(q, q); basis index = 2*site + component.
    """
    w = W.matrix if isinstance(W, DensityMatrix) else np.asarray(W, dtype=complex)
    if kind == "schrodinger":
        D = _diff_matrix(w.shape[0], spacing, periodic)
        num = (hbar / mass) * np.imag(np.einsum("ij,ji->i", D, w))
        den = np.real(np.diag(w))
    elif kind == "dirac":
        n = w.shape[0] // 2
        blocks = w.reshape(n, 2, n, 2)
        diag = blocks[np.arange(n), :, np.arange(n), :]
        den = np.real(diag[:, 0, 0] + diag[:, 1, 1])
        num = c * np.real(diag[:, 0, 1] + diag[:, 1, 0])
    else:
        raise HilbertError(f"unknown velocity kind {kind!r}")
    return num, den


def velocity_from_density(W, spacing, point, kind="schrodinger", mass=1.0, hbar=1.0, c=1.0,
                          origin=0.0, periodic=True, floor=1e-12):
    """Velocity of the density-matrix law at a continuous point (one particle)."""
    num, den_field = velocity_field_from_density(W, spacing, kind, mass, hbar, c, periodic)
    grid = GridWaveFunction(np.zeros(den_field.shape[0]), spacing, origin, periodic)
    den = _interp(den_field, grid, point)
    _floor_check(den, floor * den_field.max(), point)
    return np.array([_interp(num, grid, point) / den])


# ---------------------------------------------------------------------------
# generator in commutator form


def _check_pvm(P: PovmFamily):
    if not P.is_coordinate:
        raise HilbertError("the minimal free generator is implemented for coordinate PVMs")


def minimal_free_generator_apply(f, psi, H, P: PovmFamily, hbar=1.0, floor=1e-14):
    """Lf(q) = (1/hbar) Im[Psi*(q) ([f, H] Psi)(q)] / |Psi(q)|^2 per cell.

    Cells below the probability floor return 0.
    """
    _check_pvm(P)
    psi = np.asarray(getattr(psi, "amplitudes", psi), dtype=complex)
    f = np.asarray(f, dtype=float).reshape(-1)
    if f.size != P.ncells:
        raise HilbertError("f must have one value per cell")
    Hm = as_operator(H).entries
    fb = f[P.cell_of_index]
    comm_psi = fb * (Hm @ psi) - Hm @ (fb * psi)
    num = np.bincount(P.cell_of_index, weights=np.imag(np.conj(psi) * comm_psi), minlength=P.ncells)
    prob = P.probabilities(psi)
    out = np.zeros(P.ncells)
    ok = prob > floor
    out[ok] = num[ok] / (hbar * prob[ok])
    return out


def leibniz_residual(psi, H, P: PovmFamily, f, g, hbar=1.0, floor=1e-14, mask=None):
    """max_q |L(fg) - f Lg - g Lf| over cells above the floor (and in mask)."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    L = lambda h: minimal_free_generator_apply(h, psi, H, P, hbar, floor)
    r = np.abs(L(f * g) - f * L(g) - g * L(f))
    prob = P.probabilities(np.asarray(getattr(psi, "amplitudes", psi)))
    ok = prob > floor
    if mask is not None:
        ok &= mask
    return float(r[ok].max(initial=0.0))


# ---------------------------------------------------------------------------
# Nelson diffusion (comparison only)


def nelson_drift(psi: GridWaveFunction, lam, masses, point, hbar=1.0, floor=1e-12):
    """v + (lam/2) grad log|psi|^2, with the gradient in the mass metric (d_k / m_k)."""
    if lam < 0:
        raise HilbertError("diffusion constant must be nonnegative")
    v = bohm_velocity(psi, masses, point, hbar, floor)
    if lam == 0:
        return v
    masses = np.broadcast_to(np.asarray(masses, dtype=float), (psi.n_particles,))
    den_field = psi.density()
    den = _interp(den_field, psi, point)
    osm = []
    for k in range(psi.n_particles):
        dden = np.real(derivative(den_field, psi.spacing, k, psi.periodic))
        osm.append(_interp(dden, psi, point) / (den * masses[k]))
    return v + 0.5 * lam * np.array(osm)


def euler_maruyama_nelson(psi_at, x0, lam, mass, T, dt, rng, hbar=1.0):
    """Reference integrator dX = v~ dt + sqrt(lam/m) dW for one particle.

    psi_at(t) must return the GridWaveFunction at time t.
    """
    x = float(x0)
    n = int(round(T / dt))
    path = np.empty(n + 1)
    path[0] = x
    for i in range(n):
        drift = nelson_drift(psi_at(i * dt), lam, [mass], [x], hbar)[0]
        x = x + drift * dt + np.sqrt(lam / mass * dt) * rng.standard_normal()
        path[i + 1] = x
    return path


# ---------------------------------------------------------------------------
# integration and diagnostics


def rk4_bohm_path(psi_at, x0, masses, T, dt, hbar=1.0, floor=1e-12):
    """Bohmian trajectory by classic RK4; psi_at(t) gives the grid state at time t."""
    x = np.atleast_1d(np.asarray(x0, dtype=float))
    n = int(round(T / dt))
    path = np.empty((n + 1, x.size))
    path[0] = x
    v = lambda t, y: bohm_velocity(psi_at(t), masses, y, hbar, floor)
    for i in range(n):
        t = i * dt
        k1 = v(t, x)
        k2 = v(t + dt / 2, x + dt / 2 * k1)
        k3 = v(t + dt / 2, x + dt / 2 * k2)
        k4 = v(t + dt, x + dt * k3)
        x = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        path[i + 1] = x
    return path


def continuity_residual(psi: GridWaveFunction, H, mass=1.0, hbar=1.0):
    """max |d|psi|^2/dt + d/dx(|psi|^2 v)| for one particle on a grid.

    d|psi|^2/dt comes from the discretized H, the flux divergence from the
    gradient scheme; their mismatch is the discretization error.
    """
    v = psi.values.reshape(-1)
    Hm = as_operator(H).entries
    dens_dt = (2.0 / hbar) * np.imag(np.conj(v) * (Hm @ v))
    flux = bohm_current(psi, hbar)[0] / mass
    div = np.real(derivative(flux, psi.spacing, 0, psi.periodic))
    return float(np.max(np.abs(dens_dt + div)))


def write_velocity_csv(path, psi: GridWaveFunction, field):
    """Dump a velocity field: grid coordinates then velocity components."""
    grid = psi.grid()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        n = psi.n_particles
        w.writerow([f"x{k}" for k in range(n)] + [f"v{k}" for k in range(n)])
        for idx in np.ndindex(*field.shape[:-1]):
            w.writerow([repr(float(grid[i])) for i in idx] + [repr(float(c)) for c in field[idx]])
