"""Stokes powers, Galerkin and band projectors, and the dealiased bilinear form."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft

from .spectral_field import GridSpec, SpectralField, apply_leray, canonical_mask, grid_tables


@dataclass(frozen=True)
class BandProjectorSpec:
    """Split at the level ``lam_n`` with band half-width ``k``.

    ``lam_n`` and ``lam_next`` are consecutive distinct eigenvalue levels;
    ``n_modes`` is the dimension of the low space (multiplicity counted).
    """

    lam_n: float
    lam_next: float
    k: float = 0.0
    n_modes: int | None = None

    def __post_init__(self):
        if not self.lam_next > self.lam_n:
            raise ValueError(f"lam_next={self.lam_next} must exceed lam_n={self.lam_n}")
        if self.lam_n <= 0:
            raise ValueError("lam_n must be positive")
        if self.k < 0 or (self.k > 0 and not self.k < self.lam_n):
            raise ValueError(f"band half-width k={self.k} must satisfy 0 <= k < lam_n")

    @classmethod
    def from_level(cls, dim: int, lam_n: int, k: float = 0.0) -> BandProjectorSpec:
        """Spec for the Stokes operator on the d-torus cut at an achieved level."""
        from .gap_search import level_info

        info = level_info(dim, lam_n)
        return cls(lam_n, info.next_level, k, info.mode_count)

    @classmethod
    def from_spectrum(cls, spectrum, n_modes: int, k: float = 0.0) -> BandProjectorSpec:
        """Cut a nondecreasing abstract spectrum after its first ``n_modes`` entries."""
        lam = np.asarray(spectrum, dtype=float)
        if not 0 < n_modes < lam.size:
            raise ValueError("n_modes must lie strictly inside the spectrum")
        return cls(float(lam[n_modes - 1]), float(lam[n_modes]), k, n_modes)


def _levels(x, spectrum=None) -> np.ndarray:
    if isinstance(x, SpectralField):
        return grid_tables(x.grid).ksq
    if spectrum is None:
        raise ValueError("an abstract vector needs its spectrum")
    return np.asarray(spectrum, dtype=float)


def _require_achieved(x, spec, spectrum):
    if isinstance(x, SpectralField):
        from .gap_search import is_level, level_info

        if not is_level(x.dim, spec.lam_n):
            raise ValueError(f"lam_n={spec.lam_n} is not an eigenvalue of the Stokes operator in d={x.dim}")
        if level_info(x.dim, spec.lam_n).next_level != spec.lam_next:
            raise ValueError(f"lam_next={spec.lam_next} is not the level following {spec.lam_n}")
    else:
        lam = np.asarray(spectrum, dtype=float)
        if not np.any(lam == spec.lam_n):
            raise ValueError(f"lam_n={spec.lam_n} is not in the spectrum")
        if np.any((lam > spec.lam_n) & (lam < spec.lam_next)):
            raise ValueError("the spectrum has levels strictly between lam_n and lam_next")


def _masked(x, mask):
    if isinstance(x, SpectralField):
        return SpectralField._trusted(x.grid, x.coeffs * mask)
    return np.where(mask, x, 0.0)


def low_mask(x, spec: BandProjectorSpec, spectrum=None) -> np.ndarray:
    return _levels(x, spectrum) <= spec.lam_n


def apply_stokes_power(field, theta: float, nu: float = 1.0, spectrum=None):
    """Multiply coefficient j by ``nu |j|^{2 theta}`` (or ``nu lam^theta`` for abstract vectors)."""
    if isinstance(field, SpectralField):
        w = grid_tables(field.grid).weight(theta)
        return SpectralField._trusted(field.grid, field.coeffs * (nu * w))
    lam = _levels(field, spectrum)
    return nu * lam**theta * np.asarray(field)


def project_low(field, spec: BandProjectorSpec, spectrum=None):
    _require_achieved(field, spec, spectrum)
    return _masked(field, _levels(field, spectrum) <= spec.lam_n)


def project_high(field, spec: BandProjectorSpec, spectrum=None):
    _require_achieved(field, spec, spectrum)
    return _masked(field, _levels(field, spectrum) >= spec.lam_next)


def band_project(field, spec: BandProjectorSpec, spectrum=None):
    """Split into parts below, inside and above the closed band ``[lam_n - k, lam_n + k]``."""
    lam = _levels(field, spectrum)
    lo, hi = spec.lam_n - spec.k, spec.lam_n + spec.k
    return (_masked(field, lam < lo),
            _masked(field, (lam >= lo) & (lam <= hi)),
            _masked(field, lam > hi))


def _ifft(grid, c):
    return scipy.fft.ifftn(c, axes=tuple(range(-grid.dim, 0)), norm="forward")


def _fft(grid, c):
    return scipy.fft.fftn(c, axes=tuple(range(-grid.dim, 0)), norm="forward")


def physical_pair(grid: GridSpec, a: np.ndarray):
    """Physical values of ``a`` and of its gradient ``(n, m) -> d_m a_n``."""
    t = grid_tables(grid)
    d = grid.dim
    grad = 1j * t.k[None, :] * a[:, None]
    phys = _ifft(grid, np.concatenate([a, grad.reshape((d * d,) + a.shape[1:])]))
    return phys[:d], phys[d:].reshape((d, d) + a.shape[1:])


def project_product(grid: GridSpec, prod: np.ndarray) -> np.ndarray:
    """Dealias and Leray-project a physical advection term."""
    return apply_leray(_fft(grid, prod) * grid_tables(grid).dealiased, grid)


def bilinear_raw(grid: GridSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``P_sigma[(a . grad) b]`` on raw coefficient arrays, dealiased.

    Complex-linear in each argument (no real part is taken), which keeps the
    map usable inside complex Krylov solvers.
    """
    t = grid_tables(grid)
    d = grid.dim
    # grad b: component n, derivative m -> i k_m b_n
    grad = 1j * t.k[None, :] * b[:, None]
    phys = _ifft(grid, np.concatenate([a, grad.reshape((d * d,) + a.shape[1:])]))
    ua = phys[:d]
    gb = phys[d:].reshape((d, d) + a.shape[1:])
    prod = np.einsum("m...,nm...->n...", ua, gb)
    return apply_leray(_fft(grid, prod) * t.dealiased, grid)


def bilinear_form(u: SpectralField, v: SpectralField) -> SpectralField:
    """``B(u, v) = P_sigma((u . grad) v)``, computed pseudo-spectrally with the 2/3 rule."""
    if u.grid != v.grid:
        raise ValueError("fields live on different grids")
    c = bilinear_raw(u.grid, u.coeffs, v.coeffs)
    return SpectralField._trusted(u.grid, c)


def bilinear_adjoints_raw(grid: GridSpec, c: np.ndarray, U: np.ndarray):
    """Adjoints of ``h -> B(h, U)`` and ``h -> B(U, h)`` applied to ``c``.

    Both are exact for the discrete operator (discrete Parseval), with no
    reliance on skew-symmetry of the continuous form.
    """
    t = grid_tables(grid)
    d = grid.dim
    gradU = 1j * t.k[None, :] * U[:, None]
    phys = _ifft(grid, np.concatenate([c * t.dealiased, U, gradU.reshape((d * d,) + U.shape[1:])]))
    ct, Up = phys[:d], phys[d:2 * d]
    gU = phys[2 * d:].reshape((d, d) + U.shape[1:])
    first = np.einsum("nm...,n...->m...", np.conj(gU), ct)
    flux = _fft(grid, np.conj(Up)[:, None] * ct[None, :])
    second = -1j * np.einsum("m...,mn...->n...", t.k, flux)
    return apply_leray(_fft(grid, first), grid), apply_leray(second, grid)


def trilinear(u: SpectralField, v: SpectralField, w: SpectralField) -> float:
    """``<B(u, v), w>`` as a Fourier-side inner product."""
    if w.grid != u.grid:
        raise ValueError("fields live on different grids")
    return bilinear_form(u, v).inner(w)


class ModeCoordinates:
    """Orthonormal real coordinates for the divergence-free fields on a set of modes.

    Each lattice vector in the mask contributes ``d - 1`` coordinates, so the
    dimension matches the multiplicity convention of the gap tables.
    """

    def __init__(self, grid: GridSpec, mask: np.ndarray):
        t = grid_tables(grid)
        self.grid = grid
        canon = canonical_mask(grid) & mask & t.retained
        idx = np.argwhere(canon)
        self._idx = tuple(idx.T)
        self._neg = tuple((-idx % grid.n).T)
        js = t.k[(slice(None),) + self._idx].T.astype(float)
        self.wavevectors = js.astype(int)
        self._frames = np.array([_perp_frame(j) for j in js]).reshape(len(js), grid.dim - 1, grid.dim)
        self.dim = 2 * (grid.dim - 1) * len(js)

    def to_coords(self, coeffs) -> np.ndarray:
        if isinstance(coeffs, SpectralField):
            coeffs = coeffs.coeffs
        vals = coeffs[(slice(None),) + self._idx].T  # (m, d)
        proj = np.einsum("mad,md->ma", self._frames, vals)
        return np.sqrt(2.0) * np.concatenate([proj.real.ravel(), proj.imag.ravel()])

    def to_raw(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        m, a = self._frames.shape[:2]
        half = x.size // 2
        z = (x[:half] + 1j * x[half:]).reshape(m, a) / np.sqrt(2.0)
        vec = np.einsum("mad,ma->md", self._frames, z)
        c = np.zeros(self.grid.shape, dtype=complex)
        c[(slice(None),) + self._idx] = vec.T
        c[(slice(None),) + self._neg] = np.conj(vec.T)
        return c

    def to_field(self, x) -> SpectralField:
        return SpectralField._trusted(self.grid, self.to_raw(x))


@lru_cache(maxsize=None)
def _perp_frame_cached(j: tuple) -> np.ndarray:
    j = np.asarray(j, dtype=float)
    u = j / np.linalg.norm(j)
    if j.size == 2:
        return np.array([[-u[1], u[0]]])
    axis = np.zeros(3)
    axis[np.argmin(np.abs(u))] = 1.0
    e1 = np.cross(u, axis)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(u, e1)
    return np.array([e1, e2])


def _perp_frame(j) -> np.ndarray:
    return _perp_frame_cached(tuple(float(x) for x in j))
