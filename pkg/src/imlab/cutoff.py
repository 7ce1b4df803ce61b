"""Smooth spectral truncation W, its derivative, and the modified nonlinearities."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.optimize import brentq

from .operators import bilinear_adjoints_raw, bilinear_raw, physical_pair, project_product
from .spectral_field import GridSpec, SpectralField, apply_leray, grid_tables

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)


def _psi(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


class _Profile:
    """Radial profile ``m`` with ``m(r) = r`` on [0, 1] and ``m = 2`` beyond ``r2``.

    ``m' = 1 - S((r - 1)/(r2 - 1))`` on [1, r2], where ``S`` is the standard
    smooth step with a skew ``kappa`` tuned so the transition integrates to 1.
    """

    def __init__(self, r2: float):
        if not r2 > 2:
            raise ValueError("saturation radius must exceed 2 so that m can reach 2")
        self.r2 = float(r2)
        target = 1.0 / (self.r2 - 1.0)
        if abs(self.r2 - 3.0) < 1e-15:
            self.kappa = 1.0
        else:
            self.kappa = brentq(lambda lk: self._transition_integral(math.exp(lk)) - target,
                                -60.0, 60.0, xtol=1e-14, rtol=1e-15)
            self.kappa = math.exp(self.kappa)

    def _step(self, t, kappa=None):
        kappa = self.kappa if kappa is None else kappa
        t = np.clip(t, 0.0, 1.0)
        a, b = _psi(t), _psi(1.0 - t)
        return a / (a + kappa * b)

    def _transition_integral(self, kappa, upper=1.0):
        x = 0.5 * upper * (_GL_NODES + 1.0)
        return 0.5 * upper * np.sum(_GL_WEIGHTS * (1.0 - self._step(x, kappa)))

    def value(self, r):
        r = np.asarray(r, dtype=float)
        out = np.where(r <= 1.0, r, 2.0)
        mid = (r > 1.0) & (r < self.r2)
        if np.any(mid):
            t = (r[mid] - 1.0) / (self.r2 - 1.0)
            x = 0.5 * t[:, None] * (_GL_NODES[None, :] + 1.0)
            integral = 0.5 * t * np.sum(_GL_WEIGHTS * (1.0 - self._step(x)), axis=1)
            out[mid] = 1.0 + (self.r2 - 1.0) * integral
        return out

    def slope(self, r):
        r = np.asarray(r, dtype=float)
        out = np.where(r <= 1.0, 1.0, 0.0)
        mid = (r > 1.0) & (r < self.r2)
        out[mid] = 1.0 - self._step((r[mid] - 1.0) / (self.r2 - 1.0))
        return out


_PROFILES: dict[float, _Profile] = {}


def _profile(r2: float) -> _Profile:
    if r2 not in _PROFILES:
        _PROFILES[r2] = _Profile(r2)
    return _PROFILES[r2]


@dataclass(frozen=True)
class CutoffSpec:
    """Cut-off radius ``radius`` in the ``H^{9/2}`` scaling; saturation level is 2."""

    radius: float
    saturation_radius: float = 3.0

    weight_exponent = 4.5
    saturation_level = 2.0
    plateau_onset = 1.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("cut-off radius must be positive")
        _profile(self.saturation_radius)

    @cached_property
    def profile(self) -> _Profile:
        return _profile(self.saturation_radius)

    @property
    def lipschitz(self) -> float:
        """Bound on the operator norm of every ``eta'``: ``max(m', m/r) <= 1``."""
        return 1.0


@dataclass(frozen=True)
class StationaryContext:
    v: SpectralField
    dim: int
    theta: float
    nu: float
    forcing: SpectralField | None = None
    residual: float = 0.0
    iterations: int = 0
    phase: str = "given"
    initial_guess: str = "zero"
    residual_history: tuple = ()

    @classmethod
    def trivial(cls, grid: GridSpec, nu: float = 1.0) -> StationaryContext:
        """Context with ``v = 0`` (zero forcing)."""
        theta = 1.0 if grid.dim == 2 else 1.25
        zero = SpectralField.zeros(grid)
        return cls(zero, grid.dim, theta, nu, zero)

    def report(self) -> dict:
        return {"dim": self.dim, "theta": self.theta, "nu": self.nu, "residual": self.residual,
                "iterations": self.iterations, "phase": self.phase,
                "initial_guess": self.initial_guess,
                "residual_history": list(self.residual_history)}


def _gain(r, profile):
    """``m(r)/r`` and its derivative in ``r``; exactly (1, 0) in the linear zone."""
    r = np.asarray(r, dtype=float)
    g = np.ones_like(r)
    dg = np.zeros_like(r)
    big = r > 1.0
    if np.any(big):
        rb = r[big]
        m = profile.value(rb)
        g[big] = m / rb
        dg[big] = (profile.slope(rb) * rb - m) / rb**2
    return g, dg


class EtaDerivative:
    """Real-linear map ``delta -> a delta + b conj(delta)``."""

    __slots__ = ("a", "b")

    def __init__(self, a, b):
        self.a, self.b = a, b

    def __call__(self, delta):
        return self.a * delta + self.b * np.conj(delta)

    def adjoint(self, delta):
        return np.conj(self.a) * delta + self.b * np.conj(delta)

    def norm(self):
        return np.abs(self.a) + np.abs(self.b)


def eta(zeta, spec: CutoffSpec | None = None):
    """``zeta m(|zeta|)/|zeta|``; identity for ``|zeta| <= 1`` and bounded by 2."""
    profile = (spec or CutoffSpec(1.0)).profile
    z = np.asarray(zeta, dtype=complex)
    g, _ = _gain(np.abs(z), profile)
    out = z * g
    return out if out.ndim else complex(out)


def eta_prime(zeta, spec: CutoffSpec | None = None) -> EtaDerivative:
    profile = (spec or CutoffSpec(1.0)).profile
    z = np.asarray(zeta, dtype=complex)
    r = np.abs(z)
    g, dg = _gain(r, profile)
    a = g + 0.5 * r * dg
    with np.errstate(invalid="ignore", divide="ignore"):
        b = np.where(r > 1.0, z**2 * dg / (2.0 * np.where(r > 0, r, 1.0)), 0.0)
    if z.ndim == 0:
        return EtaDerivative(float(a), complex(b))
    return EtaDerivative(a, b)


def _scale(grid: GridSpec, spec: CutoffSpec) -> np.ndarray:
    """``|j|^{9/2} / radius`` on retained modes."""
    return grid_tables(grid).weight(spec.weight_exponent / 2) / spec.radius


def truncate_raw(grid: GridSpec, w: np.ndarray, spec: CutoffSpec) -> np.ndarray:
    zeta = w * _scale(grid, spec)
    g, _ = _gain(np.abs(zeta), spec.profile)
    out = g * w
    touched = np.any(g != 1.0, axis=0)
    if np.any(touched):
        # the Leray matrix is only needed where the cut-off actually acted
        out = np.where(touched, apply_leray(out, grid), out)
    return out


def truncate_derivative_raw(grid: GridSpec, w: np.ndarray, z: np.ndarray, spec: CutoffSpec) -> np.ndarray:
    d = eta_prime(w * _scale(grid, spec), spec)
    return apply_leray(d(z), grid)


def truncate_derivative_adjoint_raw(grid: GridSpec, w: np.ndarray, y: np.ndarray, spec: CutoffSpec) -> np.ndarray:
    d = eta_prime(w * _scale(grid, spec), spec)
    return apply_leray(d.adjoint(apply_leray(y, grid)), grid)


def truncate_W(w: SpectralField, spec: CutoffSpec) -> SpectralField:
    """``W_j = (radius/|j|^{9/2}) P^j eta(|j|^{9/2} w_j / radius)`` with eta per component."""
    return SpectralField._trusted(w.grid, truncate_raw(w.grid, w.coeffs, spec))


def truncate_W_derivative(w: SpectralField, z: SpectralField, spec: CutoffSpec) -> SpectralField:
    if w.grid != z.grid:
        raise ValueError("fields live on different grids")
    return SpectralField._trusted(w.grid, truncate_derivative_raw(w.grid, w.coeffs, z.coeffs, spec))


def _inverse_quarter(grid: GridSpec) -> np.ndarray:
    return grid_tables(grid).weight(-0.25)


def _require_dim(field: SpectralField, ctx: StationaryContext, dim: int):
    if field.dim != dim or ctx.dim != dim:
        raise ValueError(f"this nonlinearity is defined for d={dim}, got d={field.dim}")
    if ctx.v.grid != field.grid:
        raise ValueError("stationary solution and state live on different grids")


def bracket_raw(grid: GridSpec, W: np.ndarray, v: np.ndarray, v_phys=None) -> np.ndarray:
    """``B(W, W) + B(W, v) + B(v, W)``.

    ``v_phys`` is ``physical_pair(grid, v)``, reusable when ``v`` is fixed.
    """
    uv, gv = physical_pair(grid, v) if v_phys is None else v_phys
    uw, gw = physical_pair(grid, W)
    prod = np.einsum("m...,nm...->n...", uw, gw + gv) + np.einsum("m...,nm...->n...", uv, gw)
    return project_product(grid, prod)


def modified_nonlinearity_2d(w: SpectralField, ctx: StationaryContext, spec: CutoffSpec) -> SpectralField:
    """``F2 = B(W, W) + B(W, v) + B(v, W)`` with ``W = W(w)``."""
    _require_dim(w, ctx, 2)
    W = truncate_raw(w.grid, w.coeffs, spec)
    return SpectralField._trusted(w.grid, bracket_raw(w.grid, W, ctx.v.coeffs))


def modified_nonlinearity_3d(w: SpectralField, ctx: StationaryContext, spec: CutoffSpec) -> SpectralField:
    """``F3 = A^{-1/4}(B(W, W) + B(v, W) + B(W, v))``."""
    _require_dim(w, ctx, 3)
    W = truncate_raw(w.grid, w.coeffs, spec)
    out = _inverse_quarter(w.grid) * bracket_raw(w.grid, W, ctx.v.coeffs)
    return SpectralField._trusted(w.grid, out)


def nonlinearity_3d_derivative_raw(grid, w, z, v, spec):
    W = truncate_raw(grid, w, spec)
    h = truncate_derivative_raw(grid, w, z, spec)
    U = W + v
    return _inverse_quarter(grid) * (bilinear_raw(grid, h, U) + bilinear_raw(grid, U, h))


def nonlinearity_3d_derivative_adjoint_raw(grid, w, y, v, spec):
    """Adjoint of ``z -> F3'(W(w)) z`` in H."""
    U = truncate_raw(grid, w, spec) + v
    c = _inverse_quarter(grid) * y
    first, second = bilinear_adjoints_raw(grid, c, U)
    return truncate_derivative_adjoint_raw(grid, w, first + second, spec)


def modified_nonlinearity_3d_derivative(w: SpectralField, z: SpectralField, ctx: StationaryContext,
                                        spec: CutoffSpec) -> SpectralField:
    """``A^{-1/4}[B(W'(w)z, W + v) + B(W + v, W'(w)z)]``."""
    _require_dim(w, ctx, 3)
    if z.grid != w.grid:
        raise ValueError("fields live on different grids")
    out = nonlinearity_3d_derivative_raw(w.grid, w.coeffs, z.coeffs, ctx.v.coeffs, spec)
    return SpectralField._trusted(w.grid, out)


@dataclass(frozen=True)
class LipschitzSample:
    estimate: float
    ratios: np.ndarray
    pairs: int

    def to_dict(self) -> dict:
        return {"L": self.estimate, "pairs": self.pairs, "median_ratio": float(np.median(self.ratios))}


def empirical_lipschitz(ctx: StationaryContext, spec: CutoffSpec, pairs: int = 500, seed: int = 0,
                        decay_exponent: float = 3.0, log_amplitude_range=(-2.0, 2.0)) -> LipschitzSample:
    """Max of ``|N(w1) - N(w2)|_H / |w1 - w2|_H`` over seeded random pairs.

    ``N`` is ``F2(W(.))`` in 2D and ``F3(W(.))`` in 3D. Pair members are random
    fields with ``|j|^{-decay_exponent}`` moduli whose ``H^{9/2}`` size is spread
    log-uniformly around the cut-off radius, so both the linear zone and the
    saturated zone are sampled.
    """
    from .spectral_field import random_field

    grid = ctx.v.grid
    rng = np.random.default_rng(seed)
    v = ctx.v.coeffs
    post = _inverse_quarter(grid) if grid.dim == 3 else 1.0

    vp = physical_pair(grid, v)

    def N(w):
        return post * bracket_raw(grid, truncate_raw(grid, w, spec), v, vp)

    def sample(k):
        f = random_field(grid, int(rng.integers(2**31)), decay_exponent)
        scale = spec.radius * 10.0 ** rng.uniform(*log_amplitude_range) / f.norm(spec.weight_exponent)
        return scale * f.coeffs

    ratios = np.empty(pairs)
    for i in range(pairs):
        a, b = sample(0), sample(1)
        if i % 2:
            # nearby pairs probe the local slope rather than the secant over a large jump
            b = a + 1e-3 * (b - a)
        diff = float(np.sqrt(np.sum(np.abs(a - b) ** 2)))
        ratios[i] = float(np.sqrt(np.sum(np.abs(N(a) - N(b)) ** 2))) / diff
    return LipschitzSample(float(ratios.max()), ratios, pairs)
