"""Stationary solutions ``nu A^theta v + B(v, v) = f`` and the closed-form radius bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .cutoff import StationaryContext
from .exceptions import ConvergenceError
from .operators import bilinear_raw
from .spectral_field import SpectralField, grid_tables, hermitian_part


def default_theta(dim: int) -> float:
    return 1.0 if dim == 2 else 1.25


def _residual(grid, v, f, op):
    return op * v + bilinear_raw(grid, v, v) - f


def _hnorm(c) -> float:
    return float(np.sqrt(np.sum(np.abs(c) ** 2)))


def solve_stationary(f: SpectralField, dim: int | None = None, theta: float | None = None,
                     nu: float = 1.0, tol: float = 1e-10, *, damping: float = 0.5,
                     max_picard: int = 400, max_newton: int = 40) -> StationaryContext:
    """Damped Picard from ``v = 0``, switching to Newton-Krylov when Picard stalls."""
    grid = f.grid
    dim = grid.dim if dim is None else dim
    if dim != grid.dim:
        raise ValueError(f"dim={dim} does not match the forcing grid (d={grid.dim})")
    theta = default_theta(dim) if theta is None else theta
    if not nu > 0 or not tol > 0:
        raise ValueError("nu and tol must be positive")
    t = grid_tables(grid)
    op = nu * t.weight(theta)
    inv = np.divide(1.0, op, out=np.zeros_like(op), where=op > 0)
    fc = f.coeffs
    v = np.zeros_like(fc)
    history = []
    res = _hnorm(_residual(grid, v, fc, op))
    history.append(res)
    phase = "picard"
    it = 0

    def done(phase_name):
        vf = SpectralField._trusted(grid, hermitian_part(v, grid.spatial_axes))
        return StationaryContext(vf, dim, theta, nu, f, history[-1], it, phase_name, "zero",
                                 tuple(history))

    if res <= tol:
        return done("initial")
    stall = 0
    for it in range(1, max_picard + 1):
        v = (1 - damping) * v + damping * inv * (fc - bilinear_raw(grid, v, v))
        res = _hnorm(_residual(grid, v, fc, op))
        history.append(res)
        if res <= tol:
            return done("picard")
        if not np.isfinite(res):
            break
        stall = stall + 1 if res > 0.9 * history[-2] else 0
        if stall >= 5:
            break
    phase = "newton"
    if not np.isfinite(res):
        v = np.zeros_like(fc)
    active = t.retained
    shape = fc.shape
    nact = int(active.sum()) * shape[0]

    def pack(c):
        return c[:, active].ravel()

    def unpack(x):
        c = np.zeros(shape, dtype=complex)
        c[:, active] = x.reshape(shape[0], -1)
        return c

    pinv = pack(np.broadcast_to(inv, shape))
    for k in range(1, max_newton + 1):
        it += 1
        r = _residual(grid, v, fc, op)
        res = _hnorm(r)
        if res <= tol:
            return done(phase)
        vv = v

        def jac(x, vv=vv):
            z = unpack(pinv * x)
            return pack(op * z + bilinear_raw(grid, z, vv) + bilinear_raw(grid, vv, z))

        J = LinearOperator((nact, nact), matvec=jac, dtype=complex)
        y, _ = gmres(J, -pack(r), rtol=1e-8, atol=0.0, restart=60, maxiter=20)
        step = unpack(pinv * y)
        lam = 1.0
        while lam > 1e-4:
            trial = v + lam * step
            tres = _hnorm(_residual(grid, trial, fc, op))
            if tres < res:
                break
            lam *= 0.5
        v = trial
        history.append(tres)
        if tres <= tol:
            return done(phase)
    raise ConvergenceError(f"stationary solve did not reach tol={tol:g}; last residual {history[-1]:.3e}",
                           residual=history[-1], history=tuple(history))


def stationary_residual(ctx: StationaryContext, f: SpectralField | None = None) -> float:
    f = ctx.forcing if f is None else f
    grid = ctx.v.grid
    op = ctx.nu * grid_tables(grid).weight(ctx.theta)
    return _hnorm(_residual(grid, ctx.v.coeffs, f.coeffs, op))


@dataclass(frozen=True)
class RadiiEstimates:
    dim: int
    values: dict
    constants: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    @property
    def cutoff_radius(self) -> float:
        return self.values["varrho_2" if self.dim == 2 else "varrho_3"]

    def to_dict(self) -> dict:
        return {"dim": self.dim, "values": dict(self.values), "constants": dict(self.constants)}


_DEFAULTS_2D = {"c": 1.0, "k": 1.0}
_DEFAULTS_3D = {"c_tilde": 1.0, "C": 1.0, "C_nu": 1.0, "C_tilde": 1.0, "K": 1.0}
REQUIRED_NORMS = {
    2: ("H", "H1", "rho_1", "rho_2", "rho_bar_0"),
    3: ("H-5/4", "H-1", "H-1/2", "H-1/4", "H"),
}


def _exp(x: float) -> float:
    with np.errstate(over="ignore"):
        return float(np.exp(x))


def _mul(*xs) -> float:
    # 0 * inf would be nan; a vanishing factor wins since every formula is a bound
    if any(x == 0 for x in xs):
        return 0.0
    out = 1.0
    for x in xs:
        out *= x
    return out


def analytic_radii(f_norms: dict, nu: float = 1.0, dim: int = 2,
                   constants: dict | None = None) -> RadiiEstimates:
    """Evaluate the closed-form radius chains with generic constants (default 1).

    For ``dim=2`` the a priori bounds ``rho_1``, ``rho_2`` (on ``|u|_{H^1}`` and
    ``|u|_{H^2}``) and ``rho_bar_0`` (on ``|u_t|_H``) have no closed form and
    must be supplied alongside the forcing norms ``H`` and ``H1``.
    For ``dim=3`` the forcing norms ``H-5/4``, ``H-1``, ``H-1/2``, ``H-1/4``
    and ``H`` are required.
    """
    if dim not in REQUIRED_NORMS:
        raise ValueError("dim must be 2 or 3")
    missing = [k for k in REQUIRED_NORMS[dim] if k not in f_norms]
    if missing:
        raise KeyError(f"missing norm input(s): {', '.join(missing)}")
    if any(f_norms[k] < 0 for k in REQUIRED_NORMS[dim]):
        raise ValueError("norms must be nonnegative")
    if not nu > 0:
        raise ValueError("nu must be positive")
    base = dict(_DEFAULTS_2D if dim == 2 else _DEFAULTS_3D)
    unknown = set(constants or {}) - set(base)
    if unknown:
        raise KeyError(f"unknown constant(s): {', '.join(sorted(unknown))}")
    base.update(constants or {})
    # the chains overflow quickly; saturate at inf instead of raising
    norms = {k: np.float64(f_norms[k]) for k in REQUIRED_NORMS[dim]}
    with np.errstate(over="ignore"):
        vals = _radii_2d(norms, base) if dim == 2 else _radii_3d(norms, np.float64(nu), base)
    return RadiiEstimates(dim, {k: float(v) for k, v in vals.items()}, base)


def _radii_2d(fn, cst):
    c, k = cst["c"], cst["k"]
    fH, fH1 = fn["H"], fn["H1"]
    r1, r2, rb0 = fn["rho_1"], fn["rho_2"], fn["rho_bar_0"]
    rho_v = c * (fH**2 + fH1)
    growth = _exp(r1**4 + r2**2)
    poly = 1 + r1**4 + r2**2
    rb1 = np.sqrt(k * _mul(growth, r2**2 * rb0**2))
    rho3 = k * (rb1 + r2**2 + fH1)
    rb2 = np.sqrt(k * _mul(growth, poly * rb1**2 + rb1**2 * r2 * rho3))
    rb52 = np.sqrt(k * _mul(growth, poly * rb2**2 + rb1**2 * r2 * rho3 + (rb1 + rb2) * rb2 * rho3**2))
    varrho = k * ((rho_v + rho3) ** 2 + rb52)
    return {"rho_v": rho_v, "rho_1": r1, "rho_2": r2, "rho_3": rho3, "rho_bar_0": rb0,
            "rho_bar_1": rb1, "rho_bar_2": rb2, "rho_bar_5/2": rb52, "varrho_2": varrho}


def _radii_3d(fn, nu, cst):
    C, Cn, Ct, K = cst["C"], cst["C_nu"], cst["C_tilde"], cst["K"]
    f54, f1, f12, f14, fH = fn["H-5/4"], fn["H-1"], fn["H-1/2"], fn["H-1/4"], fn["H"]
    r0s = 2.0 / nu * f54**2
    r12s = C * _mul(_exp(r0s + f54**2), r0s + f54**2)
    r1s = C * _mul(_exp(_mul(r12s, r0s + f54**2)), r0s + f54**2 + f14**2)
    r1 = np.sqrt(r1s)
    r54s = C * _mul(_exp(_mul(r0s, r1**8)), r0s + f54**2 + fH**2)
    rb0s = _mul(_exp(Cn * r1s), Cn * r54s, 1 + r1s, 1 + _mul(r0s, r1**8) + fH**2)
    r32 = C * (rb0s + r1s + f1)
    r2 = C * (rb0s + _mul(r1, r32) + f12)
    r52 = C * (rb0s + _mul(r1, r2) + fH)
    rb1s = Ct * _mul(_exp(r2**2.25), (1 + r1**4) * rb0s)
    rb2s = Ct * _mul(_exp(r2**2), 1 + r2**2, rb1s)
    r_v = cst["c_tilde"] * (f54**4 + f54**10 + f1**2) * f54**2 + 2.0 / nu**2 * fH**2
    varrho = np.sqrt(K * (r_v**2 + r52**2 + rb2s))
    return {"r_v": r_v, "r_0": np.sqrt(r0s), "r_1/2": np.sqrt(r12s), "r_1": r1,
            "r_5/4": np.sqrt(r54s), "r_3/2": r32, "r_2": r2, "r_5/2": r52,
            "r_bar_0": np.sqrt(rb0s), "r_bar_1": np.sqrt(rb1s), "r_bar_2": np.sqrt(rb2s),
            "varrho_3": varrho}


def forcing_norms(f: SpectralField) -> dict:
    """Every forcing norm either radius chain needs."""
    return {"H": f.norm(0), "H1": f.norm(1), "H-5/4": f.norm(-1.25), "H-1": f.norm(-1),
            "H-1/2": f.norm(-0.5), "H-1/4": f.norm(-0.25)}
