"""Cone forms, strong cone monitoring, squeezing fits and spatial-averaging estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cutoff import (CutoffSpec, StationaryContext, nonlinearity_3d_derivative_adjoint_raw,
                     nonlinearity_3d_derivative_raw, truncate_raw)
from .evolution import ETDRK2, AbstractModel, Model, PreparedEquation, SpectralModel
from .exceptions import BlowUpError
from .operators import BandProjectorSpec, ModeCoordinates
from .spectral_field import SpectralField, apply_leray, grid_tables, hermitian_part, random_field


@dataclass(frozen=True)
class ConeForm:
    """``V(x) = |Q_N x|^2_{H^beta} - |P_N x|^2_{H^beta}``."""

    spec: BandProjectorSpec
    beta: float = 0.0

    def _parts(self, levels, density):
        w = np.where(levels > 0, levels, 1.0) ** (2 * self.beta) * density
        low = float(np.sum(w[levels <= self.spec.lam_n]))
        high = float(np.sum(w[levels > self.spec.lam_n]))
        return low, high

    def split(self, x, levels) -> tuple[float, float]:
        """``(|P_N x|^2, |Q_N x|^2)`` in the form's metric."""
        x = np.asarray(x)
        density = np.abs(x) ** 2
        if density.ndim == levels.ndim + 1:
            density = density.sum(axis=0)
        return self._parts(levels, density)

    def value(self, x, levels) -> float:
        low, high = self.split(x, levels)
        return high - low

    def norm_sq(self, x, levels) -> float:
        low, high = self.split(x, levels)
        return high + low


def _levels_for(x, spectrum=None, model=None):
    if model is not None:
        return model.levels
    if isinstance(x, SpectralField):
        return grid_tables(x.grid).ksq
    if spectrum is None:
        raise ValueError("an abstract vector needs its spectrum")
    return np.asarray(spectrum, dtype=float)


def cone_value(xi, form: ConeForm, spectrum=None) -> float:
    """``V(xi)``; ``V <= 0`` exactly when ``xi`` lies in the cone."""
    levels = _levels_for(xi, spectrum)
    x = xi.coeffs if isinstance(xi, SpectralField) else np.asarray(xi)
    return form.value(x, levels)


@dataclass(frozen=True)
class ConeCoefficients:
    """Half-derivative form ``(1/2) dV/dt + gamma V + mu |v|^2 <= 0``."""

    gamma: float
    mu: float
    source: str = "user"


def gap_coefficients(spec: BandProjectorSpec, alpha: float, L: float) -> ConeCoefficients:
    """Pair attached to the fractional gap condition (form with ``beta = -alpha``)."""
    a, b = spec.lam_n**alpha, spec.lam_next**alpha
    gamma = a * b * (spec.lam_next + spec.lam_n) / (a + b)
    lhs = (spec.lam_next ** (1 + alpha) - spec.lam_n ** (1 + alpha)) / (a + b)
    return ConeCoefficients(gamma, lhs - L, "gap")


def averaging_coefficients(spec: BandProjectorSpec, alpha: float) -> ConeCoefficients:
    """λ-based pair of the averaging estimate, halved to the ``(1/2) dV/dt`` convention."""
    top = spec.lam_next ** (1 + alpha) + spec.lam_n ** (1 + alpha)
    return ConeCoefficients(top / 2, (1 + alpha) * spec.lam_n**alpha / 8, "averaging")


def linear_coefficients(spec: BandProjectorSpec, alpha: float, nu: float = 1.0) -> ConeCoefficients:
    """Sharp pair for ``F = 0``: ``gamma = (a + b)/2``, ``mu = (a - b)/2``."""
    a = nu * spec.lam_next ** (1 + alpha)
    b = nu * spec.lam_n ** (1 + alpha)
    return ConeCoefficients((a + b) / 2, (a - b) / 2, "linear")


@dataclass
class ConeTrace:
    times: np.ndarray
    V: np.ndarray
    norm_sq: np.ndarray
    dVdt: np.ndarray
    residual: np.ndarray
    slack: np.ndarray
    cone_slack: np.ndarray
    coefficients: ConeCoefficients
    cone_entry_index: int | None = None
    invariance_violations: list = field(default_factory=list)
    squeezing: tuple | None = None
    squeezing_window: float = 0.0

    @property
    def inequality_violations(self) -> np.ndarray:
        return np.flatnonzero(self.residual > self.slack)

    @property
    def ok(self) -> bool:
        return not self.invariance_violations and self.inequality_violations.size == 0

    def summary(self) -> dict:
        res = self.residual - self.slack
        return {"steps": int(self.times.size - 1), "gamma": self.coefficients.gamma,
                "mu": self.coefficients.mu, "max_residual_over_slack": float(res.max()),
                "inequality_violations": int(self.inequality_violations.size),
                "invariance_violations": len(self.invariance_violations),
                "entered_cone_at": None if self.cone_entry_index is None
                else float(self.times[self.cone_entry_index]),
                "squeezing": None if self.squeezing is None
                else {"C": self.squeezing[0], "theta": self.squeezing[1]},
                "residual_histogram": _histogram(self.residual, self.slack)}


def _histogram(residual, slack):
    scale = np.maximum(np.abs(slack), 1e-300)
    ratio = residual / scale
    edges = [-np.inf, -1e3, -1.0, 0.0, 1.0, np.inf]
    counts, _ = np.histogram(ratio, bins=edges)
    return {"bins": ["<-1e3", "[-1e3,-1)", "[-1,0)", "[0,1)", ">=1"], "counts": counts.tolist()}


def _centered_derivative(V, dt):
    n = V.size
    d = np.zeros(n)
    if n == 1:
        return d
    if n == 2:
        d[:] = (V[1] - V[0]) / dt
        return d
    d[1:-1] = (V[2:] - V[:-2]) / (2 * dt)
    d[0] = (-3 * V[0] + 4 * V[1] - V[2]) / (2 * dt)
    d[-1] = (3 * V[-1] - 4 * V[-2] + V[-3]) / (2 * dt)
    return d


def _derivative_error(V, dt):
    """Truncation estimate ``dt^2 |V'''| / 3`` for the difference quotients."""
    n = V.size
    if n < 4:
        return np.zeros(n)
    third = np.abs(np.diff(V, 3)) / dt**3
    # third[i] sits between samples i+1 and i+2; take the worst neighbour
    padded = np.concatenate([[third[0]] * 2, third, [third[-1]] * 3])
    local = np.maximum.reduce([padded[0:n], padded[1:n + 1], padded[2:n + 2]])
    return dt**2 * local / 3


def squeezing_fit(times, norms, floor: float = 1e-12):
    """Least-squares ``log |v(t)| ~ log C - theta t``; ``C`` tightened to an envelope."""
    norms = np.asarray(norms, dtype=float)
    times = np.asarray(times, dtype=float)
    if norms[0] <= 0:
        return None
    rel = norms / norms[0]
    keep = rel > floor
    if keep.sum() < 3:
        return None
    slope, _ = np.polyfit(times[keep], np.log(rel[keep]), 1)
    theta = -slope
    C = float(np.max(rel[keep] * np.exp(theta * times[keep])))
    return C, float(theta)


def monitor_strong_cone(u1_0, u2_0, model: Model, form: ConeForm, coefficients: ConeCoefficients,
                        t_end: float, dt: float) -> ConeTrace:
    """Co-evolve two solutions and record the strong cone residual per step.

    Local truncation error is estimated by step doubling on the difference;
    the residual slack is ten times its effect on the discrete derivative.
    """
    x1 = np.array(model.to_raw(u1_0))
    x2 = np.array(model.to_raw(u2_0))
    n = max(1, math.ceil(t_end / dt - 1e-9)) if t_end > 0 else 0
    h = t_end / n if n else dt
    full, half = ETDRK2(model, h), ETDRK2(model, h / 2)
    levels = model.levels
    V = [form.value(x1 - x2, levels)]
    nv = [form.norm_sq(x1 - x2, levels)]
    lte = [0.0]
    for i in range(n):
        y1, y2 = full(x1), full(x2)
        if not (np.all(np.isfinite(y1)) and np.all(np.isfinite(y2))):
            raise BlowUpError(f"trajectory pair blew up at t={(i + 1) * h:.6g}", last_time=i * h)
        z1, z2 = half(half(x1)), half(half(x2))
        err = math.sqrt(form.norm_sq((y1 - y2) - (z1 - z2), levels))
        x1, x2 = y1, y2
        V.append(form.value(x1 - x2, levels))
        nv.append(form.norm_sq(x1 - x2, levels))
        lte.append(err)
    V, nv, lte = np.array(V), np.array(nv), np.array(lte)
    times = np.arange(V.size) * h
    dV = _centered_derivative(V, h)
    g, mu = coefficients.gamma, coefficients.mu
    residual = 0.5 * dV + g * V + mu * nv
    vnorm = np.sqrt(nv)
    lte_next = np.concatenate([lte[1:], lte[-1:]])
    local = 2 * vnorm * np.maximum(lte, lte_next)
    floor = 1e-12 * (np.abs(dV) + abs(g) * np.abs(V) + abs(mu) * nv)
    slack = 10 * (0.5 * _derivative_error(V, h) + 0.5 * local / h) + floor
    cum = np.cumsum(2 * vnorm * lte)
    entry = next((i for i, val in enumerate(V) if val <= 0), None)
    cone_slack = np.zeros_like(V)
    violations = []
    if entry is not None:
        cone_slack = 10 * (cum - cum[entry]) + 1e-12 * nv
        violations = [float(times[i]) for i in range(entry + 1, V.size) if V[i] > cone_slack[i]]
    # squeezing applies on [0, T] as long as V(T) > 0, i.e. on the positive prefix
    stop = V.size if entry is None else entry
    squeeze = squeezing_fit(times[:stop], vnorm[:stop]) if stop >= 3 else None
    return ConeTrace(times, V, nv, dV, residual, slack, cone_slack, coefficients, entry,
                     violations, squeeze, float(times[stop - 1]) if stop else 0.0)


# ---- spatial averaging ----

def _band_mask(levels, spec: BandProjectorSpec):
    return (levels >= spec.lam_n - spec.k) & (levels <= spec.lam_n + spec.k)


def power_norm(apply, adjoint, start, iters: int = 30, restarts: int = 5) -> float:
    """Largest singular value of a real-linear operator by power iteration on ``T*T``."""
    best = 0.0
    for r in range(restarts):
        x = start(r)
        nx = math.sqrt(_sq(x))
        if nx == 0:
            continue
        x = x / nx
        est = 0.0
        for _ in range(iters):
            y = apply(x)
            est = max(est, math.sqrt(_sq(y)))
            z = adjoint(y)
            nz = math.sqrt(_sq(z))
            if nz == 0:
                break
            x = z / nz
        best = max(best, est)
    return best


def _sq(x) -> float:
    return float(np.sum(np.abs(x) ** 2))


@dataclass
class SacReport:
    delta_hat: float
    per_sample: list
    lam_n: float
    k: float
    a_fit: list | None = None
    delta_target: float = 1.0 / 30.0

    @property
    def meets_delta_target(self) -> bool:
        return self.delta_hat <= self.delta_target

    def level_threshold_met(self, L: float, hbar: float = 1.0) -> bool:
        """Whether ``lam_n >= exp(60 L^2 / hbar)``."""
        return math.log(self.lam_n) >= 60 * L**2 / hbar

    def to_dict(self) -> dict:
        return {"delta_hat": self.delta_hat, "per_sample": self.per_sample, "lambda_N": self.lam_n,
                "k": self.k, "a_fit": self.a_fit, "delta_target": self.delta_target,
                "meets_delta_target": self.meets_delta_target}


class _BandOperator:
    """``z -> R F'(u) R z - a R z`` on the band, with its adjoint."""

    def __init__(self, model, spec, sample, scalar=0.0):
        self.model, self.spec, self.sample = model, spec, sample
        self.mask = _band_mask(model.levels, spec)
        self.a = scalar
        if isinstance(model, AbstractModel):
            if model.jacobian is None:
                raise ValueError("abstract model needs a jacobian for averaging estimates")
            self.J = np.asarray(model.jacobian(np.asarray(sample, dtype=float)))
        elif isinstance(model, PreparedEquation) and model.grid.dim == 3:
            self.w = model.to_raw(sample) if isinstance(sample, SpectralField) else np.asarray(sample)
        else:
            raise TypeError("averaging estimates need a 3D prepared model or an abstract model")

    def _R(self, x):
        return np.where(self.mask, x, 0.0)

    def raw(self, z):
        m = self.model
        z = self._R(z)
        if isinstance(m, AbstractModel):
            y = self.J @ z
        else:
            y = nonlinearity_3d_derivative_raw(m.grid, self.w, z, m.ctx.v.coeffs, m.cutoff)
        return self._R(y) - self.a * z

    def adjoint(self, y):
        m = self.model
        y = self._R(y)
        if isinstance(m, AbstractModel):
            z = self.J.T @ y
        else:
            z = nonlinearity_3d_derivative_adjoint_raw(m.grid, self.w, y, m.ctx.v.coeffs, m.cutoff)
        return self._R(z) - self.a * y

    def random_start(self, seed):
        rng = np.random.default_rng(seed)
        m = self.model
        if isinstance(m, AbstractModel):
            return self._R(rng.standard_normal(m.levels.size))
        g = rng.standard_normal(m.grid.shape) + 1j * rng.standard_normal(m.grid.shape)
        g = apply_leray(hermitian_part(g, m.grid.spatial_axes), m.grid)
        return self._R(g)

    def band_basis(self):
        m = self.model
        if isinstance(m, AbstractModel):
            for i in np.flatnonzero(self.mask):
                e = np.zeros(m.levels.size)
                e[i] = 1.0
                yield e
        else:
            coords = ModeCoordinates(m.grid, self.mask)
            for i in range(coords.dim):
                e = np.zeros(coords.dim)
                e[i] = 1.0
                yield coords.to_raw(e)

    def fit_scalar(self) -> float:
        num = den = 0.0
        for e in self.band_basis():
            num += float(np.vdot(e, self.raw(e)).real)
            den += _sq(e)
        return num / den if den else 0.0


def default_sac_samples(model: PreparedEquation, count: int = 4, seed: int = 0):
    """Half inside the ball (W = id) and half far outside it (saturated)."""
    grid, rho = model.grid, model.cutoff.radius
    out = []
    for i in range(count):
        w = random_field(grid, seed + i, 5.0)
        h92 = w.norm(4.5)
        scale = 0.5 * rho / h92 if i % 2 == 0 else 1e3 * rho / w.norm(0)
        out.append(w * scale)
    return out


def sac_estimate(model, spec: BandProjectorSpec, samples, power_iters: int = 30,
                 restarts: int = 5, seed: int = 0, scalar=None) -> SacReport:
    """Largest sampled norm of ``z -> R F'(u) R z`` on the band ``[lam_n - k, lam_n + k]``.

    ``scalar="fit"`` subtracts the least-squares multiple of the identity on
    the band first; a number subtracts that fixed multiple.
    """
    if isinstance(samples, int):
        samples = default_sac_samples(model, samples, seed)
    per, fits = [], []
    for i, s in enumerate(samples):
        op = _BandOperator(model, spec, s)
        if scalar == "fit":
            op.a = op.fit_scalar()
        elif scalar is not None:
            op.a = float(scalar)
        fits.append(op.a)
        est = power_norm(op.raw, op.adjoint, lambda r, i=i: op.random_start(seed + 1000 * i + r),
                         power_iters, restarts)
        per.append(est)
    return SacReport(max(per) if per else 0.0, per, spec.lam_n, spec.k,
                     fits if scalar is not None else None)


def sac_estimate_with_scalar(model, spec: BandProjectorSpec, samples, power_iters: int = 30,
                             restarts: int = 5, seed: int = 0):
    """``(delta_hat, a_fit per sample)`` after removing the best scalar on the band."""
    rep = sac_estimate(model, spec, samples, power_iters, restarts, seed, scalar="fit")
    return rep.delta_hat, rep.a_fit


def band_coupling_pairs(U: SpectralField, spec: BandProjectorSpec) -> list:
    """Band modes ``l`` and generator modes ``m`` with ``l + m`` back in the band.

    An empty list certifies, in exact integer arithmetic, that ``R T_U R = 0``
    for the linearisation around ``U``.
    """
    t = grid_tables(U.grid)
    band = _band_mask(t.ksq, spec)
    bl = t.k[:, band].T
    support = np.any(U.coeffs != 0, axis=0)
    gm = t.k[:, support].T
    pairs = []
    if len(bl) == 0 or len(gm) == 0:
        return pairs
    sums = bl[:, None, :] + gm[None, :, :]
    sq = np.sum(sums**2, axis=-1)
    hit = (sq >= spec.lam_n - spec.k) & (sq <= spec.lam_n + spec.k)
    for i, j in zip(*np.nonzero(hit)):
        pairs.append((tuple(int(x) for x in bl[i]), tuple(int(x) for x in gm[j])))
    return pairs


def zero_mean_audit(ctx: StationaryContext, w: SpectralField, cutoff: CutoffSpec | None = None,
                    tol: float = 1e-15) -> dict:
    """Means of ``W^n``, ``v^n`` and ``d_m W^n``, ``d_m v^n`` read off the ``j = 0`` coefficient.

    Grid-quadrature means are reported alongside for reference.
    """
    if w.dim != 3 or ctx.dim != 3:
        raise ValueError("the zero-mean audit is defined for d=3")
    grid = w.grid
    t = grid_tables(grid)
    W = truncate_raw(grid, w.coeffs, cutoff) if cutoff is not None else w.coeffs
    zero = (slice(None),) + (0,) * grid.dim
    out = {}
    for name, c in (("W", W), ("v", ctx.v.coeffs)):
        out[f"mean_{name}"] = float(np.max(np.abs(c[zero])))
        grads = 1j * t.k[None, :] * c[:, None]
        out[f"mean_grad_{name}"] = float(np.max(np.abs(grads[(slice(None), slice(None)) + (0,) * grid.dim])))
        phys = np.fft.ifftn(c, axes=grid.spatial_axes, norm="forward").real
        out[f"quadrature_mean_{name}"] = float(np.max(np.abs(phys.mean(axis=grid.spatial_axes))))
    gated = [v for k, v in out.items() if not k.startswith("quadrature")]
    out["max_deviation"] = max(gated)
    out["passed"] = out["max_deviation"] <= tol
    return out
