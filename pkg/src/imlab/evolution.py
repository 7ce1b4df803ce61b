"""Exponential time stepping for the original, difference, prepared and abstract equations."""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cutoff import CutoffSpec, StationaryContext, bracket_raw, truncate_raw
from .exceptions import BlowUpError
from .operators import bilinear_raw, physical_pair
from .spectral_field import GridSpec, SpectralField, grid_tables, hermitian_part, random_field


class Model:
    """``du/dt = -rates * u + nonlinear(u)`` on a raw state array."""

    kind = "model"
    grid: GridSpec | None = None

    @property
    def rates(self) -> np.ndarray:
        raise NotImplementedError

    def nonlinear(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def levels(self) -> np.ndarray:
        """Eigenvalue attached to each entry of the state array."""
        raise NotImplementedError

    def to_raw(self, state) -> np.ndarray:
        return np.asarray(state)

    def from_raw(self, x: np.ndarray):
        return x

    def norm(self, x: np.ndarray, s: float = 0.0) -> float:
        raise NotImplementedError

    def zeros(self):
        raise NotImplementedError


class SpectralModel(Model):
    def __init__(self, grid: GridSpec, nu: float, theta: float):
        if not nu > 0:
            raise ValueError("nu must be positive")
        self.grid, self.nu, self.theta = grid, float(nu), float(theta)
        self._rates = nu * grid_tables(grid).weight(theta)

    @property
    def rates(self):
        return self._rates

    @property
    def levels(self):
        return grid_tables(self.grid).ksq

    def to_raw(self, state):
        if not isinstance(state, SpectralField):
            raise TypeError("spectral models evolve SpectralField states")
        if state.grid != self.grid:
            raise ValueError("state lives on a different grid than the model")
        return state.coeffs

    def from_raw(self, x):
        return SpectralField._trusted(self.grid, hermitian_part(x, self.grid.spatial_axes))

    def norm(self, x, s=0.0):
        w = grid_tables(self.grid).weight(s)
        return math.sqrt(float(np.sum(w * np.sum(np.abs(x) ** 2, axis=0))))

    def zeros(self):
        return SpectralField.zeros(self.grid)


def _check_theta(dim, theta):
    want = 1.0 if dim == 2 else 1.25
    if theta != want:
        raise ValueError(f"d={dim} requires theta={want} per model scope, got {theta}")


class NavierStokes(SpectralModel):
    """``u_t + nu A^theta u + B(u, u) = f`` (2D with theta=1, 3D hyperviscous with theta=5/4)."""

    def __init__(self, grid: GridSpec, nu: float = 1.0, forcing: SpectralField | None = None,
                 theta: float | None = None):
        theta = (1.0 if grid.dim == 2 else 1.25) if theta is None else float(theta)
        _check_theta(grid.dim, theta)
        super().__init__(grid, nu, theta)
        self.kind = "NS2D" if grid.dim == 2 else "HNS3D"
        self.forcing = forcing if forcing is not None else SpectralField.zeros(grid)

    def nonlinear(self, x):
        return self.forcing.coeffs - bilinear_raw(self.grid, x, x)


class DifferenceEquation(SpectralModel):
    """``w = u - v``: ``w_t + nu A^theta w + B(w, w) + B(v, w) + B(w, v) = 0``."""

    kind = "difference"

    def __init__(self, ctx: StationaryContext):
        super().__init__(ctx.v.grid, ctx.nu, ctx.theta)
        self.ctx = ctx
        self._v = ctx.v.coeffs
        self._vp = physical_pair(self.grid, self._v)

    def nonlinear(self, x):
        return -bracket_raw(self.grid, x, self._v, self._vp)


class PreparedEquation(SpectralModel):
    """Difference equation with the nonlinearity evaluated at ``W(w)``.

    In 2D the right side is ``-F2(W(w))``; in 3D it is ``-A^{1/4} F3(W(w))``,
    i.e. the same bracket, so both dimensions share one code path.
    """

    def __init__(self, ctx: StationaryContext, cutoff: CutoffSpec):
        if ctx is None or cutoff is None:
            raise ValueError("prepared models need a stationary context and a cut-off")
        if not cutoff.radius > 0:
            raise ValueError("cut-off radius must be positive")
        super().__init__(ctx.v.grid, ctx.nu, ctx.theta)
        self.kind = "Prepared2D" if self.grid.dim == 2 else "Prepared3D"
        self.ctx, self.cutoff = ctx, cutoff
        self._v = ctx.v.coeffs
        self._vp = physical_pair(self.grid, self._v)

    def nonlinear(self, x):
        W = truncate_raw(self.grid, x, self.cutoff)
        return -bracket_raw(self.grid, W, self._v, self._vp)


class AbstractModel(Model):
    """``u_t + nu A^{1+alpha} u + A^alpha F(u) = g`` with a diagonal ``A``.

    ``F`` maps a real vector to a real vector; ``jacobian``, when given, returns
    its derivative matrix.
    """

    kind = "Abstract"

    def __init__(self, spectrum, alpha: float, F=None, g=None, nu: float = 1.0, jacobian=None,
                 lipschitz: float | None = None):
        lam = np.asarray(spectrum, dtype=float)
        if lam.ndim != 1 or lam.size == 0 or np.any(lam <= 0) or np.any(np.diff(lam) < 0):
            raise ValueError("spectrum must be strictly positive and nondecreasing")
        if not 0 < alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not nu > 0:
            raise ValueError("nu must be positive")
        self.spectrum, self.alpha, self.nu = lam, float(alpha), float(nu)
        self.F = F
        self.jacobian = jacobian
        self.lipschitz = lipschitz
        self.g = np.zeros(lam.size) if g is None else np.asarray(g, dtype=float)
        self._rates = nu * lam ** (1 + alpha)
        self._scale = lam**alpha

    @property
    def rates(self):
        return self._rates

    @property
    def levels(self):
        return self.spectrum

    def nonlinear(self, x):
        if self.F is None:
            return self.g.copy()
        return self.g - self._scale * self.F(x)

    def norm(self, x, s=0.0):
        return float(np.linalg.norm(self.spectrum**s * x))

    def zeros(self):
        return np.zeros(self.spectrum.size)

    def equilibrium_linear(self) -> np.ndarray:
        """Rest state when ``F = 0``: ``(nu A^{1+alpha})^{-1} g``."""
        return self.g / self._rates


def phi_functions(z: np.ndarray):
    """``phi1 = (e^z - 1)/z`` and ``phi2 = (e^z - 1 - z)/z^2`` with a series near 0."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-4
    zs = np.where(small, 1.0, z)
    ez = np.exp(z)
    p1 = np.where(small, 1 + z / 2 + z**2 / 6 + z**3 / 24, np.expm1(zs) / zs)
    p2 = np.where(small, 0.5 + z / 6 + z**2 / 24 + z**3 / 120, (np.expm1(zs) - zs) / zs**2)
    return ez, p1, p2


class ETDRK2:
    """Cox-Matthews second-order exponential Runge-Kutta step for a fixed ``dt``."""

    def __init__(self, model: Model, dt: float):
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.model, self.dt = model, float(dt)
        self.E, p1, p2 = phi_functions(-model.rates * dt)
        self.h1, self.h2 = dt * p1, dt * p2

    def __call__(self, x: np.ndarray) -> np.ndarray:
        n0 = self.model.nonlinear(x)
        a = self.E * x + self.h1 * n0
        return a + self.h2 * (self.model.nonlinear(a) - n0)


def _finite(x) -> bool:
    return bool(np.all(np.isfinite(x)))


def step(state, model: Model, dt: float):
    """One ETDRK2 step; the linear part is applied exactly."""
    x = ETDRK2(model, dt)(model.to_raw(state))
    if not _finite(x):
        raise BlowUpError("non-finite state after one step", last_time=0.0)
    return model.from_raw(x)


@dataclass
class RecordSpec:
    every: int = 1
    norms: tuple = (0.0,)
    snapshot_dir: str | None = None

    def __post_init__(self):
        if self.every < 1:
            raise ValueError("record cadence must be a positive number of steps")


@dataclass
class TrajectoryRecord:
    times: list = field(default_factory=list)
    norms: dict = field(default_factory=dict)
    snapshots: list = field(default_factory=list)
    dt: float = 0.0
    steps: int = 0
    integrator: str = "ETDRK2"
    final_state: object = None

    def rows(self):
        for i, t in enumerate(self.times):
            yield {"t": t, "norms": {str(s): v[i] for s, v in self.norms.items()},
                   "diagnostics": {"dt": self.dt, "integrator": self.integrator}}

    def to_ndjson(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.rows())


def _step_plan(t_end: float, dt: float):
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    if t_end == 0:
        return 0, dt
    n = max(1, math.ceil(t_end / dt - 1e-9))
    return n, t_end / n


def trajectory(x0: np.ndarray, model: Model, t_end: float, dt: float, every: int = 1):
    """Yield ``(t, x)`` at every ``every``-th step (and at the end) of a fixed-step run."""
    n, h = _step_plan(t_end, dt)
    stepper = ETDRK2(model, h) if n else None
    x = np.asarray(x0)
    yield 0.0, x
    for i in range(1, n + 1):
        x = stepper(x)
        if not _finite(x):
            raise BlowUpError(f"non-finite state at t={i * h:.6g}", last_time=(i - 1) * h)
        if i % every == 0 or i == n:
            yield i * h, x


def evolve(u0, model: Model, t_end: float, dt: float, record_spec: RecordSpec | None = None) -> TrajectoryRecord:
    spec = record_spec or RecordSpec()
    n, h = _step_plan(t_end, dt)
    rec = TrajectoryRecord(norms={s: [] for s in spec.norms}, dt=h, steps=n)
    x = model.to_raw(u0)
    for t, x in trajectory(x, model, t_end, dt, spec.every):
        rec.times.append(t)
        for s in spec.norms:
            rec.norms[s].append(model.norm(x, s))
        if spec.snapshot_dir and isinstance(u0, SpectralField):
            from .spectral_field import write_snapshot

            os.makedirs(spec.snapshot_dir, exist_ok=True)
            path = os.path.join(spec.snapshot_dir, f"snap_{len(rec.times) - 1:06d}.bin")
            write_snapshot(model.from_raw(x), path)
            rec.snapshots.append(path)
    rec.final_state = model.from_raw(x)
    return rec


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("IMLAB_THREADS", "1")))
    except ValueError:
        return 1


def estimate_absorbing_radius(model: Model, ensemble_size: int = 4, s: float = 4.5,
                              burn_in: float = 10.0, horizon: float = 20.0, *, dt: float = 0.01,
                              seed: int = 0, initial_amplitude: float = 1.0,
                              decay_exponent: float = 3.0, safety: float = 1.5) -> float:
    """``safety * sup ||w(t)||_{H^s}`` over a seeded ensemble and ``t`` in ``[burn_in, horizon]``."""
    if not 0 <= burn_in <= horizon:
        raise ValueError("need 0 <= burn_in <= horizon")
    if ensemble_size < 1:
        raise ValueError("ensemble_size must be positive")

    def member(i):
        if isinstance(model, SpectralModel):
            x0 = random_field(model.grid, seed + i, decay_exponent, amplitude=initial_amplitude).coeffs
        else:
            rng = np.random.default_rng(seed + i)
            x0 = initial_amplitude * rng.standard_normal(model.levels.size)
        top = 0.0
        try:
            for t, x in trajectory(x0, model, horizon, dt):
                if t >= burn_in - 1e-12:
                    top = max(top, model.norm(x, s))
        except BlowUpError as err:
            raise BlowUpError(f"ensemble member {i} blew up: {err}", last_time=err.last_time,
                              member=i) from err
        return top

    with ThreadPoolExecutor(worker_count()) as pool:
        tops = list(pool.map(member, range(ensemble_size)))
    return safety * max(tops)
