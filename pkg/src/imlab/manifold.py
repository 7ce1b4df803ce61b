"""Inertial manifold graph by the backward-forward boundary value problem."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .evolution import ETDRK2, AbstractModel, Model, SpectralModel, phi_functions, worker_count
from .exceptions import BlowUpError, ConvergenceError
from .operators import BandProjectorSpec, ModeCoordinates
from .spectral_field import grid_tables


class Splitting:
    """Real orthonormal coordinates on ``P_N`` and the complementary ``Q_N`` part."""

    def __init__(self, model: Model, spec: BandProjectorSpec):
        self.model, self.spec = model, spec
        if isinstance(model, SpectralModel):
            t = grid_tables(model.grid)
            self.low = (t.ksq <= spec.lam_n) & t.retained
            self.coords = ModeCoordinates(model.grid, self.low)
            lam = t.ksq[self.coords._idx].astype(float)
            per = np.repeat(model.nu * lam**model.theta, model.grid.dim - 1)
            self.rates = np.concatenate([per, per])
            self.dim = self.coords.dim
        elif isinstance(model, AbstractModel):
            self.low = model.levels <= spec.lam_n
            self.coords = None
            self.rates = model.rates[self.low]
            self.dim = int(self.low.sum())
        else:
            raise TypeError("unsupported model type")
        if self.dim == 0:
            raise ValueError("the low space P_N is empty")

    def to_p(self, x) -> np.ndarray:
        if self.coords is not None:
            return self.coords.to_coords(x)
        return np.asarray(x, dtype=float)[self.low]

    def from_p(self, p) -> np.ndarray:
        if self.coords is not None:
            return self.coords.to_raw(p)
        out = np.zeros(self.low.shape)
        out[self.low] = p
        return out

    def q_part(self, x) -> np.ndarray:
        x = np.asarray(x)
        return np.where(self.low, 0.0, x)

    def norm(self, x) -> float:
        return self.model.norm(x, 0.0)


@dataclass
class BVPSolution:
    state: np.ndarray
    v: np.ndarray
    y: np.ndarray
    T: float
    residual: float
    iterations: int
    evaluations: int
    jacobian: np.ndarray | None = field(default=None, repr=False)
    q: np.ndarray | None = field(default=None, repr=False)


def _forward(x0, model, T, dt):
    n = max(1, math.ceil(T / dt - 1e-9))
    stepper = ETDRK2(model, T / n)
    x = x0
    for _ in range(n):
        x = stepper(x)
    if not np.all(np.isfinite(x)):
        raise BlowUpError(f"forward shooting blew up over T={T:g}", last_time=None)
    return x


def solve_bvp(u0_plus, T: float, model: Model, spec: BandProjectorSpec, tol: float = 1e-10, *,
              dt: float = 0.05, y0=None, jacobian=None, max_iter: int = 40,
              split: Splitting | None = None) -> BVPSolution:
    """Find ``v = P_N u(-T)`` with ``Q_N u(-T) = 0`` and ``P_N u(0) = u0_plus``.

    Works in the scaled unknown ``y = e^{-c T} v`` (``c`` the linear rates on
    ``P_N``), for which the shooting map is the identity when the nonlinearity
    vanishes. Broyden updates start from the identity (or a supplied matrix);
    a finite-difference Jacobian is rebuilt if progress stalls.
    """
    if not T > 0:
        raise ValueError("T must be positive")
    split = split or Splitting(model, spec)
    target = np.asarray(u0_plus, dtype=float)
    if target.shape != (split.dim,):
        raise ValueError(f"u0_plus must have {split.dim} coordinates")
    grow = np.exp(split.rates * T)
    evals = 0

    def G(y):
        nonlocal evals
        evals += 1
        x = _forward(split.from_p(grow * y), model, T, dt)
        return split.to_p(x) - target, x

    y = target.copy() if y0 is None else np.array(y0, dtype=float)
    J = np.eye(split.dim) if jacobian is None else np.array(jacobian, dtype=float)
    r, x = G(y)
    res = float(np.linalg.norm(r))
    scale = max(1.0, float(np.linalg.norm(target)))
    it = 0
    stalls = 0
    while res > tol * scale and it < max_iter:
        it += 1
        step = -np.linalg.solve(J, r)
        lam = 1.0
        while True:
            y_new = y + lam * step
            r_new, x_new = G(y_new)
            res_new = float(np.linalg.norm(r_new))
            if res_new < res or lam < 1e-3:
                break
            lam *= 0.5
        s, dr = y_new - y, r_new - r
        if res_new >= 0.5 * res:
            stalls += 1
        if stalls >= 2:
            J = _fd_jacobian(G, y_new, r_new)
            stalls = 0
        elif s @ s > 0:
            J = J + np.outer(dr - J @ s, s) / (s @ s)
        y, r, x, res = y_new, r_new, x_new, res_new
    if res > tol * scale:
        raise ConvergenceError(f"shooting solve stalled at residual {res:.3e} (T={T:g})", residual=res)
    return BVPSolution(model.from_raw(x), grow * y, y, T, res, it, evals, J, split.q_part(x))


def _fd_jacobian(G, y, r0):
    n = y.size
    J = np.empty((n, n))
    for i in range(n):
        h = 1e-7 * max(1.0, abs(y[i]))
        e = np.zeros(n)
        e[i] = h
        J[:, i] = (G(y + e)[0] - r0) / h
    return J


@dataclass
class PhiResult:
    q: np.ndarray
    T: float
    converged: bool
    history: list
    y: np.ndarray = field(repr=False)
    jacobian: np.ndarray | None = field(default=None, repr=False)
    residual: float = 0.0

    def metadata(self) -> dict:
        return {"T": self.T, "converged": self.converged,
                "history": [{"T": t, "change": c} for t, c in self.history],
                "bvp_residual": self.residual}


def phi(u0_plus, model: Model, spec: BandProjectorSpec, tol: float = 1e-6, *, T0: float = 1.0,
        T_max: float = 128.0, dt: float = 0.05, y0=None, jacobian=None,
        split: Splitting | None = None, min_checks: int = 2) -> PhiResult:
    """``Q_N u(0)`` of the boundary value problem, doubling ``T`` until it settles to ``tol``.

    At least ``min_checks`` doublings are compared before accepting, so a
    single accidental near-coincidence cannot stop the continuation early.
    """
    split = split or Splitting(model, spec)
    T = T0
    prev = None
    history = []
    y, J = y0, jacobian
    newton_tol = max(tol * 1e-3, 1e-13)
    while True:
        sol = solve_bvp(u0_plus, T, model, spec, newton_tol, dt=dt, y0=y, jacobian=J, split=split)
        y, J = sol.y, sol.jacobian
        if prev is not None:
            change = split.norm(sol.q - prev)
            history.append((T, change))
            if change <= tol and len(history) >= min_checks:
                return PhiResult(sol.q, T, True, history, y, J, sol.residual)
        prev = sol.q
        if 2 * T > T_max:
            raise ConvergenceError(f"Phi did not settle to {tol:g} by T={T:g}",
                                   residual=history[-1][1] if history else None)
        T *= 2


class PhiEvaluator:
    """Callable ``p -> Phi(p)`` with warm starts between nearby calls.

    The first call fixes ``T`` by doubling; later calls solve directly at that
    ``T`` from the previous solution, which is what repeated evaluations along
    a trajectory need.
    """

    def __init__(self, model: Model, spec: BandProjectorSpec, tol: float = 1e-6, dt: float = 0.05,
                 T0: float = 1.0, T_max: float = 128.0):
        self.model, self.spec, self.tol, self.dt = model, spec, tol, dt
        self.T0, self.T_max = T0, T_max
        self.split = Splitting(model, spec)
        self.T = None
        self._y = None
        self._J = None
        self.calls = 0
        self.restarts = 0

    def full(self, p) -> PhiResult:
        self.calls += 1
        p = np.asarray(p, dtype=float)
        if self.T is None:
            res = phi(p, self.model, self.spec, self.tol, T0=self.T0, T_max=self.T_max, dt=self.dt,
                      split=self.split)
            self.T = res.T
        else:
            y0 = None if self._y is None else self._y + (p - self._p)
            kw = dict(dt=self.dt, split=self.split)
            ntol = max(self.tol * 1e-3, 1e-13)
            try:
                sol = solve_bvp(p, self.T, self.model, self.spec, ntol, y0=y0, jacobian=self._J, **kw)
            except ConvergenceError:
                # the shooting map is only Lipschitz; a stale warm start can stall quasi-Newton
                self.restarts += 1
                sol = solve_bvp(p, self.T, self.model, self.spec, ntol, **kw)
            res = PhiResult(sol.q, self.T, True, [], sol.y, sol.jacobian, sol.residual)
        self._y, self._J, self._p = res.y, res.jacobian, p
        return res

    def __call__(self, p) -> np.ndarray:
        return self.full(p).q


@dataclass
class ManifoldChart:
    spec: BandProjectorSpec
    base_points: np.ndarray
    values: list
    T_used: list
    convergence: list
    lipschitz: float
    disagreements: list = field(default_factory=list)
    cold_restarts: int = 0

    def to_records(self, split: Splitting) -> list:
        out = []
        for p, q, T, c in zip(self.base_points, self.values, self.T_used, self.convergence):
            out.append({"base_point": [float(x) for x in p], "phi_norm": split.norm(q),
                        "T": T, "convergence": c})
        return out


def lipschitz_estimate(base_points, values, split: Splitting) -> float:
    best = 0.0
    for i, j in combinations(range(len(base_points)), 2):
        dp = float(np.linalg.norm(base_points[i] - base_points[j]))
        if dp > 0:
            best = max(best, split.norm(values[i] - values[j]) / dp)
    return best


def slice_grid(center, axes=(0, 1), extent: float = 1.0, n: int = 5) -> np.ndarray:
    """``n x n`` base points on the plane through ``center`` spanned by two coordinates."""
    center = np.asarray(center, dtype=float)
    ticks = np.linspace(-extent, extent, n)
    pts = []
    for a in ticks:
        for b in ticks:
            p = center.copy()
            p[axes[0]] += a
            p[axes[1]] += b
            pts.append(p)
    return np.array(pts)


def build_chart(base_points, model: Model, spec: BandProjectorSpec, tol: float = 1e-6, *,
                dt: float = 0.05, cold_checks: int = 0) -> ManifoldChart:
    """Evaluate ``Phi`` on the base points along a warm-started path.

    ``cold_checks`` points are re-solved from the default initial guess and
    any disagreement beyond ``10 tol`` is recorded, not hidden.
    """
    split = Splitting(model, spec)
    pts = np.asarray(base_points, dtype=float)
    restarts = []

    def chain(block):
        out = []
        y = J = prev_p = T = None
        for p in block:
            if T is None:
                res = phi(p, model, spec, tol, dt=dt, split=split)
            else:
                # continuation: restart one doubling below the neighbour's T
                try:
                    res = phi(p, model, spec, tol, dt=dt, y0=y + (p - prev_p), jacobian=J,
                              split=split, T0=T / 2, min_checks=1)
                except ConvergenceError:
                    restarts.append(float(np.linalg.norm(p)))
                    res = phi(p, model, spec, tol, dt=dt, split=split)
            out.append(res)
            y, J, prev_p, T = res.y, res.jacobian, p, res.T
        return out

    workers = min(worker_count(), len(pts))
    if workers > 1:
        blocks = np.array_split(pts, workers)
        with ThreadPoolExecutor(workers) as pool:
            results = [r for part in pool.map(chain, blocks) for r in part]
    else:
        results = chain(pts)
    values = [r.q for r in results]
    Ts = [r.T for r in results]
    conv = [r.history[-1][1] for r in results]
    disagreements = []
    for i in range(min(cold_checks, len(pts))):
        cold = phi(pts[i], model, spec, tol, dt=dt, split=split)
        gap = split.norm(cold.q - values[i])
        if gap > 10 * tol:
            disagreements.append({"index": i, "difference": gap})
    return ManifoldChart(spec, pts, values, Ts, conv, lipschitz_estimate(pts, values, split),
                         disagreements, len(restarts))


def inertial_form_step(p, phi_fn, model: Model, spec: BandProjectorSpec, dt: float,
                       split: Splitting | None = None) -> np.ndarray:
    """One ETDRK2 step of ``dp/dt = -c p + P_N N(p + Phi(p))``."""
    split = split or getattr(phi_fn, "split", None) or Splitting(model, spec)
    E, p1, p2 = phi_functions(-split.rates * dt)

    def rhs(p):
        x = split.from_p(p) + phi_fn(p)
        return split.to_p(model.nonlinear(x))

    p = np.asarray(p, dtype=float)
    n0 = rhs(p)
    a = E * p + dt * p1 * n0
    out = a + dt * p2 * (rhs(a) - n0)
    if not np.all(np.isfinite(out)):
        raise BlowUpError("inertial form step produced non-finite values")
    return out


def inertial_form_trajectory(p0, phi_fn, model, spec, t_end: float, dt: float):
    n = max(1, math.ceil(t_end / dt - 1e-9))
    h = t_end / n
    split = getattr(phi_fn, "split", None) or Splitting(model, spec)
    ps = [np.asarray(p0, dtype=float)]
    for _ in range(n):
        ps.append(inertial_form_step(ps[-1], phi_fn, model, spec, h, split))
    return np.arange(n + 1) * h, np.array(ps)


@dataclass
class TrackingFit:
    C: float
    omega: float
    times: np.ndarray
    distances: np.ndarray
    fit_window: tuple
    tail_monotone: bool

    def __iter__(self):
        return iter((self.C, self.omega))


def fit_decay(times, distances, start: float, floor: float):
    """Least-squares ``log d ~ log C - omega t`` over ``t >= start`` and ``d > floor``."""
    times = np.asarray(times)
    distances = np.asarray(distances)
    keep = (times >= start) & (distances > floor)
    if keep.sum() < 3:
        return 0.0, math.nan, keep
    slope, icpt = np.polyfit(times[keep], np.log(distances[keep]), 1)
    return float(math.exp(icpt)), float(-slope), keep


def measure_tracking(u0, model: Model, spec: BandProjectorSpec, horizon: float, *, dt: float = 0.05,
                     phi_fn=None, tol: float = 1e-8, floor: float | None = None) -> TrackingFit:
    """Distance between ``S(t) u0`` and ``S(t) v0``, ``v0 = P_N u0 + Phi(P_N u0)``, with a log fit
    over the last 90% of the horizon."""
    split = Splitting(model, spec)
    phi_fn = phi_fn or PhiEvaluator(model, spec, tol, dt)
    x = np.asarray(model.to_raw(u0))
    p = split.to_p(x)
    y = split.from_p(p) + phi_fn(p)
    n = max(1, math.ceil(horizon / dt - 1e-9))
    h = horizon / n
    stepper = ETDRK2(model, h)
    dists = [split.norm(x - y)]
    for _ in range(n):
        x, y = stepper(x), stepper(y)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise BlowUpError("tracking run blew up")
        dists.append(split.norm(x - y))
    times = np.arange(n + 1) * h
    dists = np.array(dists)
    if floor is None:
        floor = 1e-12 * max(split.norm(x), split.norm(y), dists[0], 1e-300)
    C, omega, keep = fit_decay(times, dists, 0.1 * horizon, floor)
    fitted = dists[keep]
    monotone = bool(np.all(np.diff(fitted) <= 1e-12 * fitted[:-1])) if fitted.size > 1 else True
    return TrackingFit(C, omega, times, dists, (0.1 * horizon, horizon), monotone)
