"""Scikit-learn style wrappers around the stationary solver, radius estimate and manifold graph."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .evolution import Model, estimate_absorbing_radius
from .manifold import PhiEvaluator, Splitting
from .stationary import solve_stationary
from .validation import check_field, check_positive, check_split, check_state


class StationarySolver(BaseEstimator):
    """``fit(f)`` solves ``nu A^theta v + B(v, v) = f``; the solution is ``v_``."""

    def __init__(self, nu: float = 1.0, theta: float | None = None, tol: float = 1e-10,
                 damping: float = 0.5, max_picard: int = 400, max_newton: int = 40):
        self.nu = nu
        self.theta = theta
        self.tol = tol
        self.damping = damping
        self.max_picard = max_picard
        self.max_newton = max_newton

    def fit(self, f, y=None):
        check_field(f, name="f")
        check_positive(self.nu, "nu")
        check_positive(self.tol, "tol")
        self.context_ = solve_stationary(f, f.grid.dim, self.theta, self.nu, self.tol,
                                         damping=self.damping, max_picard=self.max_picard,
                                         max_newton=self.max_newton)
        self.v_ = self.context_.v
        self.residual_ = self.context_.residual
        self.n_iter_ = self.context_.iterations
        return self


class AbsorbingRadiusEstimator(BaseEstimator):
    """``fit()`` stores ``radius_``: safety times the ensemble sup of ``|w|_{H^s}`` after burn-in."""

    def __init__(self, model: Model | None = None, ensemble_size: int = 4, s: float = 4.5,
                 burn_in: float = 10.0, horizon: float = 20.0, dt: float = 0.01, seed: int = 0,
                 safety: float = 1.5):
        self.model = model
        self.ensemble_size = ensemble_size
        self.s = s
        self.burn_in = burn_in
        self.horizon = horizon
        self.dt = dt
        self.seed = seed
        self.safety = safety

    def fit(self, X=None, y=None):
        if self.model is None:
            raise ValueError("model must be set before fitting")
        check_positive(self.dt, "dt")
        check_positive(self.safety, "safety")
        self.radius_ = estimate_absorbing_radius(self.model, self.ensemble_size, self.s, self.burn_in,
                                                 self.horizon, dt=self.dt, seed=self.seed,
                                                 safety=self.safety)
        return self


class InertialManifold(TransformerMixin, BaseEstimator):
    """Graph ``p -> p + Phi(p)`` over the low modes of ``model``.

    ``transform`` maps states to their ``P_N`` coordinates (rows of the
    output), ``inverse_transform`` lifts coordinates onto the manifold, and
    ``predict`` is their composition: the manifold point sharing a state's
    low modes.
    """

    def __init__(self, model: Model | None = None, spec=None, tol: float = 1e-6, dt: float = 0.05):
        self.model = model
        self.spec = spec
        self.tol = tol
        self.dt = dt

    def fit(self, X=None, y=None):
        if self.model is None or self.spec is None:
            raise ValueError("model and spec must be set before fitting")
        check_split(self.spec, self.model)
        check_positive(self.tol, "tol")
        check_positive(self.dt, "dt")
        self.phi_ = PhiEvaluator(self.model, self.spec, self.tol, self.dt)
        self.split_ = Splitting(self.model, self.spec)
        self.n_components_ = self.split_.dim
        return self

    def transform(self, X):
        check_is_fitted(self, "phi_")
        return np.array([self.split_.to_p(self.model.to_raw(check_state(x, self.model))) for x in X])

    def inverse_transform(self, P):
        check_is_fitted(self, "phi_")
        P = np.atleast_2d(np.asarray(P, dtype=float))
        if P.shape[1] != self.n_components_:
            raise ValueError(f"expected {self.n_components_} coordinates per row, got {P.shape[1]}")
        return [self.model.from_raw(self.split_.from_p(p) + self.phi_(p)) for p in P]

    def predict(self, X):
        return self.inverse_transform(self.transform(X))

    def graph(self, p) -> np.ndarray:
        """Raw ``Q_N`` array ``Phi(p)`` for one coordinate vector."""
        check_is_fitted(self, "phi_")
        return self.phi_(np.asarray(p, dtype=float))
