"""Experiment configuration, pipelines and reproducible record files."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from functools import cached_property
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import __version__
from .cone_sac import (ConeForm, default_sac_samples, gap_coefficients, monitor_strong_cone,
                       sac_estimate, zero_mean_audit)
from .cutoff import CutoffSpec, empirical_lipschitz
from .evolution import (AbstractModel, DifferenceEquation, NavierStokes, PreparedEquation, RecordSpec,
                        estimate_absorbing_radius, evolve, trajectory)
from .exceptions import ConfigError, ImlabError
from .gap_search import SearchExhausted, check_abstract_gap, enumerate_levels, find_annulus, find_gap_2d
from .manifold import (PhiEvaluator, Splitting, build_chart, inertial_form_trajectory, measure_tracking,
                       slice_grid)
from .operators import BandProjectorSpec
from .spectral_field import GridSpec, SpectralField, grid_tables, random_field, write_snapshot
from .stationary import analytic_radii, forcing_norms, solve_stationary

log = logging.getLogger("imlab")

SCENARIOS = ("gaps", "annulus", "stationary", "evolve", "radius", "cone-check", "sac-check", "manifold",
             "inertial-form", "tracking", "full2d", "full3d")
ScenarioName = Literal["gaps", "annulus", "stationary", "evolve", "radius", "cone-check", "sac-check",
                       "manifold", "inertial-form", "tracking", "full2d", "full3d"]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ForcingConfig(_Section):
    seed: int = 1
    decay: float = 2.0
    amplitude: float = Field(0.1, ge=0)


class ModelConfig(_Section):
    dim: Literal[2, 3] = 2
    nu: float = Field(1.0, gt=0)
    theta: float | None = None
    forcing: ForcingConfig = ForcingConfig()

    @model_validator(mode="after")
    def _scope(self):
        want = 1.0 if self.dim == 2 else 1.25
        if self.theta is None:
            self.theta = want
        elif self.theta != want:
            label = "2D requires theta = 1" if self.dim == 2 else "3D requires theta = 5/4"
            raise ValueError(f"{label} per model scope (got {self.theta})")
        return self


class GridConfig(_Section):
    """``max_mode`` defaults to 32 in 2D and 16 in 3D."""

    max_mode: int | None = Field(None, ge=2)
    dealias_fraction: float = Field(2 / 3, gt=0, le=1)


class SeedConfig(_Section):
    ensemble: int = 0
    pairs: int = 0
    samples: int = 0
    lipschitz: int = 0


class ProjectorConfig(_Section):
    """Leave ``lam_n`` and ``n_modes`` unset to take the split from the gap or annulus search."""

    lam_n: float | None = None
    lam_next: float | None = None
    n_modes: int | None = Field(None, ge=1)
    k: float = Field(0.0, ge=0)


class CutoffConfig(_Section):
    radius: float | None = Field(None, gt=0)
    saturation_radius: float = Field(3.0, gt=2)


class RecordConfig(_Section):
    every: int = Field(10, ge=1)
    norms: list[float] = [0.0, 1.0, 4.5]
    snapshots: bool = False


class Tolerances(_Section):
    stationary: float = Field(1e-10, gt=0)
    phi: float = Field(1e-6, gt=0)
    lipschitz_slack: float = Field(0.05, ge=0)
    sac_delta: float = Field(1 / 30, gt=0)


class RadiusRun(_Section):
    ensemble_size: int = Field(2, ge=1)
    burn_in: float = Field(2.0, ge=0)
    horizon: float = Field(4.0, gt=0)
    dt: float = Field(0.02, gt=0)
    safety: float = Field(1.5, gt=0)


class EvolveRun(_Section):
    t_end: float = Field(1.0, ge=0)
    dt: float = Field(0.01, gt=0)
    amplitude: float = Field(1.0, gt=0)
    equation: Literal["prepared", "original", "difference"] = "prepared"

    @field_validator("equation", mode="before")
    @classmethod
    def _model_names(cls, v):
        names = {"NS2D": "original", "HNS3D": "original", "Prepared2D": "prepared",
                 "Prepared3D": "prepared", "difference": "difference"}
        return names.get(v, v)


class GapsRun(_Section):
    dim: Literal[2, 3] = 2
    L: float | None = Field(None, gt=0)
    lam_max: int = Field(10**5, ge=1)
    lipschitz_pairs: int = Field(500, ge=2)


class AnnulusRun(_Section):
    b: float = Field(3.0, gt=0)
    lam_start: int = Field(1, ge=1)
    search_budget: int = Field(1000, ge=1)
    c_hat: float = Field(0.1, gt=0)


class ConeRun(_Section):
    model: Literal["abstract", "prepared"] = "abstract"
    pairs: int = Field(10, ge=1)
    t_end: float = Field(2.0, gt=0)
    dt: float = Field(0.005, gt=0)
    amplitude: float = Field(3.0, gt=0)
    spectrum_size: int = Field(16, ge=2)
    alpha: float = Field(0.25, gt=0, lt=1)
    L: float = Field(0.5, gt=0)
    lam_n: float = 4.0


class SacRun(_Section):
    samples: int = Field(4, ge=1)
    power_iters: int = Field(30, ge=1)
    restarts: int = Field(5, ge=1)
    max_mode: int | None = Field(None, ge=2)


class ManifoldRun(_Section):
    n: int = Field(3, ge=1)
    extent: float = Field(1.0, ge=0)
    axes: tuple[int, int] = (0, 1)
    dt: float = Field(0.05, gt=0)
    cold_checks: int = Field(1, ge=0)


class InertialFormRun(_Section):
    t_end: float = Field(1.0, gt=0)
    dt: float = Field(0.1, gt=0)
    p0: list[float] | None = None


class TrackingRun(_Section):
    horizon: float = Field(4.0, gt=0)
    dt: float = Field(0.05, gt=0)
    seeds: list[int] = [0, 1]
    amplitude: float = Field(1.0, gt=0)


class ExperimentConfig(_Section):
    scenarios: list[ScenarioName] = []
    model: ModelConfig = ModelConfig()
    grid: GridConfig = GridConfig()
    seeds: SeedConfig = SeedConfig()
    projector: ProjectorConfig = ProjectorConfig()
    cutoff: Literal["empirical"] | CutoffConfig = "empirical"
    output_dir: str = "imlab_out"
    record: RecordConfig = RecordConfig()
    tolerances: Tolerances = Tolerances()
    radius: RadiusRun = RadiusRun()
    evolve: EvolveRun = EvolveRun()
    gaps: GapsRun = GapsRun()
    annulus: AnnulusRun = AnnulusRun()
    cone: ConeRun = ConeRun()
    sac: SacRun = SacRun()
    manifold: ManifoldRun = ManifoldRun()
    inertial_form: InertialFormRun = InertialFormRun()
    tracking: TrackingRun = TrackingRun()

    @field_validator("scenarios", mode="before")
    @classmethod
    def _one_or_many(cls, v):
        return [v] if isinstance(v, str) else v

    @model_validator(mode="after")
    def _grid_default(self):
        if self.grid.max_mode is None:
            self.grid.max_mode = 32 if self.model.dim == 2 else 16
        return self

    def resolved(self) -> dict:
        return self.model_dump(mode="json")

    def digest(self) -> str:
        text = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def dumps(self) -> str:
        return json.dumps(self.resolved(), indent=2, sort_keys=True) + "\n"


def _format_errors(err: ValidationError) -> list[str]:
    out = []
    for e in err.errors():
        where = ".".join(str(p) for p in e["loc"]) or "<root>"
        msg = e["msg"].removeprefix("Value error, ")
        out.append(f"{where}: {msg}")
    return out


def validate_config(raw_text: str | bytes | dict) -> ExperimentConfig:
    """Parse a JSON config; raises :class:`ConfigError` listing every bad field."""
    if isinstance(raw_text, dict):
        data = raw_text
    else:
        try:
            data = json.loads(raw_text or "{}")
        except json.JSONDecodeError as e:
            raise ConfigError([f"<root>: not valid JSON ({e.msg} at line {e.lineno})"]) from e
    if not isinstance(data, dict):
        raise ConfigError(["<root>: config must be a JSON object"])
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(_format_errors(e)) from e


def apply_overrides(data: dict, overrides: dict) -> dict:
    """Set dotted keys (``model.nu``) in a nested dict; values are parsed as JSON when possible."""
    data = json.loads(json.dumps(data))
    for key, raw in overrides.items():
        try:
            value = json.loads(raw) if isinstance(raw, str) else raw
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            nxt = node.setdefault(p, {})
            if not isinstance(nxt, dict):
                raise ConfigError([f"{key}: '{p}' is not a section"])
            node = nxt
        node[parts[-1]] = value
    return data


def _versions() -> dict:
    import pydantic
    import scipy
    import sklearn

    return {"imlab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "pydantic": pydantic.__version__, "scikit-learn": sklearn.__version__}


def _clean(obj):
    """JSON-safe copy: numpy scalars and arrays become Python values, non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


class Session:
    """Lazily built shared inputs for one config; every stage is computed once."""

    def __init__(self, config: ExperimentConfig):
        self.config = config

    @cached_property
    def grid(self) -> GridSpec:
        c = self.config
        return GridSpec(c.model.dim, c.grid.max_mode, c.grid.dealias_fraction)

    @cached_property
    def forcing(self) -> SpectralField:
        f = self.config.model.forcing
        return random_field(self.grid, f.seed, f.decay, amplitude=f.amplitude)

    @cached_property
    def stationary(self):
        m = self.config.model
        return solve_stationary(self.forcing, m.dim, m.theta, m.nu, self.config.tolerances.stationary)

    @cached_property
    def radius(self) -> float:
        cut = self.config.cutoff
        if isinstance(cut, CutoffConfig) and cut.radius is not None:
            return cut.radius
        r = self.config.radius
        return estimate_absorbing_radius(DifferenceEquation(self.stationary), r.ensemble_size, 4.5,
                                         r.burn_in, r.horizon, dt=r.dt, seed=self.config.seeds.ensemble,
                                         safety=r.safety)

    @cached_property
    def cutoff(self) -> CutoffSpec:
        cut = self.config.cutoff
        r2 = cut.saturation_radius if isinstance(cut, CutoffConfig) else 3.0
        return CutoffSpec(self.radius, r2)

    @cached_property
    def prepared(self) -> PreparedEquation:
        return PreparedEquation(self.stationary, self.cutoff)

    @cached_property
    def lipschitz(self) -> float:
        g = self.config.gaps
        if g.L is not None:
            return g.L
        return empirical_lipschitz(self.stationary, self.cutoff, g.lipschitz_pairs,
                                   self.config.seeds.lipschitz).estimate

    @cached_property
    def projector(self) -> BandProjectorSpec:
        p = self.config.projector
        t = grid_tables(self.grid)
        spectrum = np.sort(np.repeat(t.ksq[t.retained], self.grid.dim - 1))
        if p.n_modes is not None:
            return BandProjectorSpec.from_spectrum(spectrum, p.n_modes, p.k)
        if p.lam_n is not None:
            nxt = p.lam_next if p.lam_next is not None else float(spectrum[spectrum > p.lam_n].min())
            return BandProjectorSpec(p.lam_n, nxt, p.k, int(np.sum(spectrum <= p.lam_n)))
        if self.grid.dim == 2:
            rec = find_gap_2d(self.lipschitz, self.config.gaps.lam_max)
            if isinstance(rec, SearchExhausted):
                raise ImlabError(f"no gap wider than 2L={2 * self.lipschitz:.4g} below {rec.bound}")
            return BandProjectorSpec(rec.level, rec.next_level, 0.0, rec.mode_count)
        cert = self.annulus
        if isinstance(cert, SearchExhausted):
            raise ImlabError("annulus search exhausted its budget")
        levels = np.unique(spectrum)
        nxt = levels[levels > cert.center]
        return BandProjectorSpec(float(cert.center), float(nxt.min()) if nxt.size else math.inf, cert.k,
                                 int(np.sum(spectrum <= cert.center)))

    @cached_property
    def annulus(self):
        a = self.config.annulus
        return find_annulus(a.b, a.lam_start, a.search_budget, c_hat=a.c_hat, dim=3)

    @cached_property
    def phi(self) -> PhiEvaluator:
        return PhiEvaluator(self.prepared, self.projector, self.config.tolerances.phi,
                            self.config.manifold.dt)

    def w0(self, seed: int, amplitude: float) -> SpectralField:
        """Random difference state with ``|w|_{H^{9/2}} = amplitude * radius``."""
        w = random_field(self.grid, seed, 5.0)
        return w * (amplitude * self.radius / w.norm(4.5))


def _need_dim(cfg, dim, scenario):
    if cfg.model.dim != dim:
        raise ConfigError([f"model.dim: scenario '{scenario}' runs in {dim}D"])


def run_gaps(s: Session) -> list[dict]:
    """Level table as ``gaps_levels.csv``; the 2D gap search result as a record."""
    cfg = s.config
    g = cfg.gaps
    levels = enumerate_levels(g.dim, g.lam_max)
    path = Path(cfg.output_dir) / "gaps_levels.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda", "multiplicity", "gap", "N"])
        for r in levels:
            w.writerow([r.level, r.multiplicity, r.gap, r.mode_count])
    out = [{"kind": "level_table", "dim": g.dim, "lam_max": g.lam_max, "levels": len(levels),
            "table": path.name}]
    if g.dim == 2:
        if g.L is None and cfg.model.dim == 2:
            L, source = s.lipschitz, "empirical"
        else:
            L, source = (g.L if g.L is not None else 1.0), "config"
        rec = find_gap_2d(L, g.lam_max)
        gap = rec.as_row() if not isinstance(rec, SearchExhausted) else {"exhausted_at": rec.bound}
        out.append({"kind": "gap", "L": L, "L_source": source, "result": gap})
    return out


def run_annulus(s: Session) -> list[dict]:
    cert = s.annulus
    if isinstance(cert, SearchExhausted):
        return [{"kind": "annulus", "exhausted_at": cert.bound}]
    return [{"kind": "annulus", **cert.to_dict()}]


def run_stationary(s: Session) -> list[dict]:
    ctx = s.stationary
    out = {"kind": "stationary", **ctx.report(), "forcing_norms": forcing_norms(s.forcing),
           "v_norms": {str(x): ctx.v.norm(x) for x in s.config.record.norms}}
    if s.config.record.snapshots:
        path = Path(s.config.output_dir) / "stationary_v.bin"
        write_snapshot(ctx.v, path)
        out["snapshot"] = path.name
    return [out]


def run_radius(s: Session) -> list[dict]:
    cfg = s.config
    ctx = s.stationary
    fn = forcing_norms(s.forcing)
    if cfg.model.dim == 2:
        # a priori bounds measured on the stationary state (the attracting set for small data)
        fn = {**fn, "rho_1": ctx.v.norm(1), "rho_2": ctx.v.norm(2), "rho_bar_0": 0.0}
    analytic = analytic_radii(fn, cfg.model.nu, cfg.model.dim)
    return [{"kind": "radius", "empirical": s.radius, "safety": cfg.radius.safety,
             "analytic": analytic.to_dict()}]


def run_evolve(s: Session) -> list[dict]:
    cfg = s.config
    e = cfg.evolve
    if e.equation == "prepared":
        model, x0 = s.prepared, s.w0(cfg.seeds.ensemble, e.amplitude)
    elif e.equation == "difference":
        model, x0 = DifferenceEquation(s.stationary), s.w0(cfg.seeds.ensemble, e.amplitude)
    else:
        model = NavierStokes(s.grid, cfg.model.nu, s.forcing)
        x0 = s.stationary.v + s.w0(cfg.seeds.ensemble, e.amplitude)
    snap = str(Path(cfg.output_dir) / "snapshots") if cfg.record.snapshots else None
    rec = evolve(x0, model, e.t_end, e.dt, RecordSpec(cfg.record.every, tuple(cfg.record.norms), snap))
    rows = [{"kind": "trajectory", "model": model.kind, **r} for r in rec.rows()]
    return rows + [{"kind": "trajectory_summary", "model": model.kind, "steps": rec.steps, "dt": rec.dt,
                    "snapshots": [Path(p).name for p in rec.snapshots]}]


def _synthetic_F(n, L, seed):
    rng = np.random.default_rng(seed)
    O, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (lambda x: L * (O @ np.tanh(x))), (lambda x: L * O * np.cosh(x) ** -2.0)


def run_cone(s: Session) -> list[dict]:
    cfg = s.config
    c = cfg.cone
    rng = np.random.default_rng(cfg.seeds.pairs)
    if c.model == "abstract":
        lam = np.arange(1.0, c.spectrum_size + 1)
        F, jac = _synthetic_F(lam.size, c.L, cfg.seeds.pairs)
        model = AbstractModel(lam, c.alpha, F, nu=cfg.model.nu, jacobian=jac, lipschitz=c.L)
        spec = BandProjectorSpec(c.lam_n, float(lam[lam > c.lam_n].min()), 0.0, int(np.sum(lam <= c.lam_n)))
        margin = check_abstract_gap(spec.lam_n, spec.lam_next, c.alpha, c.L).margin
        alpha, L = c.alpha, c.L
        pairs = [(c.amplitude * rng.standard_normal(lam.size), c.amplitude * rng.standard_normal(lam.size))
                 for _ in range(c.pairs)]
    else:
        _need_dim(cfg, 2, "cone-check")
        model, spec, L, alpha = s.prepared, s.projector, s.lipschitz, 0.0
        # alpha = 0: the ratio reduces to half the gap, i.e. the condition gap > 2L
        margin = 0.5 * (spec.lam_next - spec.lam_n) - L
        pairs = [(s.w0(2 * i, c.amplitude), s.w0(2 * i + 1, c.amplitude)) for i in range(c.pairs)]
    form = ConeForm(spec, beta=-alpha)
    coeffs = gap_coefficients(spec, alpha, L)
    out = [{"kind": "cone_setup", "model": model.kind, "lam_n": spec.lam_n, "lam_next": spec.lam_next,
            "alpha": alpha, "L": L, "gap_margin": margin, "gamma": coeffs.gamma, "mu": coeffs.mu}]
    for i, (a, b) in enumerate(pairs):
        tr = monitor_strong_cone(a, b, model, form, coeffs, c.t_end, c.dt)
        out.append({"kind": "cone_pair", "pair": i, **tr.summary()})
    return out


def run_sac(s: Session) -> list[dict]:
    cfg = s.config
    _need_dim(cfg, 3, "sac-check")
    sess = s
    if cfg.sac.max_mode is not None and cfg.sac.max_mode != cfg.grid.max_mode:
        sess = Session(cfg.model_copy(update={"grid": GridConfig(max_mode=cfg.sac.max_mode,
                                                                  dealias_fraction=cfg.grid.dealias_fraction)}))
    model, spec = sess.prepared, sess.projector
    samples = default_sac_samples(model, cfg.sac.samples, cfg.seeds.samples)
    rep = sac_estimate(model, spec, samples, cfg.sac.power_iters, cfg.sac.restarts, cfg.seeds.samples)
    audit = zero_mean_audit(sess.stationary, samples[0], sess.cutoff)
    return [{"kind": "sac", **rep.to_dict(), "meets_target": rep.delta_hat <= cfg.tolerances.sac_delta,
             "max_mode": sess.grid.max_mode, "zero_mean_audit": audit}]


def run_manifold(s: Session) -> list[dict]:
    cfg = s.config
    m = cfg.manifold
    spec = s.projector
    split = Splitting(s.prepared, spec)
    if max(m.axes) >= split.dim:
        raise ConfigError([f"manifold.axes: P_N has only {split.dim} coordinates"])
    pts = slice_grid(np.zeros(split.dim), m.axes, m.extent, m.n)
    chart = build_chart(pts, s.prepared, spec, cfg.tolerances.phi, dt=m.dt, cold_checks=m.cold_checks)
    head = {"kind": "chart", "lam_n": spec.lam_n, "lam_next": spec.lam_next, "n_modes": split.dim,
            "lipschitz": chart.lipschitz,
            "lipschitz_ok": chart.lipschitz <= 1 + cfg.tolerances.lipschitz_slack,
            "disagreements": chart.disagreements, "cold_restarts": chart.cold_restarts}
    return [head] + [{"kind": "chart_point", **r} for r in chart.to_records(split)]


def _p0(s: Session, split: Splitting):
    p0 = s.config.inertial_form.p0
    if p0 is None:
        return np.full(split.dim, 0.5 / math.sqrt(split.dim))
    if len(p0) != split.dim:
        raise ConfigError([f"inertial_form.p0: expected {split.dim} coordinates"])
    return np.asarray(p0, dtype=float)


def run_inertial_form(s: Session) -> list[dict]:
    cfg = s.config
    i = cfg.inertial_form
    phi = s.phi
    split = phi.split
    p0 = _p0(s, split)
    times, ps = inertial_form_trajectory(p0, phi, s.prepared, s.projector, i.t_end, i.dt)
    x = split.from_p(p0) + phi(p0)
    full = [split.to_p(y) for _, y in trajectory(x, s.prepared, i.t_end, i.dt)]
    rows = []
    for t, p, q in zip(times, ps, full):
        rows.append({"kind": "inertial_form", "t": float(t), "p": p, "p_norm": float(np.linalg.norm(p)),
                     "full_minus_reduced": float(np.linalg.norm(q - p))})
    return rows


def run_tracking(s: Session) -> list[dict]:
    cfg = s.config
    t = cfg.tracking
    out = []
    for seed in t.seeds:
        u0 = s.w0(seed, t.amplitude)
        fit = measure_tracking(u0, s.prepared, s.projector, t.horizon, dt=t.dt, phi_fn=s.phi)
        out.append({"kind": "tracking", "seed": seed, "C_fit": fit.C, "omega_fit": fit.omega,
                    "tail_monotone": fit.tail_monotone, "initial_distance": float(fit.distances[0]),
                    "final_distance": float(fit.distances[-1])})
    return out


def run_full2d(s: Session) -> list[dict]:
    _need_dim(s.config, 2, "full2d")
    out = []
    for name in ("stationary", "radius", "evolve", "gaps", "cone-check", "manifold", "inertial-form",
                 "tracking"):
        out += [{"stage": name, **r} for r in PIPELINES[name](s)]
    return out


def run_full3d(s: Session) -> list[dict]:
    _need_dim(s.config, 3, "full3d")
    out = []
    for name in ("stationary", "radius", "annulus", "sac-check"):
        out += [{"stage": name, **r} for r in PIPELINES[name](s)]
    return out


PIPELINES = {
    "gaps": run_gaps, "annulus": run_annulus, "stationary": run_stationary, "evolve": run_evolve,
    "radius": run_radius, "cone-check": run_cone, "sac-check": run_sac, "manifold": run_manifold,
    "inertial-form": run_inertial_form, "tracking": run_tracking, "full2d": run_full2d,
    "full3d": run_full3d,
}


def _scalars(rec: dict, prefix="") -> dict:
    out = {}
    for k, v in rec.items():
        if isinstance(v, dict):
            out.update(_scalars(v, f"{prefix}{k}."))
        elif isinstance(v, (int, float, str, bool)) or v is None:
            out[f"{prefix}{k}"] = v
    return out


def run_scenario(config: ExperimentConfig, scenarios=None) -> int:
    """Run the named pipelines (default: ``config.scenarios``) and write records.

    Each scenario writes ``<name>.ndjson`` whose first line is a header
    holding the resolved config; a ``summary.csv`` collects the
    scalar fields of every record. Returns the exit status. Numerical errors
    propagate as :class:`ImlabError` prefixed with the failing scenario.
    """
    names = list(config.scenarios if scenarios is None else scenarios)
    if not names:
        return 0
    unknown = [n for n in names if n not in PIPELINES]
    if unknown:
        raise ConfigError([f"scenarios: unknown scenario '{n}'" for n in unknown])
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    session = Session(config)
    meta = {"config_hash": config.digest(), "versions": _versions()}
    (out_dir / "config.json").write_text(config.dumps())
    summary = []
    for name in names:
        log.info("running %s", name)
        try:
            records = PIPELINES[name](session)
        except ConfigError:
            raise
        except ImlabError as err:
            raise ImlabError(f"{name}: {type(err).__name__}: {err}") from err
        with open(out_dir / f"{name}.ndjson", "w") as fh:
            header = {"scenario": name, **meta, "kind": "header", "config": config.resolved()}
            for r in [header] + records:
                row = _clean({"scenario": name, **meta, **r})
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        summary += [{"scenario": name, **_scalars(_clean(r))} for r in records]
    fields = sorted({k for row in summary for k in row} - {"scenario"})
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, ["scenario", "config_hash"] + fields, extrasaction="ignore")
        w.writeheader()
        for row in summary:
            w.writerow({"config_hash": meta["config_hash"], **row})
    return 0
