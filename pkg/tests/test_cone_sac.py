import numpy as np
import pytest

from imlab.cone_sac import (ConeCoefficients, ConeForm, _BandOperator, averaging_coefficients,
                            band_coupling_pairs, cone_value, gap_coefficients, linear_coefficients,
                            monitor_strong_cone, sac_estimate, sac_estimate_with_scalar, squeezing_fit,
                            zero_mean_audit)
from imlab.cutoff import CutoffSpec, StationaryContext, nonlinearity_3d_derivative_raw, truncate_W
from imlab.evolution import AbstractModel, PreparedEquation
from imlab.gap_search import check_abstract_gap, find_annulus
from imlab.operators import BandProjectorSpec, ModeCoordinates
from imlab.spectral_field import GridSpec, SpectralField, grid_tables, random_field

SPEC2 = BandProjectorSpec.from_level(2, 5)


def test_cone_value_examples():
    g = GridSpec(2, 6)
    form = ConeForm(SPEC2)
    hi = SpectralField.from_modes(g, {(2, 2): (0.3, -0.3)})
    lo = SpectralField.from_modes(g, {(1, 2): (0.4, -0.2)})
    assert cone_value(hi, form) == pytest.approx(hi.norm() ** 2, rel=1e-15)
    assert cone_value(lo, form) == pytest.approx(-lo.norm() ** 2, rel=1e-15)
    eq = lo + hi * (lo.norm() / hi.norm())
    assert abs(cone_value(eq, form)) <= 1e-15
    lam = np.array([1.0, 2, 3, 4])
    form4 = ConeForm(BandProjectorSpec(2, 3))
    assert cone_value(np.array([1.0, 1, 1, 1]), form4, lam) == 0.0
    with pytest.raises(ValueError):
        cone_value(np.ones(4), form4)


def test_metric_exponent():
    lam = np.array([1.0, 4.0])
    form = ConeForm(BandProjectorSpec(1, 4), beta=-0.5)
    assert cone_value(np.array([1.0, 2.0]), form, lam) == pytest.approx(4 / 4 - 1)


def _linear(alpha=0.25):
    lam = np.arange(1.0, 13.0)
    return AbstractModel(lam, alpha), BandProjectorSpec(4, 5)


def test_linear_flow_satisfies_sharp_inequality(rng):
    model, spec = _linear()
    coeffs = linear_coefficients(spec, 0.25)
    for _ in range(5):
        a, b = rng.standard_normal(12), rng.standard_normal(12)
        tr = monitor_strong_cone(a, b, model, ConeForm(spec), coeffs, 1.0, 0.005)
        assert tr.ok
        assert np.all(tr.residual <= tr.slack)


def test_identical_initial_data():
    model, spec = _linear()
    x = np.linspace(-1, 1, 12)
    tr = monitor_strong_cone(x, x, model, ConeForm(spec), linear_coefficients(spec, 0.25), 0.5, 0.01)
    assert np.all(tr.V == 0) and np.all(tr.residual == 0) and tr.ok


def test_coefficient_pairs():
    spec = BandProjectorSpec(4, 9)
    lin = linear_coefficients(spec, 0.25)
    assert lin.gamma == pytest.approx((9**1.25 + 4**1.25) / 2)
    assert lin.mu == pytest.approx((9**1.25 - 4**1.25) / 2)
    av = averaging_coefficients(spec, 0.25)
    assert av.gamma == lin.gamma and av.mu == pytest.approx(1.25 * 4**0.25 / 8)
    gap = gap_coefficients(spec, 0.25, 1.0)
    assert gap.mu == pytest.approx(check_abstract_gap(4, 9, 0.25, 1.0).margin)


def test_squeezing_fit_recovers_rate():
    t = np.linspace(0, 2, 50)
    C, theta = squeezing_fit(t, 3 * np.exp(-1.7 * t))
    assert theta == pytest.approx(1.7, rel=1e-10) and C == pytest.approx(1.0, rel=1e-10)
    assert squeezing_fit(t, np.zeros(50)) is None


def _synthetic(n, L, seed):
    rng = np.random.default_rng(seed)
    O, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (lambda x: L * (O @ np.tanh(x))), (lambda x: L * O * np.cosh(x) ** -2.0)


def test_nonlinear_abstract_cone_invariance(rng):
    lam = np.arange(1.0, 17.0)
    F, J = _synthetic(16, 0.5, 0)
    model = AbstractModel(lam, 0.25, F, jacobian=J)
    spec = BandProjectorSpec(4, 5)
    assert check_abstract_gap(4, 5, 0.25, 0.5).margin > 0
    form = ConeForm(spec, beta=-0.25)
    coeffs = gap_coefficients(spec, 0.25, 0.5)
    for _ in range(10):
        tr = monitor_strong_cone(3 * rng.standard_normal(16), 3 * rng.standard_normal(16), model, form,
                                 coeffs, 1.0, 0.005)
        assert not tr.invariance_violations
        if tr.squeezing is not None:
            assert tr.squeezing[1] > 0


def test_user_coefficients_can_be_violated():
    model, spec = _linear()
    bad = ConeCoefficients(gamma=100.0, mu=100.0)
    a = np.zeros(12)
    a[-1] = 1.0
    tr = monitor_strong_cone(a, np.zeros(12), model, ConeForm(spec), bad, 0.2, 0.01)
    assert tr.inequality_violations.size > 0 and not tr.ok


# ---- spatial averaging ----

@pytest.fixture(scope="module")
def annulus():
    cert = find_annulus(3, lam_start=1, search_budget=100)
    assert cert and cert.center == 12
    return BandProjectorSpec(cert.center, 13.0, k=cert.k)


def _prepared3(M, v=None, radius=0.5):
    g = GridSpec(3, M)
    v = SpectralField.zeros(g) if v is None else v
    return PreparedEquation(StationaryContext(v, 3, 1.25, 1.0), CutoffSpec(radius))


def test_band_annihilation_for_low_generators(annulus):
    model = _prepared3(8)
    g = model.grid
    ksq = grid_tables(g).ksq
    low = random_field(g, 3, 4.0)
    low = SpectralField._trusted(g, np.where(ksq < 9, low.coeffs, 0))
    w = low * (0.5 * model.cutoff.radius / low.norm(4.5))
    U = truncate_W(w, model.cutoff)
    assert U == w
    assert band_coupling_pairs(U, annulus) == []
    rep = sac_estimate(model, annulus, [w], power_iters=20, restarts=3)
    assert rep.delta_hat <= 1e-10


def test_band_coupling_detects_high_generator(annulus):
    g = GridSpec(3, 8)
    U = SpectralField.from_modes(g, {(4, 0, 0): (0, 1, 0)})
    assert band_coupling_pairs(U, annulus)


def _dense(op, coords):
    cols = [coords.to_coords(op.raw(coords.to_raw(e))) for e in np.eye(coords.dim)]
    return np.array(cols).T


def test_power_iteration_matches_dense_norm(annulus):
    model = _prepared3(8, v=random_field(GridSpec(3, 8), 11, 3.0) * 0.2)
    samples = [random_field(model.grid, 5, 2.0) * 30.0, random_field(model.grid, 6, 4.0) * 0.01]
    rep = sac_estimate(model, annulus, samples)
    for s, est in zip(samples, rep.per_sample):
        op = _BandOperator(model, annulus, s)
        mat = _dense(op, ModeCoordinates(model.grid, op.mask))
        exact = np.linalg.norm(mat, 2)
        assert exact > 0
        assert abs(est - exact) <= 0.05 * exact


def test_band_norm_dominated_by_full_derivative(annulus):
    model = _prepared3(4, v=random_field(GridSpec(3, 4), 1, 3.0) * 0.2)
    g = model.grid
    w = random_field(g, 8, 2.0) * 20.0
    rep = sac_estimate(model, annulus, [w])
    coords = ModeCoordinates(g, grid_tables(g).retained)
    cols = [coords.to_coords(nonlinearity_3d_derivative_raw(g, w.coeffs, coords.to_raw(e), model.ctx.v.coeffs,
                                                            model.cutoff))
            for e in np.eye(coords.dim)]
    full = np.linalg.norm(np.array(cols).T, 2)
    assert rep.delta_hat <= full * (1 + 1e-6)


def test_zero_input_maps_to_zero(annulus):
    model = _prepared3(4)
    op = _BandOperator(model, annulus, random_field(model.grid, 1))
    assert not np.any(op.raw(np.zeros(model.grid.shape, dtype=complex)))


def _abstract_jac(jac, n=12):
    return AbstractModel(np.arange(1.0, n + 1), 0.5, F=lambda x: jac(x) @ x, jacobian=jac)


def test_scalar_fit_exact_for_scalar_jacobian():
    spec = BandProjectorSpec(6, 7, k=2)
    model = _abstract_jac(lambda x: 0.7 * np.eye(12))
    delta, fits = sac_estimate_with_scalar(model, spec, [np.zeros(12)])
    assert delta <= 1e-15 and fits == [pytest.approx(0.7, rel=1e-14)]


def test_scalar_zero_recovers_plain_estimate():
    spec = BandProjectorSpec(6, 7, k=2)
    rng = np.random.default_rng(2)
    M = rng.standard_normal((12, 12))
    model = _abstract_jac(lambda x: M)
    plain = sac_estimate(model, spec, [np.zeros(12)]).delta_hat
    fixed = sac_estimate(model, spec, [np.zeros(12)], scalar=0.0).delta_hat
    assert plain == fixed
    band = slice(3, 8)
    assert plain == pytest.approx(np.linalg.norm(M[band, band], 2), rel=0.05)


def test_scalar_plus_small_coupling():
    spec = BandProjectorSpec(6, 7, k=2)
    eps = 1e-3
    E = np.zeros((12, 12))
    E[3, 4], E[4, 3] = eps, -eps  # traceless rotation on the band, norm eps
    E[0, 9] = 5.0  # outside the band entirely
    model = _abstract_jac(lambda x: 2.0 * np.eye(12) + E)
    delta, fits = sac_estimate_with_scalar(model, spec, [np.zeros(12)])
    assert fits[0] == pytest.approx(2.0, rel=1e-14)
    assert 0.95 * eps <= delta <= eps * (1 + 1e-6)


def test_zero_mean_audit():
    g = GridSpec(3, 6)
    ctx = StationaryContext(random_field(g, 1, 3.0), 3, 1.25, 1.0)
    w = random_field(g, 2, 1.0) * 100
    rep = zero_mean_audit(ctx, w, CutoffSpec(0.1))
    assert rep["passed"] and rep["max_deviation"] <= 1e-15
    assert rep["mean_grad_W"] == 0 and rep["mean_grad_v"] == 0
    c = w.coeffs.copy()
    c[:, 0, 0, 0] = (1e-9, 0, 0)
    dirty = SpectralField._trusted(g, c)
    bad = zero_mean_audit(ctx, dirty)
    assert not bad["passed"] and bad["mean_W"] == pytest.approx(1e-9)
    with pytest.raises(ValueError):
        zero_mean_audit(StationaryContext.trivial(GridSpec(2, 4)), random_field(GridSpec(2, 4), 1))
