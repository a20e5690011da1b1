import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lawe_spectra import slform
from lawe_spectra.errors import ValidationError


@pytest.fixture(scope="module")
def poly24_trace():
    form = slform.liouville(slform.Polytropic(2, 4))
    return form, slform.integrate_canonical(form, 1.0, X_max=600.0)


@pytest.fixture(scope="module")
def thermal_trace():
    form = slform.liouville(slform.LinearThermal(1, 4, 2.5))
    return form, slform.integrate_canonical(form, 1.0, X_max=600.0)


def test_polytropic_profile_closed_forms():
    eos = slform.Polytropic(2, 3)
    sl = slform.sl_coefficients(eos)
    x = np.array([0.55, 0.7, 0.9])
    D = 1.0 - x
    assert np.allclose(eos.rho(x), D**2, rtol=1e-15)
    assert np.allclose(eos.P(x), D**6, rtol=1e-15)
    assert np.allclose(eos.gamma_P(x), 3.0 * D**6, rtol=1e-15)
    assert np.allclose(sl.p(x), 3.0 * D**6 * x**4, rtol=1e-15)
    assert np.allclose(sl.w(x), D**2 * x**4, rtol=1e-15)
    # q = x^3 * K*a*b*(3b-4)*D^(ab-1)
    assert np.allclose(sl.q(x), 30.0 * D**5 * x**3, rtol=1e-14)
    assert np.allclose(sl.W(x), D**-2 / math.sqrt(3.0), rtol=1e-15)


def test_profile_validation():
    with pytest.raises(ValidationError, match="need K > 0, a > 0, b > 1"):
        slform.Polytropic(0, 3)
    with pytest.raises(ValidationError, match="need K > 0, a > 0, b > 1"):
        slform.Polytropic(2, 1.0)
    with pytest.raises(ValidationError, match="need K > 0, a > 0, b > 1"):
        slform.Polytropic(2, 3, K=0.0)
    with pytest.raises(ValidationError, match="need a >= 1, b >= 1, c > 0"):
        slform.LinearThermal(0.5, 4, 2.5)
    with pytest.raises(ValidationError, match="need a >= 1, b >= 1, c > 0"):
        slform.LinearThermal(1, 4, 0.0)
    with pytest.raises(ValidationError, match="need K0, L0 > 0"):
        slform.LinearThermal(1, 4, 2.5, K0=0)
    with pytest.raises(ValidationError, match="need 0 < R_delta < R_star"):
        slform.Polytropic(2, 3, R_delta=1.5)
    with pytest.raises(ValidationError, match="below the surface"):
        slform.Polytropic(2, 3).depth(1.0)


def test_hse_residual_matches_numeric_pressure_gradient():
    h, G = 1e-6, 1.7
    for eos in (slform.Polytropic(2, 3), slform.LinearThermal(1, 4, 2.5)):
        for x in (0.6, 0.8, 0.95):
            dP = (eos.P(x + h) - eos.P(x - h)) / (2.0 * h)
            want = dP + G * eos.rho(x) / x**2
            assert eos.hse_residual(x, G) == pytest.approx(want, rel=1e-9)


def test_transform_closed_form_value():
    # s1 = -1 makes X(x) = (1/Dd - 1/D)/(-sqrt(C_p)); at x = 0.9 that is 8/sqrt(3)
    form = slform.liouville(slform.Polytropic(2, 3))
    assert float(form.X_of_x(0.9)) == pytest.approx(8.0 / math.sqrt(3.0), rel=1e-15)


def test_transform_roundtrip():
    cases = (slform.Polytropic(2, 3), slform.Polytropic(2, 4),
             slform.Polytropic(1, 2.5), slform.LinearThermal(1, 4, 2.5),
             slform.LinearThermal(1, 3, 1.0))
    for eos in cases:
        form = slform.liouville(eos)
        x = np.linspace(eos.R_delta, eos.R_star - 1e-6, 50)
        assert np.max(np.abs(form.x_of_X(form.X_of_x(x)) - x)) <= 5e-16


@settings(max_examples=40, deadline=None)
@given(a=st.floats(0.5, 3.0), b=st.floats(1.1, 5.0), x=st.floats(0.55, 0.999))
def test_transform_roundtrip_property(a, b, x):
    form = slform.liouville(slform.Polytropic(a, b))
    assert float(form.x_of_X(form.X_of_x(x))) == pytest.approx(x, abs=1e-12)


def test_surface_image_finite_exactly_when_density_weight_integrable():
    assert slform.liouville(slform.Polytropic(2, 4)).unbounded
    assert slform.liouville(slform.LinearThermal(1, 4, 2.5)).unbounded
    form = slform.liouville(slform.Polytropic(1, 2.5))
    assert not form.unbounded
    # s1 = 0.25: image of the surface is Dd^s1/(s1*sqrt(C_p))
    want = 0.5**0.25 / (0.25 * math.sqrt(2.5))
    assert form.X_surface == pytest.approx(want, rel=1e-15)
    # X_of_x approaches the image like D^s1/(s1*sqrt(C_p))
    for D in (1e-6, 1e-10):
        gap = form.X_surface - float(form.X_of_x(1.0 - D))
        assert gap == pytest.approx(D**0.25 / (0.25 * math.sqrt(2.5)), rel=1e-6)


def test_integration_rejects_bad_window():
    form = slform.liouville(slform.Polytropic(1, 2.5))
    with pytest.raises(ValidationError, match="lam must be positive"):
        slform.integrate_canonical(form, 0.0, X_max=1.0)
    with pytest.raises(ValidationError, match="reaches past the finite image"):
        slform.integrate_canonical(form, 1.0, X_max=form.X_surface)
    tr = slform.integrate_canonical(form, 1.0, X_max=0.9 * form.X_surface)
    assert tr.x_grid[-1] < form.eos.R_star


def test_edge_quadratic_surface_factorization():
    assert slform.edge_quadratic(0.0, 2.0, 3.0) == 32.0
    for a, b in ((2, 3), (2, 4), (1, 5), (0.7, 2.2)):
        got = slform.edge_quadratic(1.0, a, b)
        want = a * (b + 1.0) * (a * (3.0 * b - 1.0) - 4.0)
        assert got == pytest.approx(want, abs=1e-12)
    # the factor a(3b-1) - 4 vanishes on the critical exponent line
    for b in (1.5, 2.0, 3.0, 5.0):
        a = 4.0 / (3.0 * b - 1.0)
        assert abs(slform.edge_quadratic(1.0, a, b)) <= 1.5e-14
    assert slform.edge_quadratic(1.0, 0.5, 3.0) == 0.0


def test_marginal_adiabatic_exponent_kills_first_order_term():
    # 3b - 4 = 0 removes the q/w contribution entirely
    form = slform.liouville(slform.Polytropic(3, 4.0 / 3.0))
    x = np.linspace(0.55, 0.95, 20)
    assert np.all(form.q1(x) == 0.0)
    assert np.array_equal(form.q0(x), form.q2(x))


Q0_SLOPE_CASES = [
    # (a, b, fitted slope over depths 1e-7..1e-3); target is ab - a - 2
    (2, 3, 1.9997866553),
    (2, 4, 3.9998345352),
    (1, 5, 1.9996739719),
]


@pytest.mark.parametrize("a,b,frozen", Q0_SLOPE_CASES)
def test_q0_surface_slope(a, b, frozen):
    form = slform.liouville(slform.Polytropic(a, b))
    D = np.geomspace(1e-7, 1e-3, 60)
    x = form.eos.R_star * (1.0 - D)
    slope = np.polyfit(np.log(D), np.log(np.abs(form.q0(x))), 1)[0]
    target = a * b - a - 2.0
    assert slope == pytest.approx(target, rel=0.01)
    assert slope == pytest.approx(frozen, abs=1e-6)


def test_q0_dual_route_agreement():
    rng = np.random.default_rng(7)
    for eos in (slform.Polytropic(2, 4), slform.LinearThermal(1, 4, 2.5)):
        form = slform.liouville(eos)
        x = eos.R_delta + (eos.R_star - 1e-4 - eos.R_delta) * rng.random(20)
        closed = form.q0(x)
        nested = np.array([slform.q0_fd(form, float(xi)) for xi in x])
        rel = np.abs(closed - nested) / np.maximum(np.abs(closed), 1e-30)
        assert np.max(rel) < 1e-8


DERIVATIVE_EXPONENT_CASES = [
    # c, analytic (Q1', Q1'', Q2') exponents, measured log-depth fits
    (3.0, (1.5, 2.0, 1.5), (1.500155, 2.000258, 1.499574)),
    (1.2, (-0.3, 0.2, 1.5), (-0.300015, 0.200034, 1.499574)),
    (1.5, (0.0, 1.5, 1.5), (-0.000058, 1.500358, 1.499574)),
]


@pytest.mark.parametrize("c,analytic,fitted", DERIVATIVE_EXPONENT_CASES)
def test_canonical_derivative_exponents(c, analytic, fitted):
    eos = slform.LinearThermal(1, 4, c)
    form = slform.liouville(eos)
    assert slform.canonical_derivative_exponents(eos) == pytest.approx(analytic, abs=1e-12)
    D = np.geomspace(1e-7, 1e-3, 60)
    x = eos.R_star * (1.0 - D)
    for fn, ana, frz in zip((form.Q1_prime_X, form.Q1_second_X, form.Q2_prime_X),
                            analytic, fitted):
        slope = np.polyfit(np.log(D), np.log(np.abs(fn(x))), 1)[0]
        assert slope == pytest.approx(frz, abs=1e-4)
        assert slope == pytest.approx(ana, abs=2.5e-3)


ROUTE_CASES = [
    (slform.Polytropic(1, 1.5), "outside_scope", False),
    (slform.Polytropic(1, 2.0), "outside_scope", False),
    (slform.Polytropic(1, 2.5), "finite_interval", False),
    (slform.Polytropic(1, 3.0), "integrable_shifted_potential", True),
    (slform.Polytropic(2, 2.0), "integrable_shifted_potential", True),
    (slform.Polytropic(2, 3.0), "integrable_canonical_potential", True),
    (slform.Polytropic(2, 4.0), "integrable_canonical_potential", True),
    (slform.LinearThermal(1, 4, 0.9), "outside_scope", False),
    (slform.LinearThermal(1, 2.5, 2.0), "outside_scope", False),
    (slform.LinearThermal(1, 4, 3.5), "integrable_canonical_potential", True),
    (slform.LinearThermal(1, 4, 2.5), "bounded_vanishing_potential", True),
    (slform.LinearThermal(1, 5, 2.5), "bounded_vanishing_potential", True),
    (slform.LinearThermal(1, 4, 1.2), "unbounded_potential_wkb", True),
    (slform.LinearThermal(1, 4, 2.0), "unbounded_potential_wkb", True),
]


@pytest.mark.parametrize("eos,route,applies", ROUTE_CASES,
                         ids=[f"{type(e).__name__[:4]}-{e.a}-{e.b}" +
                              (f"-{e.c}" if hasattr(e, "c") else "")
                              for e, _, _ in ROUTE_CASES])
def test_classification_route(eos, route, applies):
    rep = slform.classify_sl_case(eos)
    assert rep.route == route
    assert rep.applies is applies
    assert all(ch.consistent for ch in rep.checks)


def test_classification_notes():
    assert "a(b-1) = 0.5 <= 1 excluded" in slform.classify_sl_case(
        slform.Polytropic(1, 1.5)).notes
    assert "k = -3.0" in slform.classify_sl_case(slform.Polytropic(1, 3.0)).notes
    assert "q0*W tends to a constant" in slform.classify_sl_case(
        slform.Polytropic(2, 3.0)).notes
    assert "log boundary" in slform.classify_sl_case(
        slform.LinearThermal(1, 4, 2.5)).notes
    assert "need ab-a >= 2 and c > a" in slform.classify_sl_case(
        slform.LinearThermal(1, 4, 0.9)).notes


def test_quadrature_check_tail_ratios():
    # W integrable up to the surface but q0*W is not: the cut-off
    # quadratures separate cleanly on the two sides of the 1.8 gate
    rep = slform.classify_sl_case(slform.Polytropic(1, 2.5))
    q0_check, qw_check = rep.checks
    assert q0_check.exponent == pytest.approx(-0.5)
    assert q0_check.integrable and q0_check.tail_ratio < 1.1
    assert qw_check.exponent == pytest.approx(-1.25)
    assert not qw_check.integrable and qw_check.tail_ratio > 2.0

    rep = slform.classify_sl_case(slform.LinearThermal(1, 4, 1.2))
    names = [ch.name for ch in rep.checks]
    assert names[0] == "W/sqrt(lam-Q1)"
    assert not rep.checks[0].integrable and rep.checks[0].tail_ratio > 1.8
    assert all(ch.integrable for ch in rep.checks[1:])


class _FlatForm:
    """Zero-potential canonical form over the full half-line."""

    X_surface = math.inf
    eos = slform.Polytropic(2, 4)

    def Q(self, X):
        return np.zeros_like(np.asarray(X, dtype=float))

    def x_of_X(self, X):
        return np.full_like(np.asarray(X, dtype=float), 0.75)


def test_flat_potential_integrates_to_sine():
    tr = slform.integrate_canonical(_FlatForm(), 1.0, X_max=100.0)
    assert np.max(np.abs(tr.Y - np.sin(tr.X_grid))) < 5e-9
    assert np.max(np.abs(tr.Y**2 + tr.Y_prime**2 - 1.0)) < 5e-9
    sign = np.sign(tr.Y)
    sign[sign == 0] = 1.0
    idx = np.nonzero(np.diff(sign))[0]
    X = tr.X_grid
    zeros = X[idx] - tr.Y[idx] * (X[idx + 1] - X[idx]) / (tr.Y[idx + 1] - tr.Y[idx])
    assert np.max(np.abs(np.diff(zeros) - math.pi)) < 1e-4
    fit = slform.wkb_fit(tr, _FlatForm())
    assert fit.residual < 1e-6
    assert abs(fit.alpha) == pytest.approx(0.5, abs=1e-6)
    assert abs(fit.beta) == pytest.approx(0.5, abs=1e-6)


def test_trace_fields_consistent(poly24_trace):
    form, tr = poly24_trace
    assert tr.X_max == 600.0
    assert np.all(np.diff(tr.x_grid) > 0)
    sl = slform.sl_coefficients(form.eos)
    pw4 = (sl.p(tr.x_grid) * sl.w(tr.x_grid)) ** 0.25
    assert np.array_equal(tr.y, tr.Y / pw4)
    assert np.array_equal(tr.delta_r, tr.x_grid * tr.y)


def test_envelope_continuation(poly24_trace):
    form, tr = poly24_trace
    env = slform.extend_trace_asymptotic(tr, form)
    k = int(0.8 * tr.X_grid.size)
    assert env.amp_Y == np.max(np.abs(tr.Y[k:]))
    assert env.depth[0] > env.depth[-1]
    assert env.depth[-1] == pytest.approx(1e-8, rel=1e-12)
    # every envelope field grows monotonically toward the surface
    for fld in (env.env_y, env.env_yp, env.env_delta_r):
        assert np.all(np.diff(fld) > 0)
    assert np.all(np.diff(env.env_R) < 0)
    d_hi = form.eos.R_star - tr.x_grid[-1]
    with pytest.raises(ValidationError, match="trace already reaches depth"):
        slform.extend_trace_asymptotic(tr, form, depth_min=1.5 * d_hi)


def test_regularity_decay_polytropic(poly24_trace):
    form, tr = poly24_trace
    rep = slform.regularity_check(tr, form.eos)
    assert rep.analytic_power == 2.5
    assert rep.lower_bound == 1.5
    assert rep.fitted_power == pytest.approx(2.5, abs=1e-3)
    assert rep.monotone and rep.within and rep.bound_satisfied
    assert rep.envelope_ratio == pytest.approx(1.0, abs=0.1)


def test_regularity_decay_thermal(thermal_trace):
    form, tr = thermal_trace
    rep = slform.regularity_check(tr, form.eos)
    assert rep.analytic_power == 1.25
    assert rep.lower_bound == 1.0
    assert rep.fitted_power == pytest.approx(1.250221, abs=1e-3)
    assert rep.monotone and rep.within and rep.bound_satisfied


def test_l2_growth_polytropic(poly24_trace):
    form, tr = poly24_trace
    rep = slform.l2_growth(tr, form, total_mass=1.0)
    assert rep.slope == pytest.approx(1.104162, abs=1e-3)
    assert rep.r_squared > 0.999
    assert rep.max_growth_factor == pytest.approx(337.96, rel=0.01)
    assert rep.growth_exponent == pytest.approx(2.5, abs=1e-3)
    assert rep.delta_r_lower == math.sqrt(4.0 * math.pi * rep.F[-1])
    assert rep.diverges


def test_l2_growth_thermal(thermal_trace):
    form, tr = thermal_trace
    rep = slform.l2_growth(tr, form, total_mass=1.0)
    assert rep.slope == pytest.approx(0.126593, abs=1e-3)
    assert rep.r_squared > 0.999
    assert rep.max_growth_factor == pytest.approx(18.08, rel=0.02)
    assert rep.growth_exponent == pytest.approx(1.25, abs=1e-3)
    assert rep.diverges


def test_wkb_fit_polytropic(poly24_trace):
    form, tr = poly24_trace
    fit = slform.wkb_fit(tr, form)
    assert fit.window == (300.0, 600.0)
    assert fit.residual < 1e-3
    # real seed: time-reversal pairs the two WKB branches
    assert abs(fit.alpha) == pytest.approx(abs(fit.beta), rel=1e-9)
    assert abs(fit.alpha) == pytest.approx(0.743022, abs=2e-3)
    assert list(fit.hypothesis_slopes) == ["V1"]
    assert fit.hypothesis_slopes["V1"] < -1.02


def test_wkb_fit_thermal(thermal_trace):
    form, tr = thermal_trace
    fit = slform.wkb_fit(tr, form)
    assert fit.residual < 1e-4
    assert abs(fit.alpha) == pytest.approx(0.254384, abs=2e-3)
    assert fit.amplitude == pytest.approx(abs(fit.alpha) + abs(fit.beta))
    assert list(fit.hypothesis_slopes) == ["V2'"]


def test_wkb_fit_constant_potential_keeps_it_under_the_root():
    # c = a + 1: the potential tends to a nonzero constant, so the auto
    # split must leave it in V2 and check the correction quadratures
    form = slform.liouville(slform.LinearThermal(1, 4, 2.0))
    tr = slform.integrate_canonical(form, 1.0, X_max=400.0)
    fit = slform.wkb_fit(tr, form)
    assert fit.residual < 1e-6
    assert set(fit.hypothesis_slopes) == {"V2''/(lam-V2)^1.5", "V2'^2/(lam-V2)^2.5"}
    with pytest.raises(ValidationError, match="V1 quadrature diverges"):
        slform.wkb_fit(tr, form, split={"V2": "zero"})
    with pytest.raises(ValidationError, match="split V2 must be zero, q0 or callable"):
        slform.wkb_fit(tr, form, split={"V2": "bogus"})


def test_zero_solution_has_zero_regularity():
    form = slform.liouville(slform.Polytropic(2, 4))
    X = np.linspace(0.0, 100.0, 2000)
    zero = np.zeros_like(X)
    tr = slform.CanonicalTrace(lam=1.0, X_grid=X, Y=zero, Y_prime=zero,
                               x_grid=form.x_of_X(X), y=zero, delta_r=zero)
    assert np.all(slform.trace_regularity(tr, form.eos) == 0.0)


def test_dying_solution_not_flagged_divergent():
    form = slform.liouville(slform.Polytropic(2, 4))
    sl = slform.sl_coefficients(form.eos)
    X = np.linspace(0.0, 100.0, 2000)
    xg = form.x_of_X(X)
    Y = np.clip(1.0 - X / 50.0, 0.0, None)
    y = Y / (sl.p(xg) * sl.w(xg)) ** 0.25
    tr = slform.CanonicalTrace(lam=1.0, X_grid=X, Y=Y, Y_prime=np.gradient(Y, X),
                               x_grid=xg, y=y, delta_r=xg * y)
    with np.errstate(divide="ignore"):
        rep = slform.l2_growth(tr, form)
    assert abs(rep.slope) < 1e-12
    assert not rep.diverges


def test_regularity_needs_a_long_trace():
    form = slform.liouville(slform.Polytropic(2, 4))
    X = np.linspace(0.0, 5.0, 100)
    one = np.ones_like(X)
    tr = slform.CanonicalTrace(lam=1.0, X_grid=X, Y=one, Y_prime=one,
                               x_grid=form.x_of_X(X), y=one, delta_r=one)
    with pytest.raises(ValidationError, match="trace too short"):
        slform.regularity_check(tr, form.eos)
