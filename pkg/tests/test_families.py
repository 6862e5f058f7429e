import numpy as np
import pytest
from scipy.integrate import quad

from ebwave.errors import ConfigError, DivergentIntegral, DomainViolation
from ebwave.families import (DoubleExponential, GammaShape, NormalLocation,
                             UniformScale, WeibullScale,
                             estimating_equation_residual, family_from_config,
                             sup_to_l2_ratio)
from ebwave.verify import equation_cases, norm_growth_slope, slope_families


def test_normal_u_is_scaled_derivative(db8):
    fam = NormalLocation(1.0)
    rng = np.random.default_rng(0)
    xs = rng.uniform(-1.0, 14.0, 20)
    # at the base level the estimating function is the bare derivative table
    assert np.allclose(fam.estimating_function(db8, 0, 0, xs), db8.eval(xs, 1),
                       atol=1e-12)
    xs2 = rng.uniform(0.0, 2.0, 10)
    expect = 1.0 * 2.0**4.5 * db8.eval(8.0 * xs2 - 3, 1)
    assert np.allclose(fam.estimating_function(db8, 3, 3, xs2), expect, atol=1e-12)


def test_weibull_exponential_case_matches_gamma_beta_one(db8):
    """Shape-one Weibull and shape-one Gamma share the same estimating function."""
    w = WeibullScale(1.0)
    g = GammaShape(1.0)
    xs = np.linspace(0.05, 3.0, 50)
    uw = w.estimating_function(db8, 2, 5, xs)
    ug = g.estimating_function(db8, 2, 5, xs)
    assert np.allclose(uw, ug, atol=1e-12)
    # and the x-power prefactor drops out
    expect = 2.0**3.0 * db8.eval(4.0 * xs - 5, 1)
    assert np.allclose(uw, expect, atol=1e-12)


def test_uniform_u_outside_support(db8):
    fam = UniformScale(1.0, 5.0)
    m, k = 3, 8
    lo = 2.0**-m * (db8.support_lo + k)
    hi = 2.0**-m * (db8.support_hi + k)
    assert fam.estimating_function(db8, m, k, np.array([lo / 2.0]))[0] == 0.0
    right = fam.estimating_function(db8, m, k, np.array([hi + 0.5]))[0]
    assert right == pytest.approx(2.0 ** (-m / 2.0), abs=1e-9)


def test_uniform_u_zero_when_support_left_of_domain(db8):
    fam = UniformScale(1.0, 5.0)
    xs = np.linspace(0.1, 4.9, 40)
    vals = fam.estimating_function(db8, 3, -40, xs)
    assert np.all(vals == 0.0)


def test_dexp_u_against_split_quadrature(db8):
    """Independent oracle: the convolution term recomputed with adaptive
    quadrature split at the kink."""
    fam = DoubleExponential(0.7)
    m, k = 2, 3
    for x in (0.4, 1.1, 2.9, 5.5):
        lo = 2.0**-m * (db8.support_lo + k)
        hi = 2.0**-m * (db8.support_hi + k)
        parts = sorted({lo, hi, min(max(x, lo), hi)})
        conv = 0.0
        for a, b in zip(parts[:-1], parts[1:]):
            conv += quad(
                lambda t: float(db8.eval_dilated(m, k, t))
                * np.sign(x - t) * np.exp(-abs(x - t) / fam.sigma),
                a, b, epsabs=1e-12, limit=200,
            )[0]
        expect = x * float(db8.eval_dilated(m, k, x)) + conv
        got = float(fam.estimating_function(db8, m, k, np.array([x]))[0])
        assert got == pytest.approx(expect, abs=5e-7)


@pytest.mark.parametrize("case", equation_cases(), ids=lambda c: c[0])
def test_estimating_equation(db8, case):
    label, fam, thetas, mks, tol = case
    worst = max(estimating_equation_residual(fam, db8, m, k, thetas) for m, k in mks)
    assert worst <= tol


def test_normal_norm_entries_closed_form(db8):
    fam = NormalLocation(1.3)
    for m in (2, 5):
        norms = fam.norms(db8, m, 0.5)
        expect = 2.0**m * 1.3**2 * np.sqrt(db8.table_integral(db8.tables[1] ** 2))
        assert np.allclose(norms.entries, expect, rtol=1e-12)
        # independent route: dense trapezoid of u^2 on its own grid
        k = int(norms.ks[norms.ks.size // 2])
        lo, hi = fam.u_window(db8, m, k)
        xs = np.linspace(lo, hi, 300001)
        val = np.sqrt(np.trapezoid(fam.estimating_function(db8, m, k, xs) ** 2, x=xs))
        assert val == pytest.approx(norms.entries[0], rel=1e-5)


def test_norm_ratios_track_growth_exponent(db8):
    fam = NormalLocation(1.0)
    g = [fam.norms(db8, m, 0.5).norm for m in (4, 5, 6)]
    assert g[1] / g[0] == pytest.approx(2.0, abs=0.01)
    assert g[2] / g[1] == pytest.approx(2.0, abs=0.01)
    u = UniformScale(30.0, 40.0)
    gu = [u.norms(db8, m, 35.0).norm for m in (5, 6, 7)]
    assert gu[1] / gu[0] == pytest.approx(1.0, abs=0.05)
    assert gu[2] / gu[1] == pytest.approx(1.0, abs=0.05)


@pytest.mark.parametrize("case", slope_families(), ids=lambda c: c[0])
def test_norm_growth_slopes(db8, case):
    label, fam, y, target = case
    slope = norm_growth_slope(fam, db8, y)
    assert abs(slope - target) <= 0.15


def test_divergent_norms_raise_and_skip(db8):
    fam = WeibullScale(2.0, c1=0.5, c2=2.0)
    with pytest.raises(DivergentIntegral):
        fam.norms(db8, 3, 1.0)
    norms = fam.norms(db8, 3, 1.0, skip_divergent=True)
    assert np.isfinite(norms.norm)
    assert norms.norm > 0


def test_norm_vector_consistency(db8):
    norms = NormalLocation(1.0).norms(db8, 3, 0.5, power=2)
    assert norms.norm == pytest.approx(np.sqrt(np.sum(norms.entries**2)), rel=1e-15)
    assert np.all(norms.entries >= 0)


@pytest.mark.parametrize("power", [1, 2, 3, 4])
def test_norm_powers_available(db8, power):
    val = GammaShape(2.0).norms(db8, 3, 60.0, power=power).norm
    assert np.isfinite(val) and val > 0


def test_sampler_moments(db8):
    rng = np.random.default_rng(2718)
    cases = [
        (NormalLocation(1.3), 0.4),
        (DoubleExponential(0.8), -0.2),
        (WeibullScale(2.0), 1.7),
        (GammaShape(2.5), 1.1),
        (UniformScale(1.0, 5.0), 3.0),
    ]
    for fam, theta in cases:
        xs = fam.sample(np.full(100_000, theta), rng)
        mu = float(fam.conditional_mean(theta))
        var = float(fam.conditional_var(theta))
        assert abs(xs.mean() - mu) <= 4.0 * np.sqrt(var / xs.size)


def test_density_normalization(db8):
    cases = [
        (NormalLocation(1.0), [-1.0, 0.0, 0.5, 2.0, 7.0], (-60, 60)),
        (DoubleExponential(0.5), [-1.0, 0.0, 0.5, 2.0, 7.0], (-60, 60)),
        (WeibullScale(2.0), [0.3, 0.7, 1.0, 2.0, 5.0], (0, 60)),
        (GammaShape(2.0), [0.3, 0.7, 1.0, 2.0, 5.0], (0, 400)),
        (UniformScale(1.0, 5.0), [1.0, 2.0, 3.0, 4.0, 5.0], (0, 5.0)),
    ]
    for fam, thetas, (lo, hi) in cases:
        for th in thetas:
            mass = quad(lambda x: float(fam.density(x, th)), lo, hi,
                        points=[th] if lo < th < hi else None, limit=300)[0]
            assert mass == pytest.approx(1.0, abs=1e-8)


def test_domain_violations(db8):
    from ebwave.basis import index_set

    with pytest.raises(DomainViolation):
        WeibullScale(2.0).estimating_function(db8, 2, 5, np.array([-0.1]))
    with pytest.raises(DomainViolation):
        GammaShape(2.0).estimating_function(db8, 2, 5, np.array([0.0]))
    with pytest.raises(DomainViolation):
        UniformScale(1.0, 2.0).estimating_sums(
            db8, 2, index_set(db8, 2, 1.5), np.array([0.5, 2.5])
        )


def test_sup_ratio_constant_for_normal(db8):
    ratios = [sup_to_l2_ratio(NormalLocation(1.0), db8, m, 2**m // 2)
              for m in range(2, 9)]
    assert max(ratios) / min(ratios) <= 1.01


def test_family_config_round_trip():
    fam = family_from_config({"family": "weibull", "b": 2.0, "c1": 0.5, "c2": 2.0})
    assert isinstance(fam, WeibullScale) and fam.b == 2.0
    with pytest.raises(ConfigError):
        family_from_config({"family": "weibull"})
    with pytest.raises(ConfigError):
        family_from_config({"family": "cauchy"})
    with pytest.raises(ConfigError):
        family_from_config({"family": "uniform_scale", "theta_lo": 2.0, "theta_hi": 1.0})
