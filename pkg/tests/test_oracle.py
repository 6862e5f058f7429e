import numpy as np
import pytest
from scipy.integrate import quad

from ebwave.errors import ConfigError, VanishingMarginal
from ebwave.families import (DoubleExponential, GammaShape, NormalLocation,
                             UniformScale, WeibullScale)
from ebwave.oracle import (GammaPrior, NormalPrior, PointMassPrior,
                           PosteriorSpec, UniformPrior, prior_from_config)


def test_prior_config_round_trip():
    g = prior_from_config({"prior": "normal", "mu0": 0.5, "sigma0": 2.0})
    assert isinstance(g, NormalPrior) and g.sigma0 == 2.0
    assert isinstance(prior_from_config({"prior": "point", "theta0": 1.0}),
                      PointMassPrior)
    with pytest.raises(ConfigError):
        prior_from_config({"prior": "beta", "a": 1, "b": 1})
    with pytest.raises(ConfigError):
        prior_from_config({"prior": "gamma", "a": 2.0})


@pytest.mark.parametrize("g", [NormalPrior(0.3, 1.2), GammaPrior(3.0, 2.0),
                               UniformPrior(1.0, 2.0)])
def test_prior_mass_and_moments(g):
    lo, hi = g.support()
    mass = quad(lambda t: float(g.density(np.array([t]))[0]), lo, hi)[0]
    assert mass == pytest.approx(1.0, abs=1e-8)
    rng = np.random.default_rng(4)
    ths = g.sample(100_000, rng)
    assert abs(ths.mean() - g.mean()) <= 4.0 * np.sqrt(g.var() / ths.size)


def test_point_mass_marginal_and_numerator():
    spec = PosteriorSpec(NormalLocation(1.0), PointMassPrior(0.7))
    x = 1.3
    q = float(spec.family.density(x, 0.7))
    assert spec.marginal(x) == pytest.approx(q, abs=0)
    assert spec.numerator(x) == pytest.approx(0.7 * q, abs=0)
    assert spec.posterior_mean(2.2) == pytest.approx(0.7, abs=1e-12)


def test_normal_normal_marginal_is_convolution():
    spec = PosteriorSpec(NormalLocation(1.0), NormalPrior(0.3, 1.5))
    s2 = 1.0 + 1.5**2
    for x in (-1.0, 0.2, 2.4):
        exact = np.exp(-0.5 * (x - 0.3) ** 2 / s2) / np.sqrt(2 * np.pi * s2)
        assert spec.marginal(x) == pytest.approx(exact, abs=1e-8)
        psi = spec.numerator(x)
        expect = exact * (1.5**2 * x + 1.0 * 0.3) / (1.5**2 + 1.0)
        assert psi == pytest.approx(expect, abs=1e-8)


def test_marginal_integrates_to_one():
    spec = PosteriorSpec(NormalLocation(1.0), NormalPrior(0.0, 1.0))
    mass = quad(lambda x: spec.marginal(x), -12, 12)[0]
    assert mass == pytest.approx(1.0, abs=1e-6)


def test_numerator_odd_symmetry():
    spec = PosteriorSpec(DoubleExponential(1.0), UniformPrior(-1.0, 1.0))
    assert abs(spec.numerator(0.0)) <= 1e-8


@pytest.mark.parametrize("fam,g,closed,ys", [
    (NormalLocation(1.0), NormalPrior(0.0, 1.0),
     lambda y: y / 2.0, np.linspace(-2.5, 2.5, 20)),
    (WeibullScale(2.0, c1=0.05, c2=5.0), GammaPrior(3.0, 2.0),
     lambda y: 4.0 / (2.0 + y**2), np.linspace(0.2, 2.5, 20)),
    (GammaShape(2.0, c1=0.05, c2=8.0), GammaPrior(3.0, 2.0),
     lambda y: 5.0 / (2.0 + y), np.linspace(0.3, 4.0, 20)),
])
def test_conjugate_posterior_means(fam, g, closed, ys):
    spec = PosteriorSpec(fam, g)
    for y in ys:
        assert spec.posterior_mean(float(y)) == pytest.approx(closed(y), abs=1e-8)


def test_posterior_mean_examples():
    spec = PosteriorSpec(NormalLocation(1.0), NormalPrior(0.0, 1.0))
    assert spec.posterior_mean(2.0) == pytest.approx(1.0, abs=1e-10)
    assert abs(spec.posterior_mean(0.0)) <= 1e-10
    wg = PosteriorSpec(WeibullScale(2.0, c1=0.05, c2=5.0), GammaPrior(2.5, 1.5))
    y = 0.9
    assert wg.posterior_mean(y) == pytest.approx((2.5 + 1) / (1.5 + y**2), abs=1e-9)


def test_vanishing_marginal():
    spec = PosteriorSpec(UniformScale(1.0, 2.0), UniformPrior(1.0, 2.0))
    with pytest.raises(VanishingMarginal):
        spec.posterior_mean(3.5)


def test_posterior_mean_in_prior_hull():
    spec = PosteriorSpec(NormalLocation(1.0), UniformPrior(-1.0, 1.0))
    for y in np.linspace(-4.0, 4.0, 17):
        t = spec.posterior_mean(float(y))
        assert -1.0 <= t <= 1.0


def test_prior_support_must_fit_family():
    with pytest.raises(ConfigError):
        PosteriorSpec(WeibullScale(2.0), NormalPrior(0.0, 1.0))


def test_grid_matches_scalar():
    cases = [
        (NormalLocation(1.0), NormalPrior(0.0, 1.0), [-1.0, 0.3, 2.0]),
        (DoubleExponential(0.7), NormalPrior(0.2, 1.3), [-0.5, 0.7]),
        (NormalLocation(1.0), UniformPrior(-1.0, 1.0), [-0.5, 0.0, 1.2]),
        (WeibullScale(2.0, c1=0.05, c2=5.0), GammaPrior(3.0, 2.0), [0.4, 1.5]),
        (UniformScale(1.0, 2.0), UniformPrior(1.0, 2.0), [0.5, 1.4, 1.9]),
    ]
    for fam, g, xs in cases:
        spec = PosteriorSpec(fam, g)
        ps = spec.marginal_grid(np.asarray(xs))
        qs = spec.numerator_grid(np.asarray(xs))
        for i, x in enumerate(xs):
            assert ps[i] == pytest.approx(spec.marginal(x), abs=2e-8)
            assert qs[i] == pytest.approx(spec.numerator(x), abs=2e-8)


def test_target_views():
    spec = PosteriorSpec(NormalLocation(1.0), NormalPrior(0.0, 1.0))
    y = 0.8
    assert spec.target(y) == pytest.approx(y - spec.posterior_mean(y), abs=1e-12)
    assert spec.finalize(y, spec.target(y)) == pytest.approx(
        spec.posterior_mean(y), abs=1e-12
    )
    direct = PosteriorSpec(GammaShape(2.0, c1=0.05, c2=8.0), GammaPrior(3.0, 2.0))
    assert direct.target(1.1) == pytest.approx(direct.posterior_mean(1.1), abs=1e-12)
