import numpy as np
import pytest

from ebwave.bounds import (BumpKernel, derivative_scale, kl_bound, make_pair,
                           numerator_perturbation, rate_trace, two_point_gap)
from ebwave.errors import NegativeDensity, UnsupportedFamily, VanishingMarginal
from ebwave.families import (DoubleExponential, Family, GammaShape,
                             NormalLocation, UniformScale, WeibullScale)
from ebwave.oracle import NormalPrior, PosteriorSpec, UniformPrior


@pytest.mark.parametrize("shape", ["odd", "even"])
@pytest.mark.parametrize("q", [1, 2, 3, 4])
def test_kernel_invariants(shape, q):
    k = BumpKernel(q, shape)
    z_star = 1.0 / np.sqrt(2.0 * q + 1.0)  # argmax of the odd shape
    zs = np.concatenate([np.linspace(-1.0, 1.0, 200001), [-z_star, z_star]])
    assert abs(k.integral()) <= 1e-12
    assert abs(np.abs(k(zs)).max() - 1.0) <= 1e-10
    assert k(-1.5) == 0.0 and k(2.0) == 0.0
    assert abs(k.antiderivative(1.0)) <= 1e-12
    assert k.antiderivative(-1.2) == 0.0 and k.antiderivative(1.7) == 0.0
    edges = k.edge_derivatives(q)
    assert np.abs(edges).max() <= 1e-9


def test_odd_kernel_structure():
    k = BumpKernel(2, "odd")
    zs = np.linspace(0.0, 1.0, 501)
    assert np.allclose(k(zs), -k(-zs), atol=1e-14)
    assert k(0.0) == 0.0
    assert float(k.deriv(0.0)) == pytest.approx(k.amplitude, abs=1e-12)


def test_even_kernel_center_value():
    k = BumpKernel(2, "even")
    assert float(k(0.0)) == pytest.approx(1.0, abs=1e-12)
    assert float(k.deriv(0.0)) == 0.0


def test_normal_perturbation_closed_form(db8):
    fam = NormalLocation(1.4)
    k = BumpKernel(2, "odd")
    h, y = 0.2, 0.3
    xs = np.array([0.2, 0.3, 0.42])
    got = fam.numerator_perturbation(k, h, y, xs)
    zs = (xs - y) / h
    expect = xs * k(zs) + 1.4**2 / h * k.deriv(zs)
    assert np.allclose(got, expect, atol=1e-14)
    # at the center the kernel term drops out for the odd shape
    assert float(fam.numerator_perturbation(k, h, y, np.array([y]))[0]) == \
        pytest.approx(1.4**2 / h * k.amplitude, abs=1e-12)


def test_exponential_family_perturbation_matches_direct_derivative():
    """Finite-difference oracle on the product-rule construction."""
    beta = 2.0
    fam = GammaShape(beta)
    k = BumpKernel(2, "odd")
    h, y = 0.1, 1.0

    def direct(x, eps=1e-7):
        f = lambda t: t ** (beta - 1.0)
        g = lambda t: float(k((t - y) / h)) / f(t)
        return -f(x) * (g(x + eps) - g(x - eps)) / (2.0 * eps)

    for x in (0.93, 1.0, 1.04):
        got = float(fam.numerator_perturbation(k, h, y, np.array([x]))[0])
        assert got == pytest.approx(direct(x), abs=1e-6)


def test_weibull_perturbation_shape():
    fam = WeibullScale(2.0)
    k = BumpKernel(2, "odd")
    h, y = 0.1, 1.0
    xs = np.array([0.95, 1.05])
    zs = (xs - y) / h
    expect = (2.0 - 1.0) / (2.0 * xs**2.0) * k(zs) - k.deriv(zs) / (2.0 * h * xs)
    assert np.allclose(fam.numerator_perturbation(k, h, y, xs), expect, atol=1e-13)


def test_uniform_perturbation_support(db8):
    fam = UniformScale(1.0, 2.0)
    k = BumpKernel(2, "odd")
    h, y = 0.05, 1.4
    left = float(fam.numerator_perturbation(k, h, y, np.array([1.2]))[0])
    assert left == 0.0  # both kernel and its running integral vanish there
    inside = fam.numerator_perturbation(k, h, y, np.array([1.39, 1.42]))
    zs = (np.array([1.39, 1.42]) - y) / h
    expect = np.array([1.39, 1.42]) * k(zs) - h * k.antiderivative(zs)
    assert np.allclose(inside, expect, atol=1e-13)


def test_unsupported_family_raises(db8):
    class Weird(Family):
        name = "weird"
        growth_exponent = 0.0
        x_support = (-np.inf, np.inf)
        theta_support = (-np.inf, np.inf)

        def density(self, x, theta): ...
        def sample(self, thetas, rng): ...
        def conditional_mean(self, theta): ...
        def conditional_var(self, theta): ...
        def estimating_function(self, basis, m, k, x): ...
        def estimating_sums(self, basis, m, K, xs): ...
        def norm_entries(self, basis, m, K, power, skip_divergent=False): ...
        def u_window(self, basis, m, k): ...
        def numerator_perturbation(self, kernel, h, y, x):
            raise AttributeError("no closed form")
        def perturbation_orders(self, r):
            return (r, 0.0)

    with pytest.raises(UnsupportedFamily):
        numerator_perturbation(Weird(), BumpKernel(2), 0.1, 0.0, np.array([0.0]))


def _normal_pair(h=0.1, zeta0=None):
    spec = PosteriorSpec(NormalLocation(1.0), NormalPrior(0.0, 1.0))
    return make_pair(spec, BumpKernel(2, "odd"), h, 0.0, 1.0, zeta0=zeta0)


def test_pair_positivity_and_mass():
    pair = _normal_pair()
    xs = np.linspace(-0.5, 0.5, 2001)
    p1 = pair.p0(xs) + pair.zeta * pair.kernel(xs / pair.h)
    assert np.all(p1 >= 0.0)
    net = np.trapezoid(pair.kernel(xs / pair.h), x=xs) * pair.zeta
    assert abs(net) <= 1e-10


def test_pair_rejects_oversized_amplitude():
    spec = PosteriorSpec(NormalLocation(1.0), NormalPrior(0.0, 1.0))
    with pytest.raises(NegativeDensity):
        make_pair(spec, BumpKernel(2, "odd"), 0.5, 0.0, 1.0, zeta0=50.0)


def test_kl_zero_at_zero_amplitude():
    pair = _normal_pair(zeta0=0.0)
    exact, bound = kl_bound(pair, 5000)
    assert exact == pytest.approx(0.0, abs=1e-12)
    assert bound == 0.0
    assert two_point_gap(pair) == pytest.approx(0.0, abs=1e-14)


def test_kl_exact_below_bound():
    pair = _normal_pair()
    exact, bound = kl_bound(pair, 10_000)
    assert 0.0 < exact <= bound


def test_kl_constant_density_closed_form():
    # a very diffuse prior makes the mixture flat across the bump window
    spec = PosteriorSpec(NormalLocation(1.0), NormalPrior(0.0, 60.0))
    pair = make_pair(spec, BumpKernel(2, "odd"), 0.05, 0.0, 1.0)
    n = 10_000
    _, bound = kl_bound(pair, n)
    zs = np.linspace(-1, 1, 20001)
    ksq = np.trapezoid(pair.kernel(zs) ** 2, x=zs)
    expect = n * pair.zeta**2 * pair.h * ksq / pair.p0(0.0)
    assert bound == pytest.approx(expect, rel=2e-3)


def test_gap_closed_form_with_odd_kernel():
    pair = _normal_pair()
    w_y = float(pair.spec.family.numerator_perturbation(
        pair.kernel, pair.h, 0.0, np.array([0.0]))[0])
    assert two_point_gap(pair) == pytest.approx(
        pair.zeta * abs(w_y) / pair.p0(0.0), rel=1e-10
    )


def test_gap_raises_on_vanishing_marginal():
    spec = PosteriorSpec(UniformScale(1.0, 2.0), UniformPrior(1.0, 2.0))
    pair = make_pair(spec, BumpKernel(2, "even"), 0.05, 1.4, 1.0)
    object.__setattr__ if False else None
    pair.y = 5.0  # outside the mixture support
    with pytest.raises(VanishingMarginal):
        two_point_gap(pair)


def test_gap_scales_at_declared_rate():
    """Halving the bandwidth with the amplitude rule tied to it scales the
    gap like h^r for the Gaussian family."""
    spec = PosteriorSpec(NormalLocation(1.0), NormalPrior(0.0, 1.0))
    kernel = BumpKernel(2, "odd")
    hs = np.array([0.2, 0.1, 0.05])
    gaps = []
    for h in hs:
        pair = make_pair(spec, kernel, h, 0.0, 1.0, zeta0=0.05)
        gaps.append(two_point_gap(pair))
    slope = np.polyfit(np.log(hs), np.log(gaps), 1)[0]
    assert slope == pytest.approx(1.0, abs=0.1)


def test_derivative_scale_orders():
    hs = np.array([0.2, 0.1, 0.05, 0.025])
    rho_n = [derivative_scale(NormalLocation(1.0), BumpKernel(3, "odd"), h, 0.0, 2)
             for h in hs]
    assert np.polyfit(np.log(hs), np.log(rho_n), 1)[0] == pytest.approx(3.0, abs=0.15)
    rho_u = [derivative_scale(UniformScale(1.0, 2.0), BumpKernel(2, "odd"), h, 1.4, 1)
             for h in hs]
    assert np.polyfit(np.log(hs), np.log(rho_u), 1)[0] == pytest.approx(1.0, abs=0.15)
    rho_d = [derivative_scale(DoubleExponential(1.0), BumpKernel(2, "odd"), h, 0.3, 1)
             for h in hs]
    assert max(rho_d) <= 1.5  # bounded: the identity term dominates


def test_rate_trace_normal():
    tr = rate_trace(NormalLocation(1.0), NormalPrior(0.0, 1.0), 1.0,
                    [10**3, 10**4, 10**5, 10**6], 0.0)
    assert tr.exponent == pytest.approx(-0.4, abs=0.05)
    assert tr.kl_band_ratio <= 3.0
    assert all(r.kl_exact <= r.kl_bound + 1e-12 for r in tr.rows)
    assert (tr.r1, tr.r2) == (2.0, 1.0)


def test_rate_trace_uniform():
    tr = rate_trace(UniformScale(1.0, 2.0), UniformPrior(1.0, 2.0), 1.0,
                    [10**3, 10**4, 10**5, 10**6], 1.4)
    assert tr.exponent == pytest.approx(-2.0 / 3.0, abs=0.05)
    assert tr.kl_band_ratio <= 3.0
    assert (tr.r1, tr.r2) == (1.0, 0.0)
