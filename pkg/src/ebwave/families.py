"""Conditional-density families and their estimating functions.

For each family q(x|theta) the right-hand side of the local linear system is
estimated by sample means of a family-specific function u_{m,k}.  For scale
and exponential families u solves

    int q(x|theta) u_{m,k}(x) dx = int theta q(x|theta) phi_{m,k}(x) dx

for every theta; for location families it solves the residual version with
theta replaced by (x - theta), and the final predictor is y minus the fitted
expansion.  The module also carries the L^{2p} norms of u (which control the
random error and the level selection thresholds) and the closed-form
numerator perturbations used by the minimax lower-bound construction.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from math import gamma as gamma_fn
from math import sqrt

import numpy as np

from .basis import IndexSet, ScalingBasis, index_set, local_window
from .errors import ConfigError, DivergentIntegral, DomainViolation, QuadratureFailure
from .quadrature import composite_gl, quad_checked


@dataclass(frozen=True)
class EstimatingNorms:
    """Per-translate integral norms [int u^(2*power)]^(1/2) over an index window."""

    m: int
    power: int
    ks: np.ndarray
    entries: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.entries**2)))


class Family(ABC):
    """A conditional density q(x|theta) with its estimator ingredients."""

    name: str
    growth_exponent: float  # norm growth: log2 of norm^2 grows like this per level
    location_form: bool = False  # expansion approximates y - t(y) instead of t(y)
    location_shift: bool = False  # density depends on x - theta only
    x_support: tuple
    theta_support: tuple

    @abstractmethod
    def density(self, x, theta):
        ...

    @abstractmethod
    def sample(self, thetas, rng):
        ...

    @abstractmethod
    def conditional_mean(self, theta):
        ...

    @abstractmethod
    def conditional_var(self, theta):
        ...

    @abstractmethod
    def estimating_function(self, basis, m: int, k: int, x):
        """u_{m,k} evaluated at x (vectorized)."""

    @abstractmethod
    def estimating_sums(self, basis, m: int, K: IndexSet, xs) -> np.ndarray:
        """sum over samples of u_{m,k}(x), for every k in K."""

    @abstractmethod
    def norm_entries(self, basis, m: int, K: IndexSet, power: int,
                     skip_divergent: bool = False) -> np.ndarray:
        ...

    @abstractmethod
    def u_window(self, basis, m: int, k: int) -> tuple:
        """Interval outside which u_{m,k} is zero or negligible."""

    @abstractmethod
    def numerator_perturbation(self, kernel, h: float, y: float, x):
        """Closed-form response of the numerator to a local density bump."""

    @abstractmethod
    def perturbation_orders(self, r: float) -> tuple:
        """(r1, r2) exponents governing the lower-bound bandwidth and gap."""

    def norms(self, basis, m: int, y: float, power: int = 1,
              skip_divergent: bool = False) -> EstimatingNorms:
        """Norm vector over the index window at y.

        With skip_divergent, translates whose norm integral diverges (basis
        support straddling a domain boundary) are dropped from the vector
        instead of raising; they never carry estimation weight at interior y.
        """
        if power not in (1, 2, 3, 4):
            raise ValueError("power must be in {1, 2, 3, 4}")
        K = index_set(basis, m, y)
        entries = self.norm_entries(basis, m, K, power, skip_divergent=skip_divergent)
        return EstimatingNorms(m=m, power=power, ks=K.indices, entries=entries)

    def norm_sq(self, basis, m: int, y: float) -> float:
        return self.norms(basis, m, y, power=1).norm ** 2

    def _check_x(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = self.x_support
        if np.any(x <= lo) or np.any(x >= hi):
            raise DomainViolation(
                f"{self.name}: x outside open support ({lo}, {hi})"
            )
        return x


# ---------------------------------------------------------------------------
# location families


class NormalLocation(Family):
    """Gaussian noise with known standard deviation around the latent mean."""

    name = "normal"
    growth_exponent = 2.0
    location_form = True
    location_shift = True
    x_support = (-np.inf, np.inf)
    theta_support = (-np.inf, np.inf)

    def __init__(self, sigma: float):
        if sigma <= 0:
            raise ConfigError("normal family needs sigma > 0")
        self.sigma = float(sigma)

    def density(self, x, theta):
        z = (np.asarray(x, dtype=float) - theta) / self.sigma
        return np.exp(-0.5 * z * z) / (self.sigma * sqrt(2.0 * np.pi))

    def noise_halfwidth(self):
        return 9.0 * self.sigma

    def noise_cdf(self, z):
        from scipy.special import ndtr

        return ndtr(np.asarray(z, dtype=float) / self.sigma)

    def noise_partial_mean(self, z):
        """int_{-inf}^z t q(t) dt for the centered noise density q."""
        z = np.asarray(z, dtype=float)
        return -self.sigma**2 * np.exp(-0.5 * (z / self.sigma) ** 2) / (
            self.sigma * sqrt(2.0 * np.pi)
        )

    def sample(self, thetas, rng):
        thetas = np.asarray(thetas, dtype=float)
        return thetas + self.sigma * rng.standard_normal(thetas.shape)

    def conditional_mean(self, theta):
        return theta

    def conditional_var(self, theta):
        return self.sigma**2 * np.ones_like(np.asarray(theta, dtype=float))

    def estimating_function(self, basis, m, k, x):
        # residual-equation solution: sigma^2 * d/dx of the dilated basis function
        return self.sigma**2 * basis.eval_dilated(m, k, x, order=1)

    def estimating_sums(self, basis, m, K, xs):
        return _window_sums(basis, m, K, xs, order=1) * self.sigma**2

    def norm_entries(self, basis, m, K, power, skip_divergent=False):
        val = _table_power_integral(basis, 1, 2 * power)
        per_k = (
            2.0 ** (m * (3 * power - 1)) * self.sigma ** (4 * power) * val
        ) ** 0.5
        return np.full(K.size, per_k)

    def u_window(self, basis, m, k):
        return (
            2.0**-m * (basis.support_lo + k),
            2.0**-m * (basis.support_hi + k),
        )

    def numerator_perturbation(self, kernel, h, y, x):
        x = np.asarray(x, dtype=float)
        z = (x - y) / h
        return x * kernel(z) + self.sigma**2 / h * kernel.deriv(z)

    def perturbation_orders(self, r):
        return (r + 1.0, 1.0)


class DoubleExponential(Family):
    """Two-sided exponential (Laplace) noise around the latent location.

    Unlike the Gaussian case, the direct estimating equation has a usable
    solution here: u is the identity-weighted basis function plus a smoothing
    convolution, and its norms stay bounded in the level, so the family is
    estimated directly rather than through the residual trick.
    """

    name = "double_exponential"
    growth_exponent = 0.0
    location_form = False
    location_shift = True
    x_support = (-np.inf, np.inf)
    theta_support = (-np.inf, np.inf)

    def __init__(self, sigma: float):
        if sigma <= 0:
            raise ConfigError("double_exponential family needs sigma > 0")
        self.sigma = float(sigma)
        self._conv_cache = {}

    def density(self, x, theta):
        z = np.abs(np.asarray(x, dtype=float) - theta) / self.sigma
        return np.exp(-z) / (2.0 * self.sigma)

    def noise_halfwidth(self):
        return 40.0 * self.sigma

    def noise_cdf(self, z):
        z = np.asarray(z, dtype=float) / self.sigma
        return np.where(z < 0, 0.5 * np.exp(z), 1.0 - 0.5 * np.exp(-z))

    def noise_partial_mean(self, z):
        z = np.asarray(z, dtype=float)
        s = self.sigma
        return np.where(
            z < 0,
            0.5 * (z - s) * np.exp(z / s),
            -0.5 * (z + s) * np.exp(-z / s),
        )

    def sample(self, thetas, rng):
        thetas = np.asarray(thetas, dtype=float)
        return thetas + rng.laplace(0.0, self.sigma, size=thetas.shape)

    def conditional_mean(self, theta):
        return theta

    def conditional_var(self, theta):
        return 2.0 * self.sigma**2 * np.ones_like(np.asarray(theta, dtype=float))

    # The convolution u = phi_{m,k} * rho with rho(v) = -sign(v) exp(-|v|/sigma)
    # reduces to a single profile in w = 2^m x - k:
    #   u(x) = 2^(-m/2) G_m(w),
    #   G_m(w) = -exp(-a w) P(w) + exp(a w) Q(w),   a = 2^-m / sigma,
    # with P, Q prefix integrals of phi against exp(+-a z).  The profile is
    # tabulated once per level on the basis grid; beyond the support the two
    # prefix integrals are constant and the tails are exact exponentials.
    def _profile(self, basis, m):
        key = (id(basis), m)
        hit = self._conv_cache.get(key)
        if hit is not None:
            return hit
        a = 2.0**-m / self.sigma
        if a * basis.width > 600.0:
            raise QuadratureFailure(
                "double-exponential profile would overflow: scale too small "
                f"for level {m}"
            )
        zg = basis.grid
        phi = basis.tables[0]
        step = basis.grid_step
        ea = np.exp(a * (zg - zg[0]))
        # P(w) e^{-aw} and Q(w) e^{+aw} computed with shifted exponents for stability
        f_plus = phi * ea  # phi(z) e^{a (z - z0)}
        P = np.zeros_like(phi)
        np.cumsum((f_plus[1:] + f_plus[:-1]) * (step / 2.0), out=P[1:])
        f_minus = phi / ea
        Qr = np.zeros_like(phi)
        np.cumsum(((f_minus[::-1])[1:] + (f_minus[::-1])[:-1]) * (step / 2.0), out=Qr[1:])
        Q = Qr[::-1]
        # G on the grid: -e^{-a(w - z0)} P + e^{a(w - z0)} Q  (shifts cancel)
        G = -P / ea + Q * ea
        amp_right = P[-1] / ea[-1]  # int phi(z) e^{a(z - z_hi)} dz
        amp_left = Q[0]  # int phi(z) e^{-a(z - z0)} dz
        prof = {"a": a, "G": G, "amp_right": amp_right, "amp_left": amp_left}
        self._conv_cache[key] = prof
        return prof

    def _profile_eval(self, basis, m, w):
        prof = self._profile(basis, m)
        w = np.asarray(w, dtype=float)
        a = prof["a"]
        lo, hi = basis.support_lo, basis.support_hi
        G = prof["G"]
        scaled = (w - lo) * 2.0**basis.tab_depth
        idx = np.clip(scaled.astype(np.int64), 0, G.size - 2)
        frac = np.clip(scaled - idx, 0.0, 1.0)
        mid = (1.0 - frac) * G[idx] + frac * G[idx + 1]
        right = -prof["amp_right"] * np.exp(-a * np.maximum(w - hi, 0.0))
        left = prof["amp_left"] * np.exp(-a * np.maximum(lo - w, 0.0))
        return np.where(w < lo, left, np.where(w > hi, right, mid))

    def estimating_function(self, basis, m, k, x):
        # u(x) = x phi_{m,k}(x) - 2^{-m/2} G_m(2^m x - k)
        x = np.asarray(x, dtype=float)
        w = np.ldexp(x, m) - k
        out = x * basis.eval_dilated(m, k, x) - 2.0 ** (-m / 2.0) * self._profile_eval(
            basis, m, w
        )
        return out if out.ndim else float(out)

    def estimating_sums(self, basis, m, K, xs):
        xs = np.asarray(xs, dtype=float)
        out = _window_sums(basis, m, K, xs, order=0, sample_weights=xs)
        z = np.ldexp(xs, m)
        for i, k in enumerate(K.indices):
            out[i] -= 2.0 ** (-m / 2.0) * self._profile_eval(basis, m, z - k).sum()
        return out

    def norm_entries(self, basis, m, K, power, skip_divergent=False):
        prof = self._profile(basis, m)
        a, G = prof["a"], prof["G"]
        phi = basis.tables[0]
        zg = basis.grid
        tails = (prof["amp_right"] ** (2 * power) + prof["amp_left"] ** (2 * power)) / (
            2 * power * a
        )
        entries = np.empty(K.size)
        for i, k in enumerate(K.indices):
            body_vals = ((zg + k) * phi - G) ** (2 * power)
            body = float(np.trapezoid(body_vals, dx=basis.grid_step))
            entries[i] = (2.0 ** (-m * (power + 1)) * (body + tails)) ** 0.5
        return entries

    def u_window(self, basis, m, k):
        pad = 40.0 * self.sigma
        return (
            2.0**-m * (basis.support_lo + k) - pad,
            2.0**-m * (basis.support_hi + k) + pad,
        )

    def numerator_perturbation(self, kernel, h, y, x):
        x = np.asarray(x, dtype=float)
        z = (x - y) / h

        def inner(tau):
            # tau on the last axis; broadcast against x
            u = x[..., None] - y - h * tau
            return kernel(tau) * np.sign(u) * np.exp(-np.abs(u) / self.sigma)

        # split at the kink tau = (x-y)/h when inside the kernel support
        val = np.zeros_like(x, dtype=float)
        flat = x.reshape(-1)
        res = np.empty_like(flat)
        for i, xi in enumerate(flat):
            zi = (xi - y) / h
            cuts = [-1.0, 1.0] if not (-1.0 < zi < 1.0) else [-1.0, zi, 1.0]
            acc = 0.0
            for aa, bb in zip(cuts[:-1], cuts[1:]):
                acc += quad_checked(
                    lambda t: float(kernel(t))
                    * np.sign(xi - y - h * t)
                    * np.exp(-abs(xi - y - h * t) / self.sigma),
                    aa,
                    bb,
                    abs_tol=1e-12,
                )
            res[i] = acc
        val = res.reshape(x.shape)
        out = x * kernel(z) - h * val
        return out if out.ndim else float(out)

    def perturbation_orders(self, r):
        return (float(r), 0.0)


# ---------------------------------------------------------------------------
# positive-domain families


class WeibullScale(Family):
    """Weibull conditional with known shape b; theta is the rate of x^b."""

    name = "weibull"
    growth_exponent = 2.0
    location_form = False
    theta_support = (0.0, np.inf)

    def __init__(self, b: float, c1: float = 0.1, c2: float = np.inf):
        if b < 1:
            raise ConfigError("weibull family needs shape b >= 1")
        if not 0 < c1 < c2:
            raise ConfigError("weibull family needs 0 < c1 < c2")
        self.b = float(b)
        self.c1, self.c2 = float(c1), float(c2)
        self.x_support = (0.0, np.inf)

    def density(self, x, theta):
        x = np.asarray(x, dtype=float)
        out = np.zeros(np.broadcast(x, theta).shape)
        pos = np.broadcast_to(x > 0, out.shape)
        xb = np.where(x > 0, x, 1.0) ** self.b
        vals = self.b * theta * np.where(x > 0, x, 1.0) ** (self.b - 1.0) * np.exp(-xb * theta)
        out[pos] = np.broadcast_to(vals, out.shape)[pos]
        return out

    def sample(self, thetas, rng):
        thetas = np.asarray(thetas, dtype=float)
        e = rng.exponential(1.0, size=thetas.shape)
        return (e / thetas) ** (1.0 / self.b)

    def conditional_mean(self, theta):
        return gamma_fn(1.0 + 1.0 / self.b) * np.asarray(theta, dtype=float) ** (-1.0 / self.b)

    def conditional_var(self, theta):
        th = np.asarray(theta, dtype=float)
        g1 = gamma_fn(1.0 + 1.0 / self.b)
        g2 = gamma_fn(1.0 + 2.0 / self.b)
        return th ** (-2.0 / self.b) * (g2 - g1**2)

    def estimating_function(self, basis, m, k, x):
        x = self._check_x(x)
        return basis.eval_dilated(m, k, x, order=1) / (self.b * x ** (self.b - 1.0))

    def estimating_sums(self, basis, m, K, xs):
        xs = np.asarray(xs, dtype=float)
        if np.any(xs <= 0):
            raise DomainViolation("weibull data must be positive")
        weights = 1.0 / (self.b * xs ** (self.b - 1.0))
        return _window_sums(basis, m, K, xs, order=1, sample_weights=weights)

    def norm_entries(self, basis, m, K, power, skip_divergent=False):
        # u^2p carries x^(-2p(b-1)); the integral against a straddling support
        # diverges exactly when that exponent reaches 1
        diverges = 2.0 * power * (self.b - 1.0) >= 1.0
        return _power_domain_norms(
            basis,
            m,
            K,
            power,
            deriv_weight=lambda x: 1.0 / (self.b * x ** (self.b - 1.0)),
            value_weight=None,
            diverges=diverges,
            skip_divergent=skip_divergent,
            family=self.name,
        )

    def u_window(self, basis, m, k):
        return (
            max(0.0, 2.0**-m * (basis.support_lo + k)),
            2.0**-m * (basis.support_hi + k),
        )

    def numerator_perturbation(self, kernel, h, y, x):
        x = self._check_x(x)
        z = (x - y) / h
        lead = (self.b - 1.0) / (self.b * x**self.b) * kernel(z)
        return lead - kernel.deriv(z) / (self.b * h * x ** (self.b - 1.0))

    def perturbation_orders(self, r):
        return (r + 1.0, 1.0)


class GammaShape(Family):
    """Gamma conditional with known shape beta; theta is the rate."""

    name = "gamma"
    growth_exponent = 2.0
    location_form = False
    theta_support = (0.0, np.inf)

    def __init__(self, beta: float, c1: float = 0.1, c2: float = np.inf):
        if beta < 1:
            raise ConfigError("gamma family needs shape beta >= 1")
        if not 0 < c1 < c2:
            raise ConfigError("gamma family needs 0 < c1 < c2")
        self.beta = float(beta)
        self.c1, self.c2 = float(c1), float(c2)
        self.x_support = (0.0, np.inf)

    def density(self, x, theta):
        x = np.asarray(x, dtype=float)
        out = np.zeros(np.broadcast(x, theta).shape)
        pos = np.broadcast_to(x > 0, out.shape)
        xs = np.where(x > 0, x, 1.0)
        vals = (
            theta**self.beta
            * xs ** (self.beta - 1.0)
            * np.exp(-xs * theta)
            / gamma_fn(self.beta)
        )
        out[pos] = np.broadcast_to(vals, out.shape)[pos]
        return out

    def sample(self, thetas, rng):
        thetas = np.asarray(thetas, dtype=float)
        return rng.gamma(self.beta, 1.0, size=thetas.shape) / thetas

    def conditional_mean(self, theta):
        return self.beta / np.asarray(theta, dtype=float)

    def conditional_var(self, theta):
        return self.beta / np.asarray(theta, dtype=float) ** 2

    def estimating_function(self, basis, m, k, x):
        x = self._check_x(x)
        return (self.beta - 1.0) / x * basis.eval_dilated(m, k, x) + basis.eval_dilated(
            m, k, x, order=1
        )

    def estimating_sums(self, basis, m, K, xs):
        xs = np.asarray(xs, dtype=float)
        if np.any(xs <= 0):
            raise DomainViolation("gamma data must be positive")
        part1 = _window_sums(basis, m, K, xs, order=0, sample_weights=(self.beta - 1.0) / xs)
        part2 = _window_sums(basis, m, K, xs, order=1)
        return part1 + part2

    def norm_entries(self, basis, m, K, power, skip_divergent=False):
        return _power_domain_norms(
            basis,
            m,
            K,
            power,
            deriv_weight=lambda x: np.ones_like(x),
            value_weight=lambda x: (self.beta - 1.0) / x,
            diverges=self.beta > 1.0,
            skip_divergent=skip_divergent,
            family=self.name,
        )

    def u_window(self, basis, m, k):
        return (
            max(0.0, 2.0**-m * (basis.support_lo + k)),
            2.0**-m * (basis.support_hi + k),
        )

    def numerator_perturbation(self, kernel, h, y, x):
        x = self._check_x(x)
        z = (x - y) / h
        return (self.beta - 1.0) / x * kernel(z) - kernel.deriv(z) / h

    def perturbation_orders(self, r):
        return (r + 1.0, 1.0)


class UniformScale(Family):
    """Uniform conditional on (0, theta) with theta in a known interval."""

    name = "uniform_scale"
    growth_exponent = 0.0
    location_form = False

    def __init__(self, theta_lo: float, theta_hi: float):
        if not 0 < theta_lo < theta_hi:
            raise ConfigError("uniform_scale family needs 0 < theta_lo < theta_hi")
        self.theta_lo, self.theta_hi = float(theta_lo), float(theta_hi)
        self.theta_support = (theta_lo, theta_hi)
        self.x_support = (0.0, theta_hi)

    def density(self, x, theta):
        x = np.asarray(x, dtype=float)
        inside = (x > 0) & (x < theta)
        return np.where(inside, 1.0 / np.asarray(theta, dtype=float), 0.0)

    def sample(self, thetas, rng):
        thetas = np.asarray(thetas, dtype=float)
        return thetas * rng.uniform(0.0, 1.0, size=thetas.shape)

    def conditional_mean(self, theta):
        return np.asarray(theta, dtype=float) / 2.0

    def conditional_var(self, theta):
        return np.asarray(theta, dtype=float) ** 2 / 12.0

    def estimating_function(self, basis, m, k, x):
        x = self._check_x(x)
        z = np.ldexp(x, m) - k
        anti = basis.antiderivative_table()
        lo_cut = max(basis.support_lo, float(-k))  # the integral starts at x = 0
        base = _interp_table(basis, anti, np.array([lo_cut]))[0]
        prefix = _interp_table(basis, anti, np.clip(z, basis.support_lo, basis.support_hi))
        prefix = np.where(z > basis.support_hi, anti[-1], prefix)
        ramp = np.where(z >= lo_cut, prefix - base, 0.0)
        out = 2.0 ** (-m / 2.0) * ramp + x * basis.eval_dilated(m, k, x)
        return out if out.ndim else float(out)

    def estimating_sums(self, basis, m, K, xs):
        xs = np.asarray(xs, dtype=float)
        if np.any(xs <= 0) or np.any(xs >= self.theta_hi):
            raise DomainViolation("uniform_scale data must lie in (0, theta_hi)")
        anti = basis.antiderivative_table()
        # local window part: x * phi_{m,k}(x) plus the in-support piece of the ramp
        k0, vals0 = local_window(basis, m, xs, order=0)
        offsets = np.arange(basis.width + 1)
        out = np.zeros(K.size)
        cols = k0[:, None] + offsets[None, :] - K.k_lo
        good = (cols >= 0) & (cols < K.size)
        contrib = xs[:, None] * vals0
        np.add.at(out, cols[good], contrib[good])
        # ramp part inside the support window
        z = np.ldexp(xs, m)
        arg = z[:, None] - (k0[:, None] + offsets[None, :])
        ks_win = k0[:, None] + offsets[None, :]
        lo_cut = np.maximum(basis.support_lo, -ks_win.astype(float))
        prefix = _interp_table(basis, anti, np.clip(arg, basis.support_lo, basis.support_hi))
        base = _interp_table(basis, anti, np.clip(lo_cut, basis.support_lo, basis.support_hi))
        ramp = np.where(arg >= lo_cut, prefix - base, 0.0) * 2.0 ** (-m / 2.0)
        np.add.at(out, cols[good], ramp[good])
        # constant tail: every sample with z > support_hi contributes the full ramp
        xs_sorted = np.sort(xs)
        ks = K.indices.astype(float)
        thresholds = 2.0**-m * (basis.support_hi + ks)
        counts = xs.size - np.searchsorted(xs_sorted, thresholds, side="right")
        lo_cuts = np.maximum(basis.support_lo, -ks)
        amps = 2.0 ** (-m / 2.0) * (
            anti[-1] - _interp_table(basis, anti, np.clip(lo_cuts, basis.support_lo, basis.support_hi))
        )
        out += counts * amps
        return out

    def norm_entries(self, basis, m, K, power, skip_divergent=False):
        anti = basis.antiderivative_table()
        zg = basis.grid
        phi = basis.tables[0]
        step = basis.grid_step
        entries = np.zeros(K.size)
        b_dom = self.theta_hi
        for i, k in enumerate(K.indices):
            lo_cut = max(basis.support_lo, float(-k))
            if lo_cut >= basis.support_hi:
                entries[i] = 0.0
                continue
            sel = zg >= lo_cut
            z = zg[sel]
            x = 2.0**-m * (z + k)
            upper = min(basis.support_hi, np.ldexp(b_dom, m) - k)
            insel = z <= upper
            base = _interp_table(basis, anti, np.array([lo_cut]))[0]
            u = 2.0 ** (-m / 2.0) * (anti[sel] - base) + x * 2.0 ** (m / 2.0) * phi[sel]
            vals = np.where(insel, u ** (2 * power), 0.0)
            body = float(np.trapezoid(vals, dx=step)) * 2.0**-m
            x_hi = 2.0**-m * (basis.support_hi + k)
            amp = 2.0 ** (-m / 2.0) * (anti[-1] - base)
            tail = amp ** (2 * power) * max(0.0, b_dom - max(x_hi, 0.0))
            entries[i] = (body + tail) ** 0.5
        return entries

    def u_window(self, basis, m, k):
        return (max(0.0, 2.0**-m * (basis.support_lo + k)), self.theta_hi)

    def numerator_perturbation(self, kernel, h, y, x):
        x = self._check_x(x)
        z = (x - y) / h
        return x * kernel(z) - h * kernel.antiderivative(z)

    def perturbation_orders(self, r):
        return (float(r), 0.0)


# ---------------------------------------------------------------------------
# shared machinery


def _interp_table(basis, table, arg):
    scaled = (np.asarray(arg, dtype=float) - basis.support_lo) * 2.0**basis.tab_depth
    idx = np.clip(scaled.astype(np.int64), 0, table.size - 2)
    frac = np.clip(scaled - idx, 0.0, 1.0)
    return (1.0 - frac) * table[idx] + frac * table[idx + 1]


def _window_sums(basis, m, K, xs, order, sample_weights=None):
    """Accumulate sum_l w_l * (dilated basis value) into the K window."""
    xs = np.asarray(xs, dtype=float)
    k0, vals = local_window(basis, m, xs, order=order)
    if sample_weights is not None:
        vals = vals * np.asarray(sample_weights, dtype=float)[:, None]
    offsets = np.arange(basis.width + 1)
    cols = k0[:, None] + offsets[None, :] - K.k_lo
    good = (cols >= 0) & (cols < K.size)
    out = np.zeros(K.size)
    np.add.at(out, cols[good], vals[good])
    return out


def _table_power_integral(basis, order, exponent):
    tab = basis.tables[order]
    return float(np.trapezoid(tab**exponent, dx=basis.grid_step))


def _power_domain_norms(basis, m, K, power, deriv_weight, value_weight, diverges,
                        skip_divergent, family):
    """Norm entries for positive-domain families with u built from the basis
    derivative (optionally plus a weighted basis value)."""
    zg = basis.grid
    phi, dphi = basis.tables[0], basis.tables[1]
    step = basis.grid_step
    lo, hi = basis.support_lo, basis.support_hi
    entries = np.zeros(K.size)
    for i, k in enumerate(K.indices):
        x_lo = 2.0**-m * (lo + k)
        x_hi = 2.0**-m * (hi + k)
        if x_hi <= 0.0:
            entries[i] = 0.0  # support entirely outside the domain: u vanishes
            continue
        if x_lo < 0.0 and diverges:
            if skip_divergent:
                entries[i] = 0.0
                continue
            raise DivergentIntegral(
                f"{family}: norm integral diverges for translate k={k} at level "
                f"{m} (basis support straddles x=0)"
            )
        x = 2.0**-m * (zg + k)
        keep = x > 0
        xk = np.where(keep, x, 1.0)
        u = 2.0 ** (1.5 * m) * dphi * deriv_weight(xk)
        if value_weight is not None:
            u = u + 2.0 ** (0.5 * m) * phi * value_weight(xk)
        vals = np.where(keep, u ** (2 * power), 0.0)
        entries[i] = (float(np.trapezoid(vals, dx=step)) * 2.0**-m) ** 0.5
    return entries


def sup_to_l2_ratio(family: Family, basis: ScalingBasis, m: int, k: int, grid_n: int = 4001):
    """Sup norm of u_{m,k} over a dense grid, scaled by 2^(m/2) times the
    norm-vector length at the translate's own location."""
    lo, hi = family.u_window(basis, m, k)
    lo = max(lo, family.x_support[0] + 1e-9) if np.isfinite(family.x_support[0]) else lo
    hi = min(hi, family.x_support[1] - 1e-9) if np.isfinite(family.x_support[1]) else hi
    xs = np.linspace(lo, hi, grid_n)
    sup = float(np.max(np.abs(family.estimating_function(basis, m, k, xs))))
    y_loc = 2.0**-m * (k + 0.5 * (basis.support_lo + basis.support_hi))
    norm = family.norms(basis, m, y_loc, skip_divergent=True).norm
    return sup / (2.0 ** (m / 2.0) * norm)


def estimating_equation_residual(family: Family, basis: ScalingBasis, m: int, k: int,
                                 theta_grid) -> float:
    """Master correctness oracle: quadrature of both sides of the estimating
    equation that defines u, maximized over the supplied thetas.

    Location families are checked against the residual form (the equation u
    actually solves); all other families against the direct form.  Both sides
    are integrated by trapezoid sums aligned with the basis tabulation, which
    is where the integrands' only non-smooth points sit; off-table tails use
    dense auxiliary grids.
    """
    zg = basis.grid
    step = basis.grid_step
    x_phi = 2.0**-m * (zg + k)  # support of the dilated basis function
    phi_d = 2.0 ** (m / 2.0) * basis.tables[0]
    dx = 2.0**-m * step
    max_resid = 0.0
    for theta in np.atleast_1d(np.asarray(theta_grid, dtype=float)):
        q_phi = np.asarray(family.density(x_phi, theta), dtype=float)
        if family.location_form:
            rhs = float(np.trapezoid((x_phi - theta) * q_phi * phi_d, dx=dx))
        elif isinstance(family, UniformScale) and x_phi[0] < theta < x_phi[-1]:
            # the density drops to zero at x = theta; splice that node in
            xs_r = np.concatenate((x_phi[x_phi < theta], [theta]))
            vals = xs_r * 0.0 + 1.0 / theta
            vals *= 2.0 ** (m / 2.0) * basis.eval(np.ldexp(xs_r, m) - k)
            vals[xs_r <= 0.0] = 0.0
            rhs = theta * float(np.trapezoid(vals, x=xs_r))
        else:
            rhs = theta * float(np.trapezoid(q_phi * phi_d, dx=dx))
        lhs = _lhs_integral(family, basis, m, k, theta, x_phi, q_phi, dx)
        max_resid = max(max_resid, abs(lhs - rhs))
    return max_resid


def _lhs_integral(family, basis, m, k, theta, x_phi, q_phi, dx):
    """int q(x|theta) u_{m,k}(x) dx by table-aligned quadrature."""
    if isinstance(family, NormalLocation):
        u = family.sigma**2 * 2.0 ** (1.5 * m) * basis.tables[1]
        return float(np.trapezoid(q_phi * u, dx=dx))
    if isinstance(family, DoubleExponential):
        core = float(
            np.trapezoid(
                q_phi * family.estimating_function(basis, m, k, x_phi), dx=dx
            )
        )
        # exponential tails of u outside the basis support
        pad = 45.0 * family.sigma
        total = core
        for lo, hi in ((x_phi[0] - pad, x_phi[0]), (x_phi[-1], x_phi[-1] + pad)):
            xs = np.linspace(lo, hi, 2**14 + 1)
            vals = np.asarray(family.density(xs, theta), dtype=float) * np.asarray(
                family.estimating_function(basis, m, k, xs), dtype=float
            )
            total += float(np.trapezoid(vals, x=xs))
        return total
    if isinstance(family, (WeibullScale, GammaShape)):
        pos = x_phi > 0
        if not np.any(pos):
            return 0.0
        u = np.zeros_like(x_phi)
        u[pos] = family.estimating_function(basis, m, k, x_phi[pos])
        return float(np.trapezoid(q_phi * u, dx=dx))
    if isinstance(family, UniformScale):
        # int_0^theta u / theta, with the constant ramp tail past the support;
        # nodes aligned with the tabulation so the kinks sit on grid points
        x_hi = x_phi[-1]
        upper = min(theta, x_hi)
        lower = max(x_phi[0], 0.0)
        acc = 0.0
        if upper > lower:
            keep = (x_phi >= lower) & (x_phi <= upper)
            xs = x_phi[keep]
            if xs.size == 0 or xs[0] > lower:
                xs = np.concatenate(([lower], xs))
            if xs[-1] < upper:
                xs = np.concatenate((xs, [upper]))
            acc += float(
                np.trapezoid(family.estimating_function(basis, m, k, xs), x=xs)
            )
        if theta > x_hi:
            anti = basis.antiderivative_table()
            lo_cut = max(basis.support_lo, float(-k))
            base = _interp_table(basis, anti, np.array([lo_cut]))[0]
            amp = 2.0 ** (-m / 2.0) * (anti[-1] - base)
            acc += amp * (theta - x_hi)
        return acc / theta
    raise ConfigError(f"no quadrature route for family {family.name}")


def family_from_config(cfg: dict) -> Family:
    if "family" not in cfg:
        raise ConfigError("family config needs a 'family' key")
    kind = cfg["family"]
    try:
        if kind == "normal":
            return NormalLocation(sigma=float(cfg["sigma"]))
        if kind == "double_exponential":
            return DoubleExponential(sigma=float(cfg["sigma"]))
        if kind == "weibull":
            return WeibullScale(
                b=float(cfg["b"]),
                c1=float(cfg.get("c1", 0.1)),
                c2=float(cfg.get("c2", np.inf)),
            )
        if kind == "gamma":
            return GammaShape(
                beta=float(cfg["beta"]),
                c1=float(cfg.get("c1", 0.1)),
                c2=float(cfg.get("c2", np.inf)),
            )
        if kind == "uniform_scale":
            return UniformScale(
                theta_lo=float(cfg["theta_lo"]), theta_hi=float(cfg["theta_hi"])
            )
    except KeyError as exc:
        raise ConfigError(f"family {kind!r} is missing parameter {exc}") from None
    raise ConfigError(f"unknown family kind {kind!r}")
