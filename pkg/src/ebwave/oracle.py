"""Ground-truth quantities available in simulation mode, where the prior is known.

With the prior in hand we can compute the mixture density of an observation,
the mean-weighted numerator, and the posterior-mean predictor that the
empirical estimator is judged against.  Everything is quadrature-based with
closed-form cross-checks for the conjugate pairs.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.interpolate import CubicSpline

from .errors import ConfigError, OracleMismatch, VanishingMarginal
from .quadrature import panel_quad_vec, quad_checked

_TAIL_MASS = 1e-12


class Prior(ABC):
    """Prior distribution of the latent parameter."""

    name: str

    @abstractmethod
    def density(self, theta):
        ...

    @abstractmethod
    def sample(self, n, rng):
        ...

    @abstractmethod
    def support(self):
        """Interval carrying all but ~1e-12 of the mass."""

    @abstractmethod
    def mean(self):
        ...

    @abstractmethod
    def var(self):
        ...


@dataclass(frozen=True)
class NormalPrior(Prior):
    mu0: float
    sigma0: float
    name = "normal"

    def density(self, theta):
        theta = np.asarray(theta, dtype=float)
        z = (theta - self.mu0) / self.sigma0
        return np.exp(-0.5 * z * z) / (self.sigma0 * np.sqrt(2.0 * np.pi))

    def sample(self, n, rng):
        return self.mu0 + self.sigma0 * rng.standard_normal(n)

    def support(self):
        half = 7.5 * self.sigma0
        return (self.mu0 - half, self.mu0 + half)

    def mean(self):
        return self.mu0

    def var(self):
        return self.sigma0**2


@dataclass(frozen=True)
class GammaPrior(Prior):
    a: float
    rate: float
    name = "gamma"

    def density(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = np.zeros_like(theta)
        pos = theta > 0
        out[pos] = stats.gamma.pdf(theta[pos], self.a, scale=1.0 / self.rate)
        return out

    def sample(self, n, rng):
        return rng.gamma(self.a, 1.0 / self.rate, size=n)

    def support(self):
        lo = stats.gamma.ppf(_TAIL_MASS, self.a, scale=1.0 / self.rate)
        hi = stats.gamma.isf(_TAIL_MASS, self.a, scale=1.0 / self.rate)
        return (float(lo), float(hi))

    def mean(self):
        return self.a / self.rate

    def var(self):
        return self.a / self.rate**2


@dataclass(frozen=True)
class PointMassPrior(Prior):
    theta0: float
    name = "point"

    def density(self, theta):
        raise ConfigError("point-mass prior has no density; handled specially")

    def sample(self, n, rng):
        return np.full(n, self.theta0)

    def support(self):
        return (self.theta0, self.theta0)

    def mean(self):
        return self.theta0

    def var(self):
        return 0.0


@dataclass(frozen=True)
class UniformPrior(Prior):
    lo: float
    hi: float
    name = "uniform"

    def density(self, theta):
        theta = np.asarray(theta, dtype=float)
        inside = (theta >= self.lo) & (theta <= self.hi)
        return np.where(inside, 1.0 / (self.hi - self.lo), 0.0)

    def sample(self, n, rng):
        return rng.uniform(self.lo, self.hi, size=n)

    def support(self):
        return (self.lo, self.hi)

    def mean(self):
        return 0.5 * (self.lo + self.hi)

    def var(self):
        return (self.hi - self.lo) ** 2 / 12.0


def prior_from_config(cfg: dict) -> Prior:
    if "prior" not in cfg:
        raise ConfigError("prior config needs a 'prior' key")
    kind = cfg["prior"]
    try:
        if kind == "normal":
            return NormalPrior(mu0=float(cfg["mu0"]), sigma0=float(cfg["sigma0"]))
        if kind == "gamma":
            return GammaPrior(a=float(cfg["a"]), rate=float(cfg["rate"]))
        if kind == "point":
            return PointMassPrior(theta0=float(cfg["theta0"]))
        if kind == "uniform":
            return UniformPrior(lo=float(cfg["lo"]), hi=float(cfg["hi"]))
    except KeyError as exc:
        raise ConfigError(f"prior {kind!r} is missing parameter {exc}") from None
    raise ConfigError(f"unknown prior kind {kind!r}")


class PosteriorSpec:
    """A (conditional family, prior) pair with its derived population quantities."""

    def __init__(self, family, prior: Prior):
        lo, hi = prior.support()
        flo, fhi = family.theta_support
        if lo < flo - 1e-12 or hi > fhi + 1e-12:
            raise ConfigError(
                f"prior support [{lo}, {hi}] is not contained in the family "
                f"theta-domain [{flo}, {fhi}]"
            )
        self.family = family
        self.prior = prior

    # -- scalar quadrature ------------------------------------------------

    def marginal(self, x: float) -> float:
        """Mixture density of an observation at x (quadrature over theta)."""
        if isinstance(self.prior, PointMassPrior):
            return float(self.family.density(x, self.prior.theta0))
        if self._survival_form():
            lo, hi = self.prior.support()
            a = max(float(x), lo)
            if x <= 0.0 or a >= hi:
                return 0.0
            return quad_checked(
                lambda th: float(self.prior.density(th)) / th, a, hi, abs_tol=1e-12
            )
        lo, hi = self.prior.support()
        f = lambda th: float(self.family.density(x, th)) * float(self.prior.density(th))
        return quad_checked(f, lo, hi, abs_tol=1e-10, points=self._theta_points(x))

    def numerator(self, x: float) -> float:
        """Mean-weighted mixture integral at x (quadrature over theta)."""
        if isinstance(self.prior, PointMassPrior):
            th0 = self.prior.theta0
            return th0 * float(self.family.density(x, th0))
        if self._survival_form():
            lo, hi = self.prior.support()
            a = max(float(x), lo)
            if x <= 0.0 or a >= hi:
                return 0.0
            return quad_checked(
                lambda th: float(self.prior.density(th)), a, hi, abs_tol=1e-12
            )
        lo, hi = self.prior.support()
        f = lambda th: th * float(self.family.density(x, th)) * float(self.prior.density(th))
        return quad_checked(f, lo, hi, abs_tol=1e-10, points=self._theta_points(x))

    def _survival_form(self) -> bool:
        """Uniform-scale mixtures reduce to prior tail integrals: the density
        jump in theta would otherwise defeat generic quadrature."""
        from . import families as fam

        return isinstance(self.family, fam.UniformScale)

    def posterior_mean(self, y: float) -> float:
        """Posterior-mean predictor at y; the risk target of the estimator.

        For conjugate pairs the closed form is computed as well and the two
        must agree to 1e-8.
        """
        p = self.marginal(y)
        if p <= 1e-12:
            raise VanishingMarginal(f"marginal density at y={y} is {p}")
        t = self.numerator(y) / p
        closed = self.posterior_mean_closed(y)
        if closed is not None and abs(t - closed) > 1e-8:
            raise OracleMismatch(
                f"quadrature posterior mean {t} vs closed form {closed} at y={y}"
            )
        return t

    def posterior_mean_closed(self, y: float):
        """Closed-form posterior mean for conjugate pairs, else None."""
        from . import families as fam

        f, g = self.family, self.prior
        if isinstance(g, PointMassPrior):
            return g.theta0
        if isinstance(f, fam.NormalLocation) and isinstance(g, NormalPrior):
            s0, s = g.sigma0**2, f.sigma**2
            return (s0 * y + s * g.mu0) / (s0 + s)
        if isinstance(f, fam.WeibullScale) and isinstance(g, GammaPrior):
            return (g.a + 1.0) / (g.rate + y**f.b)
        if isinstance(f, fam.GammaShape) and isinstance(g, GammaPrior):
            return (g.a + f.beta) / (g.rate + y)
        return None

    def _theta_points(self, x):
        # Location likelihoods concentrate near theta = x; hint the splitter.
        if getattr(self.family, "location_form", False):
            return [x]
        return None

    # -- vectorized grid evaluation ---------------------------------------

    def marginal_grid(self, xs) -> np.ndarray:
        """Mixture density on an array of points.

        Smooth mixtures integrate over theta by panel quadrature; shift
        families convolve over the centered noise variable (fixed kink at
        zero); uniform-scale mixtures reduce to prior tail integrals.
        """
        return self._grid_eval(xs, weighted=False)

    def numerator_grid(self, xs) -> np.ndarray:
        return self._grid_eval(xs, weighted=True)

    def _grid_eval(self, xs, weighted: bool) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        fam_ = self.family
        g = self.prior
        if isinstance(g, PointMassPrior):
            q = np.asarray(fam_.density(xs, g.theta0), dtype=float)
            return g.theta0 * q if weighted else q
        if self._survival_form():
            return self._survival_grid(xs, weighted)
        if fam_.location_shift and isinstance(g, UniformPrior):
            # box prior: closed form through the noise distribution function
            width = g.hi - g.lo
            mass = fam_.noise_cdf(xs - g.lo) - fam_.noise_cdf(xs - g.hi)
            if not weighted:
                return mass / width
            part = fam_.noise_partial_mean(xs - g.lo) - fam_.noise_partial_mean(xs - g.hi)
            return (xs * mass - part) / width
        if fam_.location_shift:
            half = fam_.noise_halfwidth()

            def conv(zs):
                q = np.asarray(fam_.density(zs[None, :], 0.0), dtype=float)
                gv = self.prior.density(xs[:, None] - zs[None, :])
                w = (xs[:, None] - zs[None, :]) if weighted else 1.0
                return q * gv * w

            left = panel_quad_vec(conv, -half, 0.0, abs_tol=1e-12, rel_tol=1e-10)
            right = panel_quad_vec(conv, 0.0, half, abs_tol=1e-12, rel_tol=1e-10)
            return left + right
        lo, hi = g.support()

        def direct(th):
            dens = self.family.density(xs[:, None], th[None, :])
            w = th[None, :] if weighted else 1.0
            return dens * self.prior.density(th)[None, :] * w

        return panel_quad_vec(direct, lo, hi, abs_tol=1e-11, rel_tol=1e-10)

    def _survival_grid(self, xs, weighted: bool) -> np.ndarray:
        lo, hi = self.prior.support()
        ths = np.linspace(lo, hi, 2**16 + 1)
        g = self.prior.density(ths)
        integrand = g if weighted else g / ths
        # tail integral from theta down to hi, tabulated once
        rev = np.zeros_like(ths)
        seg = (integrand[1:] + integrand[:-1]) * (ths[1] - ths[0]) / 2.0
        rev[:-1] = np.cumsum(seg[::-1])[::-1]
        cut = np.clip(xs, lo, hi)
        vals = np.interp(cut, ths, rev)
        return np.where((xs > 0.0) & (xs < hi), vals, 0.0)

    # -- estimation-target views ------------------------------------------

    def target(self, y: float) -> float:
        """The function the wavelet expansion approximates, evaluated at y.

        Location families expand the residual predictor y - t(y); all other
        families expand t(y) directly.
        """
        t = self.posterior_mean(y)
        return y - t if self.family.location_form else t

    def target_numerator_grid(self, xs) -> np.ndarray:
        """Numerator of the expansion target: the projection coefficients of
        the target are integrals of the basis against this function."""
        xs = np.asarray(xs, dtype=float)
        psi = self.numerator_grid(xs)
        if self.family.location_form:
            return xs * self.marginal_grid(xs) - psi
        return psi

    def finalize(self, y: float, expansion_value: float) -> float:
        """Map an expansion value back to a predictor of the latent parameter."""
        return y - expansion_value if self.family.location_form else expansion_value


def spline_on_grid(f_grid, lo, hi, n=20001):
    """Evaluate f_grid once on a uniform grid and return a cubic interpolant."""
    xs = np.linspace(lo, hi, n)
    return CubicSpline(xs, f_grid(xs))
