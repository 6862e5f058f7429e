"""Two-hypothesis lower-bound construction and its numerical diagnostics.

The construction perturbs a base mixture density by a scaled compactly
supported zero-mean bump around the evaluation point, perturbs the numerator
by the family's closed-form response, and tracks three quantities as the
sample size grows: the divergence between the n-fold product measures (which
must stay bounded), the gap between the two posterior-mean values (whose
square carries the rate), and the amplitude rule tying the bump height to
the bandwidth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Polynomial

from .errors import EbwaveError, NegativeDensity, UnsupportedFamily, VanishingMarginal
from .families import Family, GammaShape, NormalLocation, UniformScale, WeibullScale
from .oracle import PosteriorSpec, Prior
from .quadrature import quad_checked


class BumpKernel:
    """Polynomial bump supported on (-1, 1) with zero integral and unit sup norm.

    The odd shape c * z * (1 - z^2)^q vanishes at the origin, which keeps the
    perturbed marginal untouched at the evaluation point; the even shape
    c * (1 - (2q+3) z^2) * (1 - z^2)^q has the zero integral built into its
    coefficients and a nonzero center value, which some families need for a
    nondegenerate two-point gap.  Both have q - 1 continuous derivatives at
    the support edges.
    """

    def __init__(self, smoothness: int, shape: str = "odd"):
        if smoothness < 1:
            raise ValueError("kernel smoothness must be >= 1")
        self.q = int(smoothness)
        self.shape = shape
        base = Polynomial([1.0, 0.0, -1.0]) ** self.q
        if shape == "odd":
            poly = Polynomial([0.0, 1.0]) * base
            # |z (1-z^2)^q| peaks at z = 1/sqrt(2q+1)
            z_star = 1.0 / np.sqrt(2.0 * self.q + 1.0)
            scale = abs(z_star * (1.0 - z_star**2) ** self.q)
        elif shape == "even":
            poly = Polynomial([1.0, 0.0, -(2.0 * self.q + 3.0)]) * base
            # the center value dominates the interior extrema for every q >= 1
            scale = abs(float(poly(0.0)))
        else:
            raise ValueError(f"unknown kernel shape {shape!r}")
        self._poly = poly / scale
        self._dpoly = self._poly.deriv()
        anti = self._poly.integ()
        self._anti = anti - anti(-1.0)
        self.amplitude = float(self._poly.coef[1] if shape == "odd" else self._poly.coef[0])

    @property
    def sup_norm(self) -> float:
        return 1.0

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        inside = np.abs(z) < 1.0
        out = np.where(inside, self._poly(np.clip(z, -1.0, 1.0)), 0.0)
        return out if out.ndim else float(out)

    def deriv(self, z, order: int = 1):
        z = np.asarray(z, dtype=float)
        p = self._poly
        for _ in range(order):
            p = p.deriv()
        inside = np.abs(z) < 1.0
        out = np.where(inside, p(np.clip(z, -1.0, 1.0)), 0.0)
        return out if out.ndim else float(out)

    def antiderivative(self, z):
        """Running integral from the left support edge; zero beyond either edge
        because the kernel integrates to zero."""
        z = np.asarray(z, dtype=float)
        out = np.where(np.abs(z) < 1.0, self._anti(np.clip(z, -1.0, 1.0)), 0.0)
        return out if out.ndim else float(out)

    def integral(self) -> float:
        return float(self._anti(1.0))

    def edge_derivatives(self, max_order: int = None) -> np.ndarray:
        """Derivative values at the support edges; zero through order q - 1."""
        max_order = self.q if max_order is None else max_order
        vals = []
        p = self._poly
        for _ in range(max_order):
            vals.append([float(p(-1.0)), float(p(1.0))])
            p = p.deriv()
        return np.array(vals)


def numerator_perturbation(family: Family, kernel: BumpKernel, h: float, y: float, x):
    """Family closed form for the numerator response to the density bump."""
    if not isinstance(family, (NormalLocation, WeibullScale, GammaShape, UniformScale)) \
            and not hasattr(family, "numerator_perturbation"):
        raise UnsupportedFamily(f"no closed form shipped for {family!r}")
    try:
        return family.numerator_perturbation(kernel, h, y, x)
    except AttributeError as exc:
        raise UnsupportedFamily(str(exc)) from None


@dataclass
class PerturbationPair:
    """Base and perturbed (marginal, numerator) pair at bandwidth h."""

    spec: PosteriorSpec
    kernel: BumpKernel
    h: float
    y: float
    r: float
    r1: float
    r2: float
    zeta0: float
    zeta: float
    _p0_cache: dict = None

    def p0(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.array([self._p0_scalar(float(v)) for v in x])
        return out if out.size > 1 else float(out[0])

    def _p0_scalar(self, x):
        if self._p0_cache is None:
            self._p0_cache = {}
        if x not in self._p0_cache:
            self._p0_cache[x] = self.spec.marginal(x)
        return self._p0_cache[x]

    def psi0(self, x):
        return self.spec.numerator(float(x))

    def p1(self, x):
        x = np.asarray(x, dtype=float)
        return self.p0(x) + self.zeta * self.kernel((x - self.y) / self.h)

    def psi1(self, x):
        return self.psi0(x) + self.zeta * numerator_perturbation(
            self.spec.family, self.kernel, self.h, self.y, x
        )


def make_pair(spec: PosteriorSpec, kernel: BumpKernel, h: float, y: float, r: float,
              zeta0: float = None, grid_n: int = 801) -> PerturbationPair:
    """Assemble a perturbation pair, enforcing the margin and positivity checks.

    The amplitude scale defaults to just under half the minimum of the base
    density over the bump window, the largest value passing the margin
    condition; the bump height is that scale times h^max(r, r1).
    """
    family = spec.family
    r1, r2 = family.perturbation_orders(r)
    xs = np.linspace(y - h, y + h, grid_n)
    lo, hi = family.x_support
    xs = xs[(xs > lo) & (xs < hi)]
    p_vals = spec.marginal_grid(xs)
    p_min = float(p_vals.min())
    if p_min <= 0.0:
        raise NegativeDensity("base density vanishes inside the bump window")
    cp = 0.999 * p_min / (2.0 * kernel.sup_norm)
    if zeta0 is None:
        zeta0 = cp
    # margin condition: p0 > 2 cp ||k||_inf on the window
    if not np.all(p_vals > 2.0 * cp * kernel.sup_norm - 1e-15):
        raise NegativeDensity("margin condition fails on the bump window")
    zeta = zeta0 * h ** max(r, r1)
    p1_vals = p_vals + zeta * kernel((xs - y) / h)
    if np.any(p1_vals < 0.0):
        raise NegativeDensity(
            f"perturbed density goes negative (zeta={zeta}, h={h})"
        )
    return PerturbationPair(
        spec=spec, kernel=kernel, h=h, y=y, r=r,
        r1=r1, r2=r2, zeta0=zeta0, zeta=zeta,
    )


def kl_bound(pair: PerturbationPair, n: int):
    """Exact divergence between the n-fold joint laws and its closed bound.

    Returns (exact, bound); the exact value can never exceed the bound when
    the perturbed density is nonnegative.
    """
    h, y, zeta = pair.h, pair.y, pair.zeta
    lo, hi = pair.spec.family.x_support
    a, b = max(y - h, lo + 1e-12), min(y + h, hi - 1e-12 if np.isfinite(hi) else y + h)
    xs = np.linspace(a, b, 4001)
    p0 = pair.spec.marginal_grid(xs)
    if np.any(p0 <= 0):
        raise NegativeDensity("base density vanishes on the bump window")
    bump = pair.kernel((xs - y) / h)
    p1 = p0 + zeta * bump
    if np.any(p1 < 0):
        raise NegativeDensity("perturbed density negative on the bump window")
    ratio = np.where(p1 > 0, p1 / p0, 1.0)
    integrand = np.where(p1 > 0, np.log(ratio) * p1, 0.0) - (p1 - p0)
    # subtracting (p1 - p0) (total integral zero) symmetrizes rounding
    exact = n * float(np.trapezoid(integrand, x=xs))
    bound = n * zeta**2 * float(np.trapezoid(bump**2 / p0, x=xs))
    if exact > bound * (1.0 + 1e-9) + 1e-12:
        raise EbwaveError(
            f"divergence {exact} exceeded its bound {bound}; quadrature fault"
        )
    return exact, bound


def two_point_gap(pair: PerturbationPair) -> float:
    """Exact gap between the perturbed and base posterior means at y."""
    y = pair.y
    p0 = pair.p0(y)
    k0 = float(pair.kernel(0.0))
    p1 = p0 + pair.zeta * k0
    if p0 <= 1e-12 or p1 <= 1e-12:
        raise VanishingMarginal("marginal density vanishes at the test point")
    psi0 = pair.psi0(y)
    w_y = float(
        numerator_perturbation(pair.spec.family, pair.kernel, pair.h, y, np.array([y]))[0]
    )
    psi1 = psi0 + pair.zeta * w_y
    return abs(psi1 / p1 - psi0 / p0)


def derivative_scale(family: Family, kernel: BumpKernel, h: float, y: float,
                     r: int, step_factor: float = 1e-3) -> float:
    """Reciprocal of the largest low-order derivative of the numerator
    response at the evaluation point (central finite differences)."""
    if r < 1 or r > 4:
        raise ValueError("derivative order must be in 1..4")
    d = step_factor * h
    xs = y + d * np.arange(-3, 4)
    w = np.array([
        float(numerator_perturbation(family, kernel, h, y, np.array([x]))[0])
        for x in xs
    ])
    derivs = []
    derivs.append((w[4] - w[2]) / (2 * d))
    if r >= 2:
        derivs.append((w[4] - 2 * w[3] + w[2]) / d**2)
    if r >= 3:
        derivs.append((w[5] - 2 * w[4] + 2 * w[2] - w[1]) / (2 * d**3))
    if r >= 4:
        derivs.append((w[5] - 4 * w[4] + 6 * w[3] - 4 * w[2] + w[1]) / d**4)
    return 1.0 / max(abs(v) for v in derivs[:r])


@dataclass(frozen=True)
class RateTraceRow:
    n: int
    h: float
    zeta: float
    kl_exact: float
    kl_bound: float
    gap: float
    gap_sq: float


@dataclass(frozen=True)
class RateTrace:
    rows: tuple
    exponent: float
    kl_band_ratio: float
    r: float
    r1: float
    r2: float


def rate_trace(family: Family, prior: Prior, r: float, n_grid, y: float,
               kernel: BumpKernel = None, h0: float = 1.0) -> RateTrace:
    """Run the construction across sample sizes with the rate-optimal
    bandwidth schedule and fit the decay exponent of the squared gap."""
    spec = PosteriorSpec(family, prior)
    r1, r2 = family.perturbation_orders(r)
    rmax = max(r, r1)
    if kernel is None:
        shape = "even" if isinstance(family, UniformScale) else "odd"
        kernel = BumpKernel(smoothness=int(np.ceil(r)) + 1, shape=shape)
    n_grid = sorted(int(n) for n in n_grid)
    h_coarse = h0 * n_grid[0] ** (-1.0 / (2.0 * rmax + 1.0))
    pair0 = make_pair(spec, kernel, h_coarse, y, r)
    zeta0 = pair0.zeta0
    rows = []
    for n in n_grid:
        h = h0 * n ** (-1.0 / (2.0 * rmax + 1.0))
        pair = make_pair(spec, kernel, h, y, r, zeta0=zeta0)
        exact, bound = kl_bound(pair, n)
        gap = two_point_gap(pair)
        rows.append(
            RateTraceRow(
                n=n, h=h, zeta=pair.zeta, kl_exact=exact, kl_bound=bound,
                gap=gap, gap_sq=gap**2,
            )
        )
    ln_n = np.log([row.n for row in rows])
    ln_g = np.log([row.gap_sq for row in rows])
    A = np.vstack([ln_n, np.ones_like(ln_n)]).T
    exponent = float(np.linalg.lstsq(A, ln_g, rcond=None)[0][0])
    bounds_arr = np.array([row.kl_bound for row in rows])
    return RateTrace(
        rows=tuple(rows),
        exponent=exponent,
        kl_band_ratio=float(bounds_arr.max() / bounds_arr.min()),
        r=float(r), r1=float(r1), r2=float(r2),
    )
