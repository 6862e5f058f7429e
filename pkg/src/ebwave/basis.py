"""Compactly supported scaling functions tabulated on a dyadic grid.

The estimator expands its target over integer translates of a dilated scaling
function ``phi``.  ``phi`` is pinned down by a finite refinement filter: its
values at the integers form the fixed vector of the filter's transition
matrix, and values on a dyadic grid follow by applying the refinement relation
level by level.  First and second derivatives are tabulated the same way from
the differentiated refinement relation, whose fixed vectors sit at transition
eigenvalues 1/2 and 1/4.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from math import comb, factorial, sqrt

import numpy as np

from .errors import InsufficientRegularity, NonConvergentCascade, UnknownWavelet

# Approximate Holder smoothness of the Daubechies scaling function, keyed by
# number of vanishing moments.  An order-d derivative table needs smoothness > d.
_HOLDER = {
    2: 0.550,
    3: 1.088,
    4: 1.618,
    5: 1.969,
    6: 2.189,
    7: 2.460,
    8: 2.761,
    9: 3.074,
    10: 3.367,
}

_MAGIC = b"EBWBAS01"


def daubechies_filter(moments: int) -> np.ndarray:
    """Orthonormal Daubechies refinement filter with the given vanishing moments.

    Extremal-phase construction by spectral factorization: of each root pair of
    the half-band polynomial, the one inside the unit circle is kept.  The
    returned filter has length ``2 * moments`` and sums to sqrt(2).
    """
    p = moments
    if p < 2 or p > 10:
        raise UnknownWavelet(f"daubechies filter with {p} vanishing moments not supported")
    coeffs = [comb(p - 1 + k, k) for k in range(p)]
    yroots = np.roots(list(reversed(coeffs))) if p > 1 else []
    zroots = []
    for y0 in yroots:
        # y = (2 - z - 1/z)/4  =>  z^2 + (4y - 2) z + 1 = 0
        b = 4.0 * y0 - 2.0
        disc = np.sqrt(b * b - 4.0 + 0j)
        for z in ((-b + disc) / 2.0, (-b - disc) / 2.0):
            if abs(z) < 1.0:
                zroots.append(z)
    poly = np.array([1.0 + 0j])
    for _ in range(p):
        poly = np.convolve(poly, [0.5, 0.5])
    for z0 in zroots:
        poly = np.convolve(poly, [-z0, 1.0])
    h = poly.real[::-1].copy()  # classic ordering: largest taps first
    h *= sqrt(2.0) / h.sum()
    return h


@dataclass(frozen=True, eq=False)
class ScalingBasis:
    """Tabulated scaling function with two derivatives on [support_lo, support_hi]."""

    name: str
    filter: np.ndarray
    support_lo: int
    support_hi: int
    vanishing_moments: int
    tab_depth: int
    tables: tuple  # (phi, dphi, ddphi) sampled at support_lo + j * 2**-tab_depth
    moments: np.ndarray  # integral moments of phi from the filter recursion

    @property
    def width(self) -> int:
        return self.support_hi - self.support_lo

    @property
    def grid(self) -> np.ndarray:
        n = self.width * 2**self.tab_depth + 1
        return self.support_lo + np.arange(n) / 2.0**self.tab_depth

    @property
    def grid_step(self) -> float:
        return 2.0**-self.tab_depth

    def eval(self, x, order: int = 0):
        """phi (or its order-th derivative) at x; exactly 0 outside the support.

        Linear interpolation between the two nearest tabulated values.
        """
        x = np.asarray(x, dtype=float)
        tab = self.tables[order]
        scaled = (x - self.support_lo) * 2.0**self.tab_depth
        inside = (scaled >= 0.0) & (scaled <= tab.size - 1)
        idx = np.clip(scaled.astype(np.int64), 0, tab.size - 2)
        frac = np.clip(scaled - idx, 0.0, 1.0)
        vals = np.where(inside, (1.0 - frac) * tab[idx] + frac * tab[idx + 1], 0.0)
        return vals if vals.ndim else float(vals)

    def eval_dilated(self, m: int, k, x, order: int = 0):
        """2^(m/2) * 2^(m*order) * phi^(order)(2^m x - k)."""
        k = np.asarray(k)
        x = np.asarray(x, dtype=float)
        arg = np.ldexp(x, m) - k
        return 2.0 ** (m / 2.0 + m * order) * self.eval(arg, order)

    def antiderivative_table(self) -> np.ndarray:
        """Cumulative integral of phi from support_lo along the grid (trapezoid)."""
        tab = self.tables[0]
        out = np.zeros_like(tab)
        np.cumsum((tab[1:] + tab[:-1]) * (self.grid_step / 2.0), out=out[1:])
        return out

    def table_integral(self, values: np.ndarray) -> float:
        """Trapezoid integral of grid-sampled values over the support."""
        return float(np.trapezoid(values, dx=self.grid_step))


def _transition_matrix(h: np.ndarray) -> np.ndarray:
    L = h.size - 1
    T = np.zeros((L + 1, L + 1))
    for j in range(L + 1):
        for i in range(L + 1):
            if 0 <= 2 * j - i <= L:
                T[j, i] = sqrt(2.0) * h[2 * j - i]
    return T


def _fixed_vector(T: np.ndarray, eigenvalue: float) -> np.ndarray:
    """Eigenvector of the interior transition matrix at the given eigenvalue."""
    Ti = T[1:-1, 1:-1]
    w, v = np.linalg.eig(Ti)
    close = np.abs(w - eigenvalue) < 1e-6
    if close.sum() != 1:
        raise NonConvergentCascade(
            f"eigenvalue {eigenvalue} has multiplicity {int(close.sum())} in the transition matrix"
        )
    vec = v[:, close].ravel().real
    full = np.zeros(Ti.shape[0] + 2)
    full[1:-1] = vec
    return full


def _refine_once(old: np.ndarray, h: np.ndarray, order: int, depth: int) -> np.ndarray:
    """Values at dyadic depth `depth` from depth `depth`-1 via the refinement relation."""
    L = h.size - 1
    factor = sqrt(2.0) * 2.0**order
    new = np.zeros(2 * (old.size - 1) + 1)
    new[0::2] = old
    odd = np.arange(1, new.size, 2)
    per_k = 2 ** (depth - 1)  # old-grid indices per unit shift
    acc = np.zeros(odd.size)
    for k in range(L + 1):
        src = odd - k * per_k
        valid = (src >= 0) & (src < old.size)
        vals = np.zeros(odd.size)
        vals[valid] = old[src[valid]]
        acc += h[k] * vals
    new[odd] = factor * acc
    return new


def _exact_moments(h: np.ndarray, max_order: int) -> np.ndarray:
    """Integral moments mu_n = int x^n phi(x) dx from the filter recursion.

    The refinement relation closes each moment over the lower ones, so the
    values are exact up to rounding; no quadrature is involved.
    """
    L = h.size - 1
    ks = np.arange(L + 1, dtype=float)
    Hj = np.array([(h * ks**j).sum() for j in range(max_order + 1)])
    mu = np.zeros(max_order + 1)
    mu[0] = 1.0
    for n in range(1, max_order + 1):
        acc = sum(comb(n, i) * Hj[n - i] * mu[i] for i in range(n))
        mu[n] = sqrt(2.0) * acc / (2.0 ** (n + 1) - 2.0)
    return mu


def build_basis(wavelet_name: str, tab_depth: int = 12) -> ScalingBasis:
    """Construct a tabulated scaling basis.

    Integer values come from the transition-matrix eigenproblems (eigenvalues
    1, 1/2, 1/4 for phi, phi', phi''); dyadic values follow by refinement.
    Derivative tables use the normalizations sum_j j*phi'(j) = -1 and
    sum_j j^2*phi''(j) = 2; phi itself is normalized to unit integral.
    """
    name = wavelet_name.lower().strip()
    if not name.startswith("db"):
        raise UnknownWavelet(f"unknown wavelet {wavelet_name!r}")
    try:
        p = int(name[2:])
    except ValueError:
        raise UnknownWavelet(f"unknown wavelet {wavelet_name!r}") from None
    if p < 2 or p > 10:
        raise UnknownWavelet(f"unknown wavelet {wavelet_name!r}")
    if not 8 <= tab_depth <= 16:
        raise ValueError("tab_depth must lie in [8, 16]")
    if _HOLDER[p] <= 2.0:
        raise InsufficientRegularity(
            f"db{p} has Holder smoothness about {_HOLDER[p]:.2f} <= 2; its second "
            "derivative does not exist (smallest admissible filter is db6)"
        )
    h = daubechies_filter(p)
    L = h.size - 1
    T = _transition_matrix(h)

    tables = []
    nodes = np.arange(L + 1, dtype=float)
    for order, eigenvalue in enumerate((1.0, 0.5, 0.25)):
        ints = _fixed_vector(T, eigenvalue)
        if order == 0:
            ints = ints / ints.sum()
        else:
            scale = (nodes**order * ints).sum()
            ints = ints * ((-1.0) ** order * factorial(order) / scale)
        vals = ints
        for d in range(1, tab_depth + 1):
            vals = _refine_once(vals, h, order, d)
        tables.append(vals)

    return ScalingBasis(
        name=f"db{p}",
        filter=h,
        support_lo=0,
        support_hi=L,
        vanishing_moments=p,
        tab_depth=tab_depth,
        tables=tuple(tables),
        moments=_exact_moments(h, max_order=max(2 * p, 12)),
    )


@dataclass(frozen=True)
class IndexSet:
    """Contiguous translate indices kept in the local system at level m around y."""

    m: int
    y: float
    k_lo: int
    k_hi: int

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.k_lo, self.k_hi + 1)

    @property
    def size(self) -> int:
        return self.k_hi - self.k_lo + 1

    def __len__(self) -> int:
        return self.size


def index_set(basis: ScalingBasis, m: int, y: float) -> IndexSet:
    """Translate indices whose coefficients enter the local system at y.

    Keeps `vanishing_moments * width` extra translates on each side of the
    minimal cover so that truncating the infinite system does not slow the
    bias decay; the window size is independent of m.
    """
    m1, m2, s = basis.support_lo, basis.support_hi, basis.vanishing_moments
    center = np.ldexp(float(y), m)
    pad = s * (m2 - m1)
    return IndexSet(
        m=m,
        y=float(y),
        k_lo=int(np.ceil(center - m2 - pad)),
        k_hi=int(np.floor(center - m1 + pad)),
    )


def local_window(basis: ScalingBasis, m: int, xs, order: int = 0):
    """Nonzero dilated-basis values at each sample.

    Returns (k0, vals): for sample xs[i], vals[i, j] is the level-m dilated
    value at translate k0[i] + j for j = 0 .. width; all other translates
    vanish by compact support.
    """
    xs = np.asarray(xs, dtype=float)
    m1, m2 = basis.support_lo, basis.support_hi
    z = np.ldexp(xs, m)
    k0 = np.ceil(z - m2).astype(np.int64)
    offsets = np.arange(m2 - m1 + 1)
    arg = z[:, None] - k0[:, None] - offsets[None, :]
    tab = basis.tables[order]
    scaled = (arg - m1) * 2.0**basis.tab_depth
    inside = (scaled >= 0.0) & (scaled <= tab.size - 1)
    idx = np.clip(scaled.astype(np.int64), 0, tab.size - 2)
    frac = np.clip(scaled - idx, 0.0, 1.0)
    vals = np.where(inside, (1.0 - frac) * tab[idx] + frac * tab[idx + 1], 0.0)
    vals *= 2.0 ** (m / 2.0 + m * order)
    return k0, vals


def polynomial_reproduction_residual(basis: ScalingBasis, max_order: int, z_grid) -> dict:
    """Residuals of the kernel's polynomial reproduction property.

    For each power a <= max_order and probe z, compares
    sum_k [int x^a phi(x-k) dx] * phi(z-k) against z^a, with translate moments
    computed by quadrature over the tabulation.  Returns the per-power residual
    arrays and the overall maximum.
    """
    z_grid = np.asarray(z_grid, dtype=float)
    mu = np.array(
        [basis.table_integral(basis.grid**i * basis.tables[0]) for i in range(max_order + 1)]
    )
    rows = {}
    worst = 0.0
    for a in range(max_order + 1):
        res = []
        for z in z_grid:
            ks = np.arange(
                int(np.floor(z)) - basis.support_hi,
                int(np.ceil(z)) - basis.support_lo + 1,
            )
            phis = basis.eval(z - ks)
            shifted = np.zeros_like(phis)
            for i in range(a + 1):
                shifted += comb(a, i) * ks.astype(float) ** (a - i) * mu[i]
            res.append(abs(float(shifted @ phis) - z**a))
        rows[a] = np.array(res)
        worst = max(worst, float(rows[a].max()))
    return {"residuals": rows, "max": worst}


def save_basis(basis: ScalingBasis, path) -> None:
    """Binary tabulation cache: header, then phi, phi', phi'' as little-endian f64."""
    name = basis.name.encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(name)))
        f.write(name)
        f.write(
            struct.pack(
                "<iiii",
                basis.support_lo,
                basis.support_hi,
                basis.vanishing_moments,
                basis.tab_depth,
            )
        )
        for tab in basis.tables:
            f.write(np.asarray(tab, dtype="<f8").tobytes())


def load_basis(path) -> ScalingBasis:
    with open(path, "rb") as f:
        if f.read(8) != _MAGIC:
            raise ValueError(f"{path}: not a basis cache file")
        (nlen,) = struct.unpack("<I", f.read(4))
        name = f.read(nlen).decode()
        lo, hi, s, depth = struct.unpack("<iiii", f.read(16))
        n = (hi - lo) * 2**depth + 1
        tables = tuple(np.frombuffer(f.read(8 * n), dtype="<f8").copy() for _ in range(3))
    h = daubechies_filter(s)
    return ScalingBasis(
        name=name,
        filter=h,
        support_lo=lo,
        support_hi=hi,
        vanishing_moments=s,
        tab_depth=depth,
        tables=tables,
        moments=_exact_moments(h, max_order=max(2 * s, 12)),
    )
