"""The local linear system behind the pointwise estimate.

The expansion coefficients at level m solve a Gram system whose matrix is the
population second-moment matrix of the dilated basis under the observation
density and whose right-hand side is the vector of target projection
coefficients.  Both are estimated by sample means, the matrix through the
basis values at each sample and the vector through the family's estimating
functions, and the system is stabilized by a small ridge before solving.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from math import comb

import numpy as np
import scipy.linalg
import scipy.sparse
from scipy.interpolate import CubicSpline

from .basis import IndexSet, ScalingBasis, index_set, local_window
from .errors import EmptyData, LowDensityWarning, SingularSystem
from .families import Family
from .oracle import PosteriorSpec

LOW_DENSITY_COUNT = 10


@dataclass
class LocalSystem:
    """Empirical Gram matrix and right-hand side over an index window."""

    m: int
    y: float
    K: IndexSet
    B_hat: np.ndarray
    c_hat: np.ndarray
    delta: float
    a_hat: np.ndarray = None
    n_local: int = 0


@dataclass(frozen=True)
class EstimateResult:
    t_hat: float
    m: int
    size: int
    delta: float
    n_local: int
    low_density: bool
    expansion: float
    min_eig: float = field(default=float("nan"))


def empirical_gram(basis: ScalingBasis, m: int, K: IndexSet, data) -> np.ndarray:
    """Sample second-moment matrix of the dilated basis over the window.

    Each sample touches at most width+1 translates, so the accumulation runs
    over a sparse sample-by-translate matrix.
    """
    xs = np.asarray(data, dtype=float)
    if xs.size == 0:
        raise EmptyData("empirical Gram matrix needs at least one observation")
    k0, vals = local_window(basis, m, xs)
    offsets = np.arange(basis.width + 1)
    cols = k0[:, None] + offsets[None, :] - K.k_lo
    good = (cols >= 0) & (cols < K.size) & (vals != 0.0)
    rows = np.broadcast_to(np.arange(xs.size)[:, None], cols.shape)
    phi = scipy.sparse.csr_matrix(
        (vals[good], (rows[good], cols[good])), shape=(xs.size, K.size)
    )
    gram = (phi.T @ phi).toarray() / xs.size
    return (gram + gram.T) / 2.0


def empirical_rhs(family: Family, basis: ScalingBasis, m: int, K: IndexSet, data) -> np.ndarray:
    """Sample mean of the family's estimating functions over the window."""
    xs = np.asarray(data, dtype=float)
    if xs.size == 0:
        raise EmptyData("empirical right-hand side needs at least one observation")
    return family.estimating_sums(basis, m, K, xs) / xs.size


def ridge_solve(B_hat: np.ndarray, c_hat: np.ndarray, delta: float) -> np.ndarray:
    """Solve (B + delta I) a = c through a symmetric factorization."""
    A = B_hat if delta == 0.0 else B_hat + delta * np.eye(B_hat.shape[0])
    try:
        cf = scipy.linalg.cho_factor(A, check_finite=False)
        return scipy.linalg.cho_solve(cf, c_hat, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        if delta == 0.0:
            raise SingularSystem(
                "unregularized system is numerically singular"
            ) from exc
        raise


def evaluate_expansion(basis: ScalingBasis, m: int, K: IndexSet, a_hat, y: float) -> float:
    a_hat = np.asarray(a_hat, dtype=float)
    vals = basis.eval_dilated(m, K.indices, y)
    return float(a_hat @ vals)


def count_local(basis: ScalingBasis, m: int, K: IndexSet, data) -> int:
    """Observations that touch at least one translate of the window."""
    xs = np.asarray(data, dtype=float)
    lo = 2.0**-m * (basis.support_lo + K.k_lo)
    hi = 2.0**-m * (basis.support_hi + K.k_hi)
    return int(np.count_nonzero((xs > lo) & (xs < hi)))


def build_system(family: Family, basis: ScalingBasis, data, y: float, m: int,
                 delta_mult: float = 1.0) -> LocalSystem:
    xs = np.asarray(data, dtype=float)
    K = index_set(basis, m, y)
    delta = delta_mult * np.sqrt(2.0**m / xs.size)
    B = empirical_gram(basis, m, K, xs)
    c = empirical_rhs(family, basis, m, K, xs)
    a = ridge_solve(B, c, delta)
    return LocalSystem(
        m=m, y=float(y), K=K, B_hat=B, c_hat=c, delta=delta, a_hat=a,
        n_local=count_local(basis, m, K, xs),
    )


def estimate(family: Family, basis: ScalingBasis, data, y: float, m: int,
             delta_mult: float = 1.0, with_min_eig: bool = False) -> EstimateResult:
    """Full pipeline: window, empirical system, ridge solve, evaluation.

    For location families the expansion approximates the residual predictor,
    so the returned estimate is y minus the fitted expansion value.
    """
    xs = np.asarray(data, dtype=float)
    if xs.size < 2:
        raise EmptyData("estimation needs at least two observations")
    if 2.0**m >= xs.size:
        raise ValueError(f"level {m} too fine for {xs.size} observations")
    sys_ = build_system(family, basis, data, y, m, delta_mult)
    expansion = evaluate_expansion(basis, m, sys_.K, sys_.a_hat, y)
    t_hat = y - expansion if family.location_form else expansion
    low = sys_.n_local < LOW_DENSITY_COUNT
    if low:
        warnings.warn(
            f"only {sys_.n_local} observations near y={y} at level {m}; "
            "estimate is ridge-dominated",
            LowDensityWarning,
            stacklevel=2,
        )
    min_eig = float("nan")
    if with_min_eig:
        min_eig = float(
            scipy.linalg.eigvalsh(sys_.B_hat)[0] + sys_.delta
        )
    return EstimateResult(
        t_hat=t_hat, m=m, size=sys_.K.size, delta=sys_.delta,
        n_local=sys_.n_local, low_density=low, expansion=expansion,
        min_eig=min_eig,
    )


# ---------------------------------------------------------------------------
# population (quadrature) counterparts, available when the prior is known


def population_system(spec: PosteriorSpec, basis: ScalingBasis, m: int, K: IndexSet,
                      grid_depth: int = 11, spline_points: int = 20001):
    """Quadrature values of the Gram matrix and right-hand side.

    The mixture density and target numerator are evaluated once on a coarse
    grid spanning the window, interpolated by cubic splines, and integrated
    against basis products on the dyadic tabulation grid.
    """
    depth = min(grid_depth, basis.tab_depth)
    stride = 2 ** (basis.tab_depth - depth)
    zg = basis.grid[::stride]
    phi = basis.tables[0][::stride]
    step = 2.0**-depth
    ks = K.indices

    x_lo = 2.0**-m * (zg[0] + K.k_lo)
    x_hi = 2.0**-m * (zg[-1] + K.k_hi)
    dom_lo, dom_hi = spec.family.x_support
    pad = 1e-9 * max(1.0, abs(x_hi - x_lo))
    x_lo_c = max(x_lo, dom_lo + pad) if np.isfinite(dom_lo) else x_lo
    x_hi_c = min(x_hi, dom_hi - pad) if np.isfinite(dom_hi) else x_hi
    xs_coarse = np.linspace(x_lo_c, x_hi_c, spline_points)
    p_spline = CubicSpline(xs_coarse, spec.marginal_grid(xs_coarse))
    psi_spline = CubicSpline(xs_coarse, spec.target_numerator_grid(xs_coarse))

    # every integrand samples x = 2^-m (z_i + k): one union grid covers all
    per = 2**depth
    union = (zg[0] + K.k_lo) + np.arange((K.k_hi - K.k_lo + basis.width) * per + 1) * step
    xs_union = 2.0**-m * union
    inside = (xs_union >= x_lo_c) & (xs_union <= x_hi_c)
    p_union = np.zeros_like(xs_union)
    p_union[inside] = p_spline(xs_union[inside])
    psi_union = np.zeros_like(xs_union)
    psi_union[inside] = psi_spline(xs_union[inside])

    M = K.size
    B = np.zeros((M, M))
    L = zg.size
    w_phi = _trapezoid_weights(L, step) * phi
    starts = (ks - K.k_lo) * per
    windows = np.lib.stride_tricks.sliding_window_view(psi_union, L)[starts]
    c = 2.0 ** (-m / 2.0) * (windows @ w_phi)
    for d in range(basis.width + 1):
        prod = phi * phi if d == 0 else phi[: -d * per] * phi[d * per:]
        Lp = prod.size
        w_prod = _trapezoid_weights(Lp, step) * prod
        rows = np.lib.stride_tricks.sliding_window_view(p_union, Lp)[starts[d:]]
        vals = rows @ w_prod
        idx = np.arange(d, M)
        B[idx - d, idx] = vals
        B[idx, idx - d] = vals
    return B, c


def _trapezoid_weights(n: int, step: float) -> np.ndarray:
    w = np.full(n, step)
    w[0] = w[-1] = step / 2.0
    return w


def population_fit(spec: PosteriorSpec, basis: ScalingBasis, m: int, y: float,
                   grid_depth: int = 11):
    """Target value of the truncated population system at y (bias diagnostic)."""
    K = index_set(basis, m, y)
    B, c = population_system(spec, basis, m, K, grid_depth=grid_depth)
    # tiny jitter keeps translates with no density mass harmless
    jitter = 1e-12 * max(float(np.max(np.diag(B))), 1e-300)
    a = scipy.linalg.solve(B + jitter * np.eye(K.size), c, assume_a="pos")
    expansion = evaluate_expansion(basis, m, K, a, y)
    return spec.finalize(y, expansion)


def local_moment_arrays(basis: ScalingBasis, m: int, y: float, K: IndexSet, h_max: int):
    """Shift-moment matrices and vectors of the basis around y.

    Element (k, l) of the h-th matrix integrates z^h against the product of
    translates k and l re-centered at 2^m y; the h-th vector does the same
    with a single translate.  These depend only on the basis and the dyadic
    position of y, not on any unknown function.
    """
    if h_max > basis.vanishing_moments - 1:
        raise ValueError("h_max exceeds the basis moment order")
    zg = basis.grid
    phi = basis.tables[0]
    step = basis.grid_step
    per = 2**basis.tab_depth
    width = basis.width
    # cross moments X_i(d) = int t^i phi(t) phi(t+d) dt for |d| <= width
    X = np.zeros((h_max + 1, 2 * width + 1))
    for d in range(0, width + 1):
        if d == 0:
            prod = phi * phi
            t = zg
        else:
            prod = phi[:-d * per] * phi[d * per:]
            t = zg[: prod.size]
        for i in range(h_max + 1):
            val = float(np.trapezoid(t**i * prod, dx=step))
            X[i, width + d] = val
            # X_i(-d) = int (u-d)^i phi(u-d) phi(u) du = sum_j C(i,j)(-d)^(i-j) X_j(d)
        if d > 0:
            # X_i(-d) = int (u+d)^i phi(u) phi(u+d) du
            for i in range(h_max + 1):
                X[i, width - d] = sum(
                    comb(i, j) * float(d) ** (i - j) * X[j, width + d]
                    for j in range(i + 1)
                )
    a_pos = np.ldexp(float(y), m)
    ks = K.indices.astype(float)
    mu = basis.moments
    U = []
    D = []
    for h in range(h_max + 1):
        Uh = np.zeros((K.size, K.size))
        for ii, k in enumerate(ks):
            for jj in range(ii, K.size):
                l = ks[jj]
                d = int(round(k - l))
                if abs(d) > width:
                    continue
                val = sum(
                    comb(h, i) * (k - a_pos) ** (h - i) * X[i, width + d]
                    for i in range(h + 1)
                )
                Uh[ii, jj] = val
                Uh[jj, ii] = val
        Dh = np.array(
            [
                sum(comb(h, i) * (k - a_pos) ** (h - i) * mu[i] for i in range(h + 1))
                for k in ks
            ]
        )
        U.append(Uh)
        D.append(Dh)
    return U, D
