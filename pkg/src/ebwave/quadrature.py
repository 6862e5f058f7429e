"""Small quadrature helpers used across the package.

Scalar adaptive integration wraps scipy's QUADPACK with an explicit failure
check; grid integration uses composite Gauss-Legendre panels with doubling
until the result stabilizes, which vectorizes cleanly over many evaluation
points.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.integrate import quad

from .errors import QuadratureFailure


@lru_cache(maxsize=32)
def _gl_nodes(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    return x, w


def quad_checked(f, a, b, abs_tol=1e-10, rel_tol=1e-8, points=None, limit=200):
    """Adaptive quadrature of f on [a, b]; raises QuadratureFailure when the
    reported error estimate is not comfortably below tolerance."""
    kwargs = {"epsabs": abs_tol, "epsrel": rel_tol, "limit": limit}
    if points is not None:
        pts = [p for p in points if a < p < b]
        if pts:
            kwargs["points"] = sorted(pts)
    val, err = quad(f, a, b, **kwargs)
    if not np.isfinite(val) or err > 100.0 * max(abs_tol, rel_tol * abs(val)) + 1e-300:
        raise QuadratureFailure(
            f"integral on [{a}, {b}] did not converge (estimate {val}, error {err})"
        )
    return val


def composite_gl(f, a, b, panels: int, order: int = 12):
    """Composite Gauss-Legendre quadrature; f maps a node array to values
    (extra leading axes allowed, nodes on the last axis)."""
    x, w = _gl_nodes(order)
    edges = np.linspace(a, b, panels + 1)
    mid = (edges[1:] + edges[:-1]) / 2.0
    half = (edges[1:] - edges[:-1]) / 2.0
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    vals = f(nodes)
    return np.tensordot(vals, weights, axes=([-1], [0]))


def panel_quad_vec(f, a, b, *, order=12, start_panels=32, max_panels=8192,
                   abs_tol=1e-10, rel_tol=1e-9):
    """Composite GL with panel doubling until the result array stabilizes.

    f maps nodes (last axis) to values; the return shape is f's shape without
    the node axis.  Deterministic for a given f.
    """
    panels = start_panels
    prev = composite_gl(f, a, b, panels, order)
    while panels < max_panels:
        panels *= 2
        cur = composite_gl(f, a, b, panels, order)
        diff = np.max(np.abs(cur - prev))
        scale = max(1.0, float(np.max(np.abs(cur))))
        if diff <= max(abs_tol, rel_tol * scale):
            return cur
        prev = cur
    raise QuadratureFailure(
        f"panel quadrature on [{a}, {b}] did not stabilize below tolerance "
        f"within {max_panels} panels"
    )
