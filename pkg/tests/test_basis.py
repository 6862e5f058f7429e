import numpy as np
import pytest

from ebwave.basis import (build_basis, daubechies_filter, index_set, load_basis,
                          polynomial_reproduction_residual, save_basis)
from ebwave.errors import InsufficientRegularity, UnknownWavelet

# published extremal-phase filter with two vanishing moments
DB2_REFERENCE = [0.4829629131445341, 0.8365163037378079,
                 0.2241438680420134, -0.1294095225512604]


def test_filter_matches_published_db2():
    h = daubechies_filter(2)
    assert np.allclose(h, DB2_REFERENCE, atol=1e-12)


@pytest.mark.parametrize("p", [2, 4, 6, 8, 10])
def test_filter_orthonormality_and_moments(p):
    h = daubechies_filter(p)
    assert abs(h.sum() - np.sqrt(2.0)) < 1e-12
    for lag in range(0, p):
        val = np.dot(h[2 * lag:], h[: h.size - 2 * lag])
        assert abs(val - (1.0 if lag == 0 else 0.0)) < 1e-10
    # alternating-sign moments vanish through order p-1
    ks = np.arange(h.size, dtype=float)
    signs = (-1.0) ** np.arange(h.size)
    for j in range(p):
        assert abs(np.sum(signs * ks**j * h)) < 1e-8 * max(1.0, h.size**j)


def test_unknown_and_insufficient_wavelets():
    with pytest.raises(UnknownWavelet):
        build_basis("sym4", 12)
    with pytest.raises(UnknownWavelet):
        build_basis("db17", 12)
    with pytest.raises(InsufficientRegularity):
        build_basis("db4", 12)
    with pytest.raises(ValueError):
        build_basis("db8", 5)


def test_default_basis_shape(db8):
    assert db8.support_hi - db8.support_lo == 15
    assert db8.vanishing_moments == 8
    assert db8.tables[0].size == 15 * 2**12 + 1


def test_compact_support_all_orders(db8):
    for order in range(3):
        assert db8.eval(db8.support_lo - 5.0, order) == 0.0
        assert db8.eval(db8.support_hi + 3.2, order) == 0.0
        assert abs(db8.eval(float(db8.support_hi), order)) <= 1e-6


def test_unit_integral(db8):
    assert abs(float(db8.tables[0].sum()) * db8.grid_step - 1.0) <= 1e-6


@pytest.mark.parametrize("order", [0, 1, 2])
def test_refinement_residual(db8, order):
    tab = db8.tables[order]
    xs = db8.support_lo + np.arange(db8.width * 2**11 + 1) / 2.0**11
    acc = np.zeros_like(xs)
    for k in range(db8.filter.size):
        acc += db8.filter[k] * db8.eval(2 * xs - k, order)
    resid = np.abs(tab[::2] - np.sqrt(2.0) * 2.0**order * acc).max()
    assert resid <= 1e-6


def test_partition_of_unity(db8):
    rng = np.random.default_rng(42)
    for x in rng.uniform(-4.0, 4.0, 100):
        ks = np.arange(int(np.floor(x)) - db8.support_hi,
                       int(np.ceil(x)) - db8.support_lo + 1)
        assert abs(float(db8.eval(x - ks).sum()) - 1.0) <= 1e-6


def test_eval_grid_identity_and_interpolation(db8):
    idx = 12345
    x = db8.support_lo + idx * db8.grid_step
    assert db8.eval(x) == db8.tables[0][idx]
    mid = x + db8.grid_step / 2.0
    expect = 0.5 * (db8.tables[0][idx] + db8.tables[0][idx + 1])
    assert abs(db8.eval(mid) - expect) < 1e-14


def test_eval_dilated(db8):
    rng = np.random.default_rng(3)
    xs = rng.uniform(0.0, 15.0, 20)
    assert np.allclose(db8.eval_dilated(0, 0, xs), db8.eval(xs), atol=0)
    x = 0.9
    assert db8.eval_dilated(3, 5, x) == pytest.approx(
        2.0**1.5 * db8.eval(8.0 * x - 5.0), abs=1e-14
    )
    # scaled partition of unity at level 4
    K = index_set(db8, 4, 0.3)
    vals = 2.0**-2.0 * db8.eval_dilated(4, K.indices, 0.3)
    assert abs(float(vals.sum()) - 1.0) <= 1e-6


def test_index_set_examples():
    class Stub:
        support_lo, support_hi, vanishing_moments = 0, 5, 3

    K = index_set(Stub(), 3, 1.0)
    assert (K.k_lo, K.k_hi) == (-12, 23)

    class Stub2:
        support_lo, support_hi, vanishing_moments = -2, 2, 2

    K2 = index_set(Stub2(), 4, 0.5)
    assert (K2.k_lo, K2.k_hi) == (-2, 18)


def test_index_set_cardinality_constant(db8):
    nominal = (1 + 2 * db8.vanishing_moments) * db8.width + 1
    for m in range(0, 11):
        for y in (0.1, 0.37, 2.5):
            assert abs(index_set(db8, m, y).size - nominal) <= 1


def test_polynomial_reproduction(db8):
    zs = np.linspace(0.05, 0.95, 10)
    rep = polynomial_reproduction_residual(db8, db8.vanishing_moments - 1, zs)
    assert rep["max"] <= 1e-5
    assert rep["residuals"][0].max() <= 1e-6
    at_zero = polynomial_reproduction_residual(db8, 1, np.array([0.0]))
    assert at_zero["residuals"][1][0] <= 1e-5


def test_reproduction_fails_past_moment_order(db8):
    rep = polynomial_reproduction_residual(db8, db8.vanishing_moments, np.array([0.37]))
    assert rep["residuals"][db8.vanishing_moments][0] > 1e-3


def test_exact_moments_match_quadrature(db8):
    for i in range(9):
        quad = db8.table_integral(db8.grid**i * db8.tables[0])
        assert abs(db8.moments[i] - quad) <= 1e-9 * max(1.0, abs(quad))


def test_cache_round_trip(tmp_path, db8):
    path = tmp_path / "db8.bas"
    save_basis(db8, path)
    loaded = load_basis(path)
    assert loaded.name == db8.name
    assert loaded.vanishing_moments == db8.vanishing_moments
    assert (loaded.support_lo, loaded.support_hi) == (db8.support_lo, db8.support_hi)
    for a, b in zip(loaded.tables, db8.tables):
        assert np.array_equal(a, b)
    save_basis(loaded, tmp_path / "again.bas")
    assert (tmp_path / "again.bas").read_bytes() == path.read_bytes()
