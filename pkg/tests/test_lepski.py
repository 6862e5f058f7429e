import math

import numpy as np
import pytest

from ebwave.basis import index_set
from ebwave.errors import ConfigError, EmptyGrid, InvalidNu
from ebwave.estimator import build_system
from ebwave.families import NormalLocation
from ebwave.lepski import (LevelStats, level_grid, noise_level_sq, oracle_level,
                           practical_levels, select_from_stats,
                           select_resolution, theoretical_threshold)
from ebwave.oracle import NormalPrior, PosteriorSpec


def test_noise_level_formula():
    val = noise_level_sq(4, 3.0, 1000)
    assert val == pytest.approx(64.0 * math.log(1000.0) / 1000.0, abs=1e-12)
    assert val == pytest.approx(0.44210, abs=5e-5)


def test_noise_level_monotone_in_level():
    vals = [noise_level_sq(m, 2.0**m, 4096) for m in range(1, 9)]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_threshold_examples():
    lam = theoretical_threshold(1.0, 1.0, 1.0, 1.0, 1)
    assert lam == pytest.approx(16.0 * 18.0 + 1.0, abs=1e-10)
    lam2 = theoretical_threshold(2.0, 0.0, 1.0, 1.0, 1)
    assert lam2 == pytest.approx(16.0 * 2.0**1.5 + 1.0, abs=1e-10)


def test_threshold_monotone_in_sup_norms():
    base = theoretical_threshold(1.0, 1.0, 1.0, 1.0, 4)
    assert theoretical_threshold(2.0, 1.0, 1.0, 1.0, 4) > base
    assert theoretical_threshold(1.0, 2.0, 1.0, 1.0, 4) > base
    assert theoretical_threshold(1.0, 1.0, 2.0, 1.0, 4) > base
    assert theoretical_threshold(1.0, 1.0, 1.0, 2.0, 4) > base


def test_threshold_nu_validation():
    with pytest.raises(InvalidNu):
        theoretical_threshold(1.0, 1.0, 1.0, 1.0, 4, nu1=0.6, nu2=0.6)


def _stats(ms, ts, ninvs=None, rhos=None):
    ninvs = ninvs or [1.0] * len(ms)
    rhos = rhos or [1.0] * len(ms)
    return [LevelStats(m=m, t_hat=t, norm_inv=v, rho_sq=r, delta=0.1)
            for m, t, v, r in zip(ms, ts, ninvs, rhos)]


def _brute_force(stats, lam):
    stats = sorted(stats, key=lambda s: s.m)
    for sm in stats:
        ok = all(
            (sm.t_hat - sj.t_hat) ** 2
            <= lam**2 * (sm.norm_inv**2 + sj.norm_inv**2) ** 2 * sj.rho_sq
            for sj in stats if sj.m > sm.m
        )
        if ok:
            return sm.m
    return stats[-1].m


def test_single_level_grid_is_vacuous():
    tr = select_from_stats(_stats([3], [1.0]), 0.5)
    assert tr.m_hat == 3 and not tr.flags


def test_all_tests_pass_selects_coarsest():
    tr = select_from_stats(_stats([2, 3, 4], [0.0, 0.01, -0.01]), 10.0)
    assert tr.m_hat == 2


def test_synthetic_selection_matches_brute_force():
    stats = _stats([3, 4, 5], [0.0, 10.0, 0.1])
    tr = select_from_stats(stats, 1.0)
    assert tr.m_hat == _brute_force(stats, 1.0)
    assert tr.m_hat == 5  # both coarser levels clash with a finer one
    assert "no_admissible_level" in tr.flags


def test_randomized_selection_matches_brute_force():
    rng = np.random.default_rng(8)
    for _ in range(200):
        ms = [2, 3, 4, 5]
        stats = _stats(
            ms,
            list(rng.normal(0, 1, 4)),
            list(rng.uniform(0.5, 3.0, 4)),
            list(rng.uniform(0.1, 2.0, 4)),
        )
        lam = float(rng.uniform(0.05, 2.0))
        assert select_from_stats(stats, lam).m_hat == _brute_force(stats, lam)


def test_selection_trace_consistency(db8):
    fam = NormalLocation(1.0)
    spec = PosteriorSpec(fam, NormalPrior(0.0, 1.0))
    rng = np.random.default_rng(1)
    xs = fam.sample(spec.prior.sample(4096, rng), rng)
    gammas = {m: fam.norms(db8, m, 0.5).norm ** 2 for m in range(0, 4)}
    tr = select_resolution(fam, db8, xs, 0.5, [0, 1, 2, 3], 4e-5,
                           gamma_sq_by_m=gammas)
    assert tr.m_hat in (0, 1, 2, 3)
    assert all(t.passed for t in tr.tests if t.m == tr.m_hat)
    coarser = [t for t in tr.tests if t.m < tr.m_hat]
    by_m = {}
    for t in coarser:
        by_m.setdefault(t.m, []).append(t.passed)
    for m, passed in by_m.items():
        assert not all(passed)
    d = tr.as_dict()
    assert set(d) == {"levels", "tests", "m_hat", "lambda", "flags"}


def test_spectral_norm_respects_ridge_floor(db8):
    fam = NormalLocation(1.0)
    rng = np.random.default_rng(2)
    xs = fam.sample(rng.normal(0, 1, 2048), rng)
    gammas = {m: fam.norms(db8, m, 0.5).norm ** 2 for m in range(0, 3)}
    tr = select_resolution(fam, db8, xs, 0.5, [0, 1, 2], 4e-5,
                           gamma_sq_by_m=gammas)
    for st in tr.levels:
        assert st.norm_inv <= 1.0 / st.delta + 1e-9
        assert st.delta == pytest.approx(2.0 ** (st.m / 2.0) / np.sqrt(xs.size))


def test_level_grid_strict_rule():
    # flat norms: the asymptotic rule produces a wide grid at large n
    n = 2**20
    gam = {m: 0.0 for m in range(0, 15)}
    grid = level_grid(gam, n)
    assert grid.m1 == math.ceil(math.log2(math.log(n)))
    assert 2.0**grid.mn <= n / math.log(n) ** 2 < 2.0 ** (grid.mn + 1)
    assert grid.levels[0] == grid.m1 and grid.levels[-1] == grid.mn
    # growing norms at laptop scale: empty grid is a config error
    gam2 = {m: 900.0 * 4.0**m for m in range(0, 12)}
    with pytest.raises(ConfigError):
        level_grid(gam2, 2**14)


def test_practical_levels_fallback():
    gam = {m: 3.5 * 4.0**m for m in range(0, 12)}
    levels = practical_levels(gam, 2**14)
    assert levels[0] == 0 and len(levels) >= 3
    assert all(2.0**m * (gam[m] + 1.0) <= 4.0 * 2**14 for m in levels)


def test_oracle_level_brute_force_flat():
    gam = {m: 0.0 for m in range(1, 15)}
    n = 2**15
    m0 = oracle_level(gam, n, 1.0)
    brute = min(gam, key=lambda m: 2.0**m / n + 2.0 ** (-2.0 * m))
    assert m0 == brute == 5


def test_oracle_level_growth_pattern():
    gam = {m: 2.0 ** (2 * m) for m in range(1, 15)}
    m_small = oracle_level(gam, 2**16, 1.0)
    m_big = oracle_level(gam, 2**21, 1.0)
    assert m_big - m_small in (0, 1, 2)
    assert abs((m_big - m_small) - 1) <= 1  # 2^m0 tracks n^(1/5)


def test_oracle_level_monotone_in_n():
    gam = {m: 2.0 ** (2 * m) for m in range(0, 14)}
    levels = [oracle_level(gam, n, 1.0) for n in (2**10, 2**14, 2**18, 2**22)]
    assert all(b >= a for a, b in zip(levels, levels[1:]))


def test_oracle_level_empty():
    with pytest.raises(EmptyGrid):
        oracle_level({}, 1000, 1.0)
