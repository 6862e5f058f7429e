"""Named property suites runnable from the command line.

Each suite re-checks a module's contract at the documented tolerances and
returns one record per check; the CLI exits nonzero when any fails.  The
pytest suite exercises the same machinery plus the heavier acceptance runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .basis import build_basis, index_set, polynomial_reproduction_residual
from .bounds import BumpKernel, derivative_scale, kl_bound, make_pair, rate_trace, two_point_gap
from .errors import EbwaveError
from .families import (DoubleExponential, GammaShape, NormalLocation,
                       UniformScale, WeibullScale, estimating_equation_residual,
                       sup_to_l2_ratio)
from .harness import fit_rate
from .lepski import (LevelStats, noise_level_sq, select_from_stats,
                     theoretical_threshold)
from .oracle import (GammaPrior, NormalPrior, PointMassPrior, PosteriorSpec,
                     UniformPrior)


@dataclass(frozen=True)
class CheckResult:
    suite: str
    name: str
    passed: bool
    detail: str


def _check(results, suite, name, passed, detail):
    results.append(CheckResult(suite=suite, name=name, passed=bool(passed), detail=detail))


_BASIS_CACHE = {}


def default_basis():
    if "db8" not in _BASIS_CACHE:
        _BASIS_CACHE["db8"] = build_basis("db8", 12)
    return _BASIS_CACHE["db8"]


# -- reference configurations reused by the acceptance tests ----------------

def slope_families(basis=None):
    """Per-family norm-growth configurations: (label, family, y, alpha/2)."""
    return [
        ("normal", NormalLocation(1.0), 0.5, 1.0),
        ("double_exponential", DoubleExponential(1.0), 60.0, 0.0),
        ("weibull", WeibullScale(2.0, c1=30.0, c2=100.0), 60.0, 1.0),
        ("gamma", GammaShape(2.0, c1=30.0, c2=100.0), 60.0, 1.0),
        ("uniform_scale", UniformScale(30.0, 40.0), 35.0, 0.0),
    ]


def norm_growth_slope(family, basis, y, levels=range(3, 9)):
    ms = np.array(list(levels), dtype=float)
    logs = np.array([
        np.log2(family.norms(basis, int(m), y, skip_divergent=True).norm) for m in ms
    ])
    A = np.vstack([ms, np.ones_like(ms)]).T
    return float(np.linalg.lstsq(A, logs, rcond=None)[0][0])


def equation_cases():
    """(label, family, thetas, [(m, k), ...], tolerance) for the master oracle."""
    return [
        ("normal", NormalLocation(1.0), [-1.0, -0.3, 0.0, 0.7, 2.0],
         [(2, 3), (4, 10), (6, 40)], 1e-6),
        ("double_exponential", DoubleExponential(1.0), [-1.0, -0.3, 0.0, 0.7, 2.0],
         [(2, 3), (4, 10), (6, 40)], 1e-5),
        ("weibull", WeibullScale(2.0), [0.5, 0.8, 1.0, 2.0, 3.0],
         [(2, 5), (4, 18), (6, 70)], 1e-6),
        ("gamma", GammaShape(2.0), [0.5, 0.8, 1.0, 2.0, 3.0],
         [(2, 5), (4, 18), (6, 70)], 1e-6),
        ("uniform_scale", UniformScale(1.0, 5.0), [1.0, 1.5, 2.0, 3.5, 4.9],
         [(3, 8), (4, 35), (6, 130)], 1e-6),
    ]


# -- suites -----------------------------------------------------------------

def suite_basis():
    out = []
    b = default_basis()
    phi, dphi, ddphi = b.tables
    _check(out, "basis", "support_endpoints_zero",
           max(abs(t[0]) + abs(t[-1]) for t in b.tables) <= 1e-8,
           "table endpoints")
    _check(out, "basis", "outside_support_zero",
           b.eval(b.support_lo - 5.0) == 0.0 and b.eval(b.support_hi + 0.5, 2) == 0.0,
           "eval is identically zero off support")
    riemann = float(phi.sum() * b.grid_step)
    _check(out, "basis", "unit_integral", abs(riemann - 1.0) <= 1e-6,
           f"sum phi * step = {riemann:.9f}")
    for order in range(3):
        tab = b.tables[order]
        xs = b.support_lo + np.arange(b.width * 2 ** (b.tab_depth - 1) + 1) / 2.0 ** (b.tab_depth - 1)
        acc = np.zeros_like(xs)
        for k in range(b.filter.size):
            acc += b.filter[k] * b.eval(2 * xs - k, order)
        resid = float(np.abs(tab[::2] - np.sqrt(2.0) * 2.0**order * acc).max())
        _check(out, "basis", f"refinement_residual_order{order}", resid <= 1e-6,
               f"max residual {resid:.2e}")
    rng = np.random.default_rng(1234)
    xs = rng.uniform(-3.0, 3.0, 100)
    dev = 0.0
    for x in xs:
        ks = np.arange(int(np.floor(x)) - b.support_hi, int(np.ceil(x)) - b.support_lo + 1)
        dev = max(dev, abs(float(b.eval(x - ks).sum()) - 1.0))
    _check(out, "basis", "partition_of_unity", dev <= 1e-6, f"max deviation {dev:.2e}")
    rep = polynomial_reproduction_residual(b, b.vanishing_moments - 1,
                                           np.linspace(0.05, 0.95, 10))
    _check(out, "basis", "moment_reproduction", rep["max"] <= 1e-5,
           f"max residual {rep['max']:.2e} over powers 0..{b.vanishing_moments - 1}")
    sizes = {index_set(b, m, 0.37).size for m in range(0, 11)}
    width = (1 + 2 * b.vanishing_moments) * b.width + 1
    _check(out, "basis", "window_cardinality_constant",
           all(abs(s - width) <= 1 for s in sizes) and len(sizes) <= 2,
           f"sizes {sorted(sizes)} vs nominal {width}")
    return out


def suite_families():
    out = []
    b = default_basis()
    for label, fam, thetas, mks, tol in equation_cases():
        worst = max(estimating_equation_residual(fam, b, m, k, thetas) for m, k in mks)
        _check(out, "families", f"estimating_equation_{label}", worst <= tol,
               f"max residual {worst:.2e} (tol {tol:g})")
    for label, fam, y, target in slope_families():
        sl = norm_growth_slope(fam, b, y)
        _check(out, "families", f"norm_growth_{label}", abs(sl - target) <= 0.15,
               f"slope {sl:+.3f} vs {target:+.1f} +- 0.15")
    rng = np.random.default_rng(777)
    sampler_cases = [
        ("normal", NormalLocation(1.3), 0.4),
        ("double_exponential", DoubleExponential(0.8), -0.2),
        ("weibull", WeibullScale(2.0), 1.7),
        ("gamma", GammaShape(2.5), 1.1),
        ("uniform_scale", UniformScale(1.0, 5.0), 3.0),
    ]
    for label, fam, theta in sampler_cases:
        xs = fam.sample(np.full(100_000, theta), rng)
        mu = float(fam.conditional_mean(theta))
        var = float(fam.conditional_var(theta))
        se_mean = np.sqrt(var / xs.size)
        mean_ok = abs(xs.mean() - mu) <= 4 * se_mean
        kurt_proxy = np.mean((xs - xs.mean()) ** 4)
        se_var = np.sqrt(max(kurt_proxy - var**2, 0.0) / xs.size)
        var_ok = abs(xs.var(ddof=1) - var) <= 4 * se_var + 1e-12
        _check(out, "families", f"sampler_moments_{label}", mean_ok and var_ok,
               f"mean dev {abs(xs.mean()-mu):.2e} (4se {4*se_mean:.2e}), "
               f"var dev {abs(xs.var(ddof=1)-var):.2e} (4se {4*se_var:.2e})")
    ratio_cases = [
        ("normal", NormalLocation(1.0), lambda m: 2**m // 2, 3.0),
        ("double_exponential", DoubleExponential(1.0), lambda m: 5 * 2**m, 3.0),
        ("weibull", WeibullScale(2.0, c1=30.0, c2=100.0), lambda m: 60 * 2**m, 3.0),
    ]
    for label, fam, kfn, cap in ratio_cases:
        ratios = np.array([sup_to_l2_ratio(fam, b, m, kfn(m)) for m in range(2, 9)])
        _check(out, "families", f"sup_ratio_bounded_{label}",
               ratios.max() / ratios.min() <= cap,
               f"max/min {ratios.max()/ratios.min():.2f} over levels 2..8")
    return out


def suite_oracle():
    out = []
    from .quadrature import quad_checked

    priors = [
        ("normal", NormalPrior(0.3, 1.2)),
        ("gamma", GammaPrior(3.0, 2.0)),
        ("uniform", UniformPrior(1.0, 2.0)),
    ]
    for label, g in priors:
        lo, hi = g.support()
        mass = quad_checked(lambda t: float(g.density(np.array([t]))[0]), lo, hi,
                            abs_tol=1e-12)
        _check(out, "oracle", f"prior_mass_{label}", abs(mass - 1.0) <= 1e-8,
               f"integral {mass:.12f}")
        rng = np.random.default_rng(99)
        ths = g.sample(100_000, rng)
        se = np.sqrt(g.var() / ths.size)
        _check(out, "oracle", f"prior_sampler_{label}",
               abs(ths.mean() - g.mean()) <= 4 * se,
               f"mean dev {abs(ths.mean()-g.mean()):.2e} (4se {4*se:.2e})")
    pairs = [
        ("normal_normal", NormalLocation(1.0), NormalPrior(0.0, 1.0),
         np.linspace(-2.5, 2.5, 20)),
        ("weibull_gamma", WeibullScale(2.0, c1=0.05, c2=5.0), GammaPrior(3.0, 2.0),
         np.linspace(0.2, 2.5, 20)),
        ("gamma_gamma", GammaShape(2.0, c1=0.05, c2=8.0), GammaPrior(3.0, 2.0),
         np.linspace(0.3, 4.0, 20)),
    ]
    for label, fam, g, ys in pairs:
        spec = PosteriorSpec(fam, g)
        worst = 0.0
        for y in ys:
            t_quad = spec.numerator(float(y)) / spec.marginal(float(y))
            worst = max(worst, abs(t_quad - spec.posterior_mean_closed(float(y))))
        _check(out, "oracle", f"conjugate_agreement_{label}", worst <= 1e-8,
               f"max |quadrature - closed form| = {worst:.2e}")
    spec = PosteriorSpec(NormalLocation(1.0), UniformPrior(-1.0, 1.0))
    hull_ok = all(-1.0 <= spec.posterior_mean(float(y)) <= 1.0
                  for y in np.linspace(-3, 3, 13))
    _check(out, "oracle", "posterior_mean_in_prior_hull", hull_ok, "13 probe points")
    spec_pm = PosteriorSpec(NormalLocation(1.0), PointMassPrior(0.7))
    _check(out, "oracle", "point_mass_degenerate",
           abs(spec_pm.posterior_mean(1.3) - 0.7) <= 1e-12
           and abs(spec_pm.marginal(1.3) - spec_pm.family.density(1.3, 0.7)) <= 1e-15,
           "predictor constant, marginal equals the conditional")
    return out


def suite_estimator():
    out = []
    from .estimator import (empirical_gram, empirical_rhs, evaluate_expansion,
                            local_moment_arrays, population_fit,
                            population_system, ridge_solve)

    b = default_basis()
    fam = NormalLocation(1.0)
    prior = NormalPrior(0.0, 1.0)
    spec = PosteriorSpec(fam, prior)
    rng = np.random.default_rng(5150)
    th = prior.sample(4000, rng)
    xs = fam.sample(th, rng)
    m, y = 3, 0.5
    K = index_set(b, m, y)
    B = empirical_gram(b, m, K, xs)
    _check(out, "estimator", "gram_symmetric",
           float(np.abs(B - B.T).max()) <= 1e-12, "exact by construction")
    eig_min = float(scipy.linalg.eigvalsh(B, subset_by_index=[0, 0], driver="evr")[0])
    _check(out, "estimator", "gram_psd", eig_min >= -1e-10, f"min eig {eig_min:.2e}")
    c = empirical_rhs(fam, b, m, K, xs)
    delta = np.sqrt(2.0**m / xs.size)
    a = ridge_solve(B, c, delta)
    resid = float(np.linalg.norm((B + delta * np.eye(K.size)) @ a - c))
    _check(out, "estimator", "solve_residual",
           resid <= 1e-10 * np.linalg.norm(c), f"residual {resid:.2e}")
    a1 = ridge_solve(B, c, delta)
    a2 = ridge_solve(B, 2.0 * c, delta)
    c3 = c + 2.0 * c
    a3 = ridge_solve(B, c3, delta)
    lin = float(np.abs(a3 - (a1 + a2)).max())
    _check(out, "estimator", "linear_in_rhs", lin <= 1e-12 * max(1.0, np.abs(a3).max()),
           f"superposition defect {lin:.2e}")
    ones = 2.0 ** (-m / 2.0) * 0.7 * np.ones(K.size)
    val = evaluate_expansion(b, m, K, ones, y)
    _check(out, "estimator", "constant_reproduction", abs(val - 0.7) <= 1e-6,
           f"value {val:.9f}")
    U, D = local_moment_arrays(b, 5, 0.5, index_set(b, 5, 0.5), 2)
    _check(out, "estimator", "zeroth_moment_identity",
           float(np.abs(U[0] - np.eye(U[0].shape[0])).max()) <= 1e-6,
           f"max dev {np.abs(U[0]-np.eye(U[0].shape[0])).max():.2e}")
    _check(out, "estimator", "zeroth_vector_unit",
           float(np.abs(D[0] - 1.0).max()) <= 1e-6, "interior translates")
    _check(out, "estimator", "moment_matrix_symmetric",
           float(np.abs(U[1] - U[1].T).max()) == 0.0, "exact")
    norm_scaled = []
    for mm in (3, 4, 5, 6):
        Km = index_set(b, mm, y)
        _, cm = population_system(spec, b, mm, Km)
        norm_scaled.append(np.linalg.norm(cm) * 2.0 ** (mm / 2.0))
    ratio = max(norm_scaled) / min(norm_scaled)
    _check(out, "estimator", "rhs_norm_scaling", ratio <= 3.0,
           f"2^(m/2)||c|| spread {ratio:.2f} over levels 3..6")
    spec_u = PosteriorSpec(NormalLocation(1.0), UniformPrior(-1.0, 1.0))
    t_true = spec_u.posterior_mean(0.3)
    biases = []
    for mm in (1, 2, 3):
        biases.append(abs(population_fit(spec_u, b, mm, 0.3) - t_true) + 1e-16)
    slope = np.polyfit([1, 2, 3], np.log2(np.square(biases)), 1)[0]
    _check(out, "estimator", "bias_decay_soft", slope <= -2.0 * 1.0 * 0.7,
           f"squared-bias slope {slope:.2f} (soft cap -1.4)")
    return out


def suite_lepski():
    out = []
    _check(out, "lepski", "noise_level_example",
           abs(noise_level_sq(4, 3.0, 1000) - 64 * np.log(1000.0) / 1000.0) <= 1e-12,
           "closed-form check")
    rho_seq = [noise_level_sq(m, 2.0**m, 4096) for m in range(1, 8)]
    _check(out, "lepski", "noise_level_monotone",
           all(b > a for a, b in zip(rho_seq, rho_seq[1:])), "increasing in level")
    lam = theoretical_threshold(1.0, 1.0, 1.0, 1.0, 1, 0.0, 0.0)
    _check(out, "lepski", "threshold_example", abs(lam - 289.0) <= 1e-9,
           f"lambda {lam:.6f} (expect 289 = 16*18+1)")
    lam2 = theoretical_threshold(2.0, 0.0, 1.0, 1.0, 1)
    _check(out, "lepski", "threshold_zero_numerator",
           abs(lam2 - (16.0 * 2.0**1.5 + 1.0)) <= 1e-9, f"lambda {lam2:.6f}")
    stats = [
        LevelStats(m=3, t_hat=0.0, norm_inv=1.0, rho_sq=1.0, delta=0.1),
        LevelStats(m=4, t_hat=10.0, norm_inv=1.0, rho_sq=1.0, delta=0.1),
        LevelStats(m=5, t_hat=0.1, norm_inv=1.0, rho_sq=1.0, delta=0.1),
    ]
    tr = select_from_stats(stats, 1.0)
    brute = None
    for cand in (3, 4, 5):
        ok = all(
            (s_m.t_hat - s_j.t_hat) ** 2
            <= 1.0 * (s_m.norm_inv**2 + s_j.norm_inv**2) ** 2 * s_j.rho_sq
            for s_m in stats if s_m.m == cand
            for s_j in stats if s_j.m > cand
        )
        if ok:
            brute = cand
            break
    _check(out, "lepski", "selection_matches_bruteforce", tr.m_hat == brute,
           f"selected {tr.m_hat}, brute force {brute}")
    single = select_from_stats([stats[0]], 2.0)
    _check(out, "lepski", "single_level_vacuous", single.m_hat == 3, "one level")
    consistent = all(t.passed for t in tr.tests if t.m == tr.m_hat)
    _check(out, "lepski", "trace_consistency", consistent,
           "all finer tests pass at the selected level")
    return out


def suite_bounds():
    out = []
    zs = np.linspace(-1.0, 1.0, 200001)
    for shape in ("odd", "even"):
        k = BumpKernel(2, shape)
        _check(out, "bounds", f"kernel_zero_mean_{shape}",
               abs(k.integral()) <= 1e-12, f"integral {k.integral():.2e}")
        _check(out, "bounds", f"kernel_unit_sup_{shape}",
               abs(float(np.abs(k(zs)).max()) - 1.0) <= 1e-10, "normalized")
        _check(out, "bounds", f"kernel_edge_flatness_{shape}",
               float(np.abs(k.edge_derivatives(k.q)).max()) <= 1e-9,
               "derivatives vanish through order q-1 at the edges")
        _check(out, "bounds", f"kernel_antiderivative_closes_{shape}",
               abs(k.antiderivative(1.0)) <= 1e-12, "running integral returns to zero")
    kodd = BumpKernel(2, "odd")
    _check(out, "bounds", "odd_kernel_center_slope",
           abs(float(kodd.deriv(0.0)) - kodd.amplitude) <= 1e-12,
           "slope at zero equals the leading coefficient")
    spec = PosteriorSpec(NormalLocation(1.0), NormalPrior(0.0, 1.0))
    pair = make_pair(spec, kodd, 0.1, 0.0, 1.0)
    exact, bound = kl_bound(pair, 10_000)
    _check(out, "bounds", "divergence_below_bound", 0.0 < exact <= bound,
           f"exact {exact:.4e} <= bound {bound:.4e}")
    xs = np.linspace(-0.1, 0.1, 501)
    mass_dev = abs(float(np.trapezoid(pair.kernel((xs - 0.0) / 0.1), x=xs))) * pair.zeta
    _check(out, "bounds", "perturbation_mass_zero", mass_dev <= 1e-10,
           f"net mass {mass_dev:.2e}")
    gap = two_point_gap(pair)
    w_y = pair.spec.family.numerator_perturbation(kodd, 0.1, 0.0, np.array([0.0]))[0]
    direct = pair.zeta * abs(w_y) / pair.p0(0.0)
    _check(out, "bounds", "gap_closed_form_odd_kernel",
           abs(gap - direct) <= 1e-10 * max(1.0, gap),
           "matches zeta |w(y)| / p0(y) when the kernel vanishes at zero")
    hs = np.array([0.2, 0.1, 0.05, 0.025])
    k3 = BumpKernel(3, "odd")
    rho_n = [derivative_scale(NormalLocation(1.0), k3, h, 0.0, 2) for h in hs]
    slope_n = float(np.polyfit(np.log(hs), np.log(rho_n), 1)[0])
    _check(out, "bounds", "derivative_scale_normal", abs(slope_n - 3.0) <= 0.15,
           f"slope {slope_n:.3f} vs 3 (= r + 1 at r = 2)")
    rho_u = [derivative_scale(UniformScale(1.0, 2.0), BumpKernel(2, "odd"), h, 1.4, 1)
             for h in hs]
    slope_u = float(np.polyfit(np.log(hs), np.log(rho_u), 1)[0])
    _check(out, "bounds", "derivative_scale_uniform", abs(slope_u - 1.0) <= 0.15,
           f"slope {slope_u:.3f} vs 1 (= r at r = 1)")
    tr = rate_trace(NormalLocation(1.0), NormalPrior(0.0, 1.0), 1.0,
                    [10**3, 10**4, 10**5, 10**6], 0.0)
    _check(out, "bounds", "rate_exponent_normal", abs(tr.exponent + 0.4) <= 0.05,
           f"exponent {tr.exponent:.4f} vs -0.4")
    _check(out, "bounds", "divergence_band_normal", tr.kl_band_ratio <= 3.0,
           f"bound max/min {tr.kl_band_ratio:.3f}")
    tru = rate_trace(UniformScale(1.0, 2.0), UniformPrior(1.0, 2.0), 1.0,
                     [10**3, 10**4, 10**5, 10**6], 1.4)
    _check(out, "bounds", "rate_exponent_uniform", abs(tru.exponent + 2.0 / 3.0) <= 0.05,
           f"exponent {tru.exponent:.4f} vs -0.667")
    _check(out, "bounds", "divergence_band_uniform", tru.kl_band_ratio <= 3.0,
           f"bound max/min {tru.kl_band_ratio:.3f}")
    ok_exact = all(r.kl_exact <= r.kl_bound + 1e-12 for r in tr.rows + tru.rows)
    _check(out, "bounds", "divergence_exact_below_bound_all", ok_exact, "both traces")
    return out


SUITES = {
    "basis": suite_basis,
    "families": suite_families,
    "oracle": suite_oracle,
    "estimator": suite_estimator,
    "lepski": suite_lepski,
    "bounds": suite_bounds,
}


def run_suites(names):
    results = []
    for name in names:
        if name not in SUITES:
            raise EbwaveError(f"unknown suite {name!r}; choose from {sorted(SUITES)} or 'all'")
        results.extend(SUITES[name]())
    return results
