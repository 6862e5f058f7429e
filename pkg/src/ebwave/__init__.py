"""Wavelet-series empirical Bayes estimation with adaptive level selection."""

__version__ = "0.1.0"

from .basis import IndexSet, ScalingBasis, build_basis, index_set, load_basis, save_basis
from .bounds import BumpKernel, PerturbationPair, kl_bound, make_pair, rate_trace, two_point_gap
from .estimator import (EstimateResult, LocalSystem, empirical_gram, empirical_rhs,
                        estimate, evaluate_expansion, population_fit,
                        population_system, ridge_solve)
from .families import (DoubleExponential, Family, GammaShape, NormalLocation,
                       UniformScale, WeibullScale, family_from_config)
from .harness import (ExperimentConfig, ExperimentResult, Policy, fit_rate,
                      load_config, run_experiment, write_csv)
from .lepski import (LevelGrid, SelectionTrace, level_grid, noise_level_sq,
                     oracle_level, practical_levels, select_resolution,
                     theoretical_threshold)
from .oracle import (GammaPrior, NormalPrior, PointMassPrior, PosteriorSpec,
                     Prior, UniformPrior, prior_from_config)

__all__ = [name for name in dir() if not name.startswith("_")]
