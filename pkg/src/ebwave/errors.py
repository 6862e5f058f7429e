"""Exception types shared across the package."""


class EbwaveError(Exception):
    """Base class for all package-specific errors."""


class UnknownWavelet(EbwaveError):
    """The requested wavelet identifier is not in the supported table."""


class InsufficientRegularity(EbwaveError):
    """The filter's scaling function is not smooth enough for the requested derivatives."""


class NonConvergentCascade(EbwaveError):
    """The refinement eigenproblem does not have a one-dimensional fixed space."""


class DomainViolation(EbwaveError):
    """An argument lies outside the family's x or theta domain."""


class QuadratureFailure(EbwaveError):
    """Adaptive quadrature failed to reach the requested tolerance."""


class DivergentIntegral(EbwaveError):
    """An estimating-function norm integral does not converge."""


class EmptyData(EbwaveError):
    """An operation that needs observations received none."""


class SingularSystem(EbwaveError):
    """Unregularized solve requested on a numerically singular matrix."""


class VanishingMarginal(EbwaveError):
    """The marginal density is numerically zero at the evaluation point."""


class UnsupportedFamily(EbwaveError):
    """No closed form is shipped for this family in the requested construction."""


class NegativeDensity(EbwaveError):
    """A perturbed density went negative; the amplitude check failed."""


class InvalidNu(EbwaveError):
    """Slack parameters must satisfy nu1 + nu2 < 1 with both nonnegative."""


class EmptyGrid(EbwaveError):
    """A level grid or candidate set is empty."""


class ConfigError(EbwaveError):
    """Invalid experiment or CLI configuration."""


class DegenerateFit(EbwaveError):
    """Rate fit requested on degenerate input (too few or invalid points)."""


class OracleMismatch(EbwaveError):
    """Quadrature and closed-form oracle values disagree beyond tolerance."""


class LowDensityWarning(UserWarning):
    """Few or no observations near the evaluation point; estimate is ridge-dominated."""
