"""Error taxonomy shared across the package.

Configuration errors are caller mistakes (bad grids, bad boxes, bad config
files).  Contract violations are misuse of an operation's stated preconditions.
Discretization and eigenpair errors signal that a numerical representation is
not trustworthy and the computation was aborted rather than silently degraded.
"""


class ConfigurationError(ValueError):
    """Invalid configuration: grids, boxes, or config-file contents."""


class ContractViolation(ValueError):
    """An operation was called outside its stated preconditions."""


class DiscretizationError(RuntimeError):
    """Converged numerics violate a rigorous bound; refine the discretization."""


class EigenpairInconsistency(RuntimeError):
    """A sampled density ratio exceeded the certified envelope."""


class EwhomogWarning(UserWarning):
    """Base class for statistical diagnostics that do not abort a run."""


class WeightDegeneracyWarning(EwhomogWarning):
    """Importance weights have low effective sample size."""


class SaturationWarning(EwhomogWarning):
    """A truncation (horizon or window) check failed its stability test."""


class BoxExitWarning(EwhomogWarning):
    """Too many walkers left the field box; estimates are biased toward 0."""


class StatisticalFlag(EwhomogWarning):
    """An estimator self-check failed at its stated tolerance."""
