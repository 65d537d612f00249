"""Monte Carlo laboratory for heat flow in a mollified space-time white noise.

Modules
-------
mollifier      compactly supported bump profiles and their quadrature tables
kernels        covariance tables built from a mollifier pair
paths          tilted-path increments and pair interactions
chain          tilted Markov chain, eigenpair, regeneration estimators
field          lattice synthesis of the Gaussian potential
intersection   two-component statistics and effective-variance estimators
pde            deterministic heat solver and the limiting variance functional
fk             quenched Feynman-Kac solver and the two flagship experiments
"""

__version__ = "0.1.0"

from .chain import (
    ChainConfig,
    EigenPair,
    RegenerationBlock,
    collect_blocks,
    doeblin_gamma,
    estimate_a_eff,
    estimate_zeta,
    fit_renormalization,
    invariant_ensemble,
    prepare,
    resolve_gamma,
    run_chain,
    sample_pi,
    sample_transition,
    solve_eigenpair,
    tilted_expectation,
)
from .config import apply_override, chain_config, config_hash, load_config
from .errors import (
    BoxExitWarning,
    ConfigurationError,
    ContractViolation,
    DiscretizationError,
    EwhomogWarning,
    SaturationWarning,
    StatisticalFlag,
    WeightDegeneracyWarning,
)
from .field import FieldBox, FieldRealization, sample_field
from .fk import FkEstimate, fk_solve, fluctuation_experiment, homogenized_mean_check
from .intersection import (
    NearbyTimeSample,
    TwoComponentState,
    estimate_nu_eff,
    h_functional,
    nearby_time,
    white_time_nu_eff,
)
from .kernels import CovarianceKernel, build_kernels, naive_variance_nu0
from .mollifier import Mollifier, MollifierPair, make_bump_mollifiers
from .paths import (
    AssembledPath,
    PathIncrement,
    interaction_I,
    sample_wiener_increment,
    self_tilt_exponent,
)
from .pde import ConstantData, GaussianBump, ScalarField, ew_variance, solve_heat
from .streams import StreamNode, as_node, get_rng

__all__ = [
    "__version__",
    "BoxExitWarning",
    "ChainConfig",
    "ConfigurationError",
    "ConstantData",
    "ContractViolation",
    "CovarianceKernel",
    "DiscretizationError",
    "EigenPair",
    "EwhomogWarning",
    "FieldBox",
    "FieldRealization",
    "FkEstimate",
    "GaussianBump",
    "Mollifier",
    "MollifierPair",
    "NearbyTimeSample",
    "PathIncrement",
    "RegenerationBlock",
    "SaturationWarning",
    "ScalarField",
    "StatisticalFlag",
    "StreamNode",
    "TwoComponentState",
    "WeightDegeneracyWarning",
    "AssembledPath",
    "apply_override",
    "as_node",
    "build_kernels",
    "chain_config",
    "collect_blocks",
    "config_hash",
    "doeblin_gamma",
    "estimate_a_eff",
    "estimate_nu_eff",
    "estimate_zeta",
    "ew_variance",
    "fit_renormalization",
    "fk_solve",
    "fluctuation_experiment",
    "get_rng",
    "h_functional",
    "homogenized_mean_check",
    "interaction_I",
    "invariant_ensemble",
    "load_config",
    "make_bump_mollifiers",
    "naive_variance_nu0",
    "nearby_time",
    "prepare",
    "resolve_gamma",
    "run_chain",
    "sample_field",
    "sample_pi",
    "sample_transition",
    "sample_wiener_increment",
    "self_tilt_exponent",
    "solve_eigenpair",
    "solve_heat",
    "tilted_expectation",
    "white_time_nu_eff",
]
